#include "hybridvc/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <numbers>

#include <json.hpp>

#include "hybridvc/image_io.hpp"
#include "hybridvc/metrics.hpp"

namespace hvc::training {

using restoration::Batch;
using restoration::NetworkSpec;
using restoration::Objective;
using restoration::Weights;

// ---------------------------------------------------------------- config

TrainConfig TrainConfig::desk() {
  TrainConfig c;
  c.patch_size = 64;
  c.lr = 5e-4;
  c.iterations_step1 = 2000;
  c.iterations_step2 = 2000;
  c.iterations_end_to_end = 2000;
  c.irrelevant_ref_prob = 0.4;
  c.val_every = 250;
  c.codec_quality = 40;
  return c;
}

void TrainConfig::validate() const {
  if (patch_size < 8) throw ValidationError("patch_size must be >= 8");
  if (batch_size < 1) throw ValidationError("batch_size must be >= 1");
  if (!(lr > 0.0)) throw ValidationError("lr must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) {
    throw ValidationError("betas must lie in [0, 1)");
  }
  if (weight_decay < 0.0 || !(eps > 0.0)) throw ValidationError("bad weight_decay/eps");
  if (iterations_step1 < 0 || iterations_step2 < 0 || iterations_end_to_end < 0) {
    throw ValidationError("iteration counts must be >= 0");
  }
  if (irrelevant_ref_prob < 0.0 || irrelevant_ref_prob > 1.0) {
    throw ValidationError("irrelevant_ref_prob must lie in [0, 1]");
  }
  if (val_every < 1) throw ValidationError("val_every must be >= 1");
  if (loss == restoration::LossKind::kMsSsim && patch_size < metrics::kMsSsimMinSide) {
    throw ValidationError("ms_ssim loss needs patch_size >= " +
                          std::to_string(metrics::kMsSsimMinSide));
  }
}

std::string TrainConfig::to_json() const {
  nlohmann::json j{{"patch_size", patch_size},
                   {"batch_size", batch_size},
                   {"lr", lr},
                   {"beta1", beta1},
                   {"beta2", beta2},
                   {"weight_decay", weight_decay},
                   {"eps", eps},
                   {"iterations_step1", iterations_step1},
                   {"iterations_step2", iterations_step2},
                   {"iterations_end_to_end", iterations_end_to_end},
                   {"augment", augment},
                   {"loss", loss == restoration::LossKind::kL2 ? "l2" : "ms_ssim"},
                   {"irrelevant_ref_prob", irrelevant_ref_prob},
                   {"val_every", val_every},
                   {"seed", seed},
                   {"codec_quality", codec_quality}};
  return j.dump();
}

TrainConfig TrainConfig::from_json(const std::string& text, TrainConfig c) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("train config: ") + e.what());
  }
  if (!j.is_object()) throw ValidationError("train config must be a JSON object");
  static const std::vector<std::string> known = {
      "patch_size", "batch_size", "lr", "beta1", "beta2", "weight_decay", "eps",
      "iterations_step1", "iterations_step2", "iterations_end_to_end", "augment", "loss",
      "irrelevant_ref_prob", "val_every", "seed", "codec_quality"};
  for (const auto& item : j.items()) {
    if (std::find(known.begin(), known.end(), item.key()) == known.end()) {
      throw ValidationError("train config: unknown key '" + item.key() + "'");
    }
  }
  try {
    auto get = [&](const char* key, auto& field) {
      if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    get("patch_size", c.patch_size);
    get("batch_size", c.batch_size);
    get("lr", c.lr);
    get("beta1", c.beta1);
    get("beta2", c.beta2);
    get("weight_decay", c.weight_decay);
    get("eps", c.eps);
    get("iterations_step1", c.iterations_step1);
    get("iterations_step2", c.iterations_step2);
    get("iterations_end_to_end", c.iterations_end_to_end);
    get("augment", c.augment);
    get("irrelevant_ref_prob", c.irrelevant_ref_prob);
    get("val_every", c.val_every);
    get("seed", c.seed);
    get("codec_quality", c.codec_quality);
    if (j.contains("loss")) {
      const auto s = j.at("loss").get<std::string>();
      if (s == "l2") {
        c.loss = restoration::LossKind::kL2;
      } else if (s == "ms_ssim") {
        c.loss = restoration::LossKind::kMsSsim;
      } else {
        throw ValidationError("train config: loss must be l2 or ms_ssim");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("train config: ") + e.what());
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------- data

int Clip::reference_for(int t) const {
  int r = reference_indices.front();
  for (int idx : reference_indices) {
    if (idx <= t) r = idx;
  }
  return r;
}

Dataset build_pairs(const std::vector<std::pair<std::string, VideoSequence>>& videos,
                    const codecs::CodecConfig& codec, scenedetect::ReferencePolicy policy) {
  if (codec.is_lossless()) throw ValidationError("build_pairs needs a lossy codec");
  Dataset d;
  for (const auto& [name, video] : videos) {
    if (video.frame_count() < 2) {
      std::cerr << "warning: skipping clip '" << name << "' with fewer than 2 frames\n";
      continue;
    }
    Clip clip;
    clip.name = name;
    clip.original = video;
    const auto enc = codecs::encode_video(video, codec);
    clip.compressed = codecs::decode_video(
        enc.bitstream, codec,
        codecs::StreamGeometry{video.width(), video.height(), video.frame_count(), video.fps});
    if (policy == scenedetect::ReferencePolicy::kSceneCut) {
      clip.reference_indices = scenedetect::select_references(
          video.frame_count(), scenedetect::detect_cuts(video), policy);
    }
    const int id = static_cast<int>(d.clips.size());
    for (int t = 0; t < video.frame_count(); ++t) d.pairs.push_back({id, t});
    d.clips.push_back(std::move(clip));
  }
  return d;
}

namespace {

double unit(std::mt19937_64& rng) {
  return std::uniform_real_distribution<double>(0.0, 1.0)(rng);
}

int uniform_int(std::mt19937_64& rng, int lo, int hi) {
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

}  // namespace

Frame synthetic_texture(int width, int height, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Frame f(width, height, 3);
  std::vector<double> img(static_cast<std::size_t>(3) * width * height);
  auto px = [&](int c, int y, int x) -> double& {
    return img[(static_cast<std::size_t>(c) * height + y) * width + x];
  };
  // Smooth colour ramp.
  double base[3], gy[3], gx[3];
  for (int c = 0; c < 3; ++c) {
    base[c] = 0.3 + 0.4 * unit(rng);
    gy[c] = (unit(rng) - 0.5) * 0.4 / height;
    gx[c] = (unit(rng) - 0.5) * 0.4 / width;
  }
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x) px(c, y, x) = base[c] + gy[c] * y + gx[c] * x;

  // Oriented gratings confined to soft discs.
  const int gratings = 6 + uniform_int(rng, 0, 4);
  for (int g = 0; g < gratings; ++g) {
    const double freq = 0.04 + 0.36 * unit(rng);
    const double theta = std::numbers::pi * unit(rng);
    const double phase = 2 * std::numbers::pi * unit(rng);
    const double amp = 0.05 + 0.15 * unit(rng);
    const double cy = height * unit(rng), cx = width * unit(rng);
    const double radius = (0.15 + 0.35 * unit(rng)) * std::min(width, height);
    double tint[3];
    for (double& t : tint) t = 0.5 + unit(rng);
    const double ky = std::sin(theta) * freq * 2 * std::numbers::pi;
    const double kx = std::cos(theta) * freq * 2 * std::numbers::pi;
    for (int y = 0; y < height; ++y) {
      for (int x = 0; x < width; ++x) {
        const double r2 = ((y - cy) * (y - cy) + (x - cx) * (x - cx)) / (radius * radius);
        if (r2 > 4.0) continue;
        const double v = amp * std::exp(-r2) * std::sin(ky * y + kx * x + phase);
        for (int c = 0; c < 3; ++c) px(c, y, x) += tint[c] * v;
      }
    }
  }

  // Hard-edged rectangles and discs.
  const int shapes = 8 + uniform_int(rng, 0, 8);
  for (int s = 0; s < shapes; ++s) {
    double col[3];
    for (double& v : col) v = unit(rng);
    const double alpha = 0.5 + 0.5 * unit(rng);
    const int sh = uniform_int(rng, 4, std::max(5, height / 4));
    const int sw = uniform_int(rng, 4, std::max(5, width / 4));
    const int y0 = uniform_int(rng, 0, height - 1), x0 = uniform_int(rng, 0, width - 1);
    const bool disc = unit(rng) < 0.5;
    for (int y = y0; y < std::min(height, y0 + sh); ++y) {
      for (int x = x0; x < std::min(width, x0 + sw); ++x) {
        if (disc) {
          const double dy = (y - y0 - sh / 2.0) / (sh / 2.0);
          const double dx = (x - x0 - sw / 2.0) / (sw / 2.0);
          if (dy * dy + dx * dx > 1.0) continue;
        }
        for (int c = 0; c < 3; ++c) px(c, y, x) = (1 - alpha) * px(c, y, x) + alpha * col[c];
      }
    }
  }

  // Thin lines.
  const int lines = 4 + uniform_int(rng, 0, 6);
  for (int l = 0; l < lines; ++l) {
    const double v = unit(rng) < 0.5 ? 0.05 : 0.95;
    const double theta = std::numbers::pi * unit(rng);
    const double cy = height * unit(rng), cx = width * unit(rng);
    const double ny = std::cos(theta), nx = -std::sin(theta);
    for (int y = 0; y < height; ++y) {
      for (int x = 0; x < width; ++x) {
        const double d = std::abs((y - cy) * ny + (x - cx) * nx);
        if (d < 0.8) {
          for (int c = 0; c < 3; ++c) px(c, y, x) = v;
        }
      }
    }
  }

  // Fine grain.
  std::normal_distribution<double> noise(0.0, 0.02);
  for (double& v : img) v += noise(rng);

  auto out = f.pixels();
  for (std::size_t i = 0; i < img.size(); ++i) {
    out[i] = static_cast<float>(std::clamp(img[i], 0.0, 1.0));
  }
  quantize_to_bit_depth(f);
  return f;
}

VideoSequence make_clip(const Frame& source, const ClipOptions& opt, std::uint64_t seed) {
  if (opt.frames < 1 || opt.width < 8 || opt.height < 8 || opt.max_velocity < 0) {
    throw ValidationError("make_clip: invalid options");
  }
  std::mt19937_64 rng(seed);
  const int vy = uniform_int(rng, -opt.max_velocity, opt.max_velocity);
  const int vx = uniform_int(rng, -opt.max_velocity, opt.max_velocity);
  const int span_y = std::abs(vy) * (opt.frames - 1);
  const int span_x = std::abs(vx) * (opt.frames - 1);
  if (source.height() < opt.height + span_y || source.width() < opt.width + span_x) {
    throw ValidationError("make_clip: source too small for window and motion");
  }
  int y0 = uniform_int(rng, 0, source.height() - opt.height - span_y);
  int x0 = uniform_int(rng, 0, source.width() - opt.width - span_x);
  if (vy < 0) y0 += span_y;
  if (vx < 0) x0 += span_x;
  VideoSequence v;
  for (int t = 0; t < opt.frames; ++t) {
    Frame f(opt.width, opt.height, source.channels(), source.color_space(), source.bit_depth());
    const int oy = y0 + vy * t, ox = x0 + vx * t;
    for (int c = 0; c < source.channels(); ++c)
      for (int y = 0; y < opt.height; ++y)
        for (int x = 0; x < opt.width; ++x) f.at(c, y, x) = source.at(c, oy + y, ox + x);
    v.frames.push_back(std::move(f));
  }
  return v;
}

VideoSequence concatenate(const VideoSequence& a, const VideoSequence& b) {
  if (!a.frames.empty() && !b.frames.empty() && !a.frames[0].same_layout(b.frames[0])) {
    throw ValidationError("concatenate: frame layouts differ");
  }
  VideoSequence v = a;
  v.frames.insert(v.frames.end(), b.frames.begin(), b.frames.end());
  return v;
}

std::vector<Frame> load_png_dir(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (e.path().extension() == ".png") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<Frame> out;
  for (const auto& p : files) out.push_back(io::read_png(p));
  return out;
}

DeskCorpus build_desk_corpus(const std::filesystem::path& data_dir, int codec_quality,
                             std::uint64_t seed, int synthetic_sources) {
  const auto codec = codecs::CodecConfig::mock_lossy(codec_quality);
  std::vector<std::pair<std::string, VideoSequence>> train, heldout;
  std::uint64_t s = seed * 1000003ULL;
  const ClipOptions train_clip{7, 128, 128, 1};
  const auto natural_train = load_png_dir(data_dir / "natural" / "train");
  for (std::size_t i = 0; i < natural_train.size(); ++i) {
    for (int k = 0; k < 4; ++k) {
      train.emplace_back("natural" + std::to_string(i) + "_" + std::to_string(k),
                         make_clip(natural_train[i], train_clip, ++s));
    }
  }
  for (int i = 0; i < synthetic_sources; ++i) {
    const Frame tex = synthetic_texture(192, 192, seed * 7919ULL + i);
    for (int k = 0; k < 3; ++k) {
      train.emplace_back("synthetic" + std::to_string(i) + "_" + std::to_string(k),
                         make_clip(tex, train_clip, ++s));
    }
  }
  const ClipOptions held_clip{7, 160, 160, 1};
  const auto natural_held = load_png_dir(data_dir / "natural" / "heldout");
  for (std::size_t i = 0; i < natural_held.size(); ++i) {
    heldout.emplace_back("heldout" + std::to_string(i),
                         make_clip(natural_held[i], held_clip, ++s));
  }
  if (train.empty() || heldout.empty()) {
    throw ValidationError("desk corpus: no images under " + data_dir.string());
  }
  return {build_pairs(train, codec), build_pairs(heldout, codec)};
}

// ---------------------------------------------------------------- sampling

Tensor<float> augment(const Tensor<float>& t, int rotations, bool flip) {
  rotations = ((rotations % 4) + 4) % 4;
  if (rotations % 2 == 1 && t.h() != t.w()) {
    throw ValidationError("augment: odd rotations need square patches");
  }
  Tensor<float> out(t.shape());
  const int h = t.h(), w = t.w();
  for (int n = 0; n < t.n(); ++n) {
    for (int c = 0; c < t.c(); ++c) {
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          // Rotate (y, x) counter-clockwise `rotations` times, then mirror.
          int ry = y, rx = x;
          for (int r = 0; r < rotations; ++r) {
            const int ny = w - 1 - rx, nx = ry;
            ry = ny;
            rx = nx;
          }
          if (flip) rx = w - 1 - rx;
          out(n, c, ry, rx) = t(n, c, y, x);
        }
      }
    }
  }
  return out;
}

namespace {

Tensor<float> crop(const Frame& f, int y0, int x0, int size) {
  Tensor<float> t(1, f.channels(), size, size);
  for (int c = 0; c < f.channels(); ++c)
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) t(0, c, y, x) = f.at(c, y0 + y, x0 + x);
  return t;
}

}  // namespace

Sampler::Sampler(const Dataset& data, const TrainConfig& cfg, std::uint64_t seed)
    : data_(data), cfg_(cfg), rng_(seed) {
  if (data.pairs.empty()) throw ValidationError("training dataset is empty");
  for (const auto& clip : data.clips) {
    if (clip.original.width() < cfg.patch_size || clip.original.height() < cfg.patch_size) {
      throw ValidationError("patch_size exceeds clip '" + clip.name + "' dimensions");
    }
  }
}

Batch<float> Sampler::next(bool with_reference) {
  const int p = cfg_.patch_size;
  Batch<float> b;
  b.compressed = Tensor<float>(cfg_.batch_size, 3, p, p);
  b.target = Tensor<float>(cfg_.batch_size, 3, p, p);
  if (with_reference) b.reference = Tensor<float>(cfg_.batch_size, 3, p, p);
  const int n_pairs = static_cast<int>(data_.pairs.size());
  const int n_clips = static_cast<int>(data_.clips.size());
  for (int n = 0; n < cfg_.batch_size; ++n) {
    const PairRef pr = data_.pairs[uniform_int(rng_, 0, n_pairs - 1)];
    const Clip& clip = data_.clips[pr.clip];
    const int y0 = uniform_int(rng_, 0, clip.original.height() - p);
    const int x0 = uniform_int(rng_, 0, clip.original.width() - p);
    const int rot = cfg_.augment ? uniform_int(rng_, 0, 3) : 0;
    const bool flip = cfg_.augment && uniform_int(rng_, 0, 1) == 1;
    auto put = [&](Tensor<float>& dst, const Frame& f, int y, int x) {
      const Tensor<float> a = augment(crop(f, y, x, p), rot, flip);
      std::copy(a.values().begin(), a.values().end(), dst.sample(n).begin());
    };
    put(b.compressed, clip.compressed.frames[pr.frame], y0, x0);
    put(b.target, clip.original.frames[pr.frame], y0, x0);
    if (!with_reference) continue;
    const bool irrelevant = n_clips > 1 && unit(rng_) < cfg_.irrelevant_ref_prob;
    if (irrelevant) {
      int other = uniform_int(rng_, 0, n_clips - 2);
      if (other >= pr.clip) ++other;
      const Clip& oc = data_.clips[other];
      const int ry = uniform_int(rng_, 0, oc.original.height() - p);
      const int rx = uniform_int(rng_, 0, oc.original.width() - p);
      put(b.reference, oc.original.frames[oc.reference_indices.front()], ry, rx);
    } else {
      put(b.reference, clip.original.frames[clip.reference_for(pr.frame)], y0, x0);
    }
  }
  return b;
}

// ---------------------------------------------------------------- optimiser

AdamW::AdamW(const Weights<float>& like, const TrainConfig& cfg)
    : m_(like.zeros_like()), v_(like.zeros_like()), cfg_(cfg) {}

void AdamW::step(Weights<float>& w, const Weights<float>& grads,
                 const std::function<bool(const std::string&)>& trainable) {
  ++t_;
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (auto& [name, param] : w.tensors) {
    if (!trainable(name)) continue;
    const float* g = grads.at(name).data();
    float* m = m_.at(name).data();
    float* v = v_.at(name).data();
    float* p = param.data();
    for (std::size_t i = 0; i < param.size(); ++i) {
      m[i] = static_cast<float>(cfg_.beta1 * m[i] + (1 - cfg_.beta1) * g[i]);
      v[i] = static_cast<float>(cfg_.beta2 * v[i] + (1 - cfg_.beta2) * g[i] * g[i]);
      const double mhat = m[i] / c1, vhat = v[i] / c2;
      const double upd = mhat / (std::sqrt(vhat) + cfg_.eps) + cfg_.weight_decay * p[i];
      p[i] = static_cast<float>(p[i] - cfg_.lr * upd);
    }
  }
}

// ---------------------------------------------------------------- training

namespace {

bool all_finite(const Weights<float>& g) {
  for (const auto& [name, t] : g.tensors) {
    for (float v : t.values()) {
      if (!std::isfinite(v)) return false;
    }
  }
  return true;
}

struct RunSpec {
  Objective objective;
  bool train_step1;
  int iterations;
  std::string phase;
  RefChoice val_choice;
};

TrainResult run(Weights<float> w, const Dataset& data, const TrainConfig& cfg,
                const RunSpec& rs, const TrainHooks& hooks, std::uint64_t stream,
                const std::string& frozen_hash) {
  cfg.validate();
  const auto start = std::chrono::steady_clock::now();
  const bool with_ref = rs.objective != Objective::kGeneral;
  Sampler sampler(data, cfg, cfg.seed * 0x9E3779B97F4A7C15ULL + stream);
  AdamW opt(w, cfg);
  const auto trainable = [&](const std::string& name) {
    return rs.train_step1 || !restoration::is_step1(name);
  };
  Weights<float> grads = w.zeros_like();

  auto make_ckpt = [&](const Weights<float>& weights) {
    checkpoint::Checkpoint c;
    c.weights = weights;
    c.train_config_json = cfg.to_json();
    c.step1_frozen_hash = frozen_hash;
    c.phase = rs.phase;
    return c;
  };

  TrainResult result;
  Weights<float> last_good = w;
  double window = 0.0;
  int window_n = 0;
  for (int it = 1; it <= rs.iterations; ++it) {
    for (auto& [name, g] : grads.tensors) {
      if (trainable(name)) g.fill(0.0f);
    }
    const Batch<float> batch = sampler.next(with_ref);
    const double loss = restoration::loss_and_grad(w, batch, rs.objective, rs.train_step1,
                                                   &grads, cfg.loss);
    if (!std::isfinite(loss) || !all_finite(grads)) {
      throw TrainingError(rs.phase + ": non-finite loss at iteration " + std::to_string(it),
                          make_ckpt(last_good));
    }
    last_good = w;
    opt.step(w, grads, trainable);
    window += loss;
    ++window_n;
    if (it % cfg.val_every == 0 || it == rs.iterations) {
      LogRow row;
      row.iteration = it;
      row.loss = window / window_n;
      row.val_psnr = std::numeric_limits<double>::quiet_NaN();
      if (hooks.validation != nullptr && !hooks.validation->clips.empty()) {
        row.val_psnr = evaluate(*hooks.validation, w, rs.val_choice).psnr_restored;
      }
      window = 0.0;
      window_n = 0;
      result.log.push_back(row);
      if (hooks.on_log) hooks.on_log(row);
    }
  }
  result.checkpoint = make_ckpt(w);
  result.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

}  // namespace

TrainResult train_step1(const Dataset& data, const TrainConfig& cfg, const NetworkSpec& spec,
                        const TrainHooks& hooks) {
  const RunSpec rs{Objective::kGeneral, true, cfg.iterations_step1, "step1", RefChoice::kNone};
  return run(restoration::init_weights(spec, cfg.seed), data, cfg, rs, hooks, 1, "");
}

TrainResult train_step2(const Dataset& data, const TrainConfig& cfg,
                        const checkpoint::Checkpoint& step1, const TrainHooks& hooks) {
  if (step1.phase != "step1" && step1.phase != "step2") {
    throw ValidationError("train_step2 needs a step-1 checkpoint, got phase '" +
                          step1.phase + "'");
  }
  const std::string before = checkpoint::step1_digest(step1.weights);
  const RunSpec rs{Objective::kReference, false, cfg.iterations_step2, "step2",
                   RefChoice::kRelevant};
  TrainResult r = run(step1.weights, data, cfg, rs, hooks, 2, before);
  if (checkpoint::step1_digest(r.checkpoint.weights) != before) {
    throw StateError("step-1 tensors changed during step-2 training");
  }
  return r;
}

TrainResult train_end_to_end(const Dataset& data, const TrainConfig& cfg,
                             const NetworkSpec& spec, const TrainHooks& hooks) {
  const RunSpec rs{Objective::kJoint, true, cfg.iterations_end_to_end, "end_to_end",
                   RefChoice::kRelevant};
  return run(restoration::init_weights(spec, cfg.seed), data, cfg, rs, hooks, 3, "");
}

void write_log_csv(const std::filesystem::path& path, const std::vector<LogRow>& rows) {
  std::string text = "iteration,loss,val_psnr\n";
  char line[128];
  for (const auto& r : rows) {
    if (std::isnan(r.val_psnr)) {
      std::snprintf(line, sizeof line, "%d,%.9g,\n", r.iteration, r.loss);
    } else {
      std::snprintf(line, sizeof line, "%d,%.9g,%.6f\n", r.iteration, r.loss, r.val_psnr);
    }
    text += line;
  }
  io::write_file_atomic(path, reinterpret_cast<const std::uint8_t*>(text.data()), text.size());
}

// ---------------------------------------------------------------- evaluation

EvalResult evaluate(const Dataset& data, const Weights<float>& w, RefChoice choice) {
  double sum_c = 0.0, sum_r = 0.0;
  int frames = 0;
  const int n_clips = static_cast<int>(data.clips.size());
  for (int ci = 0; ci < n_clips; ++ci) {
    const Clip& clip = data.clips[ci];
    const int t_count = clip.compressed.frame_count();
    // Group frames by the reference they use so f_r is computed once each.
    std::map<int, std::vector<int>> groups;
    for (int t = 0; t < t_count; ++t) groups[clip.reference_for(t)].push_back(t);
    for (const auto& [ref_idx, ts] : groups) {
      Tensor<float> c(static_cast<int>(ts.size()), 3, clip.compressed.height(),
                      clip.compressed.width());
      for (std::size_t k = 0; k < ts.size(); ++k) {
        copy_into_batch(clip.compressed.frames[ts[k]], c, static_cast<int>(k));
      }
      Tensor<float> y;
      if (choice == RefChoice::kNone) {
        y = restoration::general_enhance(c, w);
      } else {
        const Frame* ref = &clip.original.frames[ref_idx];
        if (choice == RefChoice::kIrrelevant) {
          if (n_clips < 2) throw ValidationError("irrelevant reference needs >= 2 clips");
          const Clip& other = data.clips[(ci + 1) % n_clips];
          ref = &other.original.frames[other.reference_indices.front()];
          if (!ref->same_layout(clip.original.frames[0])) {
            throw ValidationError("irrelevant reference has a different frame size");
          }
        }
        const Tensor<float> f_r = restoration::encode_reference_features(to_tensor(*ref), w);
        y = restoration::reference_enhance(c, f_r, w);
      }
      for (std::size_t k = 0; k < ts.size(); ++k) {
        const Frame restored = from_tensor(y, static_cast<int>(k));
        const Frame& orig = clip.original.frames[ts[k]];
        sum_c += metrics::psnr(clip.compressed.frames[ts[k]], orig);
        sum_r += metrics::psnr(restored, orig);
        ++frames;
      }
    }
  }
  if (frames == 0) throw ValidationError("evaluate: empty dataset");
  return {sum_c / frames, sum_r / frames};
}

}  // namespace hvc::training
