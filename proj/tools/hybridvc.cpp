// hybridvc: encode / decode / train / eval / detect.
//
// Machine-readable JSON goes to stdout, progress to stderr. Exit codes:
// 0 ok, 1 unexpected error, 2 external codec failure, 3 validation or state
// error, 4 malformed input file.

#include <CLI11.hpp>
#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "hybridvc/checkpoint.hpp"
#include "hybridvc/codecs.hpp"
#include "hybridvc/image_io.hpp"
#include "hybridvc/metrics.hpp"
#include "hybridvc/pipeline.hpp"
#include "hybridvc/scenedetect.hpp"
#include "hybridvc/training.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace hvc;

namespace {

constexpr const char* kVersion = "0.1.0";

VideoSequence read_video(const fs::path& path, double fps) {
  if (fs::is_directory(path)) {
    VideoSequence v;
    v.fps = fps;
    v.frames = training::load_png_dir(path);
    if (v.frames.empty()) throw ValidationError("no PNG frames in " + path.string());
    return v;
  }
  if (path.extension() == ".y4m") return io::read_y4m(path);
  if (path.extension() == ".png") {
    VideoSequence v;
    v.fps = fps;
    v.frames.push_back(io::read_png(path));
    return v;
  }
  throw ValidationError("unsupported video input " + path.string() +
                        " (expected .y4m, .png or a directory of PNGs)");
}

void write_video(const fs::path& path, const VideoSequence& v, bool chroma420) {
  if (path.extension() == ".y4m") {
    io::write_y4m(path, v, chroma420 ? io::ChromaFormat::k420 : io::ChromaFormat::k444);
    return;
  }
  fs::create_directories(path);
  char name[32];
  for (int t = 0; t < v.frame_count(); ++t) {
    std::snprintf(name, sizeof name, "frame_%05d.png", t);
    io::write_png(path / name, v.frames[t]);
  }
}

void require_input(const fs::path& p) {
  if (!fs::exists(p)) throw ValidationError("input does not exist: " + p.string());
}

void write_text(const fs::path& p, const std::string& s) {
  io::write_file_atomic(p, reinterpret_cast<const std::uint8_t*>(s.data()), s.size());
}

json provenance(const std::string& command, const json& config,
                const std::optional<fs::path>& ckpt) {
  const std::string canon = config.dump();
  json p{{"tool", "hybridvc"},
         {"version", kVersion},
         {"command", command},
         {"config_hash", checkpoint::sha256_hex(
                             reinterpret_cast<const std::uint8_t*>(canon.data()), canon.size())},
         {"config", config}};
  p["checkpoint_hash"] = ckpt ? json(checkpoint::file_digest(*ckpt)) : json(nullptr);
  return p;
}

json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

struct CodecArgs {
  std::string codec = "mock";
  int quality = 50;
  std::string preset = "medium";
  std::string command;
  std::string decode_command;
  std::string ref_codec = "mock";

  codecs::CodecConfig lossy(int q) const {
    codecs::CodecConfig c;
    if (codec == "mock") {
      c = codecs::CodecConfig::mock_lossy(q);
    } else if (codec == "hevc") {
      c = codecs::CodecConfig::hevc_ffmpeg(q);
    } else if (codec == "vvc") {
      c = codecs::CodecConfig::vvc(q);
    } else {
      throw ValidationError("unknown codec '" + codec + "'");
    }
    c.preset = preset;
    if (!command.empty()) c.command_template = command;
    if (!decode_command.empty()) c.decode_command_template = decode_command;
    c.validate();
    return c;
  }
  codecs::CodecConfig lossless() const {
    if (ref_codec == "mock") return codecs::CodecConfig::mock_lossless();
    if (ref_codec == "jpegxl") return codecs::CodecConfig::jpegxl();
    throw ValidationError("unknown reference codec '" + ref_codec + "'");
  }
  json to_json() const {
    return {{"codec", codec},     {"preset", preset},         {"command", command},
            {"decode_command", decode_command}, {"ref_codec", ref_codec}};
  }
};

void add_codec_options(CLI::App* app, CodecArgs& a, bool with_quality) {
  app->add_option("--codec", a.codec, "Lossy codec: mock, hevc, vvc")
      ->check(CLI::IsMember({"mock", "hevc", "vvc"}));
  if (with_quality) {
    app->add_option("--quality,--qp", a.quality, "Mock quality (1-100) or external QP");
  }
  app->add_option("--codec-preset", a.preset, "External encoder preset");
  app->add_option("--command", a.command, "Encoder command template override");
  app->add_option("--decode-command", a.decode_command, "Decoder command template override");
  app->add_option("--ref-codec", a.ref_codec, "Reference codec: mock, jpegxl")
      ->check(CLI::IsMember({"mock", "jpegxl"}));
}

std::optional<restoration::NetworkSpec> preset_spec(const std::string& preset) {
  if (preset.empty()) return std::nullopt;
  if (preset == "desk") return restoration::NetworkSpec::desk();
  if (preset == "full") return restoration::NetworkSpec::full();
  throw ValidationError("unknown preset '" + preset + "'");
}

// ---------------------------------------------------------------- encode

struct EncodeArgs {
  fs::path input, output;
  CodecArgs codec;
  std::string ref_policy = "first";
  double scene_threshold = scenedetect::kDefaultThreshold;
  int min_scene_len = scenedetect::kDefaultMinSceneLen;
  double fps = 30.0;
};

int run_encode(const EncodeArgs& a) {
  require_input(a.input);
  const VideoSequence video = read_video(a.input, a.fps);
  pipeline::EncodeOptions opt;
  opt.lossy = a.codec.lossy(a.codec.quality);
  opt.lossless = a.codec.lossless();
  opt.policy = a.ref_policy == "scene-cut" ? scenedetect::ReferencePolicy::kSceneCut
                                           : scenedetect::ReferencePolicy::kFirstOnly;
  opt.scene_threshold = a.scene_threshold;
  opt.min_scene_len = a.min_scene_len;
  const auto rep = pipeline::encode(video, opt);
  io::write_file_atomic(a.output, rep.container);

  json cfg = a.codec.to_json();
  cfg["quality"] = a.codec.quality;
  cfg["ref_policy"] = a.ref_policy;
  cfg["scene_threshold"] = a.scene_threshold;
  cfg["min_scene_len"] = a.min_scene_len;
  json out{{"provenance", provenance("encode", cfg, std::nullopt)},
           {"output", a.output.string()},
           {"width", rep.width},
           {"height", rep.height},
           {"frame_count", rep.frame_count},
           {"lossy_bits", rep.lossy_bits},
           {"lossy_stream_bytes", rep.lossy_stream_bytes},
           {"ref_bits", rep.ref_bits},
           {"framing_bits", rep.framing_bits},
           {"total_bits", rep.total_bits},
           {"lossy_bpp", rep.lossy_bpp()},
           {"ref_bpp", rep.ref_bpp()},
           {"framing_bpp", rep.framing_bpp()},
           {"total_bpp", rep.total_bpp()},
           {"ref_indices", rep.ref_indices}};
  std::cout << out.dump(2) << "\n";
  return 0;
}

// ---------------------------------------------------------------- decode

struct DecodeArgs {
  fs::path input, output;
  std::string checkpoint, ground_truth, psnr_log, preset;
  std::string mode = "raw";
  std::string lossy_decoder = "hevc";
  std::string decode_command;
  double fps = 30.0;
  int workers = 1;
  bool chroma420 = false;
};

int run_decode(const DecodeArgs& a) {
  require_input(a.input);
  pipeline::DecodeOptions opt;
  opt.mode = pipeline::decode_mode_from_string(a.mode);
  opt.fps = a.fps;
  opt.workers = a.workers;
  opt.external_video = a.lossy_decoder == "vvc" ? codecs::CodecConfig::vvc(32)
                                                : codecs::CodecConfig::hevc_ffmpeg(32);
  if (!a.decode_command.empty()) opt.external_video.decode_command_template = a.decode_command;
  std::optional<checkpoint::Checkpoint> ckpt;
  std::optional<fs::path> ckpt_path;
  if (opt.mode != pipeline::DecodeMode::kRaw) {
    if (a.checkpoint.empty()) throw ValidationError("--checkpoint is required for step1/step2");
    require_input(a.checkpoint);
    ckpt_path = fs::path(a.checkpoint);
    ckpt = checkpoint::load(*ckpt_path, preset_spec(a.preset));
    opt.weights = &ckpt->weights;
  }
  const auto dec = pipeline::decode(io::read_file(a.input), opt);
  write_video(a.output, dec.video, a.chroma420);

  json cfg{{"mode", a.mode}, {"lossy_decoder", a.lossy_decoder}, {"preset", a.preset}};
  json out{{"provenance", provenance("decode", cfg, ckpt_path)},
           {"output", a.output.string()},
           {"mode", a.mode},
           {"frame_count", dec.video.frame_count()},
           {"ref_indices", dec.ref_indices},
           {"reference_encoder_passes", dec.reference_encoder_passes}};
  if (!a.ground_truth.empty()) {
    require_input(a.ground_truth);
    const VideoSequence gt = read_video(a.ground_truth, a.fps);
    if (gt.frame_count() != dec.video.frame_count()) {
      throw ValidationError("ground truth frame count differs from the decoded video");
    }
    std::string csv = "# " + out["provenance"].dump() + "\nframe,psnr_rgb,psnr_y\n";
    json per = json::array();
    double sum = 0.0;
    char line[96];
    for (int t = 0; t < gt.frame_count(); ++t) {
      const double p = metrics::psnr(dec.video.frames[t], gt.frames[t], metrics::PsnrMode::kRgb);
      const double py = metrics::psnr(dec.video.frames[t], gt.frames[t], metrics::PsnrMode::kLuma);
      std::snprintf(line, sizeof line, "%d,%.6f,%.6f\n", t, p, py);
      csv += line;
      per.push_back(number_or_null(p));
      sum += p;
    }
    out["psnr_per_frame"] = per;
    out["psnr_mean"] = number_or_null(sum / gt.frame_count());
    if (!a.psnr_log.empty()) write_text(a.psnr_log, csv);
  }
  std::cout << out.dump(2) << "\n";
  return 0;
}

// ---------------------------------------------------------------- train

struct TrainArgs {
  std::string preset = "desk";
  std::string config;
  std::string phase = "all";
  std::string init;
  fs::path data_dir = HVC_DATA_DIR;
  fs::path out_dir = "train_out";
  std::string deform_source = "f_r";
  // Overrides; applied only when given on the command line.
  double lr = 0;
  int iterations_step1 = 0, iterations_step2 = 0, iterations_end_to_end = 0;
  int patch_size = 0, batch_size = 0, quality = 0;
  std::uint64_t seed = 1;
  std::string loss;
};

json eval_json(const training::Dataset& held, const restoration::Weights<float>& w, bool step2) {
  json j;
  const auto none = training::evaluate(held, w, training::RefChoice::kNone);
  j["psnr_compressed"] = none.psnr_compressed;
  j["psnr_step1"] = none.psnr_restored;
  if (step2) {
    j["psnr_step2_relevant"] =
        training::evaluate(held, w, training::RefChoice::kRelevant).psnr_restored;
    j["psnr_step2_irrelevant"] =
        training::evaluate(held, w, training::RefChoice::kIrrelevant).psnr_restored;
  }
  return j;
}

int run_train(const TrainArgs& a, const CLI::App& app) {
  const auto spec_opt = preset_spec(a.preset);
  restoration::NetworkSpec spec = *spec_opt;
  spec.deform_source = restoration::deform_source_from_string(a.deform_source);
  training::TrainConfig cfg =
      a.preset == "desk" ? training::TrainConfig::desk() : training::TrainConfig{};
  if (!a.config.empty()) {
    require_input(a.config);
    const auto bytes = io::read_file(a.config);
    cfg = training::TrainConfig::from_json(std::string(bytes.begin(), bytes.end()), cfg);
  }
  auto given = [&](const char* name) { return app.get_option(name)->count() > 0; };
  if (given("--lr")) cfg.lr = a.lr;
  if (given("--iterations-step1")) cfg.iterations_step1 = a.iterations_step1;
  if (given("--iterations-step2")) cfg.iterations_step2 = a.iterations_step2;
  if (given("--iterations-end-to-end")) cfg.iterations_end_to_end = a.iterations_end_to_end;
  if (given("--patch-size")) cfg.patch_size = a.patch_size;
  if (given("--batch-size")) cfg.batch_size = a.batch_size;
  if (given("--quality")) cfg.codec_quality = a.quality;
  if (given("--seed")) cfg.seed = a.seed;
  if (given("--loss")) {
    cfg.loss = a.loss == "ms_ssim" ? restoration::LossKind::kMsSsim : restoration::LossKind::kL2;
  }
  cfg.validate();

  fs::create_directories(a.out_dir);
  std::cerr << "building corpus from " << a.data_dir << " (quality " << cfg.codec_quality
            << ")\n";
  const auto corpus = training::build_desk_corpus(a.data_dir, cfg.codec_quality, cfg.seed);
  training::TrainHooks hooks;
  hooks.validation = &corpus.heldout;
  hooks.on_log = [](const training::LogRow& r) {
    std::cerr << "  iter " << r.iteration << " loss " << r.loss << " val_psnr " << r.val_psnr
              << "\n";
  };

  json cfg_json = json::parse(cfg.to_json());
  cfg_json["spec"] = json::parse(checkpoint::spec_to_json(spec));
  cfg_json["phase"] = a.phase;
  json out{{"parameter_count", spec.parameter_count()}, {"train_config", cfg_json}};
  const bool do1 = a.phase == "all" || a.phase == "step1";
  const bool do2 = a.phase == "all" || a.phase == "step2";
  const bool doe = a.phase == "end-to-end";

  std::optional<checkpoint::Checkpoint> step1;
  if (do1) {
    std::cerr << "step 1: " << cfg.iterations_step1 << " iterations\n";
    auto r = training::train_step1(corpus.train, cfg, spec, hooks);
    checkpoint::save(a.out_dir / "step1.ckpt", r.checkpoint);
    training::write_log_csv(a.out_dir / "step1_log.csv", r.log);
    out["step1"] = {{"seconds", r.seconds},
                    {"checkpoint", (a.out_dir / "step1.ckpt").string()},
                    {"heldout", eval_json(corpus.heldout, r.checkpoint.weights, false)}};
    step1 = std::move(r.checkpoint);
  }
  if (do2) {
    if (!step1) {
      if (a.init.empty()) throw ValidationError("--init step-1 checkpoint required");
      require_input(a.init);
      step1 = checkpoint::load(a.init, spec);
    }
    std::cerr << "step 2: " << cfg.iterations_step2 << " iterations\n";
    auto r = training::train_step2(corpus.train, cfg, *step1, hooks);
    checkpoint::save(a.out_dir / "step2.ckpt", r.checkpoint);
    training::write_log_csv(a.out_dir / "step2_log.csv", r.log);
    out["step2"] = {{"seconds", r.seconds},
                    {"checkpoint", (a.out_dir / "step2.ckpt").string()},
                    {"step1_frozen_hash", r.checkpoint.step1_frozen_hash},
                    {"heldout", eval_json(corpus.heldout, r.checkpoint.weights, true)}};
  }
  if (doe) {
    std::cerr << "end-to-end: " << cfg.iterations_end_to_end << " iterations\n";
    auto r = training::train_end_to_end(corpus.train, cfg, spec, hooks);
    checkpoint::save(a.out_dir / "end_to_end.ckpt", r.checkpoint);
    training::write_log_csv(a.out_dir / "end_to_end_log.csv", r.log);
    out["end_to_end"] = {{"seconds", r.seconds},
                         {"checkpoint", (a.out_dir / "end_to_end.ckpt").string()},
                         {"heldout", eval_json(corpus.heldout, r.checkpoint.weights, true)}};
  }
  out["provenance"] = provenance("train", cfg_json, std::nullopt);
  std::cout << out.dump(2) << "\n";
  return 0;
}

// ---------------------------------------------------------------- eval

struct EvalArgs {
  fs::path input;
  CodecArgs codec;
  std::vector<int> qualities{20, 35, 50, 65};
  std::string checkpoint, preset, anchor = "raw";
  std::string ref_policy = "first";
  std::string csv, svg, json_out;
  double fps = 30.0;
  int workers = 1;
};

int run_eval(const EvalArgs& a) {
  require_input(a.input);
  const VideoSequence video = read_video(a.input, a.fps);
  pipeline::EvalOptions opt;
  opt.qualities = a.qualities;
  const CodecArgs codec = a.codec;
  opt.lossy_for = [codec](int q) { return codec.lossy(q); };
  opt.lossless = a.codec.lossless();
  opt.policy = a.ref_policy == "scene-cut" ? scenedetect::ReferencePolicy::kSceneCut
                                           : scenedetect::ReferencePolicy::kFirstOnly;
  opt.workers = a.workers;
  std::optional<checkpoint::Checkpoint> ckpt;
  std::optional<fs::path> ckpt_path;
  if (!a.checkpoint.empty()) {
    require_input(a.checkpoint);
    ckpt_path = fs::path(a.checkpoint);
    ckpt = checkpoint::load(*ckpt_path, preset_spec(a.preset));
    opt.weights = &ckpt->weights;
  }
  const auto points = pipeline::evaluate_rd(video, opt);

  json cfg = a.codec.to_json();
  cfg["qualities"] = a.qualities;
  cfg["ref_policy"] = a.ref_policy;
  cfg["anchor"] = a.anchor;
  const json prov = provenance("eval", cfg, ckpt_path);

  std::string csv = "# " + prov.dump() + "\nlabel,bpp,psnr_rgb,psnr_y,ms_ssim\n";
  char line[160];
  json rows = json::array();
  for (const auto& p : points) {
    if (std::isnan(p.ms_ssim)) {
      std::snprintf(line, sizeof line, "%s,%.8f,%.6f,%.6f,\n", p.label().c_str(), p.bpp,
                    p.psnr_rgb, p.psnr_y);
    } else {
      std::snprintf(line, sizeof line, "%s,%.8f,%.6f,%.6f,%.8f\n", p.label().c_str(), p.bpp,
                    p.psnr_rgb, p.psnr_y, p.ms_ssim);
    }
    csv += line;
    rows.push_back({{"label", p.label()},
                    {"method", p.method},
                    {"quality", p.quality},
                    {"bpp", p.bpp},
                    {"psnr_rgb", number_or_null(p.psnr_rgb)},
                    {"psnr_y", number_or_null(p.psnr_y)},
                    {"ms_ssim", number_or_null(p.ms_ssim)}});
  }

  json summary{{"provenance", prov}, {"points", rows}, {"anchor", a.anchor}};
  json curves = json::object();
  json bd = json::object();
  std::vector<std::string> methods{"raw"};
  if (opt.weights) methods.insert(methods.end(), {"step1", "step2"});
  auto anchor_curve = pipeline::curve_for(points, a.anchor, metrics::MetricKind::kPsnr);
  for (const auto& m : methods) {
    auto c = pipeline::curve_for(points, m, metrics::MetricKind::kPsnr);
    json cj{{"points", static_cast<int>(c.points.size())}};
    try {
      const auto warnings = c.validate();
      cj["valid"] = true;
      cj["monotone"] = warnings.empty();
      cj["warnings"] = warnings;
    } catch (const ValidationError& e) {
      cj["valid"] = false;
      cj["error"] = e.what();
    }
    curves[m] = cj;
    if (m == a.anchor) continue;
    json entry;
    try {
      entry["bdbr_psnr"] = metrics::bdbr(anchor_curve, c);
    } catch (const Error& e) {
      entry["bdbr_psnr"] = nullptr;
      entry["error"] = e.what();
    }
    const auto ma = pipeline::curve_for(points, a.anchor, metrics::MetricKind::kMsSsim);
    const auto mc = pipeline::curve_for(points, m, metrics::MetricKind::kMsSsim);
    try {
      entry["bdbr_ms_ssim"] = metrics::bdbr(ma, mc);
    } catch (const Error&) {
      entry["bdbr_ms_ssim"] = nullptr;
    }
    bd[m] = entry;
  }
  summary["curves"] = curves;
  summary["bdbr"] = bd;

  if (!a.csv.empty()) write_text(a.csv, csv);
  if (!a.svg.empty()) write_text(a.svg, pipeline::rd_svg(points));
  if (!a.json_out.empty()) write_text(a.json_out, summary.dump(2) + "\n");
  std::cout << summary.dump(2) << "\n";
  return 0;
}

// ---------------------------------------------------------------- detect

struct DetectArgs {
  fs::path input;
  double threshold = scenedetect::kDefaultThreshold;
  int min_scene_len = scenedetect::kDefaultMinSceneLen;
  double fps = 30.0;
};

int run_detect(const DetectArgs& a) {
  require_input(a.input);
  if (!(a.threshold > 0.0)) throw ValidationError("--scene-threshold must be positive");
  const VideoSequence video = read_video(a.input, a.fps);
  if (video.frame_count() < 2) throw ValidationError("detect needs at least two frames");
  const auto cuts = scenedetect::detect_cuts(video, a.threshold, a.min_scene_len);
  std::cout << json(cuts.cut_indices).dump() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hybrid video codec: lossy stream + lossless references + learned restoration"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  EncodeArgs enc;
  auto* c_enc = app.add_subcommand("encode", "Encode a video into a .hvc container");
  c_enc->add_option("input", enc.input, "Input .y4m, .png or directory of PNG frames")->required();
  c_enc->add_option("-o,--output", enc.output, "Output .hvc file")->required();
  add_codec_options(c_enc, enc.codec, true);
  c_enc->add_option("--ref-policy", enc.ref_policy, "first or scene-cut")
      ->check(CLI::IsMember({"first", "scene-cut"}));
  c_enc->add_option("--scene-threshold", enc.scene_threshold);
  c_enc->add_option("--min-scene-len", enc.min_scene_len);
  c_enc->add_option("--fps", enc.fps, "Frame rate for PNG input");

  DecodeArgs dec;
  auto* c_dec = app.add_subcommand("decode", "Decode a .hvc container, optionally restoring it");
  c_dec->add_option("input", dec.input, "Input .hvc file")->required();
  c_dec->add_option("-o,--output", dec.output, "Output .y4m or PNG directory")->required();
  c_dec->add_option("--mode", dec.mode, "raw, step1 or step2")
      ->check(CLI::IsMember({"raw", "step1", "step2"}));
  c_dec->add_option("--checkpoint", dec.checkpoint, "Network weights (.ckpt)");
  c_dec->add_option("--preset", dec.preset, "Expected network preset (desk, full)");
  c_dec->add_option("--ground-truth", dec.ground_truth, "Original video for per-frame PSNR");
  c_dec->add_option("--psnr-log", dec.psnr_log, "CSV file for per-frame PSNR");
  c_dec->add_option("--lossy-decoder", dec.lossy_decoder, "hevc or vvc for external streams")
      ->check(CLI::IsMember({"hevc", "vvc"}));
  c_dec->add_option("--decode-command", dec.decode_command, "Decoder command template override");
  c_dec->add_option("--fps", dec.fps);
  c_dec->add_option("--workers", dec.workers, "Frames restored in parallel");
  c_dec->add_flag("--chroma420", dec.chroma420, "Write 4:2:0 Y4M instead of 4:4:4");

  TrainArgs tr;
  auto* c_tr = app.add_subcommand("train", "Train the restoration network");
  c_tr->add_option("--preset", tr.preset, "desk or full")->check(CLI::IsMember({"desk", "full"}));
  c_tr->add_option("--config", tr.config, "JSON training config");
  c_tr->add_option("--phase", tr.phase, "all, step1, step2 or end-to-end")
      ->check(CLI::IsMember({"all", "step1", "step2", "end-to-end"}));
  c_tr->add_option("--init", tr.init, "Step-1 checkpoint for --phase step2");
  c_tr->add_option("--data", tr.data_dir, "Directory holding natural/train and natural/heldout");
  c_tr->add_option("-o,--out-dir", tr.out_dir, "Output directory");
  c_tr->add_option("--deform-source", tr.deform_source, "f_r or f_g")
      ->check(CLI::IsMember({"f_r", "f_g"}));
  c_tr->add_option("--lr", tr.lr);
  c_tr->add_option("--iterations-step1", tr.iterations_step1);
  c_tr->add_option("--iterations-step2", tr.iterations_step2);
  c_tr->add_option("--iterations-end-to-end", tr.iterations_end_to_end);
  c_tr->add_option("--patch-size", tr.patch_size);
  c_tr->add_option("--batch-size", tr.batch_size);
  c_tr->add_option("--quality", tr.quality, "Mock codec quality of the training pairs");
  c_tr->add_option("--seed", tr.seed);
  c_tr->add_option("--loss", tr.loss, "l2 or ms_ssim")->check(CLI::IsMember({"l2", "ms_ssim"}));

  EvalArgs ev;
  auto* c_ev = app.add_subcommand("eval", "Rate-distortion sweep with BD-rate summary");
  c_ev->add_option("input", ev.input, "Input .y4m, .png or directory of PNG frames")->required();
  add_codec_options(c_ev, ev.codec, false);
  c_ev->add_option("--qualities,--qps", ev.qualities, "Quality / QP points")
      ->delimiter(',');
  c_ev->add_option("--checkpoint", ev.checkpoint, "Network weights; adds step1/step2 curves");
  c_ev->add_option("--preset", ev.preset, "Expected network preset (desk, full)");
  c_ev->add_option("--anchor", ev.anchor, "Method used as BD-rate anchor")
      ->check(CLI::IsMember({"raw", "step1", "step2"}));
  c_ev->add_option("--ref-policy", ev.ref_policy)->check(CLI::IsMember({"first", "scene-cut"}));
  c_ev->add_option("--csv", ev.csv, "Write RD points as CSV");
  c_ev->add_option("--svg", ev.svg, "Write an RD plot");
  c_ev->add_option("--json", ev.json_out, "Write the JSON summary to a file as well");
  c_ev->add_option("--fps", ev.fps);
  c_ev->add_option("--workers", ev.workers);

  DetectArgs de;
  auto* c_de = app.add_subcommand("detect", "Print scene cut indices as JSON");
  c_de->add_option("input", de.input, "Input .y4m or directory of PNG frames")->required();
  c_de->add_option("--scene-threshold", de.threshold);
  c_de->add_option("--min-scene-len", de.min_scene_len);
  c_de->add_option("--fps", de.fps);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return e.get_exit_code() == 0 ? app.exit(e) : (app.exit(e), 3);
  }

  try {
    if (c_enc->parsed()) return run_encode(enc);
    if (c_dec->parsed()) return run_decode(dec);
    if (c_tr->parsed()) return run_train(tr, *c_tr);
    if (c_ev->parsed()) return run_eval(ev);
    if (c_de->parsed()) return run_detect(de);
  } catch (const CodecProcessError& e) {
    std::cerr << "codec error: " << e.what() << "\n";
    if (!e.stderr_text().empty()) std::cerr << e.stderr_text() << "\n";
    return 2;
  } catch (const FormatError& e) {
    std::cerr << "format error: " << e.what() << "\n";
    return 4;
  } catch (const Error& e) {
    // Validation, state, domain and scale errors.
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "unexpected error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
