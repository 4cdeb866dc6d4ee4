#include "hybridvc/restoration.hpp"

#include <cmath>
#include <random>

#include "hybridvc/metrics.hpp"
#include "hybridvc/nn/ops.hpp"

namespace hvc::restoration {

namespace {

constexpr int kImageChannels = 3;
constexpr int kOffsetChannels = 2 * nn::kTaps;
constexpr int kPredictorOut = kOffsetChannels + nn::kTaps;

std::size_t conv_params(int ci, int co) {
  return static_cast<std::size_t>(ci) * co * nn::kTaps + co;
}

void add_conv(std::vector<std::pair<std::string, Shape>>& out,
              const std::string& prefix, int ci, int co) {
  out.emplace_back(prefix + ".w", Shape{co, ci, nn::kKernel, nn::kKernel});
  out.emplace_back(prefix + ".b", Shape{1, co, 1, 1});
}

void add_blocks(std::vector<std::pair<std::string, Shape>>& out,
                const std::string& prefix, int blocks, int c) {
  for (int i = 0; i < blocks; ++i) {
    const std::string p = prefix + ".block" + std::to_string(i);
    add_conv(out, p + ".conv1", c, c);
    add_conv(out, p + ".conv2", c, c);
  }
}

std::string offset_layer(int i) { return "step2.offset.conv" + std::to_string(i); }

}  // namespace

NetworkSpec NetworkSpec::desk() { return NetworkSpec{}; }

NetworkSpec NetworkSpec::full() {
  NetworkSpec s;
  s.channels = 64;
  s.encoder_blocks = 12;
  s.decoder_blocks = 12;
  s.ref_encoder_blocks = 8;
  s.offset_layers = 5;
  s.refine_blocks = 15;
  return s;
}

void NetworkSpec::validate() const {
  if (channels < 1 || encoder_blocks < 1 || decoder_blocks < 1 ||
      ref_encoder_blocks < 1 || offset_layers < 1 || refine_blocks < 1) {
    throw ValidationError("network spec: all counts must be >= 1");
  }
}

std::vector<std::pair<std::string, Shape>> NetworkSpec::layout() const {
  validate();
  const int c = channels;
  std::vector<std::pair<std::string, Shape>> out;
  add_conv(out, "step1.enc.in", kImageChannels, c);
  add_blocks(out, "step1.enc", encoder_blocks, c);
  add_blocks(out, "step1.dec", decoder_blocks, c);
  add_conv(out, "step1.dec.out", c, kImageChannels);
  add_conv(out, "step2.ref.in", kImageChannels, c);
  add_blocks(out, "step2.ref", ref_encoder_blocks, c);
  for (int i = 0; i < offset_layers; ++i) {
    const int ci = i == 0 ? 2 * c : c;
    const int co = i == offset_layers - 1 ? kPredictorOut : c;
    add_conv(out, offset_layer(i), ci, co);
  }
  add_conv(out, "step2.deform", c, c + 1);
  add_blocks(out, "step2.refine", refine_blocks, c);
  return out;
}

std::size_t NetworkSpec::parameter_count() const {
  validate();
  const int c = channels;
  const std::size_t block = 2 * conv_params(c, c);
  std::size_t n = conv_params(kImageChannels, c) + encoder_blocks * block;
  n += decoder_blocks * block + conv_params(c, kImageChannels);
  n += conv_params(kImageChannels, c) + ref_encoder_blocks * block;
  if (offset_layers == 1) {
    n += conv_params(2 * c, kPredictorOut);
  } else {
    n += conv_params(2 * c, c) + (offset_layers - 2) * conv_params(c, c) +
         conv_params(c, kPredictorOut);
  }
  n += conv_params(c, c + 1);
  n += refine_blocks * block;
  return n;
}

std::string to_string(DeformSource s) {
  return s == DeformSource::kReference ? "f_r" : "f_g";
}

DeformSource deform_source_from_string(const std::string& s) {
  if (s == "f_r" || s == "reference") return DeformSource::kReference;
  if (s == "f_g" || s == "general") return DeformSource::kGeneral;
  throw ValidationError("unknown deform source '" + s + "'");
}

template <typename T>
const Tensor<T>& Weights<T>::at(const std::string& name) const {
  const auto it = tensors.find(name);
  if (it == tensors.end()) throw ValidationError("missing weight tensor " + name);
  return it->second;
}

template <typename T>
Tensor<T>& Weights<T>::at(const std::string& name) {
  const auto it = tensors.find(name);
  if (it == tensors.end()) throw ValidationError("missing weight tensor " + name);
  return it->second;
}

template <typename T>
Weights<T> Weights<T>::zeros_like() const {
  Weights<T> z;
  z.spec = spec;
  for (const auto& [name, t] : tensors) z.tensors.emplace(name, Tensor<T>(t.shape()));
  return z;
}

template <typename T>
template <typename U>
Weights<U> Weights<T>::cast() const {
  Weights<U> out;
  out.spec = spec;
  for (const auto& [name, t] : tensors) out.tensors.emplace(name, t.template cast<U>());
  return out;
}

template <typename T>
void Weights<T>::check_finite() const {
  for (const auto& [name, t] : tensors) {
    for (T v : t.values()) {
      if (!std::isfinite(static_cast<double>(v))) {
        throw ValidationError("non-finite value in weight tensor " + name);
      }
    }
  }
}

Weights<float> init_weights(const NetworkSpec& spec, std::uint64_t seed) {
  Weights<float> w;
  w.spec = spec;
  std::mt19937_64 rng(seed);
  for (const auto& [name, shape] : spec.layout()) {
    Tensor<float> t(shape);
    const bool is_bias = name.back() == 'b';
    if (!is_bias) {
      const double fan_in = static_cast<double>(shape.c) * shape.h * shape.w;
      double scale = std::sqrt(2.0 / fan_in);
      if (name.ends_with("conv2.w") || name == "step1.dec.out.w") scale *= 0.1;
      std::normal_distribution<double> dist(0.0, scale);
      for (float& v : t.values()) v = static_cast<float>(dist(rng));
      if (name == offset_layer(spec.offset_layers - 1) + ".w") t.fill(0.0f);
      if (name == "step2.deform.w") {
        // Feature rows start at zero; only the confidence row is random.
        const std::size_t row = static_cast<std::size_t>(shape.c) * shape.h * shape.w;
        std::fill(t.data(), t.data() + row * spec.channels, 0.0f);
      }
    }
    w.tensors.emplace(name, std::move(t));
  }
  return w;
}

namespace {

template <typename T>
std::span<const T> bias_of(const Weights<T>& w, const std::string& prefix) {
  return w.at(prefix + ".b").values();
}

template <typename T>
Tensor<T> conv(const Weights<T>& w, const std::string& prefix, const Tensor<T>& x) {
  Tensor<T> y;
  nn::conv2d(x, w.at(prefix + ".w"), bias_of(w, prefix), y);
  return y;
}

// Backprop through one conv. Parameter gradients go to g when g != nullptr.
template <typename T>
void conv_back(const Weights<T>& w, const std::string& prefix, const Tensor<T>& x,
               const Tensor<T>& dy, Tensor<T>* dx, Weights<T>* g) {
  nn::conv2d_backward(x, w.at(prefix + ".w"), dy, dx,
                      g ? &g->at(prefix + ".w") : nullptr,
                      g ? g->at(prefix + ".b").data() : nullptr);
}

template <typename T>
Tensor<T> leaky(const Tensor<T>& x) {
  Tensor<T> y;
  nn::leaky_relu(x, y);
  return y;
}

template <typename T>
struct BlockTrace {
  Tensor<T> x, h1, a1;
};

template <typename T>
struct StackTrace {
  Tensor<T> stem_in, stem_pre;
  std::vector<BlockTrace<T>> blocks;
};

template <typename T>
Tensor<T> blocks_forward(const Weights<T>& w, const std::string& prefix, int count,
                         Tensor<T> x, StackTrace<T>* tr) {
  for (int i = 0; i < count; ++i) {
    const std::string p = prefix + ".block" + std::to_string(i);
    Tensor<T> h1 = conv(w, p + ".conv1", x);
    Tensor<T> a1 = leaky(h1);
    Tensor<T> y = conv(w, p + ".conv2", a1);
    nn::add_inplace(y, x);
    if (tr) {
      tr->blocks.push_back({std::move(x), std::move(h1), std::move(a1)});
    }
    x = std::move(y);
  }
  return x;
}

template <typename T>
Tensor<T> blocks_backward(const Weights<T>& w, const std::string& prefix,
                          const StackTrace<T>& tr, Tensor<T> dy, Weights<T>* g) {
  for (int i = static_cast<int>(tr.blocks.size()) - 1; i >= 0; --i) {
    const std::string p = prefix + ".block" + std::to_string(i);
    const auto& b = tr.blocks[i];
    Tensor<T> da1, dh1, dx;
    conv_back(w, p + ".conv2", b.a1, dy, &da1, g);
    nn::leaky_relu_backward(b.h1, da1, dh1);
    conv_back(w, p + ".conv1", b.x, dh1, &dx, g);
    nn::add_inplace(dx, dy);
    dy = std::move(dx);
  }
  return dy;
}

// Image -> features: stem conv + leaky, then residual blocks.
template <typename T>
Tensor<T> image_encoder(const Weights<T>& w, const std::string& prefix, int blocks,
                        const Tensor<T>& img, StackTrace<T>* tr) {
  Tensor<T> pre = conv(w, prefix + ".in", img);
  Tensor<T> a = leaky(pre);
  if (tr) {
    tr->stem_in = img;
    tr->stem_pre = std::move(pre);
  }
  return blocks_forward(w, prefix, blocks, std::move(a), tr);
}

template <typename T>
void image_encoder_backward(const Weights<T>& w, const std::string& prefix,
                            const StackTrace<T>& tr, Tensor<T> dy, Weights<T>* g) {
  Tensor<T> da = blocks_backward(w, prefix, tr, std::move(dy), g);
  Tensor<T> dpre;
  nn::leaky_relu_backward(tr.stem_pre, da, dpre);
  conv_back<T>(w, prefix + ".in", tr.stem_in, dpre, nullptr, g);
}

template <typename T>
struct DecoderTrace {
  StackTrace<T> stack;
  Tensor<T> last;
};

template <typename T>
Tensor<T> decoder_forward(const Weights<T>& w, const Tensor<T>& f, const Tensor<T>& c,
                          DecoderTrace<T>* tr) {
  Tensor<T> h = blocks_forward(w, "step1.dec", w.spec.decoder_blocks, f,
                               tr ? &tr->stack : nullptr);
  Tensor<T> y = conv(w, "step1.dec.out", h);
  nn::add_inplace(y, c);
  if (tr) tr->last = std::move(h);
  return y;
}

// Returns d(loss)/d(f).
template <typename T>
Tensor<T> decoder_backward(const Weights<T>& w, const DecoderTrace<T>& tr,
                           const Tensor<T>& dy, Weights<T>* g) {
  Tensor<T> dh;
  conv_back(w, "step1.dec.out", tr.last, dy, &dh, g);
  return blocks_backward(w, "step1.dec", tr.stack, std::move(dh), g);
}

template <typename T>
struct PredictorTrace {
  std::vector<Tensor<T>> inputs, pres;
};

template <typename T>
OffsetsAndMask<T> predictor_forward(const Weights<T>& w, const Tensor<T>& f_g,
                                    const Tensor<T>& f_r, PredictorTrace<T>* tr) {
  require_same_shape(f_g.shape(), f_r.shape(), "predict_offsets");
  Tensor<T> h = nn::concat_channels(f_g, f_r);
  const int layers = w.spec.offset_layers;
  for (int i = 0; i < layers; ++i) {
    Tensor<T> pre = conv(w, offset_layer(i), h);
    if (i == layers - 1) {
      if (tr) tr->inputs.push_back(std::move(h));
      auto [off, logits] = nn::split_channels(pre, kOffsetChannels);
      OffsetsAndMask<T> om;
      om.offset = std::move(off);
      nn::sigmoid(logits, om.mask);
      return om;
    }
    Tensor<T> a = leaky(pre);
    if (tr) {
      tr->inputs.push_back(std::move(h));
      tr->pres.push_back(std::move(pre));
    }
    h = std::move(a);
  }
  throw StateError("unreachable");
}

// Returns (d f_g, d f_r).
template <typename T>
std::pair<Tensor<T>, Tensor<T>> predictor_backward(const Weights<T>& w,
                                                   const PredictorTrace<T>& tr,
                                                   const OffsetsAndMask<T>& om,
                                                   const Tensor<T>& doffset,
                                                   const Tensor<T>& dmask,
                                                   Weights<T>* g) {
  Tensor<T> dlogits;
  nn::sigmoid_backward(om.mask, dmask, dlogits);
  Tensor<T> dy = nn::concat_channels(doffset, dlogits);
  const int layers = w.spec.offset_layers;
  for (int i = layers - 1; i >= 0; --i) {
    if (i < layers - 1) {
      Tensor<T> dpre;
      nn::leaky_relu_backward(tr.pres[i], dy, dpre);
      dy = std::move(dpre);
    }
    Tensor<T> dx;
    conv_back(w, offset_layer(i), tr.inputs[i], dy, &dx, g);
    dy = std::move(dx);
  }
  return nn::split_channels(dy, w.spec.channels);
}

template <typename T>
AlignedFeatures<T> deform_forward(const Weights<T>& w, const Tensor<T>& source,
                                  const OffsetsAndMask<T>& om) {
  Tensor<T> y;
  nn::deform_conv2d(source, om.offset, om.mask, w.at("step2.deform.w"),
                    bias_of(w, "step2.deform"), y);
  auto [feature, logit] = nn::split_channels(y, w.spec.channels);
  AlignedFeatures<T> out;
  out.feature = std::move(feature);
  nn::sigmoid(logit, out.confidence);
  return out;
}


template <typename T>
struct StepTwoTrace {
  Tensor<T> f_r;
  StackTrace<T> ref;
  PredictorTrace<T> predictor;
  OffsetsAndMask<T> om;
  AlignedFeatures<T> aligned;
  StackTrace<T> refine;
  Tensor<T> f_refine;
};

template <typename T>
Tensor<T> fuse_impl(const Tensor<T>& f_g, const Tensor<T>& conf, const Tensor<T>& f_refine) {
  require_same_shape(f_g.shape(), f_refine.shape(), "fuse");
  require_same_shape(conf.shape(), Shape{f_g.n(), 1, f_g.h(), f_g.w()},
                     "fuse confidence");
  Tensor<T> out(f_g.shape());
  const std::size_t plane = static_cast<std::size_t>(f_g.h()) * f_g.w();
  for (int n = 0; n < f_g.n(); ++n) {
    const auto cm = conf.plane(n, 0);
    for (int c = 0; c < f_g.c(); ++c) {
      const auto a = f_g.plane(n, c);
      const auto r = f_refine.plane(n, c);
      auto o = out.plane(n, c);
      for (std::size_t i = 0; i < plane; ++i) o[i] = a[i] + cm[i] * r[i];
    }
  }
  return out;
}

// Step-2 feature path from f_g and the reference image features to f_out.
template <typename T>
Tensor<T> step2_features(const Weights<T>& w, const Tensor<T>& f_g,
                         const Tensor<T>& f_r, const RestoreOptions& opt,
                         StepTwoTrace<T>* tr, Step2Outputs<T>* detail) {
  if (f_r.n() != f_g.n() && f_r.n() != 1) {
    throw ValidationError("reference batch must have 1 or N samples");
  }
  Tensor<T> f_r_batch = f_r;
  if (f_r.n() != f_g.n()) {
    f_r_batch = Tensor<T>(f_g.shape());
    for (int n = 0; n < f_g.n(); ++n) {
      std::copy(f_r.values().begin(), f_r.values().end(), f_r_batch.sample(n).begin());
    }
  }
  OffsetsAndMask<T> om = predictor_forward(w, f_g, f_r_batch, tr ? &tr->predictor : nullptr);
  const Tensor<T>& source =
      w.spec.deform_source == DeformSource::kReference ? f_r_batch : f_g;
  AlignedFeatures<T> aligned = deform_forward(w, source, om);
  if (opt.zero_confidence) aligned.confidence.fill(T(0));
  Tensor<T> f_refine = blocks_forward(w, "step2.refine", w.spec.refine_blocks,
                                      aligned.feature, tr ? &tr->refine : nullptr);
  Tensor<T> f_out = fuse_impl(f_g, aligned.confidence, f_refine);
  if (detail) {
    detail->f_g = f_g;
    detail->f_r = f_r_batch;
    detail->om = om;
    detail->aligned = aligned;
    detail->f_refine = f_refine;
    detail->f_out = f_out;
  }
  if (tr) {
    tr->f_r = std::move(f_r_batch);
    tr->om = std::move(om);
    tr->aligned = std::move(aligned);
    tr->f_refine = std::move(f_refine);
  }
  return f_out;
}

template <typename T>
void check_input(const Tensor<T>& x, const char* what) {
  if (x.c() != kImageChannels) {
    throw ValidationError(std::string(what) + ": expected 3 channels, got " +
                          std::to_string(x.c()));
  }
  for (T v : x.values()) {
    if (!std::isfinite(static_cast<double>(v))) {
      throw ValidationError(std::string(what) + ": non-finite input");
    }
  }
}

template <typename T>
double l2_loss(const Tensor<T>& y, const Tensor<T>& x, Tensor<T>& dy) {
  require_same_shape(y.shape(), x.shape(), "loss");
  dy = Tensor<T>(y.shape());
  const double inv = 1.0 / static_cast<double>(y.size());
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double d = static_cast<double>(y.data()[i]) - x.data()[i];
    s += d * d;
    dy.data()[i] = static_cast<T>(2.0 * d * inv);
  }
  return s * inv;
}

template <typename T>
double ms_ssim_loss(const Tensor<T>& y, const Tensor<T>& x, Tensor<T>& dy) {
  require_same_shape(y.shape(), x.shape(), "loss");
  dy = Tensor<T>(y.shape());
  const int planes = y.n() * y.c();
  const double inv = 1.0 / planes;
  double loss = 0.0;
  std::vector<double> a, b, g(static_cast<std::size_t>(y.h()) * y.w());
  for (int n = 0; n < y.n(); ++n) {
    for (int c = 0; c < y.c(); ++c) {
      a.assign(y.plane(n, c).begin(), y.plane(n, c).end());
      b.assign(x.plane(n, c).begin(), x.plane(n, c).end());
      const double s = metrics::ms_ssim_plane_grad(a, b, y.w(), y.h(), g);
      loss += (1.0 - s) * inv;
      auto d = dy.plane(n, c);
      for (std::size_t i = 0; i < g.size(); ++i) d[i] = static_cast<T>(-g[i] * inv);
    }
  }
  return loss;
}

template <typename T>
double objective_loss(LossKind kind, const Tensor<T>& y, const Tensor<T>& x, Tensor<T>& dy) {
  return kind == LossKind::kMsSsim ? ms_ssim_loss(y, x, dy) : l2_loss(y, x, dy);
}

}  // namespace

template <typename T>
Tensor<T> extract_general_features(const Tensor<T>& c, const Weights<T>& w) {
  check_input(c, "extract_general_features");
  return image_encoder<T>(w, "step1.enc", w.spec.encoder_blocks, c, nullptr);
}

template <typename T>
Tensor<T> encode_reference_features(const Tensor<T>& ref, const Weights<T>& w) {
  check_input(ref, "encode_reference_features");
  return image_encoder<T>(w, "step2.ref", w.spec.ref_encoder_blocks, ref, nullptr);
}

template <typename T>
OffsetsAndMask<T> predict_offsets(const Tensor<T>& f_g, const Tensor<T>& f_r,
                                  const Weights<T>& w) {
  return predictor_forward<T>(w, f_g, f_r, nullptr);
}

template <typename T>
AlignedFeatures<T> align_and_gate(const Tensor<T>& source, const OffsetsAndMask<T>& om,
                                  const Weights<T>& w) {
  return deform_forward(w, source, om);
}

template <typename T>
Tensor<T> refine(const Tensor<T>& f_deform, const Weights<T>& w) {
  return blocks_forward<T>(w, "step2.refine", w.spec.refine_blocks, f_deform, nullptr);
}

template <typename T>
Tensor<T> fuse(const Tensor<T>& f_g, const Tensor<T>& confidence,
               const Tensor<T>& f_refine) {
  return fuse_impl(f_g, confidence, f_refine);
}

template <typename T>
Tensor<T> decode_features(const Tensor<T>& f, const Tensor<T>& c, const Weights<T>& w) {
  return decoder_forward<T>(w, f, c, nullptr);
}

template <typename T>
Tensor<T> general_enhance(const Tensor<T>& c, const Weights<T>& w) {
  return decode_features(extract_general_features(c, w), c, w);
}

template <typename T>
Step2Outputs<T> reference_enhance_detailed(const Tensor<T>& c, const Tensor<T>& f_r,
                                           const Weights<T>& w, RestoreOptions opt) {
  Step2Outputs<T> out;
  const Tensor<T> f_g = extract_general_features(c, w);
  const Tensor<T> f_out = step2_features<T>(w, f_g, f_r, opt, nullptr, &out);
  out.output = decode_features(f_out, c, w);
  return out;
}

template <typename T>
Tensor<T> reference_enhance(const Tensor<T>& c, const Tensor<T>& f_r,
                            const Weights<T>& w, RestoreOptions opt) {
  const Tensor<T> f_g = extract_general_features(c, w);
  const Tensor<T> f_out = step2_features<T>(w, f_g, f_r, opt, nullptr, nullptr);
  return decode_features(f_out, c, w);
}

void ReferenceCache::add(int frame_index, const Frame& reference) {
  if (frame_index < 0) throw ValidationError("reference index must be >= 0");
  features_[frame_index] = encode_reference_features(to_tensor(reference), *weights_);
  ++passes_;
}

std::optional<int> ReferenceCache::reference_index_for(int t) const {
  auto it = features_.upper_bound(t);
  if (it == features_.begin()) return std::nullopt;
  return std::prev(it)->first;
}

const Tensor<float>* ReferenceCache::lookup(int t) const {
  const auto idx = reference_index_for(t);
  return idx ? &features_.at(*idx) : nullptr;
}

Frame restore_frame(const Frame& c_t, const ReferenceCache* cache,
                    const Weights<float>& w, Mode mode, int t, RestoreOptions opt) {
  if (c_t.color_space() != ColorSpace::kRGB) {
    throw ValidationError("restore_frame expects an RGB frame");
  }
  const Tensor<float> c = to_tensor(c_t);
  Tensor<float> y;
  if (mode == Mode::kStep1) {
    y = general_enhance(c, w);
  } else {
    const Tensor<float>* f_r = cache ? cache->lookup(t) : nullptr;
    if (f_r == nullptr) {
      throw StateError("no cached reference at or before frame " + std::to_string(t));
    }
    y = reference_enhance(c, *f_r, w, opt);
  }
  return from_tensor(y, 0, ColorSpace::kRGB, true);
}

void zero_confidence_head(Weights<float>& w) {
  auto& wt = w.at("step2.deform.w");
  const int c = w.spec.channels;
  auto row = wt.sample(c);
  std::fill(row.begin(), row.end(), 0.0f);
  // sigmoid(-1e4) underflows to exactly 0 in float.
  w.at("step2.deform.b").data()[c] = -1.0e4f;
}

template <typename T>
double loss_and_grad(const Weights<T>& w, const Batch<T>& batch, Objective objective,
                     bool train_step1, std::type_identity_t<Weights<T>>* grads, LossKind loss_kind) {
  check_input(batch.compressed, "loss_and_grad");
  require_same_shape(batch.compressed.shape(), batch.target.shape(), "loss_and_grad");
  const bool need_step1 = objective != Objective::kReference;
  const bool need_step2 = objective != Objective::kGeneral;
  if (need_step2 && batch.reference.empty()) {
    throw ValidationError("step-2 objective needs a reference batch");
  }
  Weights<T>* g1 = train_step1 ? grads : nullptr;
  Weights<T>* g2 = grads;
  const bool want_grad = grads != nullptr;

  StackTrace<T> enc_tr;
  const Tensor<T> f_g = image_encoder<T>(w, "step1.enc", w.spec.encoder_blocks,
                                         batch.compressed, g1 ? &enc_tr : nullptr);
  Tensor<T> df_g;
  double loss = 0.0;

  if (need_step1) {
    DecoderTrace<T> dec_tr;
    const Tensor<T> y = decoder_forward(w, f_g, batch.compressed, want_grad ? &dec_tr : nullptr);
    Tensor<T> dy;
    loss += objective_loss(loss_kind, y, batch.target, dy);
    if (g1) df_g = decoder_backward(w, dec_tr, dy, g1);
  }

  if (need_step2) {
    check_input(batch.reference, "loss_and_grad reference");
    StackTrace<T> ref_tr;
    const Tensor<T> f_r = image_encoder<T>(w, "step2.ref", w.spec.ref_encoder_blocks,
                                           batch.reference, want_grad ? &ref_tr : nullptr);
    StepTwoTrace<T> tr;
    const Tensor<T> f_out = step2_features<T>(w, f_g, f_r, {}, want_grad ? &tr : nullptr, nullptr);
    DecoderTrace<T> dec_tr;
    const Tensor<T> y = decoder_forward(w, f_out, batch.compressed, want_grad ? &dec_tr : nullptr);
    Tensor<T> dy;
    loss += objective_loss(loss_kind, y, batch.target, dy);
    if (want_grad) {
      // Decoder input gradient is always needed; its weights only train with step 1.
      const Tensor<T> df_out = decoder_backward(w, dec_tr, dy, g1);

      // Fuse: f_out = f_g + C * f_refine.
      const Tensor<T>& conf = tr.aligned.confidence;
      Tensor<T> dconf(conf.shape());
      Tensor<T> df_refine(df_out.shape());
      const std::size_t plane = static_cast<std::size_t>(f_g.h()) * f_g.w();
      for (int n = 0; n < f_g.n(); ++n) {
        const auto cm = conf.plane(n, 0);
        auto dc = dconf.plane(n, 0);
        for (int c = 0; c < f_g.c(); ++c) {
          const auto go = df_out.plane(n, c);
          const auto r = tr.f_refine.plane(n, c);
          auto dr = df_refine.plane(n, c);
          for (std::size_t i = 0; i < plane; ++i) {
            dc[i] += go[i] * r[i];
            dr[i] = cm[i] * go[i];
          }
        }
      }

      const Tensor<T> dfeature =
          blocks_backward(w, "step2.refine", tr.refine, std::move(df_refine), g2);
      Tensor<T> dlogit;
      nn::sigmoid_backward(conf, dconf, dlogit);
      const Tensor<T> dy_deform = nn::concat_channels(dfeature, dlogit);
      const bool from_ref = w.spec.deform_source == DeformSource::kReference;
      const Tensor<T>& source = from_ref ? tr.f_r : f_g;
      Tensor<T> dsource, doffset, dmask;
      const bool need_dsource = from_ref || g1 != nullptr;
      nn::deform_conv2d_backward(source, tr.om.offset, tr.om.mask, w.at("step2.deform.w"),
                                 dy_deform, need_dsource ? &dsource : nullptr, &doffset,
                                 &dmask, &g2->at("step2.deform.w"),
                                 g2->at("step2.deform.b").data());
      auto [dfg_pred, dfr_pred] = predictor_backward(w, tr.predictor, tr.om, doffset, dmask, g2);

      Tensor<T> dfr = std::move(dfr_pred);
      if (from_ref) nn::add_inplace(dfr, dsource);
      if (f_r.n() != dfr.n()) throw StateError("reference batch mismatch");
      image_encoder_backward(w, "step2.ref", ref_tr, std::move(dfr), g2);

      if (g1) {
        Tensor<T> d = df_out;  // identity path of the fuse
        nn::add_inplace(d, dfg_pred);
        if (!from_ref) nn::add_inplace(d, dsource);
        if (df_g.empty()) {
          df_g = std::move(d);
        } else {
          nn::add_inplace(df_g, d);
        }
      }
    }
  }

  if (g1 && !df_g.empty()) image_encoder_backward(w, "step1.enc", enc_tr, std::move(df_g), g1);
  return loss;
}

#define HVC_INSTANTIATE(T)                                                              \
  template struct Weights<T>;                                                           \
  template Tensor<T> extract_general_features<T>(const Tensor<T>&, const Weights<T>&);  \
  template Tensor<T> encode_reference_features<T>(const Tensor<T>&, const Weights<T>&); \
  template OffsetsAndMask<T> predict_offsets<T>(const Tensor<T>&, const Tensor<T>&,     \
                                                const Weights<T>&);                     \
  template AlignedFeatures<T> align_and_gate<T>(const Tensor<T>&,                       \
                                                const OffsetsAndMask<T>&,               \
                                                const Weights<T>&);                     \
  template Tensor<T> refine<T>(const Tensor<T>&, const Weights<T>&);                    \
  template Tensor<T> fuse<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);     \
  template Tensor<T> decode_features<T>(const Tensor<T>&, const Tensor<T>&,             \
                                        const Weights<T>&);                             \
  template Tensor<T> general_enhance<T>(const Tensor<T>&, const Weights<T>&);           \
  template Tensor<T> reference_enhance<T>(const Tensor<T>&, const Tensor<T>&,           \
                                          const Weights<T>&, RestoreOptions);           \
  template Step2Outputs<T> reference_enhance_detailed<T>(                               \
      const Tensor<T>&, const Tensor<T>&, const Weights<T>&, RestoreOptions);           \
  template double loss_and_grad<T>(const Weights<T>&, const Batch<T>&, Objective, bool, \
                                   std::type_identity_t<Weights<T>>*, LossKind);

HVC_INSTANTIATE(float)
HVC_INSTANTIATE(double)
#undef HVC_INSTANTIATE

template Weights<double> Weights<float>::cast<double>() const;
template Weights<float> Weights<double>::cast<float>() const;
template Weights<float> Weights<float>::cast<float>() const;

}  // namespace hvc::restoration
