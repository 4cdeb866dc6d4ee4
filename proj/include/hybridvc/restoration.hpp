#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <type_traits>
#include <vector>

#include "hybridvc/frame.hpp"
#include "hybridvc/tensor.hpp"

// Two-step restoration network.
//
//   step 1:  c_t -> encoder -> f_g -> decoder -> x_g = c_t + residual
//   step 2:  x_ref -> ref encoder -> f_r
//            [f_g, f_r] -> offset predictor -> (offsets, mask)
//            deformable conv over f_r (or f_g) -> (f_deform, confidence C)
//            f_deform -> refiner -> f_refine
//            f_out = f_g + C * f_refine -> decoder (shared with step 1)
//
// Parameters live in a flat name -> tensor map. Names starting with "step1."
// belong to the encoder/decoder and are frozen during step-2 training.
namespace hvc::restoration {

enum class DeformSource : std::uint8_t { kReference = 0, kGeneral = 1 };
enum class Mode : std::uint8_t { kStep1 = 1, kStep2 = 2 };

struct NetworkSpec {
  int channels = 16;
  int encoder_blocks = 2;
  int decoder_blocks = 2;
  int ref_encoder_blocks = 2;
  int offset_layers = 5;
  int refine_blocks = 3;
  DeformSource deform_source = DeformSource::kReference;

  static NetworkSpec desk();
  static NetworkSpec full();

  void validate() const;
  // Every parameter tensor with its shape, in a fixed order.
  std::vector<std::pair<std::string, Shape>> layout() const;
  // Closed form; equals the element count over layout().
  std::size_t parameter_count() const;
  bool operator==(const NetworkSpec&) const = default;
};

std::string to_string(DeformSource s);
DeformSource deform_source_from_string(const std::string& s);

inline bool is_step1(const std::string& name) {
  return name.rfind("step1.", 0) == 0;
}

template <typename T>
struct Weights {
  NetworkSpec spec;
  std::map<std::string, Tensor<T>> tensors;

  const Tensor<T>& at(const std::string& name) const;
  Tensor<T>& at(const std::string& name);
  // Same names and shapes, all zero (gradient accumulators).
  Weights zeros_like() const;
  template <typename U>
  Weights<U> cast() const;
  void check_finite() const;
};

// Kaiming fan-in normal init. The last conv of every residual branch and the
// decoder output are scaled down, the offset predictor's last layer and the
// feature rows of the deformable layer start at zero, so an untrained step-2
// branch leaves the step-1 path unchanged.
Weights<float> init_weights(const NetworkSpec& spec, std::uint64_t seed);

template <typename T>
struct OffsetsAndMask {
  Tensor<T> offset;  // N x 18 x H x W
  Tensor<T> mask;    // N x 9 x H x W, sigmoid
};

template <typename T>
struct AlignedFeatures {
  Tensor<T> feature;     // N x C x H x W
  Tensor<T> confidence;  // N x 1 x H x W, sigmoid
};

// Building blocks, batch tensors in and out (N x C x H x W).
template <typename T>
Tensor<T> extract_general_features(const Tensor<T>& c, const Weights<T>& w);
template <typename T>
Tensor<T> encode_reference_features(const Tensor<T>& ref, const Weights<T>& w);
template <typename T>
OffsetsAndMask<T> predict_offsets(const Tensor<T>& f_g, const Tensor<T>& f_r,
                                  const Weights<T>& w);
template <typename T>
AlignedFeatures<T> align_and_gate(const Tensor<T>& source,
                                  const OffsetsAndMask<T>& om,
                                  const Weights<T>& w);
template <typename T>
Tensor<T> refine(const Tensor<T>& f_deform, const Weights<T>& w);
// f_g + C * f_refine with C broadcast over channels.
template <typename T>
Tensor<T> fuse(const Tensor<T>& f_g, const Tensor<T>& confidence,
               const Tensor<T>& f_refine);
// Decoder plus the global skip from the compressed input. Unclamped.
template <typename T>
Tensor<T> decode_features(const Tensor<T>& f, const Tensor<T>& c,
                          const Weights<T>& w);

// Unclamped network output for a batch.
template <typename T>
Tensor<T> general_enhance(const Tensor<T>& c, const Weights<T>& w);

struct RestoreOptions {
  // Forces C = 0 (the step-2 output then reduces to step 1).
  bool zero_confidence = false;
};

template <typename T>
Tensor<T> reference_enhance(const Tensor<T>& c, const Tensor<T>& f_r,
                            const Weights<T>& w, RestoreOptions opt = {});

// Intermediate step-2 tensors, for inspection and tests.
template <typename T>
struct Step2Outputs {
  Tensor<T> f_g, f_r;
  OffsetsAndMask<T> om;
  AlignedFeatures<T> aligned;
  Tensor<T> f_refine, f_out, output;
};
template <typename T>
Step2Outputs<T> reference_enhance_detailed(const Tensor<T>& c,
                                           const Tensor<T>& f_r,
                                           const Weights<T>& w,
                                           RestoreOptions opt = {});

// Reference features computed once per reference frame. lookup(t) returns
// the latest reference at or before frame t.
class ReferenceCache {
 public:
  explicit ReferenceCache(const Weights<float>& w) : weights_(&w) {}
  void add(int frame_index, const Frame& reference);
  const Tensor<float>* lookup(int t) const;
  std::optional<int> reference_index_for(int t) const;
  int encoder_passes() const { return passes_; }
  std::size_t size() const { return features_.size(); }

 private:
  const Weights<float>* weights_;
  std::map<int, Tensor<float>> features_;
  int passes_ = 0;
};

// Restores one frame; output clamped to [0, 1]. Step 2 throws StateError when
// the cache holds no reference at or before t.
Frame restore_frame(const Frame& c_t, const ReferenceCache* cache,
                    const Weights<float>& w, Mode mode, int t,
                    RestoreOptions opt = {});

// Makes C identically zero: confidence weights cleared, bias pushed far
// negative so the sigmoid underflows to 0.
void zero_confidence_head(Weights<float>& w);

// ---- training support ----

enum class Objective : std::uint8_t {
  kGeneral,    // L2(step1 output, x)
  kReference,  // L2(step2 output, x)
  kJoint,      // L2(step1) + L2(step2), used by the end-to-end ablation
};

enum class LossKind : std::uint8_t {
  kL2,      // mean squared error
  kMsSsim,  // 1 - MS-SSIM averaged over samples and channels (needs >= 176 px)
};

template <typename T>
struct Batch {
  Tensor<T> compressed;  // c_t
  Tensor<T> target;      // x_t
  Tensor<T> reference;   // x_ref, may be empty for kGeneral
};

// Objective value and its gradient. Gradients are accumulated
// into grads for every parameter the objective depends on; step-1 tensors
// are skipped when train_step1 is false. Returns the loss.
template <typename T>
double loss_and_grad(const Weights<T>& w, const Batch<T>& batch,
                     Objective objective, bool train_step1,
                     std::type_identity_t<Weights<T>>* grads, LossKind loss = LossKind::kL2);

}  // namespace hvc::restoration
