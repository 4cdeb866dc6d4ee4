#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "hybridvc/checkpoint.hpp"
#include "hybridvc/codecs.hpp"
#include "hybridvc/restoration.hpp"
#include "hybridvc/scenedetect.hpp"

namespace hvc::training {

class TrainingError : public Error {
 public:
  TrainingError(const std::string& what, checkpoint::Checkpoint last_good)
      : Error(what), last_good_(std::move(last_good)) {}
  const checkpoint::Checkpoint& last_good() const { return last_good_; }

 private:
  checkpoint::Checkpoint last_good_;
};

struct TrainConfig {
  int patch_size = 256;
  int batch_size = 4;
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double weight_decay = 1e-2;
  double eps = 1e-8;
  int iterations_step1 = 1000;
  int iterations_step2 = 1000;
  int iterations_end_to_end = 1000;
  bool augment = true;
  restoration::LossKind loss = restoration::LossKind::kL2;
  // Probability that a step-2 sample is paired with a reference from a
  // different clip, so the confidence map learns to reject it.
  double irrelevant_ref_prob = 0.0;
  int val_every = 100;
  std::uint64_t seed = 1;
  int codec_quality = 50;

  // 64 x 64 patches, 16-channel network, mock codec.
  static TrainConfig desk();
  void validate() const;
  std::string to_json() const;
  // Keys missing from the JSON keep the values already in `base`.
  static TrainConfig from_json(const std::string& json, TrainConfig base);
};

// A clip and its codec round trip. Every frame's reference is the
// uncompressed frame at the latest index in reference_indices not after it.
struct Clip {
  std::string name;
  VideoSequence original;
  VideoSequence compressed;
  std::vector<int> reference_indices{0};

  int reference_for(int t) const;
};

// One (c_t, x_t) pair and the clip/frame its reference comes from.
struct PairRef {
  int clip = 0;
  int frame = 0;
};

struct Dataset {
  std::vector<Clip> clips;
  std::vector<PairRef> pairs;
};

// Compresses each clip with the codec and lists all co-located pairs.
// Clips shorter than two frames are skipped (warning on stderr).
Dataset build_pairs(const std::vector<std::pair<std::string, VideoSequence>>& videos,
                    const codecs::CodecConfig& codec,
                    scenedetect::ReferencePolicy policy = scenedetect::ReferencePolicy::kFirstOnly);

// ---- synthetic and natural fixtures ----

// Band-limited texture with edges: random oriented gratings, blobs, lines and
// flat patches, RGB in [0, 1] on the 8-bit lattice.
Frame synthetic_texture(int width, int height, std::uint64_t seed);

struct ClipOptions {
  int frames = 7;
  int width = 128;
  int height = 128;
  int max_velocity = 1;  // integer px per frame, per axis
};

// Clip of `source` seen through a window translating with a random integer
// velocity. The source must exceed the window by the total motion.
VideoSequence make_clip(const Frame& source, const ClipOptions& opt, std::uint64_t seed);

// Concatenation of two clips (a cut at a.frame_count()).
VideoSequence concatenate(const VideoSequence& a, const VideoSequence& b);

std::vector<Frame> load_png_dir(const std::filesystem::path& dir);

struct DeskCorpus {
  Dataset train;
  Dataset heldout;
};
// Training clips from data/natural/train plus synthetic textures; held-out
// clips from data/natural/heldout.
DeskCorpus build_desk_corpus(const std::filesystem::path& data_dir, int codec_quality,
                             std::uint64_t seed, int synthetic_sources = 8);

// ---- optimisation ----

class Sampler {
 public:
  Sampler(const Dataset& data, const TrainConfig& cfg, std::uint64_t seed);
  // with_reference also fills Batch::reference.
  restoration::Batch<float> next(bool with_reference);

 private:
  const Dataset& data_;
  TrainConfig cfg_;
  std::mt19937_64 rng_;
};

// Rotation by k * 90 degrees counter-clockwise followed by an optional
// horizontal flip, applied to one sample of a batch tensor.
Tensor<float> augment(const Tensor<float>& t, int rotations, bool flip);

class AdamW {
 public:
  AdamW(const restoration::Weights<float>& like, const TrainConfig& cfg);
  // Updates every tensor accepted by `trainable`.
  void step(restoration::Weights<float>& w, const restoration::Weights<float>& grads,
            const std::function<bool(const std::string&)>& trainable);
  long steps() const { return t_; }

 private:
  restoration::Weights<float> m_, v_;
  TrainConfig cfg_;
  long t_ = 0;
};

struct LogRow {
  int iteration = 0;
  double loss = 0.0;
  double val_psnr = 0.0;  // NaN when not evaluated at this iteration
};

struct TrainResult {
  checkpoint::Checkpoint checkpoint;
  std::vector<LogRow> log;
  double seconds = 0.0;
};

struct TrainHooks {
  // Validation set; when empty no val_psnr is computed.
  const Dataset* validation = nullptr;
  // Called after each logged row.
  std::function<void(const LogRow&)> on_log;
};

TrainResult train_step1(const Dataset& data, const TrainConfig& cfg,
                        const restoration::NetworkSpec& spec, const TrainHooks& hooks = {});
// Starts from a step-1 checkpoint; step-1 tensors are frozen and verified
// unchanged by digest at the end (StateError otherwise).
TrainResult train_step2(const Dataset& data, const TrainConfig& cfg,
                        const checkpoint::Checkpoint& step1, const TrainHooks& hooks = {});
// Ablation: both steps trained jointly from scratch on L_general + L_ref.
TrainResult train_end_to_end(const Dataset& data, const TrainConfig& cfg,
                             const restoration::NetworkSpec& spec,
                             const TrainHooks& hooks = {});

void write_log_csv(const std::filesystem::path& path, const std::vector<LogRow>& rows);

// ---- evaluation ----

enum class RefChoice {
  kNone,        // step-1 output
  kRelevant,    // the clip's own reference
  kIrrelevant,  // reference of another clip (the next one, cyclically)
};

struct EvalResult {
  double psnr_compressed = 0.0;
  double psnr_restored = 0.0;
};

// Mean per-frame RGB PSNR over every frame of every clip.
EvalResult evaluate(const Dataset& data, const restoration::Weights<float>& w,
                    RefChoice choice);

}  // namespace hvc::training
