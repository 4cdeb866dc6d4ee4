#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "hybridvc/codecs.hpp"
#include "hybridvc/container.hpp"
#include "hybridvc/metrics.hpp"
#include "hybridvc/restoration.hpp"
#include "hybridvc/scenedetect.hpp"

// End-to-end encode / decode / RD sweep, shared by the command-line tool and
// the tests.
namespace hvc::pipeline {

struct EncodeOptions {
  codecs::CodecConfig lossy = codecs::CodecConfig::mock_lossy(50);
  codecs::CodecConfig lossless = codecs::CodecConfig::mock_lossless();
  scenedetect::ReferencePolicy policy = scenedetect::ReferencePolicy::kFirstOnly;
  double scene_threshold = scenedetect::kDefaultThreshold;
  int min_scene_len = scenedetect::kDefaultMinSceneLen;
};

// Rates in bits. lossy_bits is the codec's rate (an entropy estimate for the
// mock codec, 8 * stream bytes for external codecs); reference and framing
// bits are 8 * bytes. total = lossy + reference + framing.
struct EncodeReport {
  std::vector<std::uint8_t> container;
  std::vector<int> ref_indices;
  int width = 0, height = 0, frame_count = 0;
  std::uint64_t lossy_bits = 0, ref_bits = 0, framing_bits = 0, total_bits = 0;
  std::size_t lossy_stream_bytes = 0;

  double lossy_bpp() const;
  double ref_bpp() const;
  double framing_bpp() const;
  double total_bpp() const;
};

EncodeReport encode(const VideoSequence& video, const EncodeOptions& opt);

enum class DecodeMode { kRaw, kStep1, kStep2 };
DecodeMode decode_mode_from_string(const std::string& s);
std::string to_string(DecodeMode m);

struct DecodeOptions {
  DecodeMode mode = DecodeMode::kRaw;
  const restoration::Weights<float>* weights = nullptr;
  // Decoder templates for an external lossy stream; mock streams ignore it.
  codecs::CodecConfig external_video = codecs::CodecConfig::hevc_ffmpeg(32);
  codecs::CodecConfig external_lossless = codecs::CodecConfig::jpegxl();
  double fps = 30.0;
  int workers = 1;
  restoration::RestoreOptions restore;
};

struct Decoded {
  VideoSequence video;            // RGB, on the 8-bit lattice
  std::vector<int> ref_indices;
  int reference_encoder_passes = 0;
};

Decoded decode(const std::vector<std::uint8_t>& container_bytes, const DecodeOptions& opt);

// ---- RD sweep ----

struct EvalOptions {
  std::vector<int> qualities;  // QP for external codecs, quality for mock
  // Builds the lossy codec config for one quality point.
  std::function<codecs::CodecConfig(int)> lossy_for;
  codecs::CodecConfig lossless = codecs::CodecConfig::mock_lossless();
  scenedetect::ReferencePolicy policy = scenedetect::ReferencePolicy::kFirstOnly;
  const restoration::Weights<float>* weights = nullptr;  // enables step1/step2
  int workers = 1;
};

struct EvalPoint {
  std::string method;  // raw, step1, step2
  int quality = 0;
  double bpp = 0.0;
  double psnr_rgb = 0.0;
  double psnr_y = 0.0;
  double ms_ssim = 0.0;  // NaN when frames are below the MS-SSIM minimum size
  std::string label() const;
};

// raw and step1 are charged the lossy stream only; step2 is charged the whole
// container (lossy stream + references + framing).
std::vector<EvalPoint> evaluate_rd(const VideoSequence& video, const EvalOptions& opt);

metrics::RDCurve curve_for(const std::vector<EvalPoint>& points, const std::string& method,
                           metrics::MetricKind kind);

// Scalable vector plot of PSNR against bpp, one polyline per method.
std::string rd_svg(const std::vector<EvalPoint>& points);

}  // namespace hvc::pipeline
