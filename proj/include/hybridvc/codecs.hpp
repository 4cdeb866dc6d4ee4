#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "hybridvc/container.hpp"
#include "hybridvc/frame.hpp"

namespace hvc::codecs {

using container::CodecId;
using Bytes = std::vector<std::uint8_t>;

// How a stream is produced/consumed. `quality` is a QP for external video
// codecs (0..63) and the 1..100 quality knob of the mock lossy codec; it is
// ignored by lossless codecs.
//
// External templates may use {input}, {output}, {qp}, {preset}, {width},
// {height} and {fps}. The first token names the executable, which is looked
// up in $HYBRIDVC_TOOLDIR before $PATH.
struct CodecConfig {
  CodecId codec_id = CodecId::kMockLossy;
  int quality = 50;
  std::string command_template;
  std::string decode_command_template;
  std::string preset = "medium";
  std::string bitstream_extension = ".bin";

  bool is_lossless() const {
    return codec_id == CodecId::kExternalLossless ||
           codec_id == CodecId::kMockLossless;
  }
  bool is_external() const {
    return codec_id == CodecId::kExternalVideo ||
           codec_id == CodecId::kExternalLossless;
  }
  // Throws ValidationError when quality is outside the codec's bounds or an
  // external codec has no command.
  void validate() const;

  static CodecConfig mock_lossy(int quality);
  static CodecConfig mock_lossless();
  // ffmpeg + libx265 (HEVC), run at the given QP.
  static CodecConfig hevc_ffmpeg(int qp);
  // VVenC / VVdeC pair.
  static CodecConfig vvc(int qp);
  // cjxl / djxl in lossless mode.
  static CodecConfig jpegxl();
};

struct EncodedVideo {
  Bytes bitstream;
  std::uint64_t rate_bits = 0;
};

// Dimensions an external decoder cannot recover from its own output.
struct StreamGeometry {
  int width = 0;
  int height = 0;
  int frame_count = 0;
  double fps = 30.0;
};

EncodedVideo encode_video(const VideoSequence& frames, const CodecConfig& cfg);
VideoSequence decode_video(const Bytes& bitstream, const CodecConfig& cfg,
                           const std::optional<StreamGeometry>& geometry = {});

Bytes encode_reference(const Frame& frame, const CodecConfig& cfg);
Frame decode_reference(const Bytes& payload, const CodecConfig& cfg);

// ---- Mock lossy codec internals, exposed for oracle tests ----

// Quantization step on the 8-bit sample scale:
// clamp(2^((100 - quality) / 12), 1/256, 64).
double mock_quant_step(int quality);

using Block = std::array<double, 64>;
// Orthonormal 8x8 type-II DCT and its inverse (row-major blocks).
Block dct8x8(const Block& in);
Block idct8x8(const Block& in);

// Shannon entropy (bits) of a symbol stream times its length.
double entropy_bits(const std::vector<std::int32_t>& symbols);

}  // namespace hvc::codecs
