#pragma once

#include <cstdint>
#include <vector>

namespace hvc::container {

using Bytes = std::vector<std::uint8_t>;

inline constexpr std::uint8_t kFormatVersion = 1;

// Codec tags shared by the container and the codec adapters. Values are part
// of the on-disk format.
enum class CodecId : std::uint8_t {
  kExternalVideo = 1,
  kMockLossy = 2,
  kExternalLossless = 3,
  kMockLossless = 4,
};

struct ReferenceEntry {
  std::uint32_t frame_index = 0;
  CodecId codec_id = CodecId::kMockLossless;
  Bytes payload;

  bool operator==(const ReferenceEntry&) const = default;
};

struct StreamMeta {
  CodecId lossy_codec_id = CodecId::kMockLossy;
  std::uint32_t width = 0;
  std::uint32_t height = 0;
  std::uint32_t frame_count = 0;

  bool operator==(const StreamMeta&) const = default;
};

// Decoded view of a .hvc file.
struct HybridContainer {
  std::uint8_t version = kFormatVersion;
  StreamMeta meta;
  Bytes lossy_bitstream;
  std::vector<ReferenceEntry> references;  // ascending frame_index

  bool operator==(const HybridContainer&) const = default;
};

// Fixed part of the layout, before the reference table.
inline constexpr std::size_t kHeaderBytes = 22;
inline constexpr std::size_t kTableEntryBytes = 24;

// Serializes one lossy bitstream plus the lossless references. References
// may be given in any order; they are stored ascending by frame index.
// Throws ValidationError on an empty reference list, duplicate or
// out-of-range indices, empty payloads or zero frame_count.
Bytes mux(const Bytes& lossy_bitstream, std::vector<ReferenceEntry> references,
          const StreamMeta& meta);

// Inverse of mux. Throws FormatError on bad magic/version, truncation or a
// table that violates the container invariants.
HybridContainer demux(const Bytes& container_bytes);

// Bytes the container adds on top of lossy + reference payloads.
std::size_t framing_bytes(std::size_t reference_count);

}  // namespace hvc::container
