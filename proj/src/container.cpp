#include "hybridvc/container.hpp"

#include <algorithm>
#include <string>

#include "hybridvc/bytes.hpp"

namespace hvc::container {

namespace {

constexpr char kMagic[4] = {'H', 'V', 'C', '1'};

bool known_codec(std::uint8_t id) { return id >= 1 && id <= 4; }

}  // namespace

std::size_t framing_bytes(std::size_t reference_count) {
  return kHeaderBytes + kTableEntryBytes * reference_count + 8;
}

Bytes mux(const Bytes& lossy_bitstream, std::vector<ReferenceEntry> references,
          const StreamMeta& meta) {
  if (meta.frame_count == 0) throw ValidationError("frame_count must be >= 1");
  if (references.empty()) {
    throw ValidationError("container needs at least one reference frame");
  }
  if (references.size() > 0xFFFF) throw ValidationError("too many references");
  std::stable_sort(references.begin(), references.end(),
                   [](const auto& a, const auto& b) {
                     return a.frame_index < b.frame_index;
                   });
  for (std::size_t i = 0; i < references.size(); ++i) {
    const auto& r = references[i];
    if (r.frame_index >= meta.frame_count) {
      throw ValidationError("reference index " + std::to_string(r.frame_index) +
                            " >= frame_count " +
                            std::to_string(meta.frame_count));
    }
    if (i > 0 && references[i - 1].frame_index == r.frame_index) {
      throw ValidationError("duplicate reference index " +
                            std::to_string(r.frame_index));
    }
    if (r.payload.empty()) throw ValidationError("empty reference payload");
  }

  Bytes out;
  std::size_t total = framing_bytes(references.size()) + lossy_bitstream.size();
  for (const auto& r : references) total += r.payload.size();
  out.reserve(total);

  ByteWriter w(out);
  w.bytes(reinterpret_cast<const std::uint8_t*>(kMagic), 4);
  w.u8(kFormatVersion);
  w.u8(static_cast<std::uint8_t>(meta.lossy_codec_id));
  w.u8(static_cast<std::uint8_t>(references.front().codec_id));
  w.u8(0);
  w.u32(meta.width);
  w.u32(meta.height);
  w.u32(meta.frame_count);
  w.u16(static_cast<std::uint16_t>(references.size()));

  std::uint64_t offset = framing_bytes(references.size()) + lossy_bitstream.size();
  for (const auto& r : references) {
    w.u32(r.frame_index);
    w.u8(static_cast<std::uint8_t>(r.codec_id));
    w.u8(0);
    w.u8(0);
    w.u8(0);
    w.u64(offset);
    w.u64(r.payload.size());
    offset += r.payload.size();
  }
  w.u64(lossy_bitstream.size());
  w.bytes(lossy_bitstream);
  for (const auto& r : references) w.bytes(r.payload);
  return out;
}

HybridContainer demux(const Bytes& bytes) {
  ByteReader r(bytes, "container");
  const std::uint8_t* magic = r.take(4);
  if (!std::equal(magic, magic + 4, kMagic)) {
    throw FormatError("container: bad magic");
  }
  HybridContainer c;
  c.version = r.u8();
  if (c.version != kFormatVersion) {
    throw FormatError("container: unsupported version " +
                      std::to_string(c.version));
  }
  const std::uint8_t lossy_id = r.u8();
  if (!known_codec(lossy_id)) throw FormatError("container: unknown codec id");
  c.meta.lossy_codec_id = static_cast<CodecId>(lossy_id);
  r.u8();  // ref_codec_default, informational
  r.u8();
  c.meta.width = r.u32();
  c.meta.height = r.u32();
  c.meta.frame_count = r.u32();
  const std::uint16_t ref_count = r.u16();
  if (c.meta.frame_count == 0) throw FormatError("container: zero frame_count");
  if (ref_count == 0) throw FormatError("container: no references");

  struct Slot {
    std::uint64_t offset, length;
  };
  std::vector<Slot> slots(ref_count);
  c.references.resize(ref_count);
  for (std::uint16_t i = 0; i < ref_count; ++i) {
    auto& e = c.references[i];
    e.frame_index = r.u32();
    const std::uint8_t id = r.u8();
    if (!known_codec(id)) throw FormatError("container: unknown codec id");
    e.codec_id = static_cast<CodecId>(id);
    r.skip(3);
    slots[i].offset = r.u64();
    slots[i].length = r.u64();
    if (e.frame_index >= c.meta.frame_count) {
      throw FormatError("container: reference index out of range");
    }
    if (i > 0 && c.references[i - 1].frame_index >= e.frame_index) {
      throw FormatError("container: reference table not strictly ascending");
    }
    if (slots[i].length == 0) throw FormatError("container: empty payload");
  }
  const std::uint64_t lossy_len = r.u64();
  if (lossy_len > r.remaining()) {
    throw FormatError("container: lossy payload exceeds file size");
  }
  const std::uint8_t* lossy = r.take(static_cast<std::size_t>(lossy_len));
  c.lossy_bitstream.assign(lossy, lossy + lossy_len);
  // Payloads follow the lossy stream back to back, in table order.
  std::uint64_t expected = r.position();
  for (std::uint16_t i = 0; i < ref_count; ++i) {
    const auto [off, len] = slots[i];
    if (off > bytes.size() || len > bytes.size() - off) {
      throw FormatError("container: reference payload exceeds file size");
    }
    if (off != expected) throw FormatError("container: reference payload misplaced");
    expected += len;
    c.references[i].payload.assign(bytes.begin() + static_cast<std::ptrdiff_t>(off),
                                   bytes.begin() + static_cast<std::ptrdiff_t>(off + len));
  }
  if (expected != bytes.size()) throw FormatError("container: trailing bytes");
  return c;
}

}  // namespace hvc::container
