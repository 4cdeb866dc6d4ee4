#include "hybridvc/codecs.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <unordered_map>

#include "hybridvc/bytes.hpp"
#include "hybridvc/image_io.hpp"
#include "hybridvc/process.hpp"

namespace hvc::codecs {

namespace {

constexpr char kMockLossyMagic[4] = {'H', 'V', 'M', 'L'};
constexpr char kMockLosslessMagic[4] = {'H', 'V', 'L', 'L'};
constexpr std::uint8_t kMockVersion = 1;

// ---- zlib helpers ----

Bytes deflate_bytes(const Bytes& in) {
  uLongf cap = compressBound(static_cast<uLong>(in.size()));
  Bytes out(cap);
  if (compress2(out.data(), &cap, in.data(), static_cast<uLong>(in.size()),
                Z_BEST_COMPRESSION) != Z_OK) {
    throw Error("zlib compression failed");
  }
  out.resize(cap);
  return out;
}

Bytes inflate_bytes(const std::uint8_t* in, std::size_t n, std::size_t expected) {
  Bytes out(expected);
  uLongf len = static_cast<uLongf>(expected);
  if (uncompress(out.data(), &len, in, static_cast<uLong>(n)) != Z_OK ||
      len != expected) {
    throw FormatError("corrupt compressed payload");
  }
  return out;
}

// Signed LEB128 variant via zig-zag.
void put_varint(Bytes& out, std::int32_t v) {
  std::uint32_t z = (static_cast<std::uint32_t>(v) << 1) ^
                    static_cast<std::uint32_t>(v >> 31);
  while (z >= 0x80) {
    out.push_back(static_cast<std::uint8_t>(z | 0x80));
    z >>= 7;
  }
  out.push_back(static_cast<std::uint8_t>(z));
}

std::int32_t get_varint(const Bytes& in, std::size_t& pos) {
  std::uint32_t z = 0;
  for (int shift = 0; shift < 35; shift += 7) {
    if (pos >= in.size()) throw FormatError("mock lossy: truncated symbols");
    const std::uint8_t b = in[pos++];
    z |= static_cast<std::uint32_t>(b & 0x7F) << shift;
    if (!(b & 0x80)) {
      return static_cast<std::int32_t>((z >> 1) ^ (~(z & 1) + 1));
    }
  }
  throw FormatError("mock lossy: malformed varint");
}

// ---- DCT ----

const std::array<double, 64>& dct_matrix() {
  static const std::array<double, 64> m = [] {
    std::array<double, 64> a{};
    for (int k = 0; k < 8; ++k) {
      const double s = k == 0 ? std::sqrt(1.0 / 8) : std::sqrt(2.0 / 8);
      for (int n = 0; n < 8; ++n) {
        a[k * 8 + n] = s * std::cos(std::numbers::pi * (2 * n + 1) * k / 16.0);
      }
    }
    return a;
  }();
  return m;
}

// ---- colour mapping in double precision ----

struct Planes {
  int w = 0, h = 0, c = 0;
  std::vector<double> v;  // c planes on the code-value scale
  double& at(int ch, int y, int x) {
    return v[(static_cast<std::size_t>(ch) * h + y) * w + x];
  }
};

Planes to_coding_planes(const Frame& f) {
  Planes p{f.width(), f.height(), f.channels(), {}};
  p.v.resize(static_cast<std::size_t>(p.w) * p.h * p.c);
  const double scale = f.max_code();
  const double mid = (f.max_code() + 1) / 2.0;
  const std::size_t n = static_cast<std::size_t>(p.w) * p.h;
  if (f.channels() == 3 && f.color_space() == ColorSpace::kRGB) {
    const auto r = f.plane(0), g = f.plane(1), b = f.plane(2);
    for (std::size_t i = 0; i < n; ++i) {
      const double R = r[i] * scale, G = g[i] * scale, B = b[i] * scale;
      p.v[i] = 0.299 * R + 0.587 * G + 0.114 * B;
      p.v[n + i] = -0.168736 * R - 0.331264 * G + 0.5 * B + mid;
      p.v[2 * n + i] = 0.5 * R - 0.418688 * G - 0.081312 * B + mid;
    }
  } else {
    const auto px = f.pixels();
    for (std::size_t i = 0; i < px.size(); ++i) p.v[i] = px[i] * scale;
  }
  return p;
}

Frame from_coding_planes(const Planes& p, ColorSpace cs, int bit_depth) {
  Frame f(p.w, p.h, p.c, cs, bit_depth);
  const double inv = 1.0 / f.max_code();
  const double mid = (f.max_code() + 1) / 2.0;
  const std::size_t n = static_cast<std::size_t>(p.w) * p.h;
  auto clamp01 = [](double v) {
    return static_cast<float>(std::clamp(v, 0.0, 1.0));
  };
  if (p.c == 3 && cs == ColorSpace::kRGB) {
    auto r = f.plane(0), g = f.plane(1), b = f.plane(2);
    for (std::size_t i = 0; i < n; ++i) {
      const double Y = p.v[i], U = p.v[n + i] - mid, V = p.v[2 * n + i] - mid;
      r[i] = clamp01((Y + 1.402 * V) * inv);
      g[i] = clamp01((Y - 0.344136 * U - 0.714136 * V) * inv);
      b[i] = clamp01((Y + 1.772 * U) * inv);
    }
  } else {
    auto px = f.pixels();
    for (std::size_t i = 0; i < px.size(); ++i) px[i] = clamp01(p.v[i] * inv);
  }
  return f;
}

// ---- mock lossy ----

struct MockHeader {
  std::uint8_t channels, color_space, bit_depth, quality;
  std::uint32_t width, height, frame_count;
  std::uint32_t fps_milli;
  std::uint64_t symbol_bytes;
};

EncodedVideo mock_encode(const VideoSequence& video, int quality) {
  const double step = mock_quant_step(quality);
  const Frame& first = video.frames.front();
  const int w = first.width(), h = first.height();
  const int bw = (w + 7) / 8, bh = (h + 7) / 8;

  std::vector<std::int32_t> symbols;
  symbols.reserve(static_cast<std::size_t>(bw) * bh * 64 * first.channels() *
                  video.frames.size());
  for (const auto& f : video.frames) {
    Planes p = to_coding_planes(f);
    for (int c = 0; c < p.c; ++c) {
      for (int by = 0; by < bh; ++by) {
        for (int bx = 0; bx < bw; ++bx) {
          Block blk{};
          for (int y = 0; y < 8; ++y) {
            for (int x = 0; x < 8; ++x) {
              // Edge replication pads partial blocks.
              const int sy = std::min(by * 8 + y, h - 1);
              const int sx = std::min(bx * 8 + x, w - 1);
              blk[y * 8 + x] = p.at(c, sy, sx);
            }
          }
          const Block coef = dct8x8(blk);
          for (double v : coef) {
            symbols.push_back(static_cast<std::int32_t>(std::lround(v / step)));
          }
        }
      }
    }
  }

  Bytes packed;
  packed.reserve(symbols.size() * 2);
  for (auto s : symbols) put_varint(packed, s);
  const Bytes compressed = deflate_bytes(packed);

  EncodedVideo out;
  ByteWriter wr(out.bitstream);
  wr.bytes(reinterpret_cast<const std::uint8_t*>(kMockLossyMagic), 4);
  wr.u8(kMockVersion);
  wr.u8(static_cast<std::uint8_t>(first.channels()));
  wr.u8(static_cast<std::uint8_t>(first.color_space()));
  wr.u8(static_cast<std::uint8_t>(first.bit_depth()));
  wr.u8(static_cast<std::uint8_t>(quality));
  wr.u32(static_cast<std::uint32_t>(w));
  wr.u32(static_cast<std::uint32_t>(h));
  wr.u32(static_cast<std::uint32_t>(video.frames.size()));
  wr.u32(static_cast<std::uint32_t>(std::lround(video.fps * 1000)));
  wr.u64(packed.size());
  wr.bytes(compressed);
  out.rate_bits = static_cast<std::uint64_t>(std::ceil(entropy_bits(symbols)));
  return out;
}

VideoSequence mock_decode(const Bytes& bitstream) {
  ByteReader r(bitstream, "mock lossy");
  const std::uint8_t* magic = r.take(4);
  if (!std::equal(magic, magic + 4, kMockLossyMagic)) {
    throw FormatError("mock lossy: bad magic");
  }
  if (r.u8() != kMockVersion) throw FormatError("mock lossy: bad version");
  MockHeader hd{};
  hd.channels = r.u8();
  hd.color_space = r.u8();
  hd.bit_depth = r.u8();
  hd.quality = r.u8();
  hd.width = r.u32();
  hd.height = r.u32();
  hd.frame_count = r.u32();
  hd.fps_milli = r.u32();
  hd.symbol_bytes = r.u64();
  if (hd.channels == 0 || hd.width == 0 || hd.height == 0 ||
      hd.frame_count == 0 || hd.color_space > 1 || hd.bit_depth == 0 ||
      hd.bit_depth > 16 || hd.quality < 1 || hd.quality > 100) {
    throw FormatError("mock lossy: invalid header");
  }
  const int w = static_cast<int>(hd.width), h = static_cast<int>(hd.height);
  const int bw = (w + 7) / 8, bh = (h + 7) / 8;
  const std::uint64_t n_symbols = static_cast<std::uint64_t>(bw) * bh * 64 *
                                  hd.channels * hd.frame_count;
  // Each symbol takes 1..5 bytes.
  if (hd.symbol_bytes < n_symbols || hd.symbol_bytes > 5 * n_symbols) {
    throw FormatError("mock lossy: symbol count mismatch");
  }
  const std::size_t comp_len = r.remaining();
  const Bytes packed =
      inflate_bytes(r.take(comp_len), comp_len, static_cast<std::size_t>(hd.symbol_bytes));

  const double step = mock_quant_step(hd.quality);
  const auto cs = static_cast<ColorSpace>(hd.color_space);
  VideoSequence video;
  video.fps = hd.fps_milli / 1000.0;
  std::size_t pos = 0;
  for (std::uint32_t t = 0; t < hd.frame_count; ++t) {
    Planes p{w, h, hd.channels, {}};
    p.v.resize(static_cast<std::size_t>(w) * h * hd.channels);
    for (int c = 0; c < p.c; ++c) {
      for (int by = 0; by < bh; ++by) {
        for (int bx = 0; bx < bw; ++bx) {
          Block coef{};
          for (auto& v : coef) v = get_varint(packed, pos) * step;
          const Block rec = idct8x8(coef);
          for (int y = 0; y < 8; ++y) {
            for (int x = 0; x < 8; ++x) {
              const int sy = by * 8 + y, sx = bx * 8 + x;
              if (sy < h && sx < w) p.at(c, sy, sx) = rec[y * 8 + x];
            }
          }
        }
      }
    }
    video.frames.push_back(from_coding_planes(p, cs, hd.bit_depth));
  }
  if (pos != packed.size()) throw FormatError("mock lossy: trailing symbols");
  return video;
}

// ---- mock lossless ----

Bytes lossless_encode(const Frame& f) {
  const int w = f.width(), h = f.height(), ch = f.channels();
  const bool wide = f.bit_depth() > 8;
  const int scale = f.max_code();
  Bytes residual;
  residual.reserve(static_cast<std::size_t>(w) * h * ch * (wide ? 2 : 1));
  for (int c = 0; c < ch; ++c) {
    for (int y = 0; y < h; ++y) {
      std::uint32_t prev = 0;
      for (int x = 0; x < w; ++x) {
        const auto code = static_cast<std::uint32_t>(
            std::lround(std::clamp(f.at(c, y, x), 0.0f, 1.0f) * scale));
        // Left-neighbour prediction, residual modulo the sample width.
        const std::uint32_t d = code - prev;
        prev = code;
        residual.push_back(static_cast<std::uint8_t>(d));
        if (wide) residual.push_back(static_cast<std::uint8_t>(d >> 8));
      }
    }
  }
  Bytes out;
  ByteWriter wr(out);
  wr.bytes(reinterpret_cast<const std::uint8_t*>(kMockLosslessMagic), 4);
  wr.u8(kMockVersion);
  wr.u8(static_cast<std::uint8_t>(ch));
  wr.u8(static_cast<std::uint8_t>(f.color_space()));
  wr.u8(static_cast<std::uint8_t>(f.bit_depth()));
  wr.u32(static_cast<std::uint32_t>(w));
  wr.u32(static_cast<std::uint32_t>(h));
  wr.bytes(deflate_bytes(residual));
  return out;
}

Frame lossless_decode(const Bytes& payload) {
  ByteReader r(payload, "mock lossless");
  const std::uint8_t* magic = r.take(4);
  if (!std::equal(magic, magic + 4, kMockLosslessMagic)) {
    throw FormatError("mock lossless: bad magic");
  }
  if (r.u8() != kMockVersion) throw FormatError("mock lossless: bad version");
  const int ch = r.u8();
  const int cs = r.u8();
  const int depth = r.u8();
  const int w = static_cast<int>(r.u32());
  const int h = static_cast<int>(r.u32());
  if (ch == 0 || cs > 1 || depth == 0 || depth > 16 || w <= 0 || h <= 0) {
    throw FormatError("mock lossless: invalid header");
  }
  const bool wide = depth > 8;
  const std::size_t n = static_cast<std::size_t>(w) * h * ch * (wide ? 2 : 1);
  const std::size_t comp_len = r.remaining();
  const Bytes residual = inflate_bytes(r.take(comp_len), comp_len, n);
  Frame f(w, h, ch, static_cast<ColorSpace>(cs), depth);
  const std::uint32_t mask = wide ? 0xFFFF : 0xFF;
  const float scale = static_cast<float>(f.max_code());
  std::size_t pos = 0;
  for (int c = 0; c < ch; ++c) {
    for (int y = 0; y < h; ++y) {
      std::uint32_t prev = 0;
      for (int x = 0; x < w; ++x) {
        std::uint32_t d = residual[pos++];
        if (wide) d |= static_cast<std::uint32_t>(residual[pos++]) << 8;
        prev = (prev + d) & mask;
        if (prev > static_cast<std::uint32_t>(f.max_code())) {
          throw FormatError("mock lossless: sample out of range");
        }
        f.at(c, y, x) = static_cast<float>(prev) / scale;
      }
    }
  }
  return f;
}

// ---- external adapters ----

std::map<std::string, std::string> base_vars(const CodecConfig& cfg) {
  return {{"qp", std::to_string(cfg.quality)}, {"preset", cfg.preset}};
}

EncodedVideo external_encode(const VideoSequence& video, const CodecConfig& cfg) {
  if (video.width() % 2 || video.height() % 2) {
    throw ValidationError("external video codecs need even dimensions");
  }
  process::TempDir tmp("hvc-enc");
  const auto in = tmp / "input.yuv";
  const auto out = tmp / ("stream" + cfg.bitstream_extension);
  const io::Bytes raw = io::to_yuv420(video);
  io::write_file_atomic(in, raw);
  auto vars = base_vars(cfg);
  vars["input"] = in.string();
  vars["output"] = out.string();
  vars["width"] = std::to_string(video.width());
  vars["height"] = std::to_string(video.height());
  vars["fps"] = std::to_string(video.fps);
  process::run_template(cfg.command_template, vars, tmp.path());
  EncodedVideo enc;
  enc.bitstream = io::read_file(out);
  if (enc.bitstream.empty()) throw CodecProcessError("encoder produced no output");
  enc.rate_bits = 8ull * enc.bitstream.size();
  return enc;
}

VideoSequence external_decode(const Bytes& bitstream, const CodecConfig& cfg,
                              const std::optional<StreamGeometry>& geometry) {
  if (!geometry) {
    throw ValidationError("external decode needs the stream geometry");
  }
  process::TempDir tmp("hvc-dec");
  const auto in = tmp / ("stream" + cfg.bitstream_extension);
  const auto out = tmp / "output.yuv";
  io::write_file_atomic(in, bitstream);
  auto vars = base_vars(cfg);
  vars["input"] = in.string();
  vars["output"] = out.string();
  vars["width"] = std::to_string(geometry->width);
  vars["height"] = std::to_string(geometry->height);
  vars["fps"] = std::to_string(geometry->fps);
  process::run_template(cfg.decode_command_template, vars, tmp.path());
  VideoSequence video = io::from_yuv420(io::read_file(out), geometry->width,
                                        geometry->height, geometry->fps);
  if (geometry->frame_count > 0 && video.frame_count() != geometry->frame_count) {
    throw FormatError("decoder returned " + std::to_string(video.frame_count()) +
                      " frames, expected " +
                      std::to_string(geometry->frame_count));
  }
  return video;
}

Bytes external_encode_reference(const Frame& frame, const CodecConfig& cfg) {
  process::TempDir tmp("hvc-ref");
  const auto in = tmp / "reference.png";
  const auto out = tmp / ("reference" + cfg.bitstream_extension);
  io::write_png(in, frame);
  auto vars = base_vars(cfg);
  vars["input"] = in.string();
  vars["output"] = out.string();
  process::run_template(cfg.command_template, vars, tmp.path());
  Bytes payload = io::read_file(out);
  if (payload.empty()) throw CodecProcessError("encoder produced no output");
  return payload;
}

Frame external_decode_reference(const Bytes& payload, const CodecConfig& cfg) {
  process::TempDir tmp("hvc-refdec");
  const auto in = tmp / ("reference" + cfg.bitstream_extension);
  const auto out = tmp / "reference.png";
  io::write_file_atomic(in, payload);
  auto vars = base_vars(cfg);
  vars["input"] = in.string();
  vars["output"] = out.string();
  process::run_template(cfg.decode_command_template, vars, tmp.path());
  return io::read_png(out);
}

}  // namespace

void CodecConfig::validate() const {
  switch (codec_id) {
    case CodecId::kMockLossy:
      if (quality < 1 || quality > 100) {
        throw ValidationError("mock quality must be in [1, 100]");
      }
      break;
    case CodecId::kExternalVideo:
      if (quality < 0 || quality > 63) {
        throw ValidationError("QP must be in [0, 63]");
      }
      [[fallthrough]];
    case CodecId::kExternalLossless:
      if (command_template.empty() || decode_command_template.empty()) {
        throw ValidationError("external codec needs encode and decode commands");
      }
      break;
    case CodecId::kMockLossless:
      break;
    default:
      throw ValidationError("unknown codec id");
  }
}

CodecConfig CodecConfig::mock_lossy(int quality) {
  CodecConfig c;
  c.codec_id = CodecId::kMockLossy;
  c.quality = quality;
  return c;
}

CodecConfig CodecConfig::mock_lossless() {
  CodecConfig c;
  c.codec_id = CodecId::kMockLossless;
  return c;
}

CodecConfig CodecConfig::hevc_ffmpeg(int qp) {
  CodecConfig c;
  c.codec_id = CodecId::kExternalVideo;
  c.quality = qp;
  c.bitstream_extension = ".hevc";
  c.command_template =
      "ffmpeg -hide_banner -loglevel error -y -f rawvideo -pix_fmt yuv420p "
      "-s:v {width}x{height} -r {fps} -i {input} -c:v libx265 -preset {preset} "
      "-x265-params qp={qp}:log-level=error -f hevc {output}";
  c.decode_command_template =
      "ffmpeg -hide_banner -loglevel error -y -i {input} -f rawvideo "
      "-pix_fmt yuv420p {output}";
  return c;
}

CodecConfig CodecConfig::vvc(int qp) {
  CodecConfig c;
  c.codec_id = CodecId::kExternalVideo;
  c.quality = qp;
  c.bitstream_extension = ".266";
  c.command_template =
      "vvencapp -i {input} -s {width}x{height} -r {fps} -c yuv420 "
      "--preset {preset} -q {qp} -o {output}";
  c.decode_command_template = "vvdecapp -b {input} -o {output}";
  return c;
}

CodecConfig CodecConfig::jpegxl() {
  CodecConfig c;
  c.codec_id = CodecId::kExternalLossless;
  c.bitstream_extension = ".jxl";
  c.command_template = "cjxl {input} {output} -d 0 --quiet";
  c.decode_command_template = "djxl {input} {output} --quiet";
  return c;
}

double mock_quant_step(int quality) {
  return std::clamp(std::exp2((100.0 - quality) / 12.0), 1.0 / 256.0, 64.0);
}

Block dct8x8(const Block& in) {
  const auto& m = dct_matrix();
  Block tmp{}, out{};
  // Rows, then columns: out = M * in * M^T.
  for (int y = 0; y < 8; ++y) {
    for (int k = 0; k < 8; ++k) {
      double s = 0;
      for (int n = 0; n < 8; ++n) s += m[k * 8 + n] * in[y * 8 + n];
      tmp[y * 8 + k] = s;
    }
  }
  for (int k = 0; k < 8; ++k) {
    for (int x = 0; x < 8; ++x) {
      double s = 0;
      for (int n = 0; n < 8; ++n) s += m[k * 8 + n] * tmp[n * 8 + x];
      out[k * 8 + x] = s;
    }
  }
  return out;
}

Block idct8x8(const Block& in) {
  const auto& m = dct_matrix();
  Block tmp{}, out{};
  for (int y = 0; y < 8; ++y) {
    for (int n = 0; n < 8; ++n) {
      double s = 0;
      for (int k = 0; k < 8; ++k) s += m[k * 8 + n] * in[y * 8 + k];
      tmp[y * 8 + n] = s;
    }
  }
  for (int n = 0; n < 8; ++n) {
    for (int x = 0; x < 8; ++x) {
      double s = 0;
      for (int k = 0; k < 8; ++k) s += m[k * 8 + n] * tmp[k * 8 + x];
      out[n * 8 + x] = s;
    }
  }
  return out;
}

double entropy_bits(const std::vector<std::int32_t>& symbols) {
  if (symbols.empty()) return 0.0;
  std::unordered_map<std::int32_t, std::size_t> hist;
  for (auto s : symbols) ++hist[s];
  const double n = static_cast<double>(symbols.size());
  double h = 0.0;
  for (const auto& [sym, count] : hist) {
    const double p = count / n;
    h -= p * std::log2(p);
  }
  return h * n;
}

EncodedVideo encode_video(const VideoSequence& frames, const CodecConfig& cfg) {
  cfg.validate();
  if (cfg.is_lossless()) {
    throw ValidationError("encode_video needs a lossy video codec");
  }
  frames.validate();
  for (const auto& f : frames.frames) f.validate();
  if (cfg.codec_id == CodecId::kMockLossy) return mock_encode(frames, cfg.quality);
  return external_encode(frames, cfg);
}

VideoSequence decode_video(const Bytes& bitstream, const CodecConfig& cfg,
                           const std::optional<StreamGeometry>& geometry) {
  if (cfg.is_lossless()) {
    throw ValidationError("decode_video needs a lossy video codec");
  }
  if (cfg.codec_id == CodecId::kMockLossy) return mock_decode(bitstream);
  cfg.validate();
  return external_decode(bitstream, cfg, geometry);
}

Bytes encode_reference(const Frame& frame, const CodecConfig& cfg) {
  if (!cfg.is_lossless()) {
    throw ValidationError("encode_reference needs a lossless codec");
  }
  cfg.validate();
  frame.validate();
  if (cfg.codec_id == CodecId::kMockLossless) return lossless_encode(frame);
  return external_encode_reference(frame, cfg);
}

Frame decode_reference(const Bytes& payload, const CodecConfig& cfg) {
  if (!cfg.is_lossless()) {
    throw ValidationError("decode_reference needs a lossless codec");
  }
  if (cfg.codec_id == CodecId::kMockLossless) return lossless_decode(payload);
  cfg.validate();
  return external_decode_reference(payload, cfg);
}

}  // namespace hvc::codecs
