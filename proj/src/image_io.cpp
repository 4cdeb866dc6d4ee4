#include "hybridvc/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <system_error>

namespace hvc::io {

namespace fs = std::filesystem;

Bytes read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open " + path.string());
  in.seekg(0, std::ios::end);
  const auto size = static_cast<std::size_t>(in.tellg());
  in.seekg(0);
  Bytes out(size);
  if (size > 0) in.read(reinterpret_cast<char*>(out.data()), size);
  if (!in) throw FormatError("short read on " + path.string());
  return out;
}

void write_file_atomic(const fs::path& path, const std::uint8_t* data,
                       std::size_t size) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw ValidationError("cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(data),
              static_cast<std::streamsize>(size));
    if (!out) throw ValidationError("write failed on " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp);
    throw ValidationError("rename to " + path.string() + ": " + ec.message());
  }
}

Frame read_png(const fs::path& path) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.string().c_str())) {
    throw FormatError("png " + path.string() + ": " + image.message);
  }
  image.format = PNG_FORMAT_RGB;
  std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buf.data(), 0, nullptr)) {
    png_image_free(&image);
    throw FormatError("png " + path.string() + ": " + image.message);
  }
  const int w = static_cast<int>(image.width);
  const int h = static_cast<int>(image.height);
  Frame f(w, h, 3);
  for (int c = 0; c < 3; ++c) {
    auto p = f.plane(c);
    for (int i = 0; i < w * h; ++i) p[i] = buf[3 * i + c] / 255.0f;
  }
  return f;
}

void write_png(const fs::path& path, const Frame& frame) {
  if (frame.bit_depth() != 8) {
    throw ValidationError("png writer supports 8-bit frames only");
  }
  if (frame.channels() != 1 && frame.channels() != 3) {
    throw ValidationError("png writer needs 1 or 3 channels");
  }
  const Frame rgb = frame.color_space() == ColorSpace::kYCbCr444
                        ? ycbcr_to_rgb(frame)
                        : frame;
  const int w = rgb.width(), h = rgb.height(), ch = rgb.channels();
  std::vector<std::uint8_t> buf(static_cast<std::size_t>(w) * h * ch);
  for (int c = 0; c < ch; ++c) {
    const auto p = rgb.plane(c);
    for (int i = 0; i < w * h; ++i) {
      buf[ch * i + c] = static_cast<std::uint8_t>(
          std::lround(std::clamp(p[i], 0.0f, 1.0f) * 255.0f));
    }
  }
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(w);
  image.height = static_cast<png_uint_32>(h);
  image.format = ch == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&image, path.string().c_str(), 0, buf.data(), 0,
                               nullptr)) {
    throw ValidationError("png write " + path.string() + ": " + image.message);
  }
}

namespace {

std::uint8_t to_u8(float v) {
  return static_cast<std::uint8_t>(
      std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

// Appends one frame's Y, Cb, Cr planes at the requested chroma layout.
void append_planes(const Frame& rgb, ChromaFormat chroma, Bytes& out) {
  Frame ycc;
  if (rgb.channels() == 1) {
    ycc = Frame(rgb.width(), rgb.height(), 3, ColorSpace::kYCbCr444);
    std::copy(rgb.plane(0).begin(), rgb.plane(0).end(), ycc.plane(0).begin());
    std::fill(ycc.plane(1).begin(), ycc.plane(1).end(), 128.0f / 255.0f);
    std::fill(ycc.plane(2).begin(), ycc.plane(2).end(), 128.0f / 255.0f);
  } else {
    ycc = rgb.color_space() == ColorSpace::kYCbCr444 ? rgb : rgb_to_ycbcr(rgb);
  }
  const int w = ycc.width(), h = ycc.height();
  for (float v : ycc.plane(0)) out.push_back(to_u8(v));
  for (int c = 1; c < 3; ++c) {
    if (chroma == ChromaFormat::k444) {
      for (float v : ycc.plane(c)) out.push_back(to_u8(v));
      continue;
    }
    for (int y = 0; y < h; y += 2) {
      for (int x = 0; x < w; x += 2) {
        const float s = ycc.at(c, y, x) + ycc.at(c, y, x + 1) +
                        ycc.at(c, y + 1, x) + ycc.at(c, y + 1, x + 1);
        out.push_back(to_u8(s * 0.25f));
      }
    }
  }
}

Frame planes_to_rgb(const std::uint8_t* p, int w, int h, ChromaFormat chroma) {
  Frame ycc(w, h, 3, ColorSpace::kYCbCr444);
  auto yp = ycc.plane(0);
  for (int i = 0; i < w * h; ++i) yp[i] = p[i] / 255.0f;
  p += static_cast<std::size_t>(w) * h;
  for (int c = 1; c < 3; ++c) {
    if (chroma == ChromaFormat::k444) {
      auto cp = ycc.plane(c);
      for (int i = 0; i < w * h; ++i) cp[i] = p[i] / 255.0f;
      p += static_cast<std::size_t>(w) * h;
      continue;
    }
    const int cw = w / 2;
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        ycc.at(c, y, x) = p[(y / 2) * cw + x / 2] / 255.0f;
      }
    }
    p += static_cast<std::size_t>(cw) * (h / 2);
  }
  return ycbcr_to_rgb(ycc);
}

std::size_t frame_bytes(int w, int h, ChromaFormat chroma) {
  const std::size_t luma = static_cast<std::size_t>(w) * h;
  return chroma == ChromaFormat::k444 ? 3 * luma : luma + luma / 2;
}

}  // namespace

VideoSequence read_y4m(const fs::path& path) {
  const Bytes raw = read_file(path);
  auto line_end = std::find(raw.begin(), raw.end(), '\n');
  if (line_end == raw.end()) throw FormatError("y4m: missing header");
  std::istringstream header(std::string(raw.begin(), line_end));
  std::string tok;
  header >> tok;
  if (tok != "YUV4MPEG2") throw FormatError("y4m: bad signature");
  int w = 0, h = 0;
  double fps = 30.0;
  ChromaFormat chroma = ChromaFormat::k420;
  while (header >> tok) {
    switch (tok[0]) {
      case 'W': w = std::stoi(tok.substr(1)); break;
      case 'H': h = std::stoi(tok.substr(1)); break;
      case 'F': {
        const auto colon = tok.find(':');
        const double num = std::stod(tok.substr(1, colon - 1));
        const double den =
            colon == std::string::npos ? 1.0 : std::stod(tok.substr(colon + 1));
        if (den > 0) fps = num / den;
        break;
      }
      case 'C':
        if (tok.rfind("C444", 0) == 0 && tok.size() == 4) {
          chroma = ChromaFormat::k444;
        } else if (tok.rfind("C420", 0) == 0) {
          chroma = ChromaFormat::k420;
        } else {
          throw FormatError("y4m: unsupported colorspace " + tok);
        }
        break;
      default: break;
    }
  }
  if (w <= 0 || h <= 0) throw FormatError("y4m: missing dimensions");
  if (chroma == ChromaFormat::k420 && (w % 2 || h % 2)) {
    throw FormatError("y4m: 4:2:0 needs even dimensions");
  }
  VideoSequence video;
  video.fps = fps;
  std::size_t pos = static_cast<std::size_t>(line_end - raw.begin()) + 1;
  const std::size_t fb = frame_bytes(w, h, chroma);
  while (pos < raw.size()) {
    const auto nl = std::find(raw.begin() + pos, raw.end(), '\n');
    if (nl == raw.end() ||
        std::string(raw.begin() + pos, raw.begin() + pos + 5) != "FRAME") {
      throw FormatError("y4m: bad frame marker");
    }
    pos = static_cast<std::size_t>(nl - raw.begin()) + 1;
    if (pos + fb > raw.size()) throw FormatError("y4m: truncated frame");
    video.frames.push_back(planes_to_rgb(raw.data() + pos, w, h, chroma));
    pos += fb;
  }
  if (video.frames.empty()) throw FormatError("y4m: no frames");
  return video;
}

void write_y4m(const fs::path& path, const VideoSequence& video,
               ChromaFormat chroma) {
  video.validate();
  const int w = video.width(), h = video.height();
  if (chroma == ChromaFormat::k420 && (w % 2 || h % 2)) {
    throw ValidationError("4:2:0 output needs even dimensions");
  }
  const int fps_num = static_cast<int>(std::lround(video.fps * 1000));
  std::string header = "YUV4MPEG2 W" + std::to_string(w) + " H" +
                       std::to_string(h) + " F" + std::to_string(fps_num) +
                       ":1000 Ip A1:1 " +
                       (chroma == ChromaFormat::k444 ? "C444" : "C420jpeg") +
                       "\n";
  Bytes out(header.begin(), header.end());
  for (const auto& f : video.frames) {
    const std::string marker = "FRAME\n";
    out.insert(out.end(), marker.begin(), marker.end());
    append_planes(f, chroma, out);
  }
  write_file_atomic(path, out);
}

Bytes to_yuv420(const VideoSequence& video) {
  video.validate();
  if (video.width() % 2 || video.height() % 2) {
    throw ValidationError("4:2:0 interchange needs even dimensions");
  }
  Bytes out;
  out.reserve(frame_bytes(video.width(), video.height(), ChromaFormat::k420) *
              video.frames.size());
  for (const auto& f : video.frames) append_planes(f, ChromaFormat::k420, out);
  return out;
}

VideoSequence from_yuv420(const Bytes& raw, int width, int height,
                          double fps) {
  if (width <= 0 || height <= 0 || width % 2 || height % 2) {
    throw ValidationError("4:2:0 interchange needs positive even dimensions");
  }
  const std::size_t fb = frame_bytes(width, height, ChromaFormat::k420);
  if (raw.empty() || raw.size() % fb != 0) {
    throw FormatError("raw 4:2:0 size " + std::to_string(raw.size()) +
                      " is not a multiple of the frame size");
  }
  VideoSequence video;
  video.fps = fps;
  for (std::size_t pos = 0; pos < raw.size(); pos += fb) {
    video.frames.push_back(
        planes_to_rgb(raw.data() + pos, width, height, ChromaFormat::k420));
  }
  return video;
}

}  // namespace hvc::io
