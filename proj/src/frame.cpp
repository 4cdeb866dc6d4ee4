#include "hybridvc/frame.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace hvc {

Frame::Frame(int width, int height, int channels, ColorSpace color_space,
             int bit_depth)
    : width_(width),
      height_(height),
      channels_(channels),
      color_space_(color_space),
      bit_depth_(bit_depth) {
  if (width <= 0 || height <= 0 || channels <= 0) {
    throw ValidationError("frame dimensions must be positive");
  }
  if (bit_depth < 1 || bit_depth > 16) {
    throw ValidationError("bit depth must be in [1, 16]");
  }
  if (color_space == ColorSpace::kYCbCr444 && channels != 3) {
    throw ValidationError("YCbCr frames need three channels");
  }
  pixels_.assign(static_cast<std::size_t>(width) * height * channels, 0.0f);
}

void Frame::validate() const {
  if (width_ < 8 || height_ < 8) {
    throw ValidationError("frame must be at least 8x8, got " +
                          std::to_string(width_) + "x" +
                          std::to_string(height_));
  }
  constexpr float kEps = 1e-6f;
  for (float v : pixels_) {
    if (!std::isfinite(v) || v < -kEps || v > 1.0f + kEps) {
      throw ValidationError("frame sample outside [0,1] or non-finite");
    }
  }
}

void VideoSequence::validate() const {
  if (frames.empty()) throw ValidationError("video has no frames");
  for (const auto& f : frames) {
    if (!f.same_layout(frames.front())) {
      throw ValidationError("video frames differ in layout");
    }
  }
}

namespace {

// Returns {y, cb, cr} on the [0,1] scale.
inline void rgb_to_ycc(float r, float g, float b, float& y, float& cb,
                       float& cr) {
  y = 0.299f * r + 0.587f * g + 0.114f * b;
  cb = -0.168736f * r - 0.331264f * g + 0.5f * b + 128.0f / 255.0f;
  cr = 0.5f * r - 0.418688f * g - 0.081312f * b + 128.0f / 255.0f;
}

inline void ycc_to_rgb(float y, float cb, float cr, float& r, float& g,
                       float& b) {
  const float u = cb - 128.0f / 255.0f;
  const float v = cr - 128.0f / 255.0f;
  r = y + 1.402f * v;
  g = y - 0.344136f * u - 0.714136f * v;
  b = y + 1.772f * u;
}

}  // namespace

Frame rgb_to_ycbcr(const Frame& rgb) {
  if (rgb.channels() != 3 || rgb.color_space() != ColorSpace::kRGB) {
    throw ValidationError("rgb_to_ycbcr expects a 3-channel RGB frame");
  }
  Frame out(rgb.width(), rgb.height(), 3, ColorSpace::kYCbCr444,
            rgb.bit_depth());
  const auto r = rgb.plane(0), g = rgb.plane(1), b = rgb.plane(2);
  auto y = out.plane(0), cb = out.plane(1), cr = out.plane(2);
  for (std::size_t i = 0; i < r.size(); ++i) {
    rgb_to_ycc(r[i], g[i], b[i], y[i], cb[i], cr[i]);
    y[i] = std::clamp(y[i], 0.0f, 1.0f);
    cb[i] = std::clamp(cb[i], 0.0f, 1.0f);
    cr[i] = std::clamp(cr[i], 0.0f, 1.0f);
  }
  return out;
}

Frame ycbcr_to_rgb(const Frame& ycc) {
  if (ycc.channels() != 3 || ycc.color_space() != ColorSpace::kYCbCr444) {
    throw ValidationError("ycbcr_to_rgb expects a YCbCr 4:4:4 frame");
  }
  Frame out(ycc.width(), ycc.height(), 3, ColorSpace::kRGB, ycc.bit_depth());
  const auto y = ycc.plane(0), cb = ycc.plane(1), cr = ycc.plane(2);
  auto r = out.plane(0), g = out.plane(1), b = out.plane(2);
  for (std::size_t i = 0; i < y.size(); ++i) {
    ycc_to_rgb(y[i], cb[i], cr[i], r[i], g[i], b[i]);
    r[i] = std::clamp(r[i], 0.0f, 1.0f);
    g[i] = std::clamp(g[i], 0.0f, 1.0f);
    b[i] = std::clamp(b[i], 0.0f, 1.0f);
  }
  return out;
}

Frame luma(const Frame& f) {
  Frame out(f.width(), f.height(), 1, ColorSpace::kRGB, f.bit_depth());
  if (f.channels() == 1 || f.color_space() == ColorSpace::kYCbCr444) {
    std::copy(f.plane(0).begin(), f.plane(0).end(), out.plane(0).begin());
    return out;
  }
  const auto r = f.plane(0), g = f.plane(1), b = f.plane(2);
  auto y = out.plane(0);
  for (std::size_t i = 0; i < y.size(); ++i) {
    y[i] = 0.299f * r[i] + 0.587f * g[i] + 0.114f * b[i];
  }
  return out;
}

void quantize_to_bit_depth(Frame& f) {
  const float scale = static_cast<float>(f.max_code());
  for (float& v : f.pixels()) {
    v = std::round(std::clamp(v, 0.0f, 1.0f) * scale) / scale;
  }
}

Tensor<float> to_tensor(const Frame& f) {
  Tensor<float> t(1, f.channels(), f.height(), f.width());
  std::copy(f.pixels().begin(), f.pixels().end(), t.data());
  return t;
}

void copy_into_batch(const Frame& f, Tensor<float>& batch, int n) {
  if (batch.c() != f.channels() || batch.h() != f.height() ||
      batch.w() != f.width()) {
    throw ValidationError("frame does not fit batch tensor");
  }
  std::copy(f.pixels().begin(), f.pixels().end(), batch.sample(n).begin());
}

Frame from_tensor(const Tensor<float>& t, int n, ColorSpace cs, bool clamp) {
  Frame f(t.w(), t.h(), t.c(), cs);
  const auto src = t.sample(n);
  auto dst = f.pixels();
  for (std::size_t i = 0; i < src.size(); ++i) {
    dst[i] = clamp ? std::clamp(src[i], 0.0f, 1.0f) : src[i];
  }
  return f;
}

}  // namespace hvc
