#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "hybridvc/tensor.hpp"

namespace hvc {

enum class ColorSpace : std::uint8_t { kRGB = 0, kYCbCr444 = 1 };

// One picture. Samples are stored planar (channel, row, column) as reals in
// [0, 1]; 8-bit sources map by v / 255.
class Frame {
 public:
  Frame() = default;
  Frame(int width, int height, int channels = 3,
        ColorSpace color_space = ColorSpace::kRGB, int bit_depth = 8);

  int width() const { return width_; }
  int height() const { return height_; }
  int channels() const { return channels_; }
  ColorSpace color_space() const { return color_space_; }
  int bit_depth() const { return bit_depth_; }
  bool empty() const { return pixels_.empty(); }

  float& at(int c, int y, int x) {
    return pixels_[(static_cast<std::size_t>(c) * height_ + y) * width_ + x];
  }
  float at(int c, int y, int x) const {
    return pixels_[(static_cast<std::size_t>(c) * height_ + y) * width_ + x];
  }
  std::span<float> plane(int c) {
    return {pixels_.data() + static_cast<std::size_t>(c) * height_ * width_,
            static_cast<std::size_t>(height_) * width_};
  }
  std::span<const float> plane(int c) const {
    return {pixels_.data() + static_cast<std::size_t>(c) * height_ * width_,
            static_cast<std::size_t>(height_) * width_};
  }
  std::span<float> pixels() { return pixels_; }
  std::span<const float> pixels() const { return pixels_; }

  bool same_layout(const Frame& o) const {
    return width_ == o.width_ && height_ == o.height_ &&
           channels_ == o.channels_;
  }
  bool operator==(const Frame& o) const = default;

  // Throws ValidationError unless H, W >= 8 and every sample is finite and
  // inside [0, 1].
  void validate() const;

  // Largest code value at the stored bit depth (255 for 8-bit).
  int max_code() const { return (1 << bit_depth_) - 1; }

  void set_color_space(ColorSpace cs) { color_space_ = cs; }

 private:
  int width_ = 0;
  int height_ = 0;
  int channels_ = 0;
  ColorSpace color_space_ = ColorSpace::kRGB;
  int bit_depth_ = 8;
  std::vector<float> pixels_;
};

struct VideoSequence {
  std::vector<Frame> frames;
  double fps = 30.0;

  int frame_count() const { return static_cast<int>(frames.size()); }
  int width() const { return frames.empty() ? 0 : frames.front().width(); }
  int height() const { return frames.empty() ? 0 : frames.front().height(); }
  // Throws ValidationError on an empty sequence or frames of mixed layout.
  void validate() const;
};

// Full-range BT.601 (JFIF) conversion on [0, 1] data. Chroma is centred at
// 128/255.
Frame rgb_to_ycbcr(const Frame& rgb);
Frame ycbcr_to_rgb(const Frame& ycc);
// Luma plane of an RGB (or YCbCr) frame as a single-channel frame.
Frame luma(const Frame& f);

// Snap every sample onto the frame's integer code lattice (round(v*max)/max).
void quantize_to_bit_depth(Frame& f);

// Frame <-> 1 x C x H x W tensor (for the restoration network).
Tensor<float> to_tensor(const Frame& f);
void copy_into_batch(const Frame& f, Tensor<float>& batch, int n);
Frame from_tensor(const Tensor<float>& t, int n = 0,
                  ColorSpace cs = ColorSpace::kRGB, bool clamp = true);

}  // namespace hvc
