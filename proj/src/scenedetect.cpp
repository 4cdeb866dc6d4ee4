#include "hybridvc/scenedetect.hpp"

#include <algorithm>
#include <cmath>

namespace hvc::scenedetect {

namespace {

struct Hsv {
  int w = 0, h = 0;
  std::vector<float> hue, sat, val;  // each on 0..255
};

Hsv downscaled_hsv(const Frame& f) {
  const int long_side = std::max(f.width(), f.height());
  const int factor = std::max(1, (long_side + 127) / 128);
  Hsv out;
  out.w = f.width() / factor;
  out.h = f.height() / factor;
  if (out.w == 0 || out.h == 0) {
    out.w = std::max(out.w, 1);
    out.h = std::max(out.h, 1);
  }
  const std::size_t n = static_cast<std::size_t>(out.w) * out.h;
  out.hue.resize(n);
  out.sat.resize(n);
  out.val.resize(n);
  const bool gray = f.channels() < 3;
  const float inv_area = 1.0f / static_cast<float>(factor * factor);
  for (int y = 0; y < out.h; ++y) {
    for (int x = 0; x < out.w; ++x) {
      float rgb[3] = {0, 0, 0};
      for (int c = 0; c < 3; ++c) {
        const int src_c = gray ? 0 : c;
        float s = 0;
        for (int dy = 0; dy < factor; ++dy) {
          const int sy = std::min(y * factor + dy, f.height() - 1);
          for (int dx = 0; dx < factor; ++dx) {
            s += f.at(src_c, sy, std::min(x * factor + dx, f.width() - 1));
          }
        }
        rgb[c] = s * inv_area;
      }
      float r = rgb[0], g = rgb[1], b = rgb[2];
      if (f.color_space() == ColorSpace::kYCbCr444) {
        const float u = g - 128.0f / 255.0f, v = b - 128.0f / 255.0f;
        const float yy = r;
        r = std::clamp(yy + 1.402f * v, 0.0f, 1.0f);
        g = std::clamp(yy - 0.344136f * u - 0.714136f * v, 0.0f, 1.0f);
        b = std::clamp(yy + 1.772f * u, 0.0f, 1.0f);
      }
      const float mx = std::max({r, g, b});
      const float mn = std::min({r, g, b});
      const float delta = mx - mn;
      float hue = 0.0f;
      if (delta > 0.0f) {
        if (mx == r) {
          hue = std::fmod((g - b) / delta + 6.0f, 6.0f);
        } else if (mx == g) {
          hue = (b - r) / delta + 2.0f;
        } else {
          hue = (r - g) / delta + 4.0f;
        }
      }
      const std::size_t i = static_cast<std::size_t>(y) * out.w + x;
      out.hue[i] = hue / 6.0f * 255.0f;
      out.sat[i] = mx > 0.0f ? delta / mx * 255.0f : 0.0f;
      out.val[i] = mx * 255.0f;
    }
  }
  return out;
}

double score_hsv(const Hsv& a, const Hsv& b) {
  double dh = 0, ds = 0, dv = 0;
  for (std::size_t i = 0; i < a.hue.size(); ++i) {
    dh += std::abs(a.hue[i] - b.hue[i]);
    ds += std::abs(a.sat[i] - b.sat[i]);
    dv += std::abs(a.val[i] - b.val[i]);
  }
  const double n = static_cast<double>(a.hue.size());
  return (dh + ds + dv) / (3.0 * n);
}

}  // namespace

double content_score(const Frame& a, const Frame& b) {
  if (!a.same_layout(b)) throw ValidationError("content_score: layout mismatch");
  return score_hsv(downscaled_hsv(a), downscaled_hsv(b));
}

std::vector<double> content_scores(const VideoSequence& video) {
  video.validate();
  const int t_count = video.frame_count();
  std::vector<Hsv> hsv(static_cast<std::size_t>(t_count));
#pragma omp parallel for schedule(dynamic)
  for (int t = 0; t < t_count; ++t) hsv[t] = downscaled_hsv(video.frames[t]);
  std::vector<double> scores(static_cast<std::size_t>(std::max(0, t_count - 1)));
#pragma omp parallel for schedule(static)
  for (int t = 1; t < t_count; ++t) scores[t - 1] = score_hsv(hsv[t - 1], hsv[t]);
  return scores;
}

CutList cuts_from_scores(const std::vector<double>& scores, double threshold,
                         int min_scene_len) {
  if (!(threshold > 0.0)) throw ValidationError("threshold must be > 0");
  if (min_scene_len < 1) throw ValidationError("min_scene_len must be >= 1");
  CutList cuts;
  cuts.threshold = threshold;
  cuts.frame_count = static_cast<int>(scores.size()) + 1;
  int previous = -1;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const int t = static_cast<int>(i) + 1;
    if (scores[i] > threshold && (previous < 0 || t - previous >= min_scene_len)) {
      cuts.cut_indices.push_back(t);
      previous = t;
    }
  }
  return cuts;
}

CutList detect_cuts(const VideoSequence& video, double threshold,
                    int min_scene_len) {
  if (video.frame_count() < 2) {
    throw ValidationError("scene detection needs at least two frames");
  }
  return cuts_from_scores(content_scores(video), threshold, min_scene_len);
}

std::vector<int> select_references(int frame_count, const CutList& cuts,
                                   ReferencePolicy policy) {
  if (frame_count < 1) throw ValidationError("frame_count must be >= 1");
  std::vector<int> refs{0};
  if (policy == ReferencePolicy::kFirstOnly) return refs;
  for (int c : cuts.cut_indices) {
    if (c <= 0 || c >= frame_count || c <= refs.back()) {
      throw ValidationError("cut list is not valid for this video");
    }
    refs.push_back(c);
  }
  return refs;
}

}  // namespace hvc::scenedetect
