#include "hybridvc/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace hvc::metrics {

double mse(const Frame& a, const Frame& b) {
  if (!a.same_layout(b)) {
    throw ValidationError("metrics: frame shapes differ");
  }
  const auto pa = a.pixels(), pb = b.pixels();
  double s = 0.0;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    const double d = static_cast<double>(pa[i]) - pb[i];
    s += d * d;
  }
  return s / static_cast<double>(pa.size());
}

double psnr(const Frame& a, const Frame& b, PsnrMode mode) {
  const double e = mode == PsnrMode::kLuma ? mse(luma(a), luma(b)) : mse(a, b);
  if (e == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / e);
}

double psnr(const VideoSequence& a, const VideoSequence& b, PsnrMode mode) {
  if (a.frame_count() != b.frame_count() || a.frames.empty()) {
    throw ValidationError("psnr: frame counts differ or are zero");
  }
  double s = 0.0;
  for (int t = 0; t < a.frame_count(); ++t) s += psnr(a.frames[t], b.frames[t], mode);
  return s / a.frame_count();
}

namespace {

constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

const std::array<double, kSsimWindow>& gaussian_taps() {
  static const std::array<double, kSsimWindow> taps = [] {
    std::array<double, kSsimWindow> g{};
    double s = 0;
    for (int i = 0; i < kSsimWindow; ++i) {
      const double d = i - kSsimWindow / 2;
      g[i] = std::exp(-d * d / (2 * kSsimSigma * kSsimSigma));
      s += g[i];
    }
    for (auto& v : g) v /= s;
    return g;
  }();
  return taps;
}

struct Plane {
  int w = 0, h = 0;
  std::vector<double> v;
  double at(int y, int x) const { return v[static_cast<std::size_t>(y) * w + x]; }
};

// Separable "valid" Gaussian filtering: output is (w-10) x (h-10).
Plane filter_valid(const Plane& in) {
  const auto& g = gaussian_taps();
  const int ow = in.w - kSsimWindow + 1, oh = in.h - kSsimWindow + 1;
  std::vector<double> tmp(static_cast<std::size_t>(in.h) * ow);
  for (int y = 0; y < in.h; ++y) {
    for (int x = 0; x < ow; ++x) {
      double s = 0;
      for (int k = 0; k < kSsimWindow; ++k) s += g[k] * in.at(y, x + k);
      tmp[static_cast<std::size_t>(y) * ow + x] = s;
    }
  }
  Plane out{ow, oh, std::vector<double>(static_cast<std::size_t>(ow) * oh)};
  for (int y = 0; y < oh; ++y) {
    for (int x = 0; x < ow; ++x) {
      double s = 0;
      for (int k = 0; k < kSsimWindow; ++k) {
        s += g[k] * tmp[static_cast<std::size_t>(y + k) * ow + x];
      }
      out.v[static_cast<std::size_t>(y) * ow + x] = s;
    }
  }
  return out;
}

// Adjoint of filter_valid: spreads a (w-10) x (h-10) map back to w x h.
Plane filter_valid_adjoint(const Plane& m, int w, int h) {
  const auto& g = gaussian_taps();
  const int ow = m.w;
  std::vector<double> tmp(static_cast<std::size_t>(h) * ow, 0.0);
  for (int y = 0; y < m.h; ++y) {
    for (int x = 0; x < ow; ++x) {
      const double v = m.at(y, x);
      for (int k = 0; k < kSsimWindow; ++k) {
        tmp[static_cast<std::size_t>(y + k) * ow + x] += g[k] * v;
      }
    }
  }
  Plane out{w, h, std::vector<double>(static_cast<std::size_t>(w) * h, 0.0)};
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < ow; ++x) {
      const double v = tmp[static_cast<std::size_t>(y) * ow + x];
      for (int k = 0; k < kSsimWindow; ++k) {
        out.v[static_cast<std::size_t>(y) * w + x + k] += g[k] * v;
      }
    }
  }
  return out;
}

Plane downsample(const Plane& in) {
  Plane out{in.w / 2, in.h / 2, {}};
  out.v.resize(static_cast<std::size_t>(out.w) * out.h);
  for (int y = 0; y < out.h; ++y) {
    for (int x = 0; x < out.w; ++x) {
      out.v[static_cast<std::size_t>(y) * out.w + x] =
          0.25 * (in.at(2 * y, 2 * x) + in.at(2 * y, 2 * x + 1) +
                  in.at(2 * y + 1, 2 * x) + in.at(2 * y + 1, 2 * x + 1));
    }
  }
  return out;
}

Plane downsample_adjoint(const Plane& g, int w, int h) {
  Plane out{w, h, std::vector<double>(static_cast<std::size_t>(w) * h, 0.0)};
  for (int y = 0; y < g.h; ++y) {
    for (int x = 0; x < g.w; ++x) {
      const double v = 0.25 * g.at(y, x);
      out.v[static_cast<std::size_t>(2 * y) * w + 2 * x] += v;
      out.v[static_cast<std::size_t>(2 * y) * w + 2 * x + 1] += v;
      out.v[static_cast<std::size_t>(2 * y + 1) * w + 2 * x] += v;
      out.v[static_cast<std::size_t>(2 * y + 1) * w + 2 * x + 1] += v;
    }
  }
  return out;
}

Plane product(const Plane& a, const Plane& b) {
  Plane out{a.w, a.h, std::vector<double>(a.v.size())};
  for (std::size_t i = 0; i < a.v.size(); ++i) out.v[i] = a.v[i] * b.v[i];
  return out;
}

struct ScaleStats {
  double l = 0, cs = 0;
  // Per-pixel d(mean l)/dX and d(mean cs)/dX at this scale (filled on demand).
  Plane dl, dcs;
};

ScaleStats scale_stats(const Plane& x, const Plane& y, bool with_grad) {
  const Plane mx = filter_valid(x), my = filter_valid(y);
  const Plane sxx = filter_valid(product(x, x));
  const Plane syy = filter_valid(product(y, y));
  const Plane sxy = filter_valid(product(x, y));
  const std::size_t n = mx.v.size();
  const double inv_n = 1.0 / static_cast<double>(n);
  ScaleStats st;
  Plane a_l{mx.w, mx.h, std::vector<double>(n)};    // dL/d(mu_x)
  Plane b_cs{mx.w, mx.h, std::vector<double>(n)};   // dCS/d(var_x)
  Plane c_cs{mx.w, mx.h, std::vector<double>(n)};   // dCS/d(cov)
  double ls = 0, css = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double ux = mx.v[i], uy = my.v[i];
    const double vx = sxx.v[i] - ux * ux, vy = syy.v[i] - uy * uy;
    const double cxy = sxy.v[i] - ux * uy;
    const double ln = 2 * ux * uy + kC1, ld = ux * ux + uy * uy + kC1;
    const double cn = 2 * cxy + kC2, cd = vx + vy + kC2;
    ls += ln / ld;
    css += cn / cd;
    if (with_grad) {
      a_l.v[i] = (2 * uy / ld - ln * 2 * ux / (ld * ld)) * inv_n;
      b_cs.v[i] = (-cn / (cd * cd)) * inv_n;
      c_cs.v[i] = (2.0 / cd) * inv_n;
    }
  }
  st.l = ls * inv_n;
  st.cs = css * inv_n;
  if (!with_grad) return st;

  // dL/dX(q) = G^T a(q). dCS/dX(q) = 2 X(q) G^T b - 2 G^T(b mu_x)
  //                               + Y(q) G^T c - G^T(c mu_y).
  st.dl = filter_valid_adjoint(a_l, x.w, x.h);
  const Plane gb = filter_valid_adjoint(b_cs, x.w, x.h);
  const Plane gbm = filter_valid_adjoint(product(b_cs, mx), x.w, x.h);
  const Plane gc = filter_valid_adjoint(c_cs, x.w, x.h);
  const Plane gcm = filter_valid_adjoint(product(c_cs, my), x.w, x.h);
  st.dcs = Plane{x.w, x.h, std::vector<double>(x.v.size())};
  for (std::size_t i = 0; i < x.v.size(); ++i) {
    st.dcs.v[i] = 2 * x.v[i] * gb.v[i] - 2 * gbm.v[i] + y.v[i] * gc.v[i] - gcm.v[i];
  }
  return st;
}

double ms_ssim_impl(std::span<const double> a, std::span<const double> b,
                    int width, int height, std::span<double>* grad) {
  if (std::min(width, height) < kMsSsimMinSide) {
    throw ScaleError("ms_ssim needs at least " + std::to_string(kMsSsimMinSide) +
                     " px per side, got " + std::to_string(width) + "x" +
                     std::to_string(height));
  }
  if (a.size() != static_cast<std::size_t>(width) * height || a.size() != b.size()) {
    throw ValidationError("ms_ssim: buffer sizes do not match dimensions");
  }
  constexpr int kScales = static_cast<int>(kMsSsimWeights.size());
  std::vector<Plane> xs, ys;
  xs.push_back(Plane{width, height, {a.begin(), a.end()}});
  ys.push_back(Plane{width, height, {b.begin(), b.end()}});
  for (int s = 1; s < kScales; ++s) {
    xs.push_back(downsample(xs.back()));
    ys.push_back(downsample(ys.back()));
  }
  const bool with_grad = grad != nullptr;
  std::vector<ScaleStats> stats;
  for (int s = 0; s < kScales; ++s) stats.push_back(scale_stats(xs[s], ys[s], with_grad));

  double score = 1.0;
  std::vector<double> factor(kScales);
  for (int s = 0; s < kScales; ++s) {
    factor[s] = std::max(stats[s].cs, 0.0);
    score *= std::pow(factor[s], kMsSsimWeights[s]);
  }
  const double l_last = std::max(stats.back().l, 0.0);
  score *= std::pow(l_last, kMsSsimWeights.back());
  if (!with_grad) return score;

  // Walk the pyramid from the coarsest scale back up, adding each scale's
  // contribution before mapping through the downsampling adjoint.
  Plane acc{xs.back().w, xs.back().h, std::vector<double>(xs.back().v.size(), 0.0)};
  for (int s = kScales - 1; s >= 0; --s) {
    if (s < kScales - 1) acc = downsample_adjoint(acc, xs[s].w, xs[s].h);
    if (score > 0.0 && factor[s] > 0.0) {
      const double k = score * kMsSsimWeights[s] / factor[s];
      for (std::size_t i = 0; i < acc.v.size(); ++i) acc.v[i] += k * stats[s].dcs.v[i];
    }
    if (s == kScales - 1 && score > 0.0 && l_last > 0.0) {
      const double k = score * kMsSsimWeights.back() / l_last;
      for (std::size_t i = 0; i < acc.v.size(); ++i) acc.v[i] += k * stats[s].dl.v[i];
    }
  }
  std::copy(acc.v.begin(), acc.v.end(), grad->begin());
  return score;
}

}  // namespace

double ms_ssim_plane(std::span<const double> a, std::span<const double> b,
                     int width, int height) {
  return ms_ssim_impl(a, b, width, height, nullptr);
}

double ms_ssim_plane_grad(std::span<const double> a, std::span<const double> b,
                          int width, int height, std::span<double> grad_a) {
  if (grad_a.size() != a.size()) throw ValidationError("ms_ssim: grad size");
  return ms_ssim_impl(a, b, width, height, &grad_a);
}

double ms_ssim(const Frame& a, const Frame& b) {
  if (!a.same_layout(b)) throw ValidationError("ms_ssim: frame shapes differ");
  double s = 0.0;
  for (int c = 0; c < a.channels(); ++c) {
    const std::vector<double> pa(a.plane(c).begin(), a.plane(c).end());
    const std::vector<double> pb(b.plane(c).begin(), b.plane(c).end());
    s += ms_ssim_plane(pa, pb, a.width(), a.height());
  }
  return s / a.channels();
}

double ms_ssim(const VideoSequence& a, const VideoSequence& b) {
  if (a.frame_count() != b.frame_count() || a.frames.empty()) {
    throw ValidationError("ms_ssim: frame counts differ or are zero");
  }
  std::vector<double> per(a.frames.size());
#pragma omp parallel for schedule(dynamic)
  for (int t = 0; t < a.frame_count(); ++t) per[t] = ms_ssim(a.frames[t], b.frames[t]);
  return std::accumulate(per.begin(), per.end(), 0.0) / a.frame_count();
}

double bpp(std::uint64_t total_bits, int width, int height, int frames) {
  if (width <= 0 || height <= 0 || frames <= 0) {
    throw ValidationError("bpp: dimensions must be positive");
  }
  return static_cast<double>(total_bits) /
         (static_cast<double>(width) * height * frames);
}

std::vector<std::string> RDCurve::validate() {
  if (points.size() < 4) throw ValidationError("RD curve needs at least 4 points");
  std::sort(points.begin(), points.end(),
            [](const RDPoint& a, const RDPoint& b) { return a.rate < b.rate; });
  std::vector<std::string> warnings;
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (!(points[i].rate > 0.0) || !std::isfinite(points[i].rate)) {
      throw ValidationError("RD point rate must be positive and finite");
    }
    if (i > 0 && points[i].rate <= points[i - 1].rate) {
      throw ValidationError("RD point rates must be strictly increasing");
    }
    if (i > 0 && points[i].distortion < points[i - 1].distortion) {
      warnings.push_back("quality drops between '" + points[i - 1].label +
                         "' and '" + points[i].label + "'");
    }
  }
  return warnings;
}

std::vector<double> pchip_slopes(std::span<const double> x,
                                 std::span<const double> y) {
  const std::size_t n = x.size();
  std::vector<double> d(n, 0.0);
  if (n < 2) return d;
  std::vector<double> h(n - 1), delta(n - 1);
  for (std::size_t k = 0; k + 1 < n; ++k) {
    h[k] = x[k + 1] - x[k];
    delta[k] = (y[k + 1] - y[k]) / h[k];
  }
  if (n == 2) {
    d[0] = d[1] = delta[0];
    return d;
  }
  for (std::size_t k = 1; k + 1 < n; ++k) {
    if (delta[k - 1] * delta[k] <= 0.0) {
      d[k] = 0.0;
    } else {
      const double w1 = 2 * h[k] + h[k - 1];
      const double w2 = h[k] + 2 * h[k - 1];
      d[k] = (w1 + w2) / (w1 / delta[k - 1] + w2 / delta[k]);
    }
  }
  // Shape-preserving three-point end conditions.
  auto edge = [](double h0, double h1, double m0, double m1) {
    double s = ((2 * h0 + h1) * m0 - h0 * m1) / (h0 + h1);
    if (std::signbit(s) != std::signbit(m0) || s == 0.0) {
      s = 0.0;
    } else if (std::signbit(m0) != std::signbit(m1) &&
               std::abs(s) > std::abs(3 * m0)) {
      s = 3 * m0;
    }
    return s;
  };
  d[0] = edge(h[0], h[1], delta[0], delta[1]);
  d[n - 1] = edge(h[n - 2], h[n - 3], delta[n - 2], delta[n - 3]);
  return d;
}

double pchip_integral(std::span<const double> x, std::span<const double> y,
                      double lo, double hi) {
  const auto d = pchip_slopes(x, y);
  // Antiderivatives of the cubic Hermite basis on t in [0, 1].
  auto segment = [&](std::size_t k, double t0, double t1) {
    const double h = x[k + 1] - x[k];
    auto prim = [&](double t) {
      const double t2 = t * t, t3 = t2 * t, t4 = t3 * t;
      const double h00 = t - t3 + t4 / 2;
      const double h10 = t2 / 2 - 2 * t3 / 3 + t4 / 4;
      const double h01 = t3 - t4 / 2;
      const double h11 = -t3 / 3 + t4 / 4;
      return h * (h00 * y[k] + h10 * h * d[k] + h01 * y[k + 1] + h11 * h * d[k + 1]);
    };
    return prim(t1) - prim(t0);
  };
  double total = 0.0;
  for (std::size_t k = 0; k + 1 < x.size(); ++k) {
    const double a = std::max(lo, x[k]), b = std::min(hi, x[k + 1]);
    if (b <= a) continue;
    const double h = x[k + 1] - x[k];
    total += segment(k, (a - x[k]) / h, (b - x[k]) / h);
  }
  return total;
}

double bdbr(RDCurve anchor, RDCurve test) {
  anchor.validate();
  test.validate();
  auto prepare = [](const RDCurve& c, std::vector<double>& xs,
                    std::vector<double>& ys) {
    std::vector<RDPoint> pts = c.points;
    std::sort(pts.begin(), pts.end(), [](const RDPoint& a, const RDPoint& b) {
      return a.distortion < b.distortion;
    });
    for (std::size_t i = 0; i < pts.size(); ++i) {
      if (!std::isfinite(pts[i].distortion)) {
        throw ValidationError("bdbr: non-finite distortion");
      }
      if (i > 0 && pts[i].distortion <= pts[i - 1].distortion) {
        throw ValidationError("bdbr: repeated distortion values");
      }
      xs.push_back(pts[i].distortion);
      ys.push_back(std::log10(pts[i].rate));
    }
  };
  std::vector<double> ax, ay, tx, ty;
  prepare(anchor, ax, ay);
  prepare(test, tx, ty);
  const double lo = std::max(ax.front(), tx.front());
  const double hi = std::min(ax.back(), tx.back());
  if (!(hi > lo)) throw DomainError("bdbr: distortion ranges do not overlap");
  const double ia = pchip_integral(ax, ay, lo, hi);
  const double it = pchip_integral(tx, ty, lo, hi);
  const double avg = (it - ia) / (hi - lo);
  return (std::pow(10.0, avg) - 1.0) * 100.0;
}

}  // namespace hvc::metrics
