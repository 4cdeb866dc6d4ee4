#pragma once
// Helpers shared by the unit tests and the acceptance runner: random tensors,
// finite-difference gradient checks and synthetic video fixtures.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <vector>

#include "hybridvc/frame.hpp"
#include "hybridvc/nn/ops.hpp"
#include "hybridvc/tensor.hpp"

namespace hvc::testkit {

template <typename T = double>
Tensor<T> random_tensor(Shape s, std::mt19937_64& rng, T lo = -1, T hi = 1) {
  Tensor<T> t(s);
  std::uniform_real_distribution<double> u(lo, hi);
  for (auto& v : t.values()) v = static_cast<T>(u(rng));
  return t;
}

// Offsets whose sampling points never sit on the integer lattice, so bilinear
// interpolation is differentiable in a neighbourhood of every point.
inline Tensor<double> off_lattice_offsets(Shape s, std::mt19937_64& rng, int range = 2) {
  Tensor<double> t(s);
  std::uniform_int_distribution<int> whole(-range, range);
  std::uniform_real_distribution<double> frac(0.1, 0.9);
  for (auto& v : t.values()) v = whole(rng) + frac(rng);
  return t;
}

inline double rel_err(double analytic, double numeric) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
  return std::abs(analytic - numeric) / scale;
}

// Worst relative error between an analytic gradient and central differences
// of `loss` with respect to `param`. Probes `probes` random entries (all when
// probes <= 0).
inline double check_grad(Tensor<double>& param, const Tensor<double>& analytic,
                         const std::function<double()>& loss, std::mt19937_64& rng,
                         int probes = 0, double h = 1e-6) {
  const std::size_t n = param.size();
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  if (probes > 0 && static_cast<std::size_t>(probes) < n) {
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(static_cast<std::size_t>(probes));
  }
  double worst = 0.0;
  for (std::size_t i : idx) {
    const double keep = param.data()[i];
    param.data()[i] = keep + h;
    const double up = loss();
    param.data()[i] = keep - h;
    const double down = loss();
    param.data()[i] = keep;
    worst = std::max(worst, rel_err(analytic.data()[i], (up - down) / (2 * h)));
  }
  return worst;
}

inline double dot(const Tensor<double>& a, const Tensor<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a.data()[i] * b.data()[i];
  return s;
}

struct DeformGradErrors {
  double input = 0, offset = 0, mask = 0, weight = 0, bias = 0;
  double worst() const { return std::max({input, offset, mask, weight, bias}); }
};

// One random deformable-conv instance checked against central differences of
// L = <deform_conv2d(x, o, m, w, b), g>.
inline DeformGradErrors deform_grad_instance(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> dim(3, 6), ch(1, 3), batch(1, 2);
  const int n = batch(rng), ci = ch(rng), co = ch(rng), h = dim(rng), w = dim(rng);
  auto x = random_tensor<double>({n, ci, h, w}, rng);
  auto off = off_lattice_offsets({n, 2 * nn::kTaps, h, w}, rng);
  auto mask = random_tensor<double>({n, nn::kTaps, h, w}, rng, 0.0, 1.0);
  auto wt = random_tensor<double>({co, ci, 3, 3}, rng);
  std::vector<double> bias(static_cast<std::size_t>(co));
  for (auto& b : bias) b = std::uniform_real_distribution<double>(-1, 1)(rng);
  const auto g = random_tensor<double>({n, co, h, w}, rng);

  auto loss = [&] {
    Tensor<double> y;
    nn::deform_conv2d<double>(x, off, mask, wt, bias, y);
    return dot(y, g);
  };
  Tensor<double> dx(x.shape()), doff(off.shape()), dm(mask.shape()), dw(wt.shape());
  std::vector<double> db(bias.size(), 0.0);
  nn::deform_conv2d_backward<double>(x, off, mask, wt, g, &dx, &doff, &dm, &dw, db.data());

  DeformGradErrors e;
  e.input = check_grad(x, dx, loss, rng);
  e.offset = check_grad(off, doff, loss, rng);
  e.mask = check_grad(mask, dm, loss, rng);
  e.weight = check_grad(wt, dw, loss, rng);
  Tensor<double> bt(Shape{1, 1, 1, co}), dbt(Shape{1, 1, 1, co});
  std::copy(db.begin(), db.end(), dbt.data());
  std::copy(bias.begin(), bias.end(), bt.data());
  auto loss_b = [&] {
    std::copy(bt.data(), bt.data() + co, bias.begin());
    return loss();
  };
  e.bias = check_grad(bt, dbt, loss_b, rng);
  return e;
}

// Centre-tap identity kernel (out = in channel-wise).
template <typename T>
Tensor<T> identity_kernel(int channels) {
  Tensor<T> w(Shape{channels, channels, 3, 3});
  for (int c = 0; c < channels; ++c) w(c, c, 1, 1) = T(1);
  return w;
}

// ---- frames and videos ----

inline Frame constant_frame(int w, int h, float v) {
  Frame f(w, h);
  std::fill(f.pixels().begin(), f.pixels().end(), v);
  return f;
}

inline Frame random_frame(int w, int h, std::mt19937_64& rng) {
  Frame f(w, h);
  std::uniform_int_distribution<int> u(0, 255);
  for (auto& v : f.pixels()) v = static_cast<float>(u(rng)) / 255.0f;
  return f;
}

// Smooth 8-bit texture, non-constant.
inline Frame smooth_frame(int w, int h, double phase) {
  Frame f(w, h);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const double v = 0.5 + 0.3 * std::sin(0.21 * x + phase + c) * std::cos(0.17 * y - phase);
        f.at(c, y, x) = static_cast<float>(std::round(v * 255.0) / 255.0);
      }
  return f;
}

inline VideoSequence repeat(const Frame& f, int n) {
  VideoSequence v;
  v.frames.assign(static_cast<std::size_t>(n), f);
  return v;
}

}  // namespace hvc::testkit
