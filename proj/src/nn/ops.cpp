#include <algorithm>
#include <cmath>
#include <string>

#include "hybridvc/nn/ops.hpp"

namespace hvc::nn {

void check_conv_shapes(const Shape& x, const Shape& weight,
                       std::size_t bias_len) {
  if (weight.h != weight.w || weight.h % 2 == 0) {
    throw ValidationError("conv2d: kernel must be square and odd, got " +
                          weight.str());
  }
  if (weight.c != x.c) {
    throw ValidationError("conv2d: input has " + std::to_string(x.c) +
                          " channels, weight expects " +
                          std::to_string(weight.c));
  }
  if (bias_len != 0 && bias_len != static_cast<std::size_t>(weight.n)) {
    throw ValidationError("conv2d: bias length mismatch");
  }
}

void check_deform_shapes(const Shape& x, const Shape& offset,
                         const Shape& mask, const Shape& weight,
                         std::size_t bias_len) {
  if (weight.h != kKernel || weight.w != kKernel) {
    throw ValidationError("deform_conv2d: only 3x3 kernels are supported");
  }
  check_conv_shapes(x, weight, bias_len);
  const Shape want_off{x.n, 2 * kTaps, x.h, x.w};
  const Shape want_mask{x.n, kTaps, x.h, x.w};
  if (!(offset == want_off)) {
    throw ValidationError("deform_conv2d: offset shape " + offset.str() +
                          ", expected " + want_off.str());
  }
  if (!(mask == want_mask)) {
    throw ValidationError("deform_conv2d: mask shape " + mask.str() +
                          ", expected " + want_mask.str());
  }
}

template <typename T>
void leaky_relu(const Tensor<T>& x, Tensor<T>& y, T slope) {
  if (!(y.shape() == x.shape())) y = Tensor<T>(x.shape());
  const T* src = x.data();
  T* dst = y.data();
  const std::size_t n = x.size();
#pragma omp parallel for simd schedule(static)
  for (std::size_t i = 0; i < n; ++i) {
    dst[i] = src[i] > T(0) ? src[i] : slope * src[i];
  }
}

template <typename T>
void leaky_relu_backward(const Tensor<T>& x, const Tensor<T>& dy,
                         Tensor<T>& dx, T slope) {
  require_same_shape(x.shape(), dy.shape(), "leaky_relu_backward");
  if (!(dx.shape() == x.shape())) dx = Tensor<T>(x.shape());
  const T* xs = x.data();
  const T* g = dy.data();
  T* out = dx.data();
  const std::size_t n = x.size();
#pragma omp parallel for simd schedule(static)
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = xs[i] > T(0) ? g[i] : slope * g[i];
  }
}

template <typename T>
void sigmoid(const Tensor<T>& x, Tensor<T>& y) {
  if (!(y.shape() == x.shape())) y = Tensor<T>(x.shape());
  const T* src = x.data();
  T* dst = y.data();
  const std::size_t n = x.size();
#pragma omp parallel for schedule(static)
  for (std::size_t i = 0; i < n; ++i) {
    dst[i] = T(1) / (T(1) + std::exp(-src[i]));
  }
}

template <typename T>
void sigmoid_backward(const Tensor<T>& y, const Tensor<T>& dy, Tensor<T>& dx) {
  require_same_shape(y.shape(), dy.shape(), "sigmoid_backward");
  if (!(dx.shape() == y.shape())) dx = Tensor<T>(y.shape());
  const T* ys = y.data();
  const T* g = dy.data();
  T* out = dx.data();
  const std::size_t n = y.size();
#pragma omp parallel for simd schedule(static)
  for (std::size_t i = 0; i < n; ++i) out[i] = g[i] * ys[i] * (T(1) - ys[i]);
}

template <typename T>
BilinearGrad<T> bilinear_sample_grad(const Tensor<T>& x, int n, int c, T y,
                                     T xc) {
  const int h = x.h(), w = x.w();
  if (!(y > T(-1)) || !(y < T(h)) || !(xc > T(-1)) || !(xc < T(w))) {
    return {T(0), T(0), T(0)};
  }
  const T fy = std::floor(y), fx = std::floor(xc);
  const int y0 = static_cast<int>(fy), x0 = static_cast<int>(fx);
  const T ly = y - fy, lx = xc - fx;
  auto at = [&](int yy, int xx) -> T {
    return (yy >= 0 && yy < h && xx >= 0 && xx < w) ? x(n, c, yy, xx) : T(0);
  };
  const T v00 = at(y0, x0), v01 = at(y0, x0 + 1);
  const T v10 = at(y0 + 1, x0), v11 = at(y0 + 1, x0 + 1);
  BilinearGrad<T> g;
  g.value = (T(1) - ly) * ((T(1) - lx) * v00 + lx * v01) +
            ly * ((T(1) - lx) * v10 + lx * v11);
  g.d_y = (T(1) - lx) * (v10 - v00) + lx * (v11 - v01);
  g.d_x = (T(1) - ly) * (v01 - v00) + ly * (v11 - v10);
  return g;
}

template <typename T>
T bilinear_sample(const Tensor<T>& x, int n, int c, T y, T xc) {
  return bilinear_sample_grad(x, n, c, y, xc).value;
}

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.n() != b.n() || a.h() != b.h() || a.w() != b.w()) {
    throw ValidationError("concat_channels: " + a.shape().str() + " vs " +
                          b.shape().str());
  }
  Tensor<T> out(a.n(), a.c() + b.c(), a.h(), a.w());
  for (int n = 0; n < a.n(); ++n) {
    auto dst = out.sample(n);
    const auto sa = a.sample(n), sb = b.sample(n);
    std::copy(sa.begin(), sa.end(), dst.begin());
    std::copy(sb.begin(), sb.end(), dst.begin() + static_cast<std::ptrdiff_t>(sa.size()));
  }
  return out;
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> split_channels(const Tensor<T>& t,
                                               int first_channels) {
  if (first_channels < 0 || first_channels > t.c()) {
    throw ValidationError("split_channels: bad split point");
  }
  Tensor<T> a(t.n(), first_channels, t.h(), t.w());
  Tensor<T> b(t.n(), t.c() - first_channels, t.h(), t.w());
  for (int n = 0; n < t.n(); ++n) {
    const auto src = t.sample(n);
    auto da = a.sample(n), db = b.sample(n);
    std::copy(src.begin(), src.begin() + static_cast<std::ptrdiff_t>(da.size()), da.begin());
    std::copy(src.begin() + static_cast<std::ptrdiff_t>(da.size()), src.end(), db.begin());
  }
  return {std::move(a), std::move(b)};
}

template <typename T>
void add_inplace(Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "add_inplace");
  T* dst = a.data();
  const T* src = b.data();
  const std::size_t n = a.size();
#pragma omp parallel for simd schedule(static)
  for (std::size_t i = 0; i < n; ++i) dst[i] += src[i];
}

#define HVC_INSTANTIATE(T)                                                     \
  template void leaky_relu<T>(const Tensor<T>&, Tensor<T>&, T);                \
  template void leaky_relu_backward<T>(const Tensor<T>&, const Tensor<T>&,     \
                                       Tensor<T>&, T);                         \
  template void sigmoid<T>(const Tensor<T>&, Tensor<T>&);                      \
  template void sigmoid_backward<T>(const Tensor<T>&, const Tensor<T>&,        \
                                    Tensor<T>&);                               \
  template BilinearGrad<T> bilinear_sample_grad<T>(const Tensor<T>&, int, int, \
                                                   T, T);                      \
  template T bilinear_sample<T>(const Tensor<T>&, int, int, T, T);             \
  template Tensor<T> concat_channels<T>(const Tensor<T>&, const Tensor<T>&);   \
  template std::pair<Tensor<T>, Tensor<T>> split_channels<T>(const Tensor<T>&, \
                                                             int);             \
  template void add_inplace<T>(Tensor<T>&, const Tensor<T>&);

HVC_INSTANTIATE(float)
HVC_INSTANTIATE(double)
#undef HVC_INSTANTIATE

}  // namespace hvc::nn
