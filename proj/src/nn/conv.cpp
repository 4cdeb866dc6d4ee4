#include <Eigen/Core>

#include <algorithm>
#include <vector>

#include "hybridvc/nn/ops.hpp"
#include "kernel_util.hpp"

namespace hvc::nn {

namespace {

// Unfolds rows [y0, y1) of one sample into a (C*k*k) x ((y1-y0)*W) matrix.
template <typename T>
void im2col(const T* src, int channels, int h, int w, int k, int y0, int y1,
            T* col) {
  const int pad = k / 2;
  const std::size_t cols = static_cast<std::size_t>(y1 - y0) * w;
  for (int c = 0; c < channels; ++c) {
    const T* plane = src + static_cast<std::size_t>(c) * h * w;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        T* dst = col + ((static_cast<std::size_t>(c) * k + ky) * k + kx) * cols;
        const int shift = kx - pad;
        const int x_lo = std::max(0, -shift);
        const int x_hi = std::min(w, w - shift);
        for (int y = y0; y < y1; ++y) {
          T* row = dst + static_cast<std::size_t>(y - y0) * w;
          const int sy = y + ky - pad;
          if (sy < 0 || sy >= h || x_lo >= x_hi) {
            std::fill(row, row + w, T(0));
            continue;
          }
          const T* srow = plane + static_cast<std::size_t>(sy) * w;
          std::fill(row, row + x_lo, T(0));
          std::copy(srow + x_lo + shift, srow + x_hi + shift, row + x_lo);
          std::fill(row + x_hi, row + w, T(0));
        }
      }
    }
  }
}

// (out, in, k, k) -> (in, out, k, k) with the kernel rotated by 180 degrees:
// the weight of the transposed convolution that maps dy to dx.
template <typename T>
Tensor<T> flip_transpose(const Tensor<T>& weight) {
  const int co = weight.n(), ci = weight.c(), k = weight.h();
  Tensor<T> out(ci, co, k, k);
  for (int o = 0; o < co; ++o) {
    for (int i = 0; i < ci; ++i) {
      for (int ky = 0; ky < k; ++ky) {
        for (int kx = 0; kx < k; ++kx) {
          out(i, o, k - 1 - ky, k - 1 - kx) = weight(o, i, ky, kx);
        }
      }
    }
  }
  return out;
}

}  // namespace

template <typename T>
void conv2d(const Tensor<T>& x, const Tensor<T>& weight,
            std::span<const T> bias, Tensor<T>& y) {
  check_conv_shapes(x.shape(), weight.shape(), bias.size());
  const int n_count = x.n(), ci = x.c(), h = x.h(), w = x.w();
  const int co = weight.n(), k = weight.h();
  const Shape out_shape{n_count, co, h, w};
  if (!(y.shape() == out_shape)) y = Tensor<T>(out_shape);
  if (x.empty()) return;

  const int band = detail::band_rows(w);
  const int bands = (h + band - 1) / band;
  const int tasks = n_count * bands;
  const int rows_k = ci * k * k;
  const detail::ConstMatMap<T> wmat(weight.data(), co, rows_k);

#pragma omp parallel
  {
    std::vector<T> col(static_cast<std::size_t>(rows_k) * band * w);
#pragma omp for schedule(static)
    for (int task = 0; task < tasks; ++task) {
      const int n = task / bands;
      const int y0 = (task % bands) * band;
      const int y1 = std::min(h, y0 + band);
      const int cols = (y1 - y0) * w;
      im2col(x.data() + x.index(n, 0, 0, 0), ci, h, w, k, y0, y1, col.data());
      const detail::ConstMatMap<T> cmat(col.data(), rows_k, cols);
      detail::StridedMap<T> out(y.data() + y.index(n, 0, y0, 0), co, cols,
                                Eigen::OuterStride<>(static_cast<Eigen::Index>(h) * w));
      out.noalias() = wmat * cmat;
      if (!bias.empty()) {
        for (int o = 0; o < co; ++o) out.row(o).array() += bias[o];
      }
    }
  }
}

template <typename T>
void conv2d_backward(const Tensor<T>& x, const Tensor<T>& weight,
                     const Tensor<T>& dy, Tensor<T>* dx, Tensor<T>* dweight,
                     T* dbias) {
  check_conv_shapes(x.shape(), weight.shape(), 0);
  const int n_count = x.n(), ci = x.c(), h = x.h(), w = x.w();
  const int co = weight.n(), k = weight.h();
  require_same_shape(dy.shape(), Shape{n_count, co, h, w}, "conv2d_backward");

  if (dx != nullptr) {
    conv2d(dy, flip_transpose(weight), std::span<const T>{}, *dx);
  }
  if (dbias != nullptr) {
    for (int o = 0; o < co; ++o) {
      T s = 0;
      for (int n = 0; n < n_count; ++n) {
        for (T v : dy.plane(n, o)) s += v;
      }
      dbias[o] += s;
    }
  }
  if (dweight == nullptr) return;
  require_same_shape(dweight->shape(), weight.shape(), "conv2d_backward dweight");

  const int band = detail::band_rows(w);
  const int bands = (h + band - 1) / band;
  const int rows_k = ci * k * k;
  // One partial per sample, summed in sample order afterwards.
  std::vector<detail::Mat<T>> partial(static_cast<std::size_t>(n_count));
#pragma omp parallel
  {
    std::vector<T> col(static_cast<std::size_t>(rows_k) * band * w);
#pragma omp for schedule(static)
    for (int n = 0; n < n_count; ++n) {
      auto& acc = partial[n];
      acc.setZero(co, rows_k);
      for (int b = 0; b < bands; ++b) {
        const int y0 = b * band;
        const int y1 = std::min(h, y0 + band);
        const int cols = (y1 - y0) * w;
        im2col(x.data() + x.index(n, 0, 0, 0), ci, h, w, k, y0, y1, col.data());
        const detail::ConstMatMap<T> cmat(col.data(), rows_k, cols);
        const detail::ConstStridedMap<T> g(
            dy.data() + dy.index(n, 0, y0, 0), co, cols,
            Eigen::OuterStride<>(static_cast<Eigen::Index>(h) * w));
        acc.noalias() += g * cmat.transpose();
      }
    }
  }
  detail::MatMap<T> dw(dweight->data(), co, rows_k);
  for (const auto& p : partial) dw += p;
}

template void conv2d<float>(const Tensor<float>&, const Tensor<float>&,
                            std::span<const float>, Tensor<float>&);
template void conv2d<double>(const Tensor<double>&, const Tensor<double>&,
                             std::span<const double>, Tensor<double>&);
template void conv2d_backward<float>(const Tensor<float>&, const Tensor<float>&,
                                     const Tensor<float>&, Tensor<float>*,
                                     Tensor<float>*, float*);
template void conv2d_backward<double>(const Tensor<double>&,
                                      const Tensor<double>&,
                                      const Tensor<double>&, Tensor<double>*,
                                      Tensor<double>*, double*);

}  // namespace hvc::nn
