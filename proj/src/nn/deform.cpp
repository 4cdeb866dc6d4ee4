#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <vector>

#include "hybridvc/nn/ops.hpp"
#include "kernel_util.hpp"

namespace hvc::nn {

namespace {

// Bilinear footprint of one sampling location. Out-of-image corners get
// index -1 and contribute nothing.
template <typename T>
struct Footprint {
  int idx[4];
  T wt[4];
  // d(weight)/dy and d(weight)/dx per corner, for the coordinate gradient.
  T wy[4];
  T wx[4];
  bool any;
};

template <typename T>
Footprint<T> footprint(T sy, T sx, int h, int w) {
  Footprint<T> f{};
  f.any = false;
  for (int i = 0; i < 4; ++i) f.idx[i] = -1;
  if (!(sy > T(-1)) || !(sy < T(h)) || !(sx > T(-1)) || !(sx < T(w))) {
    return f;
  }
  const T fy = std::floor(sy), fx = std::floor(sx);
  const int y0 = static_cast<int>(fy), x0 = static_cast<int>(fx);
  const T ly = sy - fy, lx = sx - fx;
  const T hy = T(1) - ly, hx = T(1) - lx;
  const int ys[4] = {y0, y0, y0 + 1, y0 + 1};
  const int xs[4] = {x0, x0 + 1, x0, x0 + 1};
  const T wts[4] = {hy * hx, hy * lx, ly * hx, ly * lx};
  const T dys[4] = {-hx, -lx, hx, lx};
  const T dxs[4] = {-hy, hy, -ly, ly};
  for (int i = 0; i < 4; ++i) {
    if (ys[i] >= 0 && ys[i] < h && xs[i] >= 0 && xs[i] < w) {
      f.idx[i] = ys[i] * w + xs[i];
      f.wt[i] = wts[i];
      f.wy[i] = dys[i];
      f.wx[i] = dxs[i];
      f.any = true;
    } else {
      f.wt[i] = f.wy[i] = f.wx[i] = T(0);
    }
  }
  return f;
}

template <typename T>
Footprint<T> tap_footprint(const Tensor<T>& offset, int n, int k, int y, int x,
                           int h, int w) {
  const int ky = k / kKernel, kx = k % kKernel;
  const T sy = T(y + ky - 1) + offset(n, 2 * k, y, x);
  const T sx = T(x + kx - 1) + offset(n, 2 * k + 1, y, x);
  return footprint(sy, sx, h, w);
}

// Modulated, deformed im2col for rows [y0, y1) of sample n.
template <typename T>
void deform_im2col(const Tensor<T>& x, const Tensor<T>& offset,
                   const Tensor<T>& mask, int n, int y0, int y1, T* col) {
  const int ci = x.c(), h = x.h(), w = x.w();
  const std::size_t cols = static_cast<std::size_t>(y1 - y0) * w;
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  const T* src = x.data() + x.index(n, 0, 0, 0);
  for (int k = 0; k < kTaps; ++k) {
    for (int y = y0; y < y1; ++y) {
      for (int xx = 0; xx < w; ++xx) {
        const std::size_t j = static_cast<std::size_t>(y - y0) * w + xx;
        const auto f = tap_footprint(offset, n, k, y, xx, h, w);
        const T m = mask(n, k, y, xx);
        T* dst = col + static_cast<std::size_t>(k) * cols + j;
        const std::size_t stride = static_cast<std::size_t>(kTaps) * cols;
        if (!f.any) {
          for (int c = 0; c < ci; ++c) dst[c * stride] = T(0);
          continue;
        }
        for (int c = 0; c < ci; ++c) {
          const T* p = src + c * plane;
          T v = 0;
          for (int i = 0; i < 4; ++i) {
            if (f.idx[i] >= 0) v += f.wt[i] * p[f.idx[i]];
          }
          dst[c * stride] = m * v;
        }
      }
    }
  }
}

}  // namespace

template <typename T>
void deform_conv2d(const Tensor<T>& x, const Tensor<T>& offset,
                   const Tensor<T>& mask, const Tensor<T>& weight,
                   std::span<const T> bias, Tensor<T>& y) {
  check_deform_shapes(x.shape(), offset.shape(), mask.shape(), weight.shape(),
                      bias.size());
  const int n_count = x.n(), ci = x.c(), h = x.h(), w = x.w();
  const int co = weight.n();
  const Shape out_shape{n_count, co, h, w};
  if (!(y.shape() == out_shape)) y = Tensor<T>(out_shape);
  if (x.empty()) return;

  const int band = detail::band_rows(w);
  const int bands = (h + band - 1) / band;
  const int tasks = n_count * bands;
  const int rows_k = ci * kTaps;
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
      deform_im2col(x, offset, mask, n, y0, y1, col.data());
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
void deform_conv2d_backward(const Tensor<T>& x, const Tensor<T>& offset,
                            const Tensor<T>& mask, const Tensor<T>& weight,
                            const Tensor<T>& dy, Tensor<T>* dx,
                            Tensor<T>* doffset, Tensor<T>* dmask,
                            Tensor<T>* dweight, T* dbias) {
  check_deform_shapes(x.shape(), offset.shape(), mask.shape(), weight.shape(),
                      0);
  const int n_count = x.n(), ci = x.c(), h = x.h(), w = x.w();
  const int co = weight.n();
  require_same_shape(dy.shape(), Shape{n_count, co, h, w},
                     "deform_conv2d_backward");
  if (dx != nullptr) *dx = Tensor<T>(x.shape());
  if (doffset != nullptr) *doffset = Tensor<T>(offset.shape());
  if (dmask != nullptr) *dmask = Tensor<T>(mask.shape());
  if (dweight != nullptr) {
    require_same_shape(dweight->shape(), weight.shape(),
                       "deform_conv2d_backward dweight");
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
  const bool need_col_grad = dx != nullptr || doffset != nullptr || dmask != nullptr;
  if (!need_col_grad && dweight == nullptr) return;

  const int band = detail::band_rows(w);
  const int bands = (h + band - 1) / band;
  const int rows_k = ci * kTaps;
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  const detail::ConstMatMap<T> wmat(weight.data(), co, rows_k);
  std::vector<detail::Mat<T>> partial(static_cast<std::size_t>(n_count));

#pragma omp parallel
  {
    std::vector<T> col(static_cast<std::size_t>(rows_k) * band * w);
    detail::Mat<T> dcol;
#pragma omp for schedule(static)
    for (int n = 0; n < n_count; ++n) {
      if (dweight != nullptr) partial[n].setZero(co, rows_k);
      const T* src = x.data() + x.index(n, 0, 0, 0);
      for (int b = 0; b < bands; ++b) {
        const int y0 = b * band;
        const int y1 = std::min(h, y0 + band);
        const int cols = (y1 - y0) * w;
        const detail::ConstStridedMap<T> g(
            dy.data() + dy.index(n, 0, y0, 0), co, cols,
            Eigen::OuterStride<>(static_cast<Eigen::Index>(h) * w));
        if (dweight != nullptr) {
          deform_im2col(x, offset, mask, n, y0, y1, col.data());
          const detail::ConstMatMap<T> cmat(col.data(), rows_k, cols);
          partial[n].noalias() += g * cmat.transpose();
        }
        if (!need_col_grad) continue;
        dcol.noalias() = wmat.transpose() * g;
        for (int k = 0; k < kTaps; ++k) {
          for (int y = y0; y < y1; ++y) {
            for (int xx = 0; xx < w; ++xx) {
              const int j = (y - y0) * w + xx;
              const auto f = tap_footprint(offset, n, k, y, xx, h, w);
              if (!f.any) continue;
              const T m = mask(n, k, y, xx);
              T gm = 0, gy = 0, gx = 0;
              for (int c = 0; c < ci; ++c) {
                const T gc = dcol(c * kTaps + k, j);
                if (gc == T(0)) continue;
                const T* p = src + c * plane;
                T v = 0, vy = 0, vx = 0;
                for (int i = 0; i < 4; ++i) {
                  if (f.idx[i] < 0) continue;
                  const T s = p[f.idx[i]];
                  v += f.wt[i] * s;
                  vy += f.wy[i] * s;
                  vx += f.wx[i] * s;
                }
                gm += gc * v;
                gy += gc * vy;
                gx += gc * vx;
                if (dx != nullptr) {
                  T* d = dx->data() + dx->index(n, c, 0, 0);
                  for (int i = 0; i < 4; ++i) {
                    if (f.idx[i] >= 0) d[f.idx[i]] += gc * m * f.wt[i];
                  }
                }
              }
              if (dmask != nullptr) (*dmask)(n, k, y, xx) = gm;
              if (doffset != nullptr) {
                (*doffset)(n, 2 * k, y, xx) = gy * m;
                (*doffset)(n, 2 * k + 1, y, xx) = gx * m;
              }
            }
          }
        }
      }
    }
  }
  if (dweight != nullptr) {
    detail::MatMap<T> dw(dweight->data(), co, rows_k);
    for (const auto& p : partial) dw += p;
  }
}

template void deform_conv2d<float>(const Tensor<float>&, const Tensor<float>&,
                                   const Tensor<float>&, const Tensor<float>&,
                                   std::span<const float>, Tensor<float>&);
template void deform_conv2d<double>(const Tensor<double>&,
                                    const Tensor<double>&,
                                    const Tensor<double>&,
                                    const Tensor<double>&,
                                    std::span<const double>, Tensor<double>&);
template void deform_conv2d_backward<float>(
    const Tensor<float>&, const Tensor<float>&, const Tensor<float>&,
    const Tensor<float>&, const Tensor<float>&, Tensor<float>*, Tensor<float>*,
    Tensor<float>*, Tensor<float>*, float*);
template void deform_conv2d_backward<double>(
    const Tensor<double>&, const Tensor<double>&, const Tensor<double>&,
    const Tensor<double>&, const Tensor<double>&, Tensor<double>*,
    Tensor<double>*, Tensor<double>*, Tensor<double>*, double*);

}  // namespace hvc::nn
