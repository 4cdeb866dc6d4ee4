#include "hybridvc/nn/reference.hpp"

#include <cmath>

#include "hybridvc/nn/ops.hpp"

namespace hvc::nn::reference {

template <typename T>
void conv2d(const Tensor<T>& x, const Tensor<T>& weight,
            std::span<const T> bias, Tensor<T>& y) {
  check_conv_shapes(x.shape(), weight.shape(), bias.size());
  const int k = weight.h(), pad = k / 2;
  y = Tensor<T>(x.n(), weight.n(), x.h(), x.w());
  for (int n = 0; n < x.n(); ++n) {
    for (int o = 0; o < weight.n(); ++o) {
      for (int yy = 0; yy < x.h(); ++yy) {
        for (int xx = 0; xx < x.w(); ++xx) {
          T s = bias.empty() ? T(0) : bias[o];
          for (int i = 0; i < x.c(); ++i) {
            for (int ky = 0; ky < k; ++ky) {
              for (int kx = 0; kx < k; ++kx) {
                const int sy = yy + ky - pad, sx = xx + kx - pad;
                if (sy < 0 || sy >= x.h() || sx < 0 || sx >= x.w()) continue;
                s += weight(o, i, ky, kx) * x(n, i, sy, sx);
              }
            }
          }
          y(n, o, yy, xx) = s;
        }
      }
    }
  }
}

template <typename T>
void conv2d_backward(const Tensor<T>& x, const Tensor<T>& weight,
                     const Tensor<T>& dy, Tensor<T>* dx, Tensor<T>* dweight,
                     T* dbias) {
  check_conv_shapes(x.shape(), weight.shape(), 0);
  const int k = weight.h(), pad = k / 2;
  if (dx != nullptr) *dx = Tensor<T>(x.shape());
  for (int n = 0; n < x.n(); ++n) {
    for (int o = 0; o < weight.n(); ++o) {
      for (int yy = 0; yy < x.h(); ++yy) {
        for (int xx = 0; xx < x.w(); ++xx) {
          const T g = dy(n, o, yy, xx);
          if (dbias != nullptr) dbias[o] += g;
          for (int i = 0; i < x.c(); ++i) {
            for (int ky = 0; ky < k; ++ky) {
              for (int kx = 0; kx < k; ++kx) {
                const int sy = yy + ky - pad, sx = xx + kx - pad;
                if (sy < 0 || sy >= x.h() || sx < 0 || sx >= x.w()) continue;
                if (dweight != nullptr) (*dweight)(o, i, ky, kx) += g * x(n, i, sy, sx);
                if (dx != nullptr) (*dx)(n, i, sy, sx) += g * weight(o, i, ky, kx);
              }
            }
          }
        }
      }
    }
  }
}

template <typename T>
void deform_conv2d(const Tensor<T>& x, const Tensor<T>& offset,
                   const Tensor<T>& mask, const Tensor<T>& weight,
                   std::span<const T> bias, Tensor<T>& y) {
  check_deform_shapes(x.shape(), offset.shape(), mask.shape(), weight.shape(),
                      bias.size());
  y = Tensor<T>(x.n(), weight.n(), x.h(), x.w());
  for (int n = 0; n < x.n(); ++n) {
    for (int o = 0; o < weight.n(); ++o) {
      for (int yy = 0; yy < x.h(); ++yy) {
        for (int xx = 0; xx < x.w(); ++xx) {
          T s = bias.empty() ? T(0) : bias[o];
          for (int i = 0; i < x.c(); ++i) {
            for (int k = 0; k < kTaps; ++k) {
              const T sy = T(yy + k / kKernel - 1) + offset(n, 2 * k, yy, xx);
              const T sx = T(xx + k % kKernel - 1) + offset(n, 2 * k + 1, yy, xx);
              s += weight(o, i, k / kKernel, k % kKernel) * mask(n, k, yy, xx) *
                   bilinear_sample(x, n, i, sy, sx);
            }
          }
          y(n, o, yy, xx) = s;
        }
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
  if (dx != nullptr) *dx = Tensor<T>(x.shape());
  if (doffset != nullptr) *doffset = Tensor<T>(offset.shape());
  if (dmask != nullptr) *dmask = Tensor<T>(mask.shape());
  const int h = x.h(), w = x.w();
  for (int n = 0; n < x.n(); ++n) {
    for (int o = 0; o < weight.n(); ++o) {
      for (int yy = 0; yy < h; ++yy) {
        for (int xx = 0; xx < w; ++xx) {
          const T g = dy(n, o, yy, xx);
          if (dbias != nullptr) dbias[o] += g;
          for (int i = 0; i < x.c(); ++i) {
            for (int k = 0; k < kTaps; ++k) {
              const T sy = T(yy + k / kKernel - 1) + offset(n, 2 * k, yy, xx);
              const T sx = T(xx + k % kKernel - 1) + offset(n, 2 * k + 1, yy, xx);
              const T wgt = weight(o, i, k / kKernel, k % kKernel);
              const T m = mask(n, k, yy, xx);
              const auto s = bilinear_sample_grad(x, n, i, sy, sx);
              if (dweight != nullptr) (*dweight)(o, i, k / kKernel, k % kKernel) += g * m * s.value;
              if (dmask != nullptr) (*dmask)(n, k, yy, xx) += g * wgt * s.value;
              if (doffset != nullptr) {
                (*doffset)(n, 2 * k, yy, xx) += g * wgt * m * s.d_y;
                (*doffset)(n, 2 * k + 1, yy, xx) += g * wgt * m * s.d_x;
              }
              if (dx == nullptr) continue;
              // Scatter onto the four corners with their bilinear weights.
              const T fy = std::floor(sy), fx = std::floor(sx);
              const int y0 = static_cast<int>(fy), x0 = static_cast<int>(fx);
              const T ly = sy - fy, lx = sx - fx;
              if (!(sy > T(-1) && sy < T(h) && sx > T(-1) && sx < T(w))) continue;
              const int cy[4] = {y0, y0, y0 + 1, y0 + 1};
              const int cx[4] = {x0, x0 + 1, x0, x0 + 1};
              const T cw[4] = {(1 - ly) * (1 - lx), (1 - ly) * lx, ly * (1 - lx), ly * lx};
              for (int c = 0; c < 4; ++c) {
                if (cy[c] < 0 || cy[c] >= h || cx[c] < 0 || cx[c] >= w) continue;
                (*dx)(n, i, cy[c], cx[c]) += g * wgt * m * cw[c];
              }
            }
          }
        }
      }
    }
  }
}

#define HVC_INSTANTIATE(T)                                                   \
  template void conv2d<T>(const Tensor<T>&, const Tensor<T>&,                \
                          std::span<const T>, Tensor<T>&);                   \
  template void conv2d_backward<T>(const Tensor<T>&, const Tensor<T>&,       \
                                   const Tensor<T>&, Tensor<T>*, Tensor<T>*, \
                                   T*);                                      \
  template void deform_conv2d<T>(const Tensor<T>&, const Tensor<T>&,         \
                                 const Tensor<T>&, const Tensor<T>&,         \
                                 std::span<const T>, Tensor<T>&);            \
  template void deform_conv2d_backward<T>(                                   \
      const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, \
      const Tensor<T>&, Tensor<T>*, Tensor<T>*, Tensor<T>*, Tensor<T>*, T*);

HVC_INSTANTIATE(float)
HVC_INSTANTIATE(double)
#undef HVC_INSTANTIATE

}  // namespace hvc::nn::reference
