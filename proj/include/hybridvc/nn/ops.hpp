#pragma once

#include <span>
#include <utility>

#include "hybridvc/tensor.hpp"

// Differentiable building blocks of the restoration network. Every op keeps
// the spatial resolution (stride 1, "same" zero padding).
//
// Backward functions follow one convention: input gradients (dx, doffset,
// dmask) are overwritten, parameter gradients (dweight, dbias) are
// accumulated so one buffer can collect several samples or call sites. Pass
// nullptr for gradients that are not needed.
//
// Implementations are explicitly instantiated for float and double. The
// kernels here are parallelised with OpenMP over samples and row bands and
// reduce in a fixed order, so results do not depend on the thread count.
// hvc::nn::reference holds slow scalar versions of the same ops for tests.
namespace hvc::nn {

inline constexpr int kKernel = 3;
inline constexpr int kTaps = kKernel * kKernel;
inline constexpr double kLeakySlope = 0.1;

// weight: (out_channels, in_channels, k, k) with odd k; bias empty or
// out_channels long.
template <typename T>
void conv2d(const Tensor<T>& x, const Tensor<T>& weight,
            std::span<const T> bias, Tensor<T>& y);

template <typename T>
void conv2d_backward(const Tensor<T>& x, const Tensor<T>& weight,
                     const Tensor<T>& dy, Tensor<T>* dx, Tensor<T>* dweight,
                     T* dbias);

template <typename T>
void leaky_relu(const Tensor<T>& x, Tensor<T>& y, T slope = T(kLeakySlope));
// Gradient through leaky_relu, evaluated at the pre-activation x.
template <typename T>
void leaky_relu_backward(const Tensor<T>& x, const Tensor<T>& dy,
                         Tensor<T>& dx, T slope = T(kLeakySlope));

template <typename T>
void sigmoid(const Tensor<T>& x, Tensor<T>& y);
// Gradient through sigmoid, evaluated from its output y.
template <typename T>
void sigmoid_backward(const Tensor<T>& y, const Tensor<T>& dy, Tensor<T>& dx);

// Bilinear read of channel c of sample n at real coordinates (y, x). Corner
// samples outside the image count as zero, so any point outside
// (-1, H) x (-1, W) reads 0.
template <typename T>
T bilinear_sample(const Tensor<T>& x, int n, int c, T y, T xc);

// Same read plus its partial derivatives with respect to y and x.
template <typename T>
struct BilinearGrad {
  T value;
  T d_y;
  T d_x;
};
template <typename T>
BilinearGrad<T> bilinear_sample_grad(const Tensor<T>& x, int n, int c, T y,
                                     T xc);

// Modulated deformable 3x3 convolution:
//   y(n, o, p) = sum_{i,k} w(o, i, k) * m_k(p) * x_i(p + p_k + off_k(p)) + b(o)
// offset: (N, 2*9, H, W), channel 2k holds dy and 2k+1 holds dx of tap k
// (taps row-major over the 3x3 grid); mask: (N, 9, H, W).
template <typename T>
void deform_conv2d(const Tensor<T>& x, const Tensor<T>& offset,
                   const Tensor<T>& mask, const Tensor<T>& weight,
                   std::span<const T> bias, Tensor<T>& y);

template <typename T>
void deform_conv2d_backward(const Tensor<T>& x, const Tensor<T>& offset,
                            const Tensor<T>& mask, const Tensor<T>& weight,
                            const Tensor<T>& dy, Tensor<T>* dx,
                            Tensor<T>* doffset, Tensor<T>* dmask,
                            Tensor<T>* dweight, T* dbias);

// Channel-wise concatenation / split (sample count and H x W must agree).
template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
std::pair<Tensor<T>, Tensor<T>> split_channels(const Tensor<T>& t,
                                               int first_channels);

// a += b
template <typename T>
void add_inplace(Tensor<T>& a, const Tensor<T>& b);

// Validates shapes shared by the conv entry points; throws ValidationError.
void check_conv_shapes(const Shape& x, const Shape& weight,
                       std::size_t bias_len);
void check_deform_shapes(const Shape& x, const Shape& offset,
                         const Shape& mask, const Shape& weight,
                         std::size_t bias_len);

}  // namespace hvc::nn
