#pragma once

#include <span>

#include "hybridvc/tensor.hpp"

// Direct serial loops for the ops in nn/ops.hpp. Kept for testing the
// parallel kernels and for benchmarking against them; not used on any
// production path.
namespace hvc::nn::reference {

template <typename T>
void conv2d(const Tensor<T>& x, const Tensor<T>& weight,
            std::span<const T> bias, Tensor<T>& y);

template <typename T>
void conv2d_backward(const Tensor<T>& x, const Tensor<T>& weight,
                     const Tensor<T>& dy, Tensor<T>* dx, Tensor<T>* dweight,
                     T* dbias);

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

}  // namespace hvc::nn::reference
