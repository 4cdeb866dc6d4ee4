#pragma once

#include <Eigen/Core>

#include <algorithm>

namespace hvc::nn::detail {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<Mat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const Mat<T>>;
// Rows are channel planes of one sample; consecutive rows are H*W apart.
template <typename T>
using StridedMap = Eigen::Map<Mat<T>, 0, Eigen::OuterStride<>>;
template <typename T>
using ConstStridedMap = Eigen::Map<const Mat<T>, 0, Eigen::OuterStride<>>;

// Rows per im2col band: about 4096 output pixels keeps the unfolded matrix
// cache-sized for the channel counts used here.
inline int band_rows(int width) {
  return std::max(1, 4096 / std::max(1, width));
}

}  // namespace hvc::nn::detail
