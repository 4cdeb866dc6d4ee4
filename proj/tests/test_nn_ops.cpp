#include <gtest/gtest.h>
#include <omp.h>

#include <cmath>
#include <random>

#include "hybridvc/nn/ops.hpp"
#include "hybridvc/nn/reference.hpp"
#include "support.hpp"

using namespace hvc;
using namespace hvc::nn;
using hvc::testkit::check_grad;
using hvc::testkit::dot;
using hvc::testkit::random_tensor;

namespace {

template <typename T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  EXPECT_EQ(a.shape(), b.shape());
  T m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

std::vector<double> random_vec(std::size_t n, std::mt19937_64& rng) {
  std::vector<double> v(n);
  std::uniform_real_distribution<double> u(-1, 1);
  for (auto& x : v) x = u(rng);
  return v;
}

}  // namespace

// ---- bilinear sampling ----

TEST(Bilinear, LatticeMidpointAndPadding) {
  std::mt19937_64 rng(1);
  const auto x = random_tensor<double>({1, 2, 5, 6}, rng);
  for (int y = 0; y < 5; ++y)
    for (int c = 0; c < 6; ++c) EXPECT_EQ(bilinear_sample<double>(x, 0, 1, y, c), x(0, 1, y, c));
  EXPECT_DOUBLE_EQ(bilinear_sample<double>(x, 0, 0, 2, 3.5), 0.5 * (x(0, 0, 2, 3) + x(0, 0, 2, 4)));
  EXPECT_EQ(bilinear_sample<double>(x, 0, 0, -5, -5), 0.0);
  EXPECT_EQ(bilinear_sample<double>(x, 0, 0, 2, 6.0), 0.0);
  // Half a pixel outside: half of the edge sample.
  EXPECT_DOUBLE_EQ(bilinear_sample<double>(x, 0, 0, 2, -0.5), 0.5 * x(0, 0, 2, 0));
}

TEST(Bilinear, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(2);
  const auto x = random_tensor<double>({1, 1, 6, 7}, rng);
  std::uniform_real_distribution<double> u(-1.5, 7.5);
  const double h = 1e-6;
  for (int i = 0; i < 200; ++i) {
    double py = u(rng), px = u(rng);
    if (std::abs(py - std::round(py)) < 0.05 || std::abs(px - std::round(px)) < 0.05) continue;
    const auto g = bilinear_sample_grad<double>(x, 0, 0, py, px);
    EXPECT_DOUBLE_EQ(g.value, bilinear_sample<double>(x, 0, 0, py, px));
    const double ny = (bilinear_sample<double>(x, 0, 0, py + h, px) -
                       bilinear_sample<double>(x, 0, 0, py - h, px)) / (2 * h);
    const double nx = (bilinear_sample<double>(x, 0, 0, py, px + h) -
                       bilinear_sample<double>(x, 0, 0, py, px - h)) / (2 * h);
    EXPECT_LT(testkit::rel_err(g.d_y, ny), 1e-6);
    EXPECT_LT(testkit::rel_err(g.d_x, nx), 1e-6);
  }
}

// ---- conv2d ----

TEST(Conv2d, MatchesSerialReference) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 1 + trial % 2, ci = 1 + trial % 4, co = 1 + (trial * 3) % 5;
    const int k = (trial % 3 == 0) ? 1 : (trial % 3 == 1 ? 3 : 5);
    const int h = 3 + trial % 7, w = 4 + (trial * 5) % 9;
    const auto x = random_tensor<float>({n, ci, h, w}, rng);
    const auto wt = random_tensor<float>({co, ci, k, k}, rng);
    std::vector<float> b(static_cast<std::size_t>(co));
    for (auto& v : b) v = std::uniform_real_distribution<float>(-1, 1)(rng);
    Tensor<float> y1, y2;
    conv2d<float>(x, wt, b, y1);
    reference::conv2d<float>(x, wt, b, y2);
    EXPECT_LT(max_abs_diff(y1, y2), 1e-5f);

    const auto dy = random_tensor<float>(y1.shape(), rng);
    Tensor<float> dx1, dx2, dw1(wt.shape()), dw2(wt.shape());
    std::vector<float> db1(b.size()), db2(b.size());
    conv2d_backward<float>(x, wt, dy, &dx1, &dw1, db1.data());
    reference::conv2d_backward<float>(x, wt, dy, &dx2, &dw2, db2.data());
    EXPECT_LT(max_abs_diff(dx1, dx2), 1e-4f);
    EXPECT_LT(max_abs_diff(dw1, dw2), 1e-4f);
    for (std::size_t i = 0; i < b.size(); ++i) EXPECT_NEAR(db1[i], db2[i], 1e-4);
  }
}

TEST(Conv2d, DirectFormulaOracle) {
  // Zero padding and cross-correlation orientation.
  Tensor<double> x(1, 1, 3, 3);
  for (int i = 0; i < 9; ++i) x.data()[i] = i + 1;
  Tensor<double> w(1, 1, 3, 3);
  w(0, 0, 0, 0) = 1.0;  // reads the top-left neighbour
  Tensor<double> y;
  conv2d<double>(x, w, {}, y);
  EXPECT_EQ(y(0, 0, 0, 0), 0.0);
  EXPECT_EQ(y(0, 0, 1, 1), 1.0);
  EXPECT_EQ(y(0, 0, 2, 2), 5.0);
}

TEST(Conv2d, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 10; ++trial) {
    auto x = random_tensor<double>({2, 2, 4, 5}, rng);
    auto wt = random_tensor<double>({3, 2, 3, 3}, rng);
    auto bias = random_vec(3, rng);
    const auto g = random_tensor<double>({2, 3, 4, 5}, rng);
    auto loss = [&] {
      Tensor<double> y;
      conv2d<double>(x, wt, bias, y);
      return dot(y, g);
    };
    Tensor<double> dx, dw(wt.shape());
    std::vector<double> db(3, 0.0);
    conv2d_backward<double>(x, wt, g, &dx, &dw, db.data());
    EXPECT_LT(check_grad(x, dx, loss, rng), 1e-6);
    EXPECT_LT(check_grad(wt, dw, loss, rng), 1e-6);
    for (int o = 0; o < 3; ++o) {
      const double keep = bias[o];
      bias[o] = keep + 1e-6;
      const double up = loss();
      bias[o] = keep - 1e-6;
      const double down = loss();
      bias[o] = keep;
      EXPECT_LT(testkit::rel_err(db[o], (up - down) / 2e-6), 1e-6);
    }
  }
}

TEST(Conv2d, ParameterGradientsAccumulate) {
  std::mt19937_64 rng(5);
  const auto x = random_tensor<double>({1, 1, 4, 4}, rng);
  const auto wt = random_tensor<double>({1, 1, 3, 3}, rng);
  const auto dy = random_tensor<double>({1, 1, 4, 4}, rng);
  Tensor<double> dw1(wt.shape()), dw2(wt.shape());
  double db1 = 0, db2 = 0;
  conv2d_backward<double>(x, wt, dy, nullptr, &dw1, &db1);
  conv2d_backward<double>(x, wt, dy, nullptr, &dw2, &db2);
  conv2d_backward<double>(x, wt, dy, nullptr, &dw2, &db2);
  for (std::size_t i = 0; i < dw1.size(); ++i) EXPECT_NEAR(dw2.data()[i], 2 * dw1.data()[i], 1e-12);
  EXPECT_NEAR(db2, 2 * db1, 1e-12);
}

TEST(Conv2d, ShapeErrors) {
  Tensor<float> x(1, 2, 4, 4), y;
  EXPECT_THROW(conv2d<float>(x, Tensor<float>(1, 3, 3, 3), {}, y), ValidationError);
  EXPECT_THROW(conv2d<float>(x, Tensor<float>(1, 2, 2, 2), {}, y), ValidationError);
  std::vector<float> b(2);
  EXPECT_THROW(conv2d<float>(x, Tensor<float>(1, 2, 3, 3), b, y), ValidationError);
}

TEST(Conv2d, ResultIndependentOfThreadCount) {
  std::mt19937_64 rng(6);
  const auto x = random_tensor<float>({2, 8, 70, 90}, rng);
  const auto wt = random_tensor<float>({8, 8, 3, 3}, rng);
  const auto dy = random_tensor<float>({2, 8, 70, 90}, rng);
  const int saved = omp_get_max_threads();
  Tensor<float> y[2], dx[2], dw[2] = {Tensor<float>(wt.shape()), Tensor<float>(wt.shape())};
  for (int r = 0; r < 2; ++r) {
    omp_set_num_threads(r == 0 ? 1 : 4);
    conv2d<float>(x, wt, {}, y[r]);
    conv2d_backward<float>(x, wt, dy, &dx[r], &dw[r], nullptr);
  }
  omp_set_num_threads(saved);
  EXPECT_EQ(max_abs_diff(y[0], y[1]), 0.0f);
  EXPECT_EQ(max_abs_diff(dx[0], dx[1]), 0.0f);
  EXPECT_EQ(max_abs_diff(dw[0], dw[1]), 0.0f);
}

// ---- elementwise ----

TEST(Activations, LeakyAndSigmoidFormulasAndGradients) {
  std::mt19937_64 rng(7);
  auto x = random_tensor<double>({2, 3, 4, 4}, rng, -3, 3);
  Tensor<double> y(x.shape()), s(x.shape());
  leaky_relu<double>(x, y);
  sigmoid<double>(x, s);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double v = x.data()[i];
    EXPECT_DOUBLE_EQ(y.data()[i], v > 0 ? v : 0.1 * v);
    EXPECT_NEAR(s.data()[i], 1.0 / (1.0 + std::exp(-v)), 1e-15);
  }
  const auto g = random_tensor<double>(x.shape(), rng);
  Tensor<double> dl(x.shape()), ds(x.shape());
  leaky_relu_backward<double>(x, g, dl);
  sigmoid_backward<double>(s, g, ds);
  auto leaky_loss = [&] {
    Tensor<double> t(x.shape());
    leaky_relu<double>(x, t);
    return dot(t, g);
  };
  auto sig_loss = [&] {
    Tensor<double> t(x.shape());
    sigmoid<double>(x, t);
    return dot(t, g);
  };
  EXPECT_LT(check_grad(x, dl, leaky_loss, rng), 1e-6);
  EXPECT_LT(check_grad(x, ds, sig_loss, rng), 1e-6);
}

TEST(Channels, ConcatSplitRoundTrip) {
  std::mt19937_64 rng(8);
  const auto a = random_tensor<float>({2, 3, 4, 5}, rng);
  const auto b = random_tensor<float>({2, 2, 4, 5}, rng);
  const auto c = concat_channels(a, b);
  EXPECT_EQ(c.shape(), (Shape{2, 5, 4, 5}));
  EXPECT_EQ(c(1, 3, 2, 2), b(1, 0, 2, 2));
  const auto [a2, b2] = split_channels(c, 3);
  EXPECT_EQ(max_abs_diff(a, a2), 0.0f);
  EXPECT_EQ(max_abs_diff(b, b2), 0.0f);
  EXPECT_THROW(concat_channels(a, Tensor<float>(2, 2, 4, 6)), ValidationError);
  EXPECT_THROW(split_channels(c, 6), ValidationError);
}

// ---- deformable convolution ----

TEST(Deform, IdentityConfigurationReturnsInput) {
  std::mt19937_64 rng(9);
  const auto x = random_tensor<double>({2, 3, 6, 7}, rng);
  const Tensor<double> off(Shape{2, 18, 6, 7}), mask(Shape{2, 9, 6, 7}, 1.0);
  Tensor<double> y;
  deform_conv2d<double>(x, off, mask, testkit::identity_kernel<double>(3), {}, y);
  EXPECT_LT(max_abs_diff(x, y), 1e-12);
}

TEST(Deform, ZeroOffsetUnitMaskEqualsPlainConv) {
  std::mt19937_64 rng(10);
  for (int trial = 0; trial < 10; ++trial) {
    const auto x = random_tensor<float>({1 + trial % 2, 4, 9, 11}, rng);
    const auto wt = random_tensor<float>({5, 4, 3, 3}, rng);
    std::vector<float> b(5, 0.25f);
    const Tensor<float> off(Shape{x.n(), 18, 9, 11}), mask(Shape{x.n(), 9, 9, 11}, 1.0f);
    Tensor<float> yd, yc;
    deform_conv2d<float>(x, off, mask, wt, b, yd);
    conv2d<float>(x, wt, b, yc);
    EXPECT_LT(max_abs_diff(yd, yc), 1e-6f);
  }
}

TEST(Deform, IntegerShiftOracle) {
  // Every tap displaced by (0, +1): the output is the input shifted left one
  // column, with zeros entering from the right.
  std::mt19937_64 rng(11);
  const auto x = random_tensor<double>({1, 2, 5, 6}, rng);
  Tensor<double> off(Shape{1, 18, 5, 6});
  for (int k = 0; k < 9; ++k)
    for (auto& v : off.plane(0, 2 * k + 1)) v = 1.0;
  const Tensor<double> mask(Shape{1, 9, 5, 6}, 1.0);
  Tensor<double> y;
  deform_conv2d<double>(x, off, mask, testkit::identity_kernel<double>(2), {}, y);
  for (int c = 0; c < 2; ++c)
    for (int r = 0; r < 5; ++r)
      for (int col = 0; col < 6; ++col) {
        const double expect = col + 1 < 6 ? x(0, c, r, col + 1) : 0.0;
        EXPECT_NEAR(y(0, c, r, col), expect, 1e-6);
      }
}

TEST(Deform, HalfPixelShiftOnRampGivesMidpoints) {
  Tensor<double> x(1, 1, 4, 8);
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 8; ++c) x(0, 0, r, c) = 0.1 * c + 0.3;
  Tensor<double> off(Shape{1, 18, 4, 8});
  for (int k = 0; k < 9; ++k)
    for (auto& v : off.plane(0, 2 * k + 1)) v = 0.5;
  Tensor<double> y;
  deform_conv2d<double>(x, off, Tensor<double>({1, 9, 4, 8}, 1.0),
                        testkit::identity_kernel<double>(1), {}, y);
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 7; ++c) EXPECT_NEAR(y(0, 0, r, c), 0.1 * (c + 0.5) + 0.3, 1e-12);
}

TEST(Deform, MaskScalesTaps) {
  std::mt19937_64 rng(12);
  const auto x = random_tensor<double>({1, 1, 5, 5}, rng);
  const Tensor<double> off(Shape{1, 18, 5, 5});
  Tensor<double> y1, y2;
  const auto wt = testkit::identity_kernel<double>(1);
  deform_conv2d<double>(x, off, Tensor<double>({1, 9, 5, 5}, 1.0), wt, {}, y1);
  deform_conv2d<double>(x, off, Tensor<double>({1, 9, 5, 5}, 0.25), wt, {}, y2);
  for (std::size_t i = 0; i < y1.size(); ++i) EXPECT_NEAR(y2.data()[i], 0.25 * y1.data()[i], 1e-12);
}

TEST(Deform, MatchesSerialReference) {
  std::mt19937_64 rng(13);
  for (int trial = 0; trial < 10; ++trial) {
    const int n = 1 + trial % 2, ci = 1 + trial % 3, co = 2 + trial % 2;
    const int h = 4 + trial, w = 5 + (trial * 3) % 7;
    const auto x = random_tensor<float>({n, ci, h, w}, rng);
    const auto off = random_tensor<float>({n, 18, h, w}, rng, -3.0f, 3.0f);
    const auto mask = random_tensor<float>({n, 9, h, w}, rng, 0.0f, 1.0f);
    const auto wt = random_tensor<float>({co, ci, 3, 3}, rng);
    std::vector<float> b(static_cast<std::size_t>(co), 0.1f);
    Tensor<float> y1, y2;
    deform_conv2d<float>(x, off, mask, wt, b, y1);
    reference::deform_conv2d<float>(x, off, mask, wt, b, y2);
    EXPECT_LT(max_abs_diff(y1, y2), 1e-5f);

    const auto dy = random_tensor<float>(y1.shape(), rng);
    Tensor<float> dx[2], doff[2], dm[2], dw[2] = {Tensor<float>(wt.shape()), Tensor<float>(wt.shape())};
    std::vector<float> db[2] = {std::vector<float>(b.size()), std::vector<float>(b.size())};
    deform_conv2d_backward<float>(x, off, mask, wt, dy, &dx[0], &doff[0], &dm[0], &dw[0], db[0].data());
    reference::deform_conv2d_backward<float>(x, off, mask, wt, dy, &dx[1], &doff[1], &dm[1], &dw[1],
                                             db[1].data());
    EXPECT_LT(max_abs_diff(dx[0], dx[1]), 1e-4f);
    EXPECT_LT(max_abs_diff(doff[0], doff[1]), 1e-4f);
    EXPECT_LT(max_abs_diff(dm[0], dm[1]), 1e-4f);
    EXPECT_LT(max_abs_diff(dw[0], dw[1]), 1e-4f);
    for (std::size_t i = 0; i < b.size(); ++i) EXPECT_NEAR(db[0][i], db[1][i], 1e-4);
  }
}

TEST(Deform, GradientsMatchFiniteDifferencesOnRandomInstances) {
  for (std::uint64_t seed = 0; seed < 60; ++seed) {
    const auto e = testkit::deform_grad_instance(1000 + seed);
    EXPECT_LT(e.input, 1e-3) << "seed " << seed;
    EXPECT_LT(e.offset, 1e-3) << "seed " << seed;
    EXPECT_LT(e.mask, 1e-3) << "seed " << seed;
    EXPECT_LT(e.weight, 1e-3) << "seed " << seed;
    EXPECT_LT(e.bias, 1e-3) << "seed " << seed;
  }
}

TEST(Deform, OffsetGradientAtPaddingBoundary) {
  // Sampling points in the half-pixel band outside the image, where one or
  // more bilinear corners read padding.
  std::mt19937_64 rng(14);
  auto x = random_tensor<double>({1, 2, 4, 4}, rng);
  Tensor<double> off(Shape{1, 18, 4, 4});
  std::uniform_real_distribution<double> frac(0.2, 0.8);
  for (int k = 0; k < 9; ++k) {
    const int ky = k / 3 - 1, kx = k % 3 - 1;
    for (int r = 0; r < 4; ++r)
      for (int c = 0; c < 4; ++c) {
        // Push the point to between -1 and 0 (or H-1 and H) in each axis.
        const double ty = (r < 2 ? -1.0 : 3.0) + frac(rng);
        const double tx = (c < 2 ? -1.0 : 3.0) + frac(rng);
        off(0, 2 * k, r, c) = ty - (r + ky);
        off(0, 2 * k + 1, r, c) = tx - (c + kx);
      }
  }
  auto mask = random_tensor<double>({1, 9, 4, 4}, rng, 0.0, 1.0);
  auto wt = random_tensor<double>({2, 2, 3, 3}, rng);
  const auto g = random_tensor<double>({1, 2, 4, 4}, rng);
  auto loss = [&] {
    Tensor<double> y;
    deform_conv2d<double>(x, off, mask, wt, {}, y);
    return dot(y, g);
  };
  Tensor<double> dx, doff, dm, dw(wt.shape());
  deform_conv2d_backward<double>(x, off, mask, wt, g, &dx, &doff, &dm, &dw, nullptr);
  EXPECT_LT(check_grad(off, doff, loss, rng), 1e-6);
  EXPECT_LT(check_grad(x, dx, loss, rng), 1e-6);
  double norm = 0;
  for (double v : doff.values()) norm += std::abs(v);
  EXPECT_GT(norm, 0.0);
}

TEST(Deform, ShapeErrors) {
  Tensor<float> x(1, 2, 4, 4), y;
  const Tensor<float> wt(3, 2, 3, 3);
  EXPECT_THROW(deform_conv2d<float>(x, Tensor<float>(1, 17, 4, 4), Tensor<float>(1, 9, 4, 4), wt, {}, y),
               ValidationError);
  EXPECT_THROW(deform_conv2d<float>(x, Tensor<float>(1, 18, 4, 4), Tensor<float>(1, 9, 4, 5), wt, {}, y),
               ValidationError);
  EXPECT_THROW(deform_conv2d<float>(x, Tensor<float>(1, 18, 4, 4), Tensor<float>(1, 9, 4, 4),
                                    Tensor<float>(3, 2, 5, 5), {}, y),
               ValidationError);
}

TEST(Deform, ResultIndependentOfThreadCount) {
  std::mt19937_64 rng(15);
  const auto x = random_tensor<float>({2, 8, 40, 50}, rng);
  const auto off = random_tensor<float>({2, 18, 40, 50}, rng, -2.0f, 2.0f);
  const auto mask = random_tensor<float>({2, 9, 40, 50}, rng, 0.0f, 1.0f);
  const auto wt = random_tensor<float>({8, 8, 3, 3}, rng);
  const auto dy = random_tensor<float>({2, 8, 40, 50}, rng);
  const int saved = omp_get_max_threads();
  Tensor<float> y[2], dx[2], doff[2], dm[2], dw[2] = {Tensor<float>(wt.shape()), Tensor<float>(wt.shape())};
  for (int r = 0; r < 2; ++r) {
    omp_set_num_threads(r == 0 ? 1 : 3);
    deform_conv2d<float>(x, off, mask, wt, {}, y[r]);
    deform_conv2d_backward<float>(x, off, mask, wt, dy, &dx[r], &doff[r], &dm[r], &dw[r], nullptr);
  }
  omp_set_num_threads(saved);
  EXPECT_EQ(max_abs_diff(y[0], y[1]), 0.0f);
  EXPECT_EQ(max_abs_diff(dx[0], dx[1]), 0.0f);
  EXPECT_EQ(max_abs_diff(doff[0], doff[1]), 0.0f);
  EXPECT_EQ(max_abs_diff(dm[0], dm[1]), 0.0f);
  EXPECT_EQ(max_abs_diff(dw[0], dw[1]), 0.0f);
}
