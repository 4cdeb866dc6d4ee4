// Parallel kernels against their serial reference loops, plus one full
// step-1 / step-2 forward pass of the desk network.

#include <benchmark/benchmark.h>

#include <random>

#include "hybridvc/nn/ops.hpp"
#include "hybridvc/nn/reference.hpp"
#include "hybridvc/restoration.hpp"

using namespace hvc;

namespace {

Tensor<float> random_tensor(Shape s, std::uint64_t seed, float lo = -1.0f, float hi = 1.0f) {
  Tensor<float> t(s);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(lo, hi);
  for (float& v : t.values()) v = u(rng);
  return t;
}

struct ConvCase {
  Tensor<float> x, w, dy;
  std::vector<float> b;
  ConvCase(int n, int c, int hw)
      : x(random_tensor(Shape{n, c, hw, hw}, 1)),
        w(random_tensor(Shape{c, c, 3, 3}, 2, -0.1f, 0.1f)),
        dy(random_tensor(Shape{n, c, hw, hw}, 3)),
        b(static_cast<std::size_t>(c), 0.01f) {}
};

struct DeformCase : ConvCase {
  Tensor<float> off, mask;
  DeformCase(int n, int c, int hw)
      : ConvCase(n, c, hw),
        off(random_tensor(Shape{n, 18, hw, hw}, 4, -2.0f, 2.0f)),
        mask(random_tensor(Shape{n, 9, hw, hw}, 5, 0.0f, 1.0f)) {}
};

void set_items(benchmark::State& s, const Tensor<float>& x) {
  s.SetItemsProcessed(s.iterations() * static_cast<std::int64_t>(x.n()) * x.h() * x.w());
}

template <bool kRef>
void BM_Conv2d(benchmark::State& s) {
  ConvCase k(4, static_cast<int>(s.range(0)), static_cast<int>(s.range(1)));
  Tensor<float> y;
  for (auto _ : s) {
    if constexpr (kRef) {
      nn::reference::conv2d<float>(k.x, k.w, k.b, y);
    } else {
      nn::conv2d<float>(k.x, k.w, k.b, y);
    }
    benchmark::DoNotOptimize(y.data());
  }
  set_items(s, k.x);
}

template <bool kRef>
void BM_Conv2dBackward(benchmark::State& s) {
  ConvCase k(4, static_cast<int>(s.range(0)), static_cast<int>(s.range(1)));
  Tensor<float> dx(k.x.shape()), dw(k.w.shape());
  std::vector<float> db(k.b.size());
  for (auto _ : s) {
    if constexpr (kRef) {
      nn::reference::conv2d_backward<float>(k.x, k.w, k.dy, &dx, &dw, db.data());
    } else {
      nn::conv2d_backward<float>(k.x, k.w, k.dy, &dx, &dw, db.data());
    }
    benchmark::DoNotOptimize(dx.data());
  }
  set_items(s, k.x);
}

template <bool kRef>
void BM_Deform(benchmark::State& s) {
  DeformCase k(2, static_cast<int>(s.range(0)), static_cast<int>(s.range(1)));
  Tensor<float> y;
  for (auto _ : s) {
    if constexpr (kRef) {
      nn::reference::deform_conv2d<float>(k.x, k.off, k.mask, k.w, k.b, y);
    } else {
      nn::deform_conv2d<float>(k.x, k.off, k.mask, k.w, k.b, y);
    }
    benchmark::DoNotOptimize(y.data());
  }
  set_items(s, k.x);
}

template <bool kRef>
void BM_DeformBackward(benchmark::State& s) {
  DeformCase k(2, static_cast<int>(s.range(0)), static_cast<int>(s.range(1)));
  Tensor<float> dx(k.x.shape()), doff(k.off.shape()), dm(k.mask.shape()), dw(k.w.shape());
  std::vector<float> db(k.b.size());
  for (auto _ : s) {
    if constexpr (kRef) {
      nn::reference::deform_conv2d_backward<float>(k.x, k.off, k.mask, k.w, k.dy, &dx, &doff,
                                                   &dm, &dw, db.data());
    } else {
      nn::deform_conv2d_backward<float>(k.x, k.off, k.mask, k.w, k.dy, &dx, &doff, &dm, &dw,
                                        db.data());
    }
    benchmark::DoNotOptimize(dx.data());
  }
  set_items(s, k.x);
}

void BM_DeskStep1(benchmark::State& s) {
  const int hw = static_cast<int>(s.range(0));
  const auto w = restoration::init_weights(restoration::NetworkSpec::desk(), 1);
  const auto c = random_tensor(Shape{1, 3, hw, hw}, 6, 0.0f, 1.0f);
  for (auto _ : s) benchmark::DoNotOptimize(restoration::general_enhance(c, w).data());
  set_items(s, c);
}

void BM_DeskStep2(benchmark::State& s) {
  const int hw = static_cast<int>(s.range(0));
  const auto w = restoration::init_weights(restoration::NetworkSpec::desk(), 1);
  const auto c = random_tensor(Shape{1, 3, hw, hw}, 6, 0.0f, 1.0f);
  const auto f_r = restoration::encode_reference_features(c, w);
  for (auto _ : s) benchmark::DoNotOptimize(restoration::reference_enhance(c, f_r, w).data());
  set_items(s, c);
}

}  // namespace

#define KERNEL_ARGS ->Args({16, 64})->Args({32, 64})->Unit(benchmark::kMillisecond)

BENCHMARK(BM_Conv2d<false>) KERNEL_ARGS;
BENCHMARK(BM_Conv2d<true>) KERNEL_ARGS;
BENCHMARK(BM_Conv2dBackward<false>) KERNEL_ARGS;
BENCHMARK(BM_Conv2dBackward<true>) KERNEL_ARGS;
BENCHMARK(BM_Deform<false>) KERNEL_ARGS;
BENCHMARK(BM_Deform<true>) KERNEL_ARGS;
BENCHMARK(BM_DeformBackward<false>) KERNEL_ARGS;
BENCHMARK(BM_DeformBackward<true>) KERNEL_ARGS;
BENCHMARK(BM_DeskStep1)->Arg(128)->Arg(256)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_DeskStep2)->Arg(128)->Arg(256)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
