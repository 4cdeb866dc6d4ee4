#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "hybridvc/restoration.hpp"
#include "support.hpp"

using namespace hvc;
using namespace hvc::restoration;
using hvc::testkit::random_tensor;

namespace {

NetworkSpec tiny_spec(DeformSource src = DeformSource::kReference) {
  NetworkSpec s;
  s.channels = 4;
  s.encoder_blocks = 1;
  s.decoder_blocks = 1;
  s.ref_encoder_blocks = 1;
  s.offset_layers = 2;
  s.refine_blocks = 1;
  s.deform_source = src;
  return s;
}

// Random weights everywhere, including the layers that start at zero.
Weights<double> noisy_weights(const NetworkSpec& spec, std::uint64_t seed, double scale = 0.3) {
  auto w = init_weights(spec, seed).cast<double>();
  std::mt19937_64 rng(seed + 99);
  std::normal_distribution<double> n(0.0, scale);
  for (auto& [name, t] : w.tensors)
    for (auto& v : t.values()) v += n(rng) * (name.ends_with(".b") ? 0.3 : 1.0) * 0.5;
  return w;
}

template <typename T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  EXPECT_EQ(a.shape(), b.shape());
  T m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

Tensor<float> image_batch(int n, int h, int w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return random_tensor<float>({n, 3, h, w}, rng, 0.0f, 1.0f);
}

}  // namespace

TEST(Spec, PresetsAndParameterCount) {
  for (const auto& s : {NetworkSpec::desk(), NetworkSpec::full(), tiny_spec()}) {
    std::size_t total = 0;
    for (const auto& [name, shape] : s.layout()) total += shape.numel();
    EXPECT_EQ(total, s.parameter_count());
  }
  EXPECT_EQ(NetworkSpec::desk().channels, 16);
  EXPECT_EQ(NetworkSpec::full().channels, 64);
  NetworkSpec bad;
  bad.channels = 0;
  EXPECT_THROW(bad.validate(), ValidationError);
  EXPECT_EQ(deform_source_from_string(to_string(DeformSource::kGeneral)), DeformSource::kGeneral);
  EXPECT_THROW(deform_source_from_string("nope"), ValidationError);
}

TEST(Spec, InitIsSeededAndFreezesNothingUnexpected) {
  const auto a = init_weights(NetworkSpec::desk(), 3);
  const auto b = init_weights(NetworkSpec::desk(), 3);
  const auto c = init_weights(NetworkSpec::desk(), 4);
  bool differs = false;
  for (const auto& [name, t] : a.tensors) {
    EXPECT_EQ(max_abs_diff(t, b.at(name)), 0.0f) << name;
    differs |= max_abs_diff(t, c.at(name)) > 0.0f;
  }
  EXPECT_TRUE(differs);
  // Offset predictor head and deformable feature rows start at zero.
  const auto& head = a.at("step2.offset.conv4.w");
  for (float v : head.values()) EXPECT_EQ(v, 0.0f);
  const auto& dw = a.at("step2.deform.w");
  for (int o = 0; o < 16; ++o)
    for (int i = 0; i < 16; ++i)
      for (int k = 0; k < 9; ++k) EXPECT_EQ(dw.data()[(o * 16 + i) * 9 + k], 0.0f);
}

TEST(GeneralFeatures, ShapePreservedForArbitrarySizes) {
  const auto w = init_weights(NetworkSpec::desk(), 1);
  for (auto [h, wd] : {std::pair{7, 13}, std::pair{16, 9}, std::pair{1, 1}}) {
    const auto f = extract_general_features(image_batch(2, h, wd, 1), w);
    EXPECT_EQ(f.shape(), (Shape{2, 16, h, wd}));
    EXPECT_EQ(general_enhance(image_batch(1, h, wd, 2), w).shape(), (Shape{1, 3, h, wd}));
  }
}

TEST(GeneralFeatures, ZeroWeightsGiveZeroFeatures) {
  const auto w = init_weights(NetworkSpec::desk(), 1).zeros_like();
  const auto f = extract_general_features(image_batch(1, 12, 10, 3), w);
  for (float v : f.values()) EXPECT_EQ(v, 0.0f);
}

TEST(GeneralFeatures, DeterministicAcrossRuns) {
  const auto w = init_weights(NetworkSpec::desk(), 7);
  const auto c = image_batch(2, 24, 20, 4);
  const auto a = general_enhance(c, w);
  const auto b = general_enhance(c, w);
  EXPECT_EQ(max_abs_diff(a, b), 0.0f);
  const auto w2 = init_weights(NetworkSpec::desk(), 7);
  EXPECT_EQ(max_abs_diff(a, general_enhance(c, w2)), 0.0f);
}

TEST(GeneralEnhance, RandomWeightsFiniteAndShaped) {
  auto w = noisy_weights(NetworkSpec::desk(), 2).cast<float>();
  const auto y = general_enhance(image_batch(1, 20, 30, 5), w);
  EXPECT_EQ(y.shape(), (Shape{1, 3, 20, 30}));
  for (float v : y.values()) EXPECT_TRUE(std::isfinite(v));
}

TEST(OffsetPredictor, ZeroInputsAndWeights) {
  const auto w = init_weights(tiny_spec(), 1).zeros_like();
  const Tensor<float> f(1, 4, 6, 5);
  const auto om = predict_offsets(f, f, w);
  EXPECT_EQ(om.offset.shape(), (Shape{1, 18, 6, 5}));
  EXPECT_EQ(om.mask.shape(), (Shape{1, 9, 6, 5}));
  for (float v : om.offset.values()) EXPECT_EQ(v, 0.0f);
  for (float v : om.mask.values()) EXPECT_EQ(v, 0.5f);
}

TEST(OffsetPredictor, MaskBoundedAndOffsetsRespondToShift) {
  const auto w = noisy_weights(tiny_spec(), 3).cast<float>();
  std::mt19937_64 rng(4);
  const auto f_g = random_tensor<float>({1, 4, 10, 10}, rng);
  const auto f_r = random_tensor<float>({1, 4, 10, 10}, rng);
  Tensor<float> shifted(f_r.shape());
  for (int c = 0; c < 4; ++c)
    for (int y = 0; y < 10; ++y)
      for (int x = 0; x < 10; ++x) shifted(0, c, y, x) = f_r(0, c, y, (x + 1) % 10);
  const auto a = predict_offsets(f_g, f_r, w);
  const auto b = predict_offsets(f_g, shifted, w);
  for (float v : a.mask.values()) {
    EXPECT_GE(v, 0.0f);
    EXPECT_LE(v, 1.0f);
  }
  EXPECT_GT(max_abs_diff(a.offset, b.offset), 1e-3f);
}

TEST(AlignAndGate, IdentityConfigurationReturnsSource) {
  auto w = init_weights(tiny_spec(), 5);
  auto& dw = w.at("step2.deform.w");
  dw.fill(0.0f);
  for (int c = 0; c < 4; ++c) dw(c, c, 1, 1) = 1.0f;
  w.at("step2.deform.b").fill(0.0f);
  std::mt19937_64 rng(6);
  const auto src = random_tensor<float>({2, 4, 7, 8}, rng);
  OffsetsAndMask<float> om{Tensor<float>(2, 18, 7, 8), Tensor<float>(2, 9, 7, 8, 1.0f)};
  const auto al = align_and_gate(src, om, w);
  EXPECT_LT(max_abs_diff(al.feature, src), 1e-7f);
  EXPECT_EQ(al.confidence.shape(), (Shape{2, 1, 7, 8}));
  for (float v : al.confidence.values()) EXPECT_EQ(v, 0.5f);
}

TEST(AlignAndGate, ConfidenceInUnitInterval) {
  const auto w = noisy_weights(tiny_spec(), 7, 2.0).cast<float>();
  std::mt19937_64 rng(8);
  const auto src = random_tensor<float>({1, 4, 9, 9}, rng, -5.0f, 5.0f);
  const auto om = predict_offsets(src, src, w);
  const auto al = align_and_gate(src, om, w);
  for (float v : al.confidence.values()) {
    EXPECT_GE(v, 0.0f);
    EXPECT_LE(v, 1.0f);
  }
}

TEST(Fuse, ConfidenceLimitsAndScalarOracle) {
  std::mt19937_64 rng(9);
  const auto f_g = random_tensor<float>({2, 3, 4, 5}, rng);
  const auto f_r = random_tensor<float>({2, 3, 4, 5}, rng);
  const auto zero = fuse(f_g, Tensor<float>(2, 1, 4, 5, 0.0f), f_r);
  EXPECT_EQ(max_abs_diff(zero, f_g), 0.0f);
  const auto one = fuse(f_g, Tensor<float>(2, 1, 4, 5, 1.0f), f_r);
  const auto conf = random_tensor<float>({2, 1, 4, 5}, rng, 0.0f, 1.0f);
  const auto mixed = fuse(f_g, conf, f_r);
  for (int n = 0; n < 2; ++n)
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 5; ++x) {
          EXPECT_EQ(one(n, c, y, x), f_g(n, c, y, x) + f_r(n, c, y, x));
          EXPECT_NEAR(mixed(n, c, y, x), f_g(n, c, y, x) + conf(n, 0, y, x) * f_r(n, c, y, x),
                      1e-6f);
        }
  EXPECT_THROW(fuse(f_g, Tensor<float>(2, 2, 4, 5), f_r), ValidationError);
}

TEST(ReferenceEnhance, ZeroConfidenceEqualsStepOneBitwise) {
  const auto w = noisy_weights(NetworkSpec::desk(), 10, 0.1).cast<float>();
  const auto c = image_batch(2, 18, 14, 11);
  const auto ref = image_batch(1, 18, 14, 12);
  const auto f_r = encode_reference_features(ref, w);
  const auto y1 = general_enhance(c, w);
  const auto y2 = reference_enhance(c, f_r, w, RestoreOptions{true});
  EXPECT_EQ(max_abs_diff(y1, y2), 0.0f);
  // Same through the weights: the confidence head forced to zero.
  auto wz = w;
  zero_confidence_head(wz);
  const auto d = reference_enhance_detailed(c, f_r, wz);
  for (float v : d.aligned.confidence.values()) EXPECT_EQ(v, 0.0f);
  EXPECT_EQ(max_abs_diff(y1, d.output), 0.0f);
  EXPECT_GT(max_abs_diff(y1, reference_enhance(c, f_r, w)), 0.0f);
}

TEST(ReferenceEnhance, UntrainedStepTwoBranchLeavesStepOneUnchanged) {
  const auto w = init_weights(NetworkSpec::desk(), 13);
  const auto c = image_batch(1, 16, 16, 14);
  const auto f_r = encode_reference_features(image_batch(1, 16, 16, 15), w);
  EXPECT_EQ(max_abs_diff(general_enhance(c, w), reference_enhance(c, f_r, w)), 0.0f);
}

TEST(ReferenceEnhance, BatchSamplesIndependent) {
  // Restoring a frame never reads its neighbours in the batch.
  const auto w = noisy_weights(tiny_spec(), 16, 0.2).cast<float>();
  const auto c = image_batch(3, 10, 12, 17);
  const auto f_r = encode_reference_features(image_batch(1, 10, 12, 18), w);
  const auto all = reference_enhance(c, f_r, w);
  Tensor<float> single(1, 3, 10, 12);
  std::copy(c.sample(1).begin(), c.sample(1).end(), single.data());
  const auto one = reference_enhance(single, f_r, w);
  for (std::size_t i = 0; i < one.size(); ++i) EXPECT_EQ(one.data()[i], all.sample(1)[i]);
}

TEST(ReferenceCache, LatestReferenceAndSingleEncoderPass) {
  const auto w = init_weights(tiny_spec(), 19);
  ReferenceCache cache(w);
  EXPECT_EQ(cache.lookup(0), nullptr);
  const Frame r0 = testkit::smooth_frame(12, 12, 0.0), r70 = testkit::smooth_frame(12, 12, 1.0);
  cache.add(0, r0);
  cache.add(70, r70);
  EXPECT_EQ(cache.encoder_passes(), 2);
  EXPECT_EQ(cache.reference_index_for(69), 0);
  EXPECT_EQ(cache.reference_index_for(70), 70);
  EXPECT_EQ(cache.reference_index_for(149), 70);
  EXPECT_EQ(cache.lookup(5), cache.lookup(0));
  const Frame c = testkit::smooth_frame(12, 12, 0.4);
  for (int t = 0; t < 10; ++t) restore_frame(c, &cache, w, Mode::kStep2, t);
  EXPECT_EQ(cache.encoder_passes(), 2);
}

TEST(RestoreFrame, StepTwoWithoutReferenceIsStateError) {
  const auto w = init_weights(tiny_spec(), 20);
  ReferenceCache empty(w);
  const Frame c = testkit::smooth_frame(12, 12, 0.4);
  EXPECT_THROW(restore_frame(c, &empty, w, Mode::kStep2, 0), StateError);
  EXPECT_THROW(restore_frame(c, nullptr, w, Mode::kStep2, 0), StateError);
  ReferenceCache late(w);
  late.add(5, c);
  EXPECT_THROW(restore_frame(c, &late, w, Mode::kStep2, 4), StateError);
  EXPECT_NO_THROW(restore_frame(c, nullptr, w, Mode::kStep1, 0));
}

TEST(RestoreFrame, OutputClampedAndZeroConfidenceMatchesStepOne) {
  auto w = noisy_weights(NetworkSpec::desk(), 21, 0.6).cast<float>();
  ReferenceCache cache(w);
  const Frame c = testkit::smooth_frame(20, 16, 0.2);
  cache.add(0, testkit::smooth_frame(20, 16, 0.9));
  const Frame s1 = restore_frame(c, &cache, w, Mode::kStep1, 3);
  const Frame s2 = restore_frame(c, &cache, w, Mode::kStep2, 3, RestoreOptions{true});
  EXPECT_EQ(s1, s2);
  for (float v : restore_frame(c, &cache, w, Mode::kStep2, 3).pixels()) {
    EXPECT_GE(v, 0.0f);
    EXPECT_LE(v, 1.0f);
  }
}

// ---- full-network gradients ----

namespace {

Batch<double> double_batch(int n, int h, int w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Batch<double> b;
  b.compressed = random_tensor<double>({n, 3, h, w}, rng, 0.0, 1.0);
  b.target = random_tensor<double>({n, 3, h, w}, rng, 0.0, 1.0);
  b.reference = random_tensor<double>({n, 3, h, w}, rng, 0.0, 1.0);
  return b;
}

void check_network_gradient(const NetworkSpec& spec, Objective obj, bool train_step1,
                            std::uint64_t seed) {
  auto w = noisy_weights(spec, seed);
  const auto batch = double_batch(2, 6, 7, seed + 1);
  auto grads = w.zeros_like();
  loss_and_grad(w, batch, obj, train_step1, &grads);
  std::mt19937_64 rng(seed + 2);
  for (auto& [name, t] : w.tensors) {
    const bool s1 = is_step1(name);
    const bool used = obj == Objective::kGeneral ? s1 : true;
    if (!used || (s1 && !train_step1)) {
      for (double v : grads.at(name).values()) EXPECT_EQ(v, 0.0) << name;
      continue;
    }
    auto loss = [&] { return loss_and_grad(w, batch, obj, train_step1, nullptr); };
    EXPECT_LT(hvc::testkit::check_grad(t, grads.at(name), loss, rng, 12), 1e-4) << name;
  }
}

}  // namespace

TEST(NetworkGradient, GeneralObjective) {
  check_network_gradient(tiny_spec(), Objective::kGeneral, true, 30);
}

TEST(NetworkGradient, ReferenceObjectiveStepTwoOnly) {
  check_network_gradient(tiny_spec(), Objective::kReference, false, 31);
}

TEST(NetworkGradient, JointObjective) {
  check_network_gradient(tiny_spec(), Objective::kJoint, true, 32);
}

TEST(NetworkGradient, LiteralDeformSourceVariant) {
  check_network_gradient(tiny_spec(DeformSource::kGeneral), Objective::kJoint, true, 33);
}

TEST(NetworkGradient, MsSsimLoss) {
  NetworkSpec spec = tiny_spec();
  spec.channels = 2;
  auto w = noisy_weights(spec, 34, 0.1);
  auto batch = double_batch(1, 176, 176, 35);
  // Target close to the input so the score is in its smooth regime.
  for (std::size_t i = 0; i < batch.target.size(); ++i) {
    batch.target.data()[i] = 0.8 * batch.compressed.data()[i] + 0.1;
  }
  auto grads = w.zeros_like();
  loss_and_grad(w, batch, Objective::kGeneral, true, &grads, LossKind::kMsSsim);
  std::mt19937_64 rng(36);
  for (const char* name : {"step1.dec.out.w", "step1.enc.in.w", "step1.dec.out.b"}) {
    auto loss = [&] {
      return loss_and_grad(w, batch, Objective::kGeneral, true, nullptr, LossKind::kMsSsim);
    };
    EXPECT_LT(hvc::testkit::check_grad(w.at(name), grads.at(name), loss, rng, 4, 1e-5), 1e-3)
        << name;
  }
}

TEST(LossAndGrad, MissingReferenceRejected) {
  const auto w = init_weights(tiny_spec(), 1).cast<double>();
  auto b = double_batch(1, 5, 5, 2);
  b.reference = Tensor<double>();
  EXPECT_THROW(loss_and_grad(w, b, Objective::kReference, false, nullptr), ValidationError);
  EXPECT_NO_THROW(loss_and_grad(w, b, Objective::kGeneral, true, nullptr));
}
