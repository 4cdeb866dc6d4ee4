#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "hybridvc/image_io.hpp"
#include "hybridvc/pipeline.hpp"
#include "hybridvc/training.hpp"
#include "support.hpp"

using namespace hvc;
using namespace hvc::pipeline;
namespace fs = std::filesystem;

namespace {

VideoSequence moving_clip(int frames, int size, std::uint64_t seed) {
  const Frame src = training::synthetic_texture(size + 2 * frames, size + 2 * frames, seed);
  training::ClipOptions opt;
  opt.frames = frames;
  opt.width = size;
  opt.height = size;
  return training::make_clip(src, opt, seed + 1);
}

VideoSequence natural_clip(const std::string& name, int frames, std::uint64_t seed) {
  const Frame src = io::read_png(fs::path(HVC_DATA_DIR) / "natural/heldout" / name);
  training::ClipOptions opt;
  opt.frames = frames;
  opt.width = 96;
  opt.height = 96;
  return training::make_clip(src, opt, seed);
}

// Initial weights with the step-2 branch perturbed so it changes the output.
restoration::Weights<float> active_weights() {
  auto w = restoration::init_weights(restoration::NetworkSpec::desk(), 3);
  std::mt19937_64 rng(8);
  std::normal_distribution<float> nd(0.0f, 0.05f);
  for (auto& [name, t] : w.tensors) {
    if (restoration::is_step1(name)) continue;
    for (float& v : t.values()) v += nd(rng);
  }
  return w;
}

bool same_video(const VideoSequence& a, const VideoSequence& b) {
  if (a.frame_count() != b.frame_count()) return false;
  for (int t = 0; t < a.frame_count(); ++t) {
    if (!(a.frames[t] == b.frames[t])) return false;
  }
  return true;
}

}  // namespace

TEST(Pipeline, StaticClipUsesFrameZeroAndRatesAddUp) {
  const auto video = testkit::repeat(training::synthetic_texture(48, 40, 2), 5);
  EncodeOptions eo;
  eo.lossy = codecs::CodecConfig::mock_lossy(40);
  eo.policy = scenedetect::ReferencePolicy::kSceneCut;
  const auto rep = encode(video, eo);
  EXPECT_EQ(rep.ref_indices, std::vector<int>{0});
  EXPECT_EQ(rep.width, 48);
  EXPECT_EQ(rep.height, 40);
  EXPECT_EQ(rep.frame_count, 5);
  EXPECT_EQ(rep.framing_bits, 8ULL * container::framing_bytes(1));
  EXPECT_EQ(rep.total_bits, rep.lossy_bits + rep.ref_bits + rep.framing_bits);
  EXPECT_EQ(rep.container.size() * 8, rep.lossy_stream_bytes * 8 + rep.ref_bits + rep.framing_bits);
  EXPECT_NEAR(rep.total_bpp(), rep.lossy_bpp() + rep.ref_bpp() + rep.framing_bpp(), 1e-12);
  EXPECT_DOUBLE_EQ(rep.total_bpp(), static_cast<double>(rep.total_bits) / (48.0 * 40.0 * 5.0));
}

TEST(Pipeline, SceneCutPolicyAddsReferenceAtCut) {
  const auto a = natural_clip("chelsea.png", 20, 1);
  const auto b = natural_clip("coins.png", 20, 2);
  const auto video = training::concatenate(a, b);
  EncodeOptions eo;
  eo.lossy = codecs::CodecConfig::mock_lossy(30);
  eo.policy = scenedetect::ReferencePolicy::kSceneCut;
  const auto rep = encode(video, eo);
  ASSERT_EQ(rep.ref_indices.size(), 2u);
  EXPECT_EQ(rep.ref_indices[0], 0);
  EXPECT_NEAR(rep.ref_indices[1], 20, 1);
  EXPECT_EQ(rep.framing_bits, 8ULL * container::framing_bytes(2));

  eo.policy = scenedetect::ReferencePolicy::kFirstOnly;
  EXPECT_EQ(encode(video, eo).ref_indices, std::vector<int>{0});

  DecodeOptions d;
  const auto dec = decode(rep.container, d);
  EXPECT_EQ(dec.ref_indices, rep.ref_indices);
  EXPECT_EQ(dec.video.frame_count(), 40);
}

TEST(Pipeline, RawDecodeMatchesCodecAndLattice) {
  const auto video = moving_clip(4, 40, 5);
  EncodeOptions eo;
  eo.lossy = codecs::CodecConfig::mock_lossy(35);
  const auto rep = encode(video, eo);
  const auto dec = decode(rep.container, DecodeOptions{});

  const auto enc = codecs::encode_video(video, eo.lossy);
  auto direct = codecs::decode_video(enc.bitstream, eo.lossy,
                                     codecs::StreamGeometry{40, 40, 4, video.fps});
  for (auto& f : direct.frames) quantize_to_bit_depth(f);
  EXPECT_TRUE(same_video(dec.video, direct));
  for (const auto& f : dec.video.frames) {
    for (float v : f.pixels()) ASSERT_FLOAT_EQ(std::round(v * 255.0f) / 255.0f, v);
  }
  EXPECT_EQ(dec.reference_encoder_passes, 0);
}

TEST(Pipeline, Step2WithZeroConfidenceEqualsStep1) {
  const auto video = moving_clip(4, 32, 6);
  EncodeOptions eo;
  eo.lossy = codecs::CodecConfig::mock_lossy(30);
  const auto rep = encode(video, eo);
  auto w = active_weights();

  DecodeOptions d;
  d.weights = &w;
  d.mode = DecodeMode::kStep1;
  const auto s1 = decode(rep.container, d);
  d.mode = DecodeMode::kStep2;
  const auto s2 = decode(rep.container, d);
  EXPECT_EQ(s2.reference_encoder_passes, 1);
  EXPECT_FALSE(same_video(s1.video, s2.video));

  restoration::zero_confidence_head(w);
  EXPECT_TRUE(same_video(decode(rep.container, d).video, s1.video));
}

TEST(Pipeline, WorkerCountDoesNotChangeOutput) {
  const auto video = moving_clip(5, 32, 7);
  EncodeOptions eo;
  eo.lossy = codecs::CodecConfig::mock_lossy(30);
  const auto rep = encode(video, eo);
  const auto w = active_weights();
  DecodeOptions d;
  d.weights = &w;
  d.mode = DecodeMode::kStep2;
  const auto one = decode(rep.container, d);
  d.workers = 3;
  EXPECT_TRUE(same_video(decode(rep.container, d).video, one.video));
}

TEST(Pipeline, DecodeErrors) {
  const auto video = moving_clip(3, 32, 8);
  const auto rep = encode(video, EncodeOptions{});
  DecodeOptions d;
  d.mode = DecodeMode::kStep1;
  EXPECT_THROW(decode(rep.container, d), ValidationError);
  auto cut = rep.container;
  cut.resize(cut.size() - 3);
  EXPECT_THROW(decode(cut, DecodeOptions{}), FormatError);
  EXPECT_THROW(decode_mode_from_string("step3"), ValidationError);
  for (auto m : {DecodeMode::kRaw, DecodeMode::kStep1, DecodeMode::kStep2}) {
    EXPECT_EQ(decode_mode_from_string(to_string(m)), m);
  }
  EncodeOptions lossless_as_lossy;
  lossless_as_lossy.lossy = codecs::CodecConfig::mock_lossless();
  EXPECT_THROW(encode(video, lossless_as_lossy), ValidationError);
}

TEST(Pipeline, RdSweepFourQualities) {
  const auto video = moving_clip(3, 32, 9);
  const auto w = active_weights();
  EvalOptions eo;
  eo.qualities = {20, 35, 50, 65};
  eo.lossy_for = [](int q) { return codecs::CodecConfig::mock_lossy(q); };
  eo.weights = &w;
  const auto pts = evaluate_rd(video, eo);
  ASSERT_EQ(pts.size(), 12u);
  for (const std::string m : {"raw", "step1", "step2"}) {
    const auto c = curve_for(pts, m, metrics::MetricKind::kPsnr);
    EXPECT_EQ(c.points.size(), 4u) << m;
  }
  for (std::size_t i = 0; i < pts.size(); i += 3) {
    EXPECT_EQ(pts[i].method, "raw");
    EXPECT_DOUBLE_EQ(pts[i].bpp, pts[i + 1].bpp);  // step1 pays the lossy stream only
    EXPECT_GT(pts[i + 2].bpp, pts[i].bpp);         // step2 also pays the references
    EXPECT_TRUE(std::isnan(pts[i].ms_ssim));       // 32 px is below the MS-SSIM minimum
    EXPECT_TRUE(std::isfinite(pts[i].psnr_rgb));
  }
  for (std::size_t i = 3; i < pts.size(); i += 3) {
    EXPECT_GT(pts[i].bpp, pts[i - 3].bpp);
    EXPECT_GT(pts[i].psnr_rgb, pts[i - 3].psnr_rgb);
  }
  EXPECT_EQ(pts[0].label(), "raw@20");
  const auto svg = rd_svg(pts);
  EXPECT_NE(svg.find("<svg"), std::string::npos);
  EXPECT_NE(svg.find("step2"), std::string::npos);

  EvalOptions none;
  none.lossy_for = eo.lossy_for;
  EXPECT_THROW(evaluate_rd(video, none), ValidationError);
}
