// Copyright 2026 The U-Attention Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <fstream>

#include "ssim_oracle.hpp"
#include "test_util.hpp"
#include "uattn/data.hpp"
#include "uattn/metrics.hpp"

namespace uattn {
namespace {

using testing::naive_ssim;
using testing::random_tensor;

TensorF negate(const TensorF& x) {
  std::vector<float> v(x.data().begin(), x.data().end());
  for (auto& e : v) e = -e;
  return TensorF::from_data(x.shape(), v);
}

TEST(Ssim, TapsAreNormalizedAndSymmetric) {
  const auto taps = gaussian_taps(11, 1.5);
  double sum = 0.0;
  for (double t : taps) sum += t;
  EXPECT_NEAR(sum, 1.0, 1e-15);
  for (int i = 0; i < 5; ++i) EXPECT_DOUBLE_EQ(taps[i], taps[10 - i]);
}

TEST(Ssim, IdenticalImagesScoreOne) {
  const auto x = random_tensor<float>({3, 24, 24}, 1);
  EXPECT_NEAR(ssim(x, x), 1.0, 1e-9);
}

TEST(Ssim, MatchesPerWindowOracle) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto a = random_tensor<float>({3, 20, 17}, 2 * seed);
    const auto b = random_tensor<float>({3, 20, 17}, 2 * seed + 1);
    EXPECT_NEAR(ssim(a, b), naive_ssim(a, b), 1e-6);
  }
}

TEST(Ssim, InvertedCheckerIsNegative) {
  const auto x = generate({PatternKind::kChecker, 1, 8, 0, 0}, 32);
  const double s = ssim(x, negate(x));
  EXPECT_LT(s, 0.0);
  EXPECT_NEAR(s, naive_ssim(x, negate(x)), 1e-6);
}

TEST(Ssim, TextureAgainstNoiseIsLow) {
  const auto tex = generate({PatternKind::kBricks, 2, 16, 0, 0}, 64);
  const auto noise = random_tensor<float>({3, 64, 64}, 3);
  EXPECT_LT(ssim(tex, noise), 0.2);
}

TEST(Ssim, SymmetricAndBoundedProperty) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto a = random_tensor<float>({3, 16, 16}, 100 + seed);
    const auto b = random_tensor<float>({3, 16, 16}, 200 + seed, -0.2, 1.0);
    const double ab = ssim(a, b);
    EXPECT_NEAR(ab, ssim(b, a), 1e-9);
    EXPECT_GE(ab, -1.0);
    EXPECT_LE(ab, 1.0);
  }
}

TEST(Ssim, RejectsMismatchAndSmallImages) {
  EXPECT_THROW(ssim(TensorF::zeros({3, 16, 16}), TensorF::zeros({3, 16, 15})), ShapeError);
  EXPECT_THROW(ssim(TensorF::zeros({3, 10, 16}), TensorF::zeros({3, 10, 16})), ShapeError);
}

TEST(CropDistance, ZeroOnIdenticalAndSeeded) {
  const FrozenExtractor fx;
  const auto a = random_tensor<float>({3, 64, 64}, 4);
  const auto b = random_tensor<float>({3, 64, 64}, 5);
  EXPECT_EQ(crop_feature_distance(fx, a, a), 0.0);
  const double d0 = crop_feature_distance(fx, a, b, 8, 0.5, 0);
  EXPECT_GT(d0, 0.0);
  EXPECT_EQ(d0, crop_feature_distance(fx, a, b, 8, 0.5, 0));
  EXPECT_NE(d0, crop_feature_distance(fx, a, b, 8, 0.5, 1));
  EXPECT_THROW(crop_feature_distance(fx, a, b, 8, 1.5), ShapeError);
  EXPECT_THROW(crop_feature_distance(fx, a, TensorF::zeros({3, 32, 32})), ShapeError);
}

TEST(NaiveTile, QuadrantsRepeatTheCrop) {
  const auto target = random_tensor<float>({3, 32, 32}, 6);
  const auto tiled = naive_tile(make_pair(target));
  for (std::int64_t c = 0; c < 3; ++c)
    for (std::int64_t y = 0; y < 32; ++y)
      for (std::int64_t x = 0; x < 32; ++x)
        ASSERT_EQ(tiled.at({c, y, x}), target.at({c, 8 + y % 16, 8 + x % 16}));
}

TEST(NaiveTile, ExactForHalfPeriodTexture) {
  // Checker with square 8 repeats every 16 = S/2 pixels.
  const auto target = generate({PatternKind::kChecker, 7, 8, 3, 1}, 32);
  const auto tiled = naive_tile(make_pair(target));
  for (std::int64_t i = 0; i < target.numel(); ++i) ASSERT_EQ(tiled.data()[i], target.data()[i]);
}

TEST(NaiveTile, NoiseScoresBelowChecker) {
  const auto checker = generate({PatternKind::kChecker, 8, 16, 0, 0}, 64);
  const auto noise = generate({PatternKind::kValueNoise, 8, 8, 0, 0}, 64);
  const double on_checker = ssim(naive_tile(make_pair(checker)), checker);
  const double on_noise = ssim(naive_tile(make_pair(noise)), noise);
  EXPECT_LT(on_noise, on_checker);
}

TEST(Attention, FinestStageRowAtOneTwentyEight) {
  const auto gen = build_model<float>(ArchVariant::kUAttention, 128, 2);
  const auto img = generate({PatternKind::kStripes, 1, 16, 0, 0}, 128);
  const auto rec = extract_attention(gen, img, 3);
  EXPECT_EQ(rec.weights.size(), 64u);
  EXPECT_EQ(rec.matrix.shape(), (Shape{64, 64}));
  EXPECT_EQ(rec.block_input.shape(), (Shape{256, 32, 32}));
  double sum = 0.0;
  for (double w : rec.weights) sum += w;
  EXPECT_NEAR(sum, 1.0, 1e-6);
  EXPECT_EQ(rec.row, 0);
  EXPECT_EQ(rec.col, 0);
}

TEST(Attention, ZeroQueryKeyGivesUniformRow) {
  auto gen = build_model<float>(ArchVariant::kUAttention, 32, 3);
  for (auto& [name, t] : gen.params) {
    const bool qk = name.find("attn.q.") != std::string::npos || name.find("attn.k.") != std::string::npos;
    if (qk) std::fill(t.mutable_data().begin(), t.mutable_data().end(), 0.0f);
  }
  const auto img = random_tensor<float>({3, 32, 32}, 9);
  for (int stage = 1; stage <= 5; ++stage) {
    const auto rec = extract_attention(gen, img, stage, 1, 1);
    const double expect = 1.0 / static_cast<double>(rec.weights.size());
    for (double w : rec.weights) EXPECT_NEAR(w, expect, 1e-7);
  }
}

TEST(Attention, OutOfRangeRequestsRejected) {
  const auto gen = build_model<float>(ArchVariant::kUAttention, 32, 4);
  const auto img = TensorF::zeros({3, 32, 32});
  EXPECT_THROW(extract_attention(gen, img, 0), ConfigError);
  EXPECT_THROW(extract_attention(gen, img, 6), ConfigError);
  EXPECT_THROW(extract_attention(gen, img, 1, 2, 0), ConfigError);
}

TEST(Overlay, GridTintAndOutline) {
  AttentionRecord rec;
  rec.geometry.parts = 2;
  rec.row = 0;
  rec.col = 1;
  rec.weights = {0.1, 0.2, 0.3, 0.4};
  const auto base = TensorF::full({3, 8, 8}, -1.0f);
  const auto img = render_attention_overlay(rec, base);
  // Black base pixels: red equals 0.6 * w / max mapped back to [-1, 1].
  EXPECT_NEAR(img.at({0, 5, 5}), 2.0f * 0.6f - 1.0f, 1e-6);
  EXPECT_NEAR(img.at({0, 2, 2}), 2.0f * 0.6f * 0.25f - 1.0f, 1e-6);
  EXPECT_EQ(img.at({1, 5, 5}), -1.0f);
  // Grid lines at multiples of 4 are black; the chosen patch border is white.
  for (std::int64_t c = 0; c < 3; ++c) {
    EXPECT_EQ(img.at({c, 4, 1}), -1.0f);
    EXPECT_EQ(img.at({c, 6, 0}), -1.0f);
    EXPECT_EQ(img.at({c, 0, 5}), 1.0f);
    EXPECT_EQ(img.at({c, 3, 7}), 1.0f);
  }
}

TEST(Overlay, UniformAttentionTintsEveryPatchEqually) {
  AttentionRecord rec;
  rec.geometry.parts = 4;
  rec.weights.assign(16, 1.0 / 16.0);
  const auto img = render_attention_overlay(rec, TensorF::zeros({3, 16, 16}));
  const float inner = img.at({0, 1, 1});
  for (std::int64_t py = 0; py < 4; ++py)
    for (std::int64_t px = 0; px < 4; ++px) {
      if (py == 0 && px == 0) continue;
      EXPECT_EQ(img.at({0, py * 4 + 2, px * 4 + 2}), inner);
    }
  EXPECT_THROW(render_attention_overlay(rec, TensorF::zeros({3, 18, 18})), ShapeError);
}

TEST(Overlay, BaseImageAndPpmRoundTrip) {
  const auto gen = build_model<float>(ArchVariant::kUAttention, 64, 5);
  const auto rec = extract_attention(gen, random_tensor<float>({3, 64, 64}, 10), 2);
  const auto base = attention_base_image(rec, 64);
  EXPECT_EQ(base.shape(), (Shape{3, 64, 64}));
  const auto img = render_attention_overlay(rec, base);
  const auto bytes = encode_ppm(img);
  EXPECT_EQ(encode_ppm(decode_ppm(bytes)), bytes);
}

}  // namespace
}  // namespace uattn
