// Copyright 2026 The U-Attention Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>

#include "test_util.hpp"
#include "uattn/losses.hpp"
#include "uattn/ops.hpp"

namespace uattn {
namespace {

using testing::fd_worst_error;
using testing::random_tensor;

TEST(Weights, DefaultsMatchTrainingRecipe) {
  const LossWeights w;
  EXPECT_EQ(w.l1, 1.0);
  EXPECT_EQ(w.perceptual, 0.01);
  EXPECT_EQ(w.style, 200.0);
  EXPECT_EQ(w.gan, 0.1);
}

TEST(Weights, WeightedSumArithmetic) {
  EXPECT_NEAR(weighted_total<double>(1.0, 2.0, 0.01, 3.0, LossWeights{}), 3.32, 1e-12);
}

TEST(L1, ClosedFormsAndOracle) {
  const auto x = random_tensor<float>({2, 3, 8, 8}, 1);
  EXPECT_EQ(l1_loss(x, x).item(), 0.0f);
  EXPECT_FLOAT_EQ(l1_loss(TensorF::zeros({3, 4, 4}), TensorF::full({3, 4, 4}, 0.5f)).item(), 0.5f);
  const auto y = random_tensor<float>({2, 3, 8, 8}, 2);
  double acc = 0.0;
  for (std::int64_t i = 0; i < x.numel(); ++i) acc += std::abs(double(x.data()[i]) - y.data()[i]);
  EXPECT_NEAR(l1_loss(x, y).item(), acc / static_cast<double>(x.numel()), 1e-7);
  EXPECT_THROW(l1_loss(x, TensorF::zeros({2, 3, 8, 4})), ShapeError);
}

TEST(Extractor, PyramidShapesAndStability) {
  const FrozenExtractor fx;
  EXPECT_EQ(fx.seed(), 1234u);
  const auto img = random_tensor<float>({3, 128, 128}, 3);
  const auto a = fx.extract(img);
  const auto b = FrozenExtractor{}.extract(img);
  ASSERT_EQ(a.size(), 3u);
  EXPECT_EQ(a[0].shape(), (Shape{1, 16, 64, 64}));
  EXPECT_EQ(a[1].shape(), (Shape{1, 32, 32, 32}));
  EXPECT_EQ(a[2].shape(), (Shape{1, 64, 16, 16}));
  for (std::size_t s = 0; s < 3; ++s)
    for (std::int64_t i = 0; i < a[s].numel(); ++i) ASSERT_EQ(a[s].data()[i], b[s].data()[i]);
  EXPECT_THROW(fx.extract(TensorF::zeros({3, 4, 4})), ShapeError);
}

TEST(Perceptual, ZeroOnIdenticalSymmetricPositiveOtherwise) {
  const FrozenExtractor fx;
  const auto a = random_tensor<float>({3, 32, 32}, 4);
  const auto b = random_tensor<float>({3, 32, 32}, 5);
  EXPECT_EQ(perceptual_loss(fx, a, a).item(), 0.0f);
  EXPECT_GT(perceptual_loss(fx, a, b).item(), 0.0f);
  EXPECT_FLOAT_EQ(perceptual_loss(fx, a, b).item(), perceptual_loss(fx, b, a).item());
}

TEST(Perceptual, GradientMatchesFiniteDifferences) {
  const FrozenExtractor fx;
  const auto target = random_tensor<double>({1, 3, 8, 8}, 6);
  auto loss = [&](const TensorD& v) { return perceptual_loss(fx, v, target); };
  EXPECT_LT(fd_worst_error(loss, random_tensor<double>({1, 3, 8, 8}, 7), 1e-6, 1e-3), 1e-4);
}

TEST(Gram, ClosedFormsAndBruteForce) {
  EXPECT_DOUBLE_EQ(gram(TensorD::full({1, 3, 3}, 1.0)).item(), 1.0);
  // Channels supported on disjoint pixels are orthogonal.
  const auto ortho = TensorD::from_data({2, 1, 2}, {1, 0, 0, 1});
  const auto g = gram(ortho);
  EXPECT_EQ(g.at({0, 1}), 0.0);
  EXPECT_EQ(g.at({1, 0}), 0.0);
  const auto f = random_tensor<double>({3, 4, 4}, 8);
  const auto gf = gram(f);
  for (std::int64_t i = 0; i < 3; ++i)
    for (std::int64_t j = 0; j < 3; ++j) {
      double acc = 0.0;
      for (std::int64_t y = 0; y < 4; ++y)
        for (std::int64_t x = 0; x < 4; ++x) acc += f.at({i, y, x}) * f.at({j, y, x});
      EXPECT_NEAR(gf.at({i, j}), acc / 48.0, 1e-7);
    }
}

TEST(Style, ZeroOnIdenticalAndGradient) {
  const FrozenExtractor fx;
  const auto a = random_tensor<double>({1, 3, 8, 8}, 9);
  EXPECT_EQ(style_loss(fx, a, a).item(), 0.0);
  const auto target = random_tensor<double>({1, 3, 8, 8}, 10);
  auto loss = [&](const TensorD& v) { return style_loss(fx, v, target); };
  EXPECT_LT(fd_worst_error(loss, a, 1e-6, 1e-3), 1e-4);
}

// Gram matrices ignore where features sit, so the same pixel permutation
// applied to every channel of both feature maps leaves the Gram distance fixed.
TEST(Style, GramDistanceInvariantUnderSharedPixelPermutation) {
  const auto a = random_tensor<double>({4, 5, 5}, 11);
  const auto b = random_tensor<double>({4, 5, 5}, 12);
  std::vector<std::int64_t> perm(25);
  for (std::int64_t i = 0; i < 25; ++i) perm[i] = (i * 7 + 3) % 25;
  auto shuffle = [&](const TensorD& t) {
    std::vector<double> out(t.data().begin(), t.data().end());
    for (std::int64_t c = 0; c < 4; ++c)
      for (std::int64_t i = 0; i < 25; ++i) out[c * 25 + i] = t.data()[c * 25 + perm[i]];
    return TensorD::from_data(t.shape(), out);
  };
  const double before = l1_loss(gram(a), gram(b)).item();
  const double after = l1_loss(gram(shuffle(a)), gram(shuffle(b))).item();
  EXPECT_NEAR(before, after, 1e-12);
}

TEST(Hinge, ClosedForms) {
  const auto ones = TensorF::full({4}, 1.0f), neg = TensorF::full({4}, -1.0f);
  const auto zeros = TensorF::zeros({4});
  auto [d1, g1] = gan_losses(ones, neg);
  EXPECT_EQ(d1.item(), 0.0f);
  EXPECT_EQ(g1.item(), 1.0f);
  auto [d2, g2] = gan_losses(zeros, zeros);
  EXPECT_EQ(d2.item(), 2.0f);
  EXPECT_EQ(g2.item(), 0.0f);
}

TEST(Hinge, GradientsAwayFromKinks) {
  const auto fake = TensorD::from_data({4}, {-1.5, -0.3, 0.4, 2.0});
  const auto real = TensorD::from_data({4}, {-0.5, 0.2, 1.6, 0.7});
  auto d_real = [&](const TensorD& v) { return hinge_d_loss(v, fake); };
  auto d_fake = [&](const TensorD& v) { return hinge_d_loss(real, v); };
  auto g = [&](const TensorD& v) { return hinge_g_loss(v); };
  EXPECT_LT(fd_worst_error(d_real, real), 1e-5);
  EXPECT_LT(fd_worst_error(d_fake, fake), 1e-5);
  EXPECT_LT(fd_worst_error(g, fake), 1e-5);
}

TEST(Total, IdentityAndZeroOnMatch) {
  const FrozenExtractor fx;
  const auto out = random_tensor<float>({2, 3, 32, 32}, 13);
  const auto tgt = random_tensor<float>({2, 3, 32, 32}, 14);
  const auto gan = TensorF::scalar(-0.37f);
  const LossWeights w;
  const auto terms = total_loss(fx, out, tgt, gan, w);
  const auto r = terms.report();
  const float expect = weighted_total<float>(static_cast<float>(r.l1), static_cast<float>(r.perceptual),
                                             static_cast<float>(r.style), static_cast<float>(r.gan_g), w);
  EXPECT_EQ(static_cast<float>(r.total), expect);
  EXPECT_EQ(terms.total.item(), expect);

  const auto same = total_loss(fx, tgt, tgt, TensorF{}, w).report();
  EXPECT_EQ(same.l1, 0.0);
  EXPECT_EQ(same.perceptual, 0.0);
  EXPECT_EQ(same.style, 0.0);
  EXPECT_EQ(same.total, 0.0);
}

TEST(Discriminator, LayoutAndScoreShape) {
  auto disc = Discriminator::build(5);
  EXPECT_EQ(disc.params.size(), 12u);
  EXPECT_EQ(disc.params.at("conv1.w").shape(), (Shape{32, 3, 3, 3, 3}));
  EXPECT_EQ(disc.params.at("conv6.w").shape(), (Shape{128, 128, 3, 3, 3}));
  NoGradGuard no_grad;
  const auto scores = discriminate(random_tensor<float>({8, 3, 32, 32}, 15), disc);
  EXPECT_EQ(scores.shape(), (Shape{1, 128, 8, 32, 32}));
  // The last layer is linear, so some scores are negative.
  bool negative = false;
  for (float s : scores.data()) negative |= s < 0.0f;
  EXPECT_TRUE(negative);
  EXPECT_THROW(discriminate(random_tensor<float>({1, 3, 32, 32}, 16), disc), ShapeError);
}

TEST(Discriminator, NormalizedWeightsHaveUnitSpectralNorm) {
  auto disc = Discriminator::build(6);
  const auto normalized = spectral_weights(disc, 30, false);
  ASSERT_EQ(normalized.size(), 6u);
  for (int i = 0; i < 6; ++i) {
    auto probe = SpectralState<float>::init(normalized[i].dim(0), 99 + i);
    const double sigma = power_iterate(normalized[i], probe, 200);
    EXPECT_GE(sigma, 0.9) << "layer " << i + 1;
    EXPECT_LE(sigma, 1.1) << "layer " << i + 1;
  }
}

}  // namespace
}  // namespace uattn
