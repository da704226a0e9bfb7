// Copyright 2026 The U-Attention Authors
// SPDX-License-Identifier: Apache-2.0
//
// Training objectives: pixel L1, perceptual and Gram style losses over a
// frozen random feature extractor, and the temporal-patch adversarial pair
// whose discriminator treats the batch axis as time.

#pragma once

#include <array>
#include <cstdint>
#include <utility>
#include <vector>

#include "uattn/optim.hpp"
#include "uattn/tensor.hpp"

namespace uattn {

struct LossWeights {
  double l1 = 1.0;
  double perceptual = 0.01;
  double style = 200.0;
  double gan = 0.1;

  bool operator==(const LossWeights&) const = default;
};

/// Scalar values of one evaluation of the combined objective.
struct LossReport {
  double l1 = 0.0;
  double perceptual = 0.0;
  double style = 0.0;
  double gan_g = 0.0;
  double total = 0.0;
};

/// lambda_l1*l1 + lambda_p*p + lambda_s*s + lambda_gan*g evaluated in T, in
/// exactly the order total_loss uses for its graph.
template <typename T>
T weighted_total(T l1, T perceptual, T style, T gan_g, const LossWeights& w);

/// Fixed three-stage conv pyramid (3x3 stride 2, 16/32/64 channels,
/// LeakyReLU 0.2) standing in for pretrained perceptual features. Weights are
/// drawn once from the seed and never trained.
class FrozenExtractor {
 public:
  static constexpr std::uint64_t kDefaultSeed = 1234;

  explicit FrozenExtractor(std::uint64_t seed = kDefaultSeed);

  /// images [N,3,H,W] or [3,H,W] with H, W >= 8 -> features at H/2, H/4, H/8.
  template <typename T>
  std::vector<Tensor<T>> extract(const Tensor<T>& images) const;

  std::uint64_t seed() const { return seed_; }
  const std::array<Tensor<double>, 3>& weights() const { return w64_; }

 private:
  std::uint64_t seed_;
  std::array<Tensor<double>, 3> w64_, b64_;
  std::array<Tensor<float>, 3> w32_, b32_;
};

template <typename T>
Tensor<T> l1_loss(const Tensor<T>& a, const Tensor<T>& b);

/// Mean over stages of the mean absolute feature difference.
template <typename T>
Tensor<T> perceptual_loss(const FrozenExtractor& fx, const Tensor<T>& a, const Tensor<T>& b);

/// Mean over stages of the mean absolute Gram matrix difference.
template <typename T>
Tensor<T> style_loss(const FrozenExtractor& fx, const Tensor<T>& a, const Tensor<T>& b);

/// Gram matrix F F^T / (C H W) of a single [C, H, W] feature map.
template <typename T>
Tensor<T> gram(const Tensor<T>& features);

/// Hinge objectives: d = mean(relu(1 - real)) + mean(relu(1 + fake)),
/// g = -mean(fake).
template <typename T>
Tensor<T> hinge_d_loss(const Tensor<T>& real_scores, const Tensor<T>& fake_scores);
template <typename T>
Tensor<T> hinge_g_loss(const Tensor<T>& fake_scores);
template <typename T>
std::pair<Tensor<T>, Tensor<T>> gan_losses(const Tensor<T>& real_scores,
                                           const Tensor<T>& fake_scores);

/// Differentiable components and their weighted sum.
template <typename T>
struct LossTerms {
  Tensor<T> l1, perceptual, style, gan_g, total;
  LossReport report() const;
};

/// Combined generator objective. gan_g may be undefined (treated as 0).
template <typename T>
LossTerms<T> total_loss(const FrozenExtractor& fx, const Tensor<T>& output,
                        const Tensor<T>& target, const Tensor<T>& gan_g,
                        const LossWeights& weights);

// ---- discriminator -----------------------------------------------------------

/// Six 3x3x3 conv layers 3->32->64->128->128->128->128, stride 1, padding 1,
/// LeakyReLU(0.2) after all but the last, spectrally normalized weights.
struct Discriminator {
  static constexpr int kLayers = 6;
  static constexpr std::array<std::int64_t, 7> kChannels = {3, 32, 64, 128, 128, 128, 128};

  ParamMap<float> params;  // "conv{i}.w", "conv{i}.b" for i = 1..6
  std::array<SpectralState<float>, kLayers> spectral;

  static Discriminator build(std::uint64_t seed);
  static std::string weight_name(int layer);  // 1-based
  static std::string bias_name(int layer);
};

/// Spectrally normalized weights for one step. With iters >= 1 the stored u
/// vectors advance by that many power iterations; with iters == 0 the current
/// u is used as is. When track_grad is false the result is a constant.
std::vector<TensorF> spectral_weights(Discriminator& disc, int iters, bool track_grad);

/// batch [B,3,H,W] with B >= 2 -> patch scores [1,128,B,H,W].
TensorF discriminate(const TensorF& batch, const Discriminator& disc,
                     const std::vector<TensorF>& normalized_weights);

/// Convenience pass: one power iteration, gradients tracked.
TensorF discriminate(const TensorF& batch, Discriminator& disc);

}  // namespace uattn
