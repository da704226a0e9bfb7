// Copyright 2026 The U-Attention Authors
// SPDX-License-Identifier: Apache-2.0

#include "uattn/losses.hpp"

#include <cmath>

#include "uattn/ops.hpp"
#include "uattn/rng.hpp"

namespace uattn {

template <typename T>
T weighted_total(T l1, T perceptual, T style, T gan_g, const LossWeights& w) {
  T total = static_cast<T>(w.l1) * l1;
  total = total + static_cast<T>(w.perceptual) * perceptual;
  total = total + static_cast<T>(w.style) * style;
  total = total + static_cast<T>(w.gan) * gan_g;
  return total;
}

namespace {

template <typename T>
Tensor<T> as_batch(const Tensor<T>& images) {
  if (images.rank() == 3) {
    return ops::reshape(images, {1, images.dim(0), images.dim(1), images.dim(2)});
  }
  if (images.rank() != 4) throw ShapeError("expected [N,3,H,W] images, got " + to_string(images.shape()));
  return images;
}

template <typename T>
void require_same(const Tensor<T>& a, const Tensor<T>& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(what) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                     to_string(b.shape()));
  }
}

Tensor<double> he_uniform(Shape shape, std::uint64_t seed) {
  const auto fan_in = numel(shape) / shape[0];
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  SplitMix64 rng(seed);
  std::vector<double> data(static_cast<std::size_t>(numel(shape)));
  for (auto& x : data) x = rng.uniform(-bound, bound);
  return Tensor<double>::from_data(std::move(shape), std::move(data));
}

}  // namespace

FrozenExtractor::FrozenExtractor(std::uint64_t seed) : seed_(seed) {
  constexpr std::array<std::int64_t, 4> ch = {3, 16, 32, 64};
  for (std::size_t i = 0; i < 3; ++i) {
    w64_[i] = he_uniform({ch[i + 1], ch[i], 3, 3}, derive_seed(seed, i + 1));
    b64_[i] = Tensor<double>::zeros({ch[i + 1]});
    w32_[i] = cast<float>(w64_[i]);
    b32_[i] = cast<float>(b64_[i]);
  }
}

template <typename T>
std::vector<Tensor<T>> FrozenExtractor::extract(const Tensor<T>& images) const {
  auto x = as_batch(images);
  if (x.dim(1) != 3) throw ShapeError("feature extractor expects 3-channel images");
  if (x.dim(2) < 8 || x.dim(3) < 8) {
    throw ShapeError("feature extractor needs images of at least 8x8, got " +
                     to_string(x.shape()));
  }
  std::vector<Tensor<T>> feats;
  for (std::size_t i = 0; i < 3; ++i) {
    if constexpr (std::is_same_v<T, float>) {
      x = ops::leaky_relu(ops::conv2d(x, w32_[i], b32_[i], 2, 1), T(0.2));
    } else {
      x = ops::leaky_relu(ops::conv2d(x, w64_[i], b64_[i], 2, 1), T(0.2));
    }
    feats.push_back(x);
  }
  return feats;
}

template <typename T>
Tensor<T> l1_loss(const Tensor<T>& a, const Tensor<T>& b) {
  require_same(a, b, "l1_loss");
  return ops::mean(ops::abs(ops::sub(a, b)));
}

template <typename T>
Tensor<T> perceptual_loss(const FrozenExtractor& fx, const Tensor<T>& a, const Tensor<T>& b) {
  require_same(a, b, "perceptual_loss");
  const auto fa = fx.extract(a);
  const auto fb = fx.extract(b);
  Tensor<T> acc;
  for (std::size_t i = 0; i < fa.size(); ++i) {
    const auto term = ops::mean(ops::abs(ops::sub(fa[i], fb[i])));
    acc = acc.defined() ? ops::add(acc, term) : term;
  }
  return ops::scale(acc, T(1) / static_cast<T>(fa.size()));
}

template <typename T>
Tensor<T> gram(const Tensor<T>& features) {
  if (features.rank() != 3) throw ShapeError("gram expects a [C,H,W] feature map");
  const auto g = ops::gram(
      ops::reshape(features, {1, features.dim(0), features.dim(1), features.dim(2)}));
  return ops::reshape(g, {g.dim(1), g.dim(2)});
}

template <typename T>
Tensor<T> style_loss(const FrozenExtractor& fx, const Tensor<T>& a, const Tensor<T>& b) {
  require_same(a, b, "style_loss");
  const auto fa = fx.extract(a);
  const auto fb = fx.extract(b);
  Tensor<T> acc;
  for (std::size_t i = 0; i < fa.size(); ++i) {
    const auto term = ops::mean(ops::abs(ops::sub(ops::gram(fa[i]), ops::gram(fb[i]))));
    acc = acc.defined() ? ops::add(acc, term) : term;
  }
  return ops::scale(acc, T(1) / static_cast<T>(fa.size()));
}

template <typename T>
Tensor<T> hinge_d_loss(const Tensor<T>& real_scores, const Tensor<T>& fake_scores) {
  const auto real_term = ops::mean(ops::relu(ops::add_scalar(ops::scale(real_scores, T(-1)), T(1))));
  const auto fake_term = ops::mean(ops::relu(ops::add_scalar(fake_scores, T(1))));
  return ops::add(real_term, fake_term);
}

template <typename T>
Tensor<T> hinge_g_loss(const Tensor<T>& fake_scores) {
  return ops::scale(ops::mean(fake_scores), T(-1));
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> gan_losses(const Tensor<T>& real_scores,
                                           const Tensor<T>& fake_scores) {
  return {hinge_d_loss(real_scores, fake_scores), hinge_g_loss(fake_scores)};
}

template <typename T>
LossReport LossTerms<T>::report() const {
  LossReport r;
  r.l1 = l1.item();
  r.perceptual = perceptual.item();
  r.style = style.item();
  r.gan_g = gan_g.item();
  r.total = total.item();
  return r;
}

template <typename T>
LossTerms<T> total_loss(const FrozenExtractor& fx, const Tensor<T>& output,
                        const Tensor<T>& target, const Tensor<T>& gan_g,
                        const LossWeights& weights) {
  require_same(output, target, "total_loss");
  LossTerms<T> t;
  t.l1 = l1_loss(output, target);
  // Features of both images are shared between the perceptual and style terms.
  const auto fa = fx.extract(output);
  const auto fb = fx.extract(target);
  Tensor<T> p, s;
  for (std::size_t i = 0; i < fa.size(); ++i) {
    const auto pt = ops::mean(ops::abs(ops::sub(fa[i], fb[i])));
    const auto st = ops::mean(ops::abs(ops::sub(ops::gram(fa[i]), ops::gram(fb[i]))));
    p = p.defined() ? ops::add(p, pt) : pt;
    s = s.defined() ? ops::add(s, st) : st;
  }
  const T inv = T(1) / static_cast<T>(fa.size());
  t.perceptual = ops::scale(p, inv);
  t.style = ops::scale(s, inv);
  t.gan_g = gan_g.defined() ? gan_g : Tensor<T>::scalar(T(0));
  auto total = ops::scale(t.l1, static_cast<T>(weights.l1));
  total = ops::add(total, ops::scale(t.perceptual, static_cast<T>(weights.perceptual)));
  total = ops::add(total, ops::scale(t.style, static_cast<T>(weights.style)));
  total = ops::add(total, ops::scale(t.gan_g, static_cast<T>(weights.gan)));
  t.total = total;
  return t;
}

// ---- discriminator -----------------------------------------------------------

std::string Discriminator::weight_name(int layer) {
  return "conv" + std::to_string(layer) + ".w";
}

std::string Discriminator::bias_name(int layer) {
  return "conv" + std::to_string(layer) + ".b";
}

Discriminator Discriminator::build(std::uint64_t seed) {
  Discriminator d;
  for (int i = 1; i <= kLayers; ++i) {
    const auto co = kChannels[static_cast<std::size_t>(i)];
    const auto ci = kChannels[static_cast<std::size_t>(i - 1)];
    auto w = cast<float>(he_uniform({co, ci, 3, 3, 3}, derive_seed(seed, 100 + i)), true);
    d.params.emplace(weight_name(i), w);
    d.params.emplace(bias_name(i), TensorF::zeros({co}, true));
    d.spectral[static_cast<std::size_t>(i - 1)] =
        SpectralState<float>::init(co, derive_seed(seed, 200 + i));
  }
  return d;
}

std::vector<TensorF> spectral_weights(Discriminator& disc, int iters, bool track_grad) {
  std::vector<TensorF> out;
  for (int i = 1; i <= Discriminator::kLayers; ++i) {
    const auto& w = disc.params.at(Discriminator::weight_name(i));
    auto& state = disc.spectral[static_cast<std::size_t>(i - 1)];
    const double sigma = iters > 0 ? power_iterate(w, state, iters) : spectral_sigma(w, state);
    const auto inv = static_cast<float>(1.0 / sigma);
    if (track_grad) {
      out.push_back(ops::scale(w, inv));
    } else {
      NoGradGuard guard;
      out.push_back(ops::scale(w, inv));
    }
  }
  return out;
}

TensorF discriminate(const TensorF& batch, const Discriminator& disc,
                     const std::vector<TensorF>& normalized_weights) {
  if (batch.rank() != 4 || batch.dim(1) != 3) {
    throw ShapeError("discriminator expects [B,3,H,W], got " + to_string(batch.shape()));
  }
  if (batch.dim(0) < 2) {
    throw ShapeError("discriminator needs a batch of at least 2 (temporal axis)");
  }
  if (normalized_weights.size() != static_cast<std::size_t>(Discriminator::kLayers)) {
    throw ShapeError("discriminator expects 6 normalized weights");
  }
  auto x = ops::batch_to_time(batch);
  for (int i = 1; i <= Discriminator::kLayers; ++i) {
    x = ops::conv3d(x, normalized_weights[static_cast<std::size_t>(i - 1)],
                    disc.params.at(Discriminator::bias_name(i)), 1);
    if (i < Discriminator::kLayers) x = ops::leaky_relu(x, 0.2f);
  }
  return x;
}

TensorF discriminate(const TensorF& batch, Discriminator& disc) {
  return discriminate(batch, disc, spectral_weights(disc, 1, true));
}

#define UATTN_INSTANTIATE_LOSSES(T)                                                        \
  template T weighted_total(T, T, T, T, const LossWeights&);                               \
  template std::vector<Tensor<T>> FrozenExtractor::extract(const Tensor<T>&) const;        \
  template Tensor<T> l1_loss(const Tensor<T>&, const Tensor<T>&);                          \
  template Tensor<T> perceptual_loss(const FrozenExtractor&, const Tensor<T>&,             \
                                     const Tensor<T>&);                                    \
  template Tensor<T> style_loss(const FrozenExtractor&, const Tensor<T>&, const Tensor<T>&); \
  template Tensor<T> gram(const Tensor<T>&);                                               \
  template Tensor<T> hinge_d_loss(const Tensor<T>&, const Tensor<T>&);                     \
  template Tensor<T> hinge_g_loss(const Tensor<T>&);                                       \
  template std::pair<Tensor<T>, Tensor<T>> gan_losses(const Tensor<T>&, const Tensor<T>&); \
  template struct LossTerms<T>;                                                            \
  template LossTerms<T> total_loss(const FrozenExtractor&, const Tensor<T>&,               \
                                   const Tensor<T>&, const Tensor<T>&, const LossWeights&);

UATTN_INSTANTIATE_LOSSES(float)
UATTN_INSTANTIATE_LOSSES(double)

#undef UATTN_INSTANTIATE_LOSSES

}  // namespace uattn
