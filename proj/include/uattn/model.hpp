// Copyright 2026 The U-Attention Authors
// SPDX-License-Identifier: Apache-2.0
//
// The U-Attention generator: a two-layer CNN encoder, five Transformer blocks
// over multi-scale patch sequences joined by strided down convolutions,
// bilinear up convolutions and skip fusion, and a two-layer CNN decoder.
// The ablation variants share the encoder, decoder and block structure.

#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "uattn/optim.hpp"
#include "uattn/patch.hpp"
#include "uattn/tensor.hpp"

namespace uattn {

enum class ArchVariant {
  kUAttention,
  kBaselineCascade3,      // three blocks at one fixed partition, no down/up
  kPyramid3,              // three blocks with P = 2, 4, 8 at constant extent
  kSimplifiedHourglass5,  // P = 2, 4, 8, 4, 2 at constant extent, skip fusion
};

/// CLI spelling: uattn | baseline | pyramid | hourglass-simple.
std::string variant_name(ArchVariant v);
ArchVariant parse_variant(const std::string& name);

inline constexpr double kNormEps = 1e-5;
inline constexpr double kLeakySlope = 0.2;

template <typename T>
struct AttentionParams {
  Tensor<T> wq, bq, wk, bk, wv, bv, wo, bo;
};

template <typename T>
struct TransformerLayerParams {
  AttentionParams<T> attn;
  Tensor<T> ffn_w, ffn_b;
  Tensor<T> norm1_gain, norm1_bias;
  Tensor<T> norm2_gain, norm2_bias;
};

/// Two stacked convolutions (encoder, decoder, down, up and fuse stages).
template <typename T>
struct ConvPair {
  Tensor<T> w1, b1, w2, b2;
};

/// One Transformer block of a variant: its stage geometry and the spatial
/// size of its feed-forward kernel.
struct BlockPlan {
  StageSpec stage;
  int ffn_kernel = 3;
};

/// Blocks of a variant at a given input size, in execution order.
std::vector<BlockPlan> block_plan(ArchVariant variant, std::int64_t input_hw);

enum class InitKind { kHeUniform, kZero, kOne };

struct ParamSpec {
  std::string name;
  Shape shape;
  InitKind init = InitKind::kHeUniform;
};

/// Every generator parameter of a variant with its shape and initializer.
/// Shapes do not depend on the input size.
std::vector<ParamSpec> parameter_layout(ArchVariant variant);

template <typename T>
struct ModelWeights {
  ArchVariant variant = ArchVariant::kUAttention;
  std::int64_t input_hw = 128;
  ParamMap<T> params;

  const Tensor<T>& at(const std::string& name) const;
  std::int64_t parameter_count() const;
  TransformerLayerParams<T> layer(int block, int layer) const;
  ConvPair<T> pair(const std::string& prefix) const;
};

/// He-style uniform init U(-b, b), b = sqrt(6 / fan_in), from SplitMix64
/// streams derived from (seed, parameter name). Biases and norm shifts are 0,
/// norm gains 1. Same seed gives bit-identical weights.
template <typename T>
ModelWeights<T> build_model(ArchVariant variant, std::int64_t input_hw, std::uint64_t seed);

/// Throws ShapeError if weights do not carry exactly the variant's layout.
template <typename T>
void validate_weights(const ModelWeights<T>& weights);

// ---- building blocks (batched [N, C, H, W] feature maps) -------------------

/// Single-head patch self-attention on a feature map: 1x1 query/key/value
/// projections, patches flattened to rows of length d, softmax(QK^T/sqrt(d))V,
/// re-assembled and passed through the 1x1 output projection. When
/// attention_out is given it receives the [N, P^2, P^2] weights.
template <typename T>
Tensor<T> attention_map(const Tensor<T>& map, const AttentionParams<T>& params,
                        std::int64_t parts, Tensor<T>* attention_out = nullptr);

/// Same operation on an explicit patch sequence of one map.
template <typename T>
PatchSequence<T> self_attention(const PatchSequence<T>& seq, const AttentionParams<T>& params,
                                Tensor<T>* attention_out = nullptr);

/// Post-norm layer: x1 = norm(x + attn(x)); out = norm(x1 + ffn(x1)), the
/// feed-forward being a k x k conv + LeakyReLU applied per patch.
template <typename T>
Tensor<T> transformer_layer(const Tensor<T>& map, const StageSpec& stage,
                            const TransformerLayerParams<T>& params, int ffn_kernel,
                            Tensor<T>* attention_out = nullptr);

template <typename T>
Tensor<T> t_block(const Tensor<T>& map, const StageSpec& stage,
                  const TransformerLayerParams<T>& first, const TransformerLayerParams<T>& second,
                  int ffn_kernel, Tensor<T>* first_attention = nullptr,
                  Tensor<T>* second_attention = nullptr);

/// 4x4 stride-2 conv (C -> 4C) then 1x1, both LeakyReLU.
template <typename T>
Tensor<T> conv_down(const Tensor<T>& map, const ConvPair<T>& p);
/// Bilinear 2x, then 1x1 (C -> C/4) and 1x1, both LeakyReLU.
template <typename T>
Tensor<T> conv_up(const Tensor<T>& map, const ConvPair<T>& p);
/// Channel concat, 1x1 halving channels, 1x1 preserving, both LeakyReLU.
template <typename T>
Tensor<T> conv_fuse(const Tensor<T>& skip, const Tensor<T>& upsampled, const ConvPair<T>& p);
/// 3x3 conv 3 -> 16 then 1x1, both LeakyReLU.
template <typename T>
Tensor<T> encode(const Tensor<T>& image, const ConvPair<T>& p);
/// 3x3 conv 16 -> 3 with LeakyReLU, then 1x1 with Tanh.
template <typename T>
Tensor<T> decode(const Tensor<T>& features, const ConvPair<T>& p);

// ---- full network ------------------------------------------------------------

template <typename T>
struct AttentionCapture {
  int block = 0;  // 1-based
  int layer = 0;  // 0 or 1 inside the block
  StageSpec stage;
  Tensor<T> weights;      // [N, P^2, P^2], the matrices used in the forward pass
  Tensor<T> block_input;  // [N, C, H, W] map entering the block (detached)
};

template <typename T>
struct ForwardTrace {
  bool capture_attention = true;
  std::vector<AttentionCapture<T>> attention;
  /// (label, shape) for each intermediate, e.g. ("T-Block2/partition", [16,64,16,16]).
  std::vector<std::pair<std::string, Shape>> shapes;
};

/// images: [N, 3, S, S] or [3, S, S] with S divisible by 32. Returns the same
/// layout with values in (-1, 1).
template <typename T>
Tensor<T> forward(const Tensor<T>& images, const ModelWeights<T>& weights,
                  ForwardTrace<T>* trace = nullptr);

}  // namespace uattn
