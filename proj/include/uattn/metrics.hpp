// Copyright 2026 The U-Attention Authors
// SPDX-License-Identifier: Apache-2.0
//
// Evaluation metrics, the naive tiling baseline and attention-map rendering.
// Images are [3, H, W] tensors in [-1, 1].

#pragma once

#include <cstdint>
#include <vector>

#include "uattn/data.hpp"
#include "uattn/losses.hpp"
#include "uattn/model.hpp"

namespace uattn {

struct SsimParams {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
};

/// Normalized 1-D Gaussian taps of the SSIM window.
std::vector<double> gaussian_taps(int size, double sigma);

/// Mean SSIM over all valid window positions and channels, computed on the
/// images mapped to [0, 1]. Throws ShapeError on mismatched shapes or images
/// smaller than the window.
double ssim(const TensorF& a, const TensorF& b, const SsimParams& params = {});

/// Mean perceptual distance over n_crops aligned crops of side crop_frac * S
/// whose positions are drawn from `seed`.
double crop_feature_distance(const FrozenExtractor& extractor, const TensorF& a,
                             const TensorF& b, int n_crops = 8, double crop_frac = 0.5,
                             std::uint64_t seed = 0);

/// The known S/2 x S/2 centre crop repeated 2 x 2.
TensorF naive_tile(const TexturePair& pair);

struct AttentionRecord {
  int stage = 0;  // 1-based Transformer block
  StageSpec geometry;
  int row = 0, col = 0;         // output patch whose attention is reported
  TensorF matrix;               // [P^2, P^2] weights of the first layer
  std::vector<double> weights;  // matrix row for (row, col)
  TensorF block_input;          // [C, H, W] features entering the block
};

/// Captures attention during a forward pass of one [3, S, S] image and
/// returns the row for patch (row, col) of the given block. Throws
/// ConfigError for a stage or patch index out of range.
AttentionRecord extract_attention(const ModelWeights<float>& gen, const TensorF& image, int stage,
                                  int row = 0, int col = 0);

/// Channel mean of the block input, min-max scaled to [-1, 1], replicated to
/// three channels and enlarged by nearest neighbour to out_size.
TensorF attention_base_image(const AttentionRecord& record, std::int64_t out_size);

/// Base image with a red tint per patch proportional to weight / max weight,
/// black grid lines on rows and columns at multiples of H/P and W/P, and a
/// white outline around the reported patch.
TensorF render_attention_overlay(const AttentionRecord& record, const TensorF& base);

}  // namespace uattn
