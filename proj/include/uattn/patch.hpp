// Copyright 2026 The U-Attention Authors
// SPDX-License-Identifier: Apache-2.0
//
// Patch partitioning of feature maps and the five-stage hourglass schedule.

#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "uattn/tensor.hpp"

namespace uattn {

/// Geometry of one Transformer stage.
struct StageSpec {
  int index = 0;  // 1-based stage number
  std::int64_t height = 0;
  std::int64_t width = 0;
  std::int64_t channels = 0;
  std::int64_t parts = 1;  // partitions per spatial dimension
  std::int64_t input_hw = 0;  // image side the stage belongs to

  std::int64_t patch_height() const { return height / parts; }
  std::int64_t patch_width() const { return width / parts; }
  std::int64_t sequence_length() const { return parts * parts; }
  /// Flattened patch length d = (H/P)(W/P)C.
  std::int64_t patch_length() const { return patch_height() * patch_width() * channels; }
  /// Patch side measured in input-image pixels.
  double footprint() const {
    return static_cast<double>(patch_height()) * static_cast<double>(input_hw) /
           static_cast<double>(height);
  }

  bool operator==(const StageSpec&) const = default;
};

/// P^2 patches of one feature map, stored stacked as [P*P, C, H/P, W/P] in
/// row-major patch order (left to right, top to bottom).
template <typename T>
struct PatchSequence {
  Tensor<T> patches;
  std::int64_t parts = 1;

  std::int64_t count() const { return patches.dim(0); }
  /// Copy of patch k as [C, h, w].
  Tensor<T> patch(std::int64_t k) const;
};

/// Tiles a [C, H, W] map into P x P patches. Throws ShapeError unless P
/// divides H and W.
template <typename T>
PatchSequence<T> partition(const Tensor<T>& map, std::int64_t parts);

/// Exact inverse of partition.
template <typename T>
Tensor<T> arrange_back(const PatchSequence<T>& seq);

/// Builds a sequence from individual [C, h, w] patches; all must agree in
/// shape and their count must be a perfect square.
template <typename T>
PatchSequence<T> sequence_from_patches(const std::vector<Tensor<T>>& patches);

/// Stages (H, C, P) = (S,16,2), (S/2,64,4), (S/4,256,8), (S/2,64,4), (S,16,2)
/// for S = input_hw and base_channels = 16.
std::array<StageSpec, 5> hourglass_schedule(std::int64_t input_hw,
                                            std::int64_t base_channels = 16);

}  // namespace uattn
