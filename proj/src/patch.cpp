// Copyright 2026 The U-Attention Authors
// SPDX-License-Identifier: Apache-2.0

#include "uattn/patch.hpp"

#include <cmath>

#include "uattn/ops.hpp"

namespace uattn {

template <typename T>
Tensor<T> PatchSequence<T>::patch(std::int64_t k) const {
  if (k < 0 || k >= count()) throw ShapeError("patch index out of range");
  const auto& s = patches.shape();
  const std::int64_t len = s[1] * s[2] * s[3];
  std::vector<T> out(patches.data().begin() + k * len, patches.data().begin() + (k + 1) * len);
  return Tensor<T>::from_data({s[1], s[2], s[3]}, std::move(out));
}

template <typename T>
PatchSequence<T> partition(const Tensor<T>& map, std::int64_t parts) {
  if (map.rank() != 3) throw ShapeError("partition: expects a [C,H,W] map");
  const auto batched = ops::reshape(map, {1, map.dim(0), map.dim(1), map.dim(2)});
  const auto p = ops::patchify(batched, parts);
  PatchSequence<T> seq;
  seq.parts = parts;
  seq.patches = ops::reshape(p, {p.dim(1), p.dim(2), p.dim(3), p.dim(4)});
  return seq;
}

template <typename T>
Tensor<T> arrange_back(const PatchSequence<T>& seq) {
  const auto& s = seq.patches.shape();
  if (s.size() != 4 || s[0] != seq.parts * seq.parts) {
    throw ShapeError("arrange_back: inconsistent patch sequence " + to_string(s));
  }
  const auto batched = ops::reshape(seq.patches, {1, s[0], s[1], s[2], s[3]});
  const auto map = ops::unpatchify(batched, seq.parts);
  return ops::reshape(map, {map.dim(1), map.dim(2), map.dim(3)});
}

template <typename T>
PatchSequence<T> sequence_from_patches(const std::vector<Tensor<T>>& patches) {
  if (patches.empty()) throw ShapeError("empty patch list");
  const auto parts = static_cast<std::int64_t>(std::llround(std::sqrt(patches.size())));
  if (parts * parts != static_cast<std::int64_t>(patches.size())) {
    throw ShapeError("patch count " + std::to_string(patches.size()) + " is not a square");
  }
  const Shape& first = patches.front().shape();
  if (first.size() != 3) throw ShapeError("patches must be [C,h,w]");
  std::vector<T> data;
  data.reserve(patches.size() * static_cast<std::size_t>(numel(first)));
  for (const auto& p : patches) {
    if (p.shape() != first) {
      throw ShapeError("inconsistent patch shapes " + to_string(first) + " vs " +
                       to_string(p.shape()));
    }
    data.insert(data.end(), p.data().begin(), p.data().end());
  }
  PatchSequence<T> seq;
  seq.parts = parts;
  seq.patches = Tensor<T>::from_data({parts * parts, first[0], first[1], first[2]},
                                     std::move(data));
  return seq;
}

std::array<StageSpec, 5> hourglass_schedule(std::int64_t input_hw, std::int64_t base_channels) {
  if (input_hw <= 0 || input_hw % 32 != 0) {
    throw ShapeError("hourglass schedule needs an input size divisible by 32, got " +
                     std::to_string(input_hw));
  }
  if (base_channels <= 0) throw ShapeError("base channel count must be positive");
  // Level 0 is the outer (coarse-partition) stage, level 2 the bottleneck.
  constexpr std::array<int, 5> kLevel = {0, 1, 2, 1, 0};
  std::array<StageSpec, 5> out{};
  for (int i = 0; i < 5; ++i) {
    const int level = kLevel[static_cast<std::size_t>(i)];
    StageSpec s;
    s.index = i + 1;
    s.height = input_hw >> level;
    s.width = s.height;
    s.channels = base_channels << (2 * level);
    s.parts = std::int64_t{2} << level;
    s.input_hw = input_hw;
    out[static_cast<std::size_t>(i)] = s;
  }
  return out;
}

template struct PatchSequence<float>;
template struct PatchSequence<double>;
template PatchSequence<float> partition(const Tensor<float>&, std::int64_t);
template PatchSequence<double> partition(const Tensor<double>&, std::int64_t);
template Tensor<float> arrange_back(const PatchSequence<float>&);
template Tensor<double> arrange_back(const PatchSequence<double>&);
template PatchSequence<float> sequence_from_patches(const std::vector<Tensor<float>>&);
template PatchSequence<double> sequence_from_patches(const std::vector<Tensor<double>>&);

}  // namespace uattn
