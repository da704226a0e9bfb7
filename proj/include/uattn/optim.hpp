// Copyright 2026 The U-Attention Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "uattn/tensor.hpp"

namespace uattn {

template <typename T>
using ParamMap = std::map<std::string, Tensor<T>>;

// ---- spectral normalization ------------------------------------------------

/// Left singular vector estimate for one weight, persisted across steps.
template <typename T>
struct SpectralState {
  std::vector<T> u;

  /// Random unit vector of length rows drawn from SplitMix64(seed).
  static SpectralState init(std::int64_t rows, std::uint64_t seed);
};

/// Weight viewed as a matrix: leading dim x product of the trailing dims.
struct MatrixView {
  std::int64_t rows;
  std::int64_t cols;
};
MatrixView matrix_view(const Shape& shape);

/// Runs `iters` power iterations from state.u (updating it in place) and
/// returns the top singular value estimate. Throws NumericError when the
/// matrix is zero.
template <typename T>
double power_iterate(const Tensor<T>& weight, SpectralState<T>& state, int iters);

/// Singular value estimate from the current state.u without updating it.
template <typename T>
double spectral_sigma(const Tensor<T>& weight, const SpectralState<T>& state);

/// weight / sigma, where sigma comes from `iters` power iterations. sigma is
/// treated as a constant, so the gradient w.r.t. weight is grad / sigma.
template <typename T>
Tensor<T> spectral_normalize(const Tensor<T>& weight, SpectralState<T>& state, int iters);

// ---- Adam -------------------------------------------------------------------

struct AdamConfig {
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename T>
struct AdamState {
  std::int64_t step_count = 0;
  std::map<std::string, std::vector<T>> m;
  std::map<std::string, std::vector<T>> v;
};

/// One Adam update with bias correction on a single parameter buffer. The
/// caller increments the step count; `step` is the 1-based index of this step.
template <typename T>
void adam_update(std::vector<T>& param, const std::vector<T>& grad, std::vector<T>& m,
                 std::vector<T>& v, std::int64_t step, const AdamConfig& cfg);

/// Applies one Adam step to every parameter using its accumulated gradient
/// (missing gradients count as zero). Throws NumericError, leaving all
/// parameters and moments untouched, when any gradient is non-finite.
template <typename T>
void adam_step(ParamMap<T>& params, AdamState<T>& state, const AdamConfig& cfg);

template <typename T>
void zero_grads(ParamMap<T>& params);

}  // namespace uattn
