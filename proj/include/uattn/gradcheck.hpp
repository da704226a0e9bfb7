// Copyright 2026 The U-Attention Authors
// SPDX-License-Identifier: Apache-2.0
//
// Finite-difference verification of the reverse-mode gradients: a registry
// of per-op checks in 64-bit and a sampled full-network check whose analytic
// side runs in 32-bit.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "uattn/model.hpp"

namespace uattn {

/// |a - n| / max(|a|, |n|, floor).
double relative_error(double analytic, double numeric, double floor = 1e-3);

struct GradcheckConfig {
  double tol = 1e-4;
  double step = 1e-5;
  std::uint64_t seed = 7;
};

struct GradcheckReport {
  std::string name;
  double worst_error = 0.0;
  std::int64_t entries = 0;  // gradient entries compared
  bool passed = false;
};

/// Names of every registered differentiable op, in report order.
const std::vector<std::string>& gradcheck_op_names();

/// Checks the named ops (all when empty). Throws ConfigError for an unknown name.
std::vector<GradcheckReport> run_gradcheck(const std::vector<std::string>& names,
                                           const GradcheckConfig& config = {});

struct NetworkGradcheckConfig {
  ArchVariant variant = ArchVariant::kUAttention;
  std::int64_t input_hw = 32;
  double fraction = 0.01;  // share of each parameter tensor that is sampled
  double step = 1e-6;
  double floor = 1e-3;     // relative-error floor, scaled by the largest |gradient|
  std::uint64_t seed = 11;
};

struct NetworkGradcheckReport {
  std::int64_t sampled = 0;
  double worst_error = 0.0;
  std::string worst_parameter;
  std::int64_t worst_index = 0;
  double max_abs_gradient = 0.0;
};

/// Analytic gradients of a smooth scalar loss from the 32-bit graph against
/// central differences of the same loss evaluated in 64-bit with the same
/// weights. Only the layers downstream of a perturbed parameter are rerun.
NetworkGradcheckReport network_gradcheck(const NetworkGradcheckConfig& config = {});

}  // namespace uattn
