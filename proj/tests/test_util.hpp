// Copyright 2026 The U-Attention Authors
// SPDX-License-Identifier: Apache-2.0
//
// Shared helpers for the unit tests: seeded random tensors and a central
// finite-difference gradient oracle in 64-bit.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "uattn/rng.hpp"
#include "uattn/tensor.hpp"

namespace uattn::testing {

template <typename T>
Tensor<T> random_tensor(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0,
                        bool requires_grad = false) {
  SplitMix64 rng(seed);
  std::vector<T> values(static_cast<std::size_t>(numel(shape)));
  for (auto& v : values) v = static_cast<T>(rng.uniform(lo, hi));
  return Tensor<T>::from_data(std::move(shape), std::move(values), requires_grad);
}

/// Worst |a - n| / max(|a|, |n|, floor) between the analytic gradient of
/// loss(x) and central differences, over every entry of x.
inline double fd_worst_error(const std::function<TensorD(const TensorD&)>& loss, TensorD x,
                             double h = 1e-6, double floor = 1e-6) {
  x.set_requires_grad(true);
  x.zero_grad();
  loss(x).backward();
  const std::vector<double> analytic = x.grad();
  double worst = 0.0;
  auto values = x.mutable_data();
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double saved = values[i];
    values[i] = saved + h;
    const double up = loss(x.detach()).item();
    values[i] = saved - h;
    const double down = loss(x.detach()).item();
    values[i] = saved;
    const double numeric = (up - down) / (2.0 * h);
    const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), floor});
    worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
  }
  return worst;
}

/// Fresh empty directory under the system temp dir, unique per test name.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("uattn_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace uattn::testing
