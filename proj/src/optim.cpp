// Copyright 2026 The U-Attention Authors
// SPDX-License-Identifier: Apache-2.0

#include "uattn/optim.hpp"

#include <cmath>

#include "uattn/ops.hpp"
#include "uattn/rng.hpp"

namespace uattn {

template <typename T>
SpectralState<T> SpectralState<T>::init(std::int64_t rows, std::uint64_t seed) {
  SplitMix64 rng(seed);
  std::vector<double> u(static_cast<std::size_t>(rows));
  double norm = 0.0;
  for (auto& x : u) {
    x = rng.uniform(-1.0, 1.0);
    norm += x * x;
  }
  norm = std::sqrt(norm);
  SpectralState s;
  s.u.resize(u.size());
  for (std::size_t i = 0; i < u.size(); ++i) s.u[i] = static_cast<T>(u[i] / norm);
  return s;
}

MatrixView matrix_view(const Shape& shape) {
  if (shape.empty()) throw ShapeError("matrix_view: empty shape");
  return {shape[0], numel(shape) / shape[0]};
}

namespace {

template <typename T>
double norm2(const std::vector<double>& x) {
  double s = 0.0;
  for (double v : x) s += v * v;
  return std::sqrt(s);
}

// v = normalize(M^T u); returns ||M v|| and writes M v into mv.
template <typename T>
double half_iteration(const T* w, MatrixView mv_shape, const std::vector<double>& u,
                      std::vector<double>& mv) {
  const auto rows = mv_shape.rows, cols = mv_shape.cols;
  std::vector<double> v(static_cast<std::size_t>(cols), 0.0);
  for (std::int64_t r = 0; r < rows; ++r) {
    const double ur = u[static_cast<std::size_t>(r)];
    const T* row = w + r * cols;
    for (std::int64_t c = 0; c < cols; ++c) v[static_cast<std::size_t>(c)] += ur * row[c];
  }
  const double vn = norm2<T>(v);
  if (vn == 0.0 || !std::isfinite(vn)) {
    throw NumericError("spectral normalization of a zero (or non-finite) weight matrix");
  }
  for (auto& x : v) x /= vn;
  mv.assign(static_cast<std::size_t>(rows), 0.0);
  for (std::int64_t r = 0; r < rows; ++r) {
    const T* row = w + r * cols;
    double acc = 0.0;
    for (std::int64_t c = 0; c < cols; ++c) acc += row[c] * v[static_cast<std::size_t>(c)];
    mv[static_cast<std::size_t>(r)] = acc;
  }
  const double sigma = norm2<T>(mv);
  if (sigma == 0.0) throw NumericError("spectral normalization: estimated sigma is zero");
  return sigma;
}

}  // namespace

template <typename T>
double power_iterate(const Tensor<T>& weight, SpectralState<T>& state, int iters) {
  const auto view = matrix_view(weight.shape());
  if (static_cast<std::int64_t>(state.u.size()) != view.rows) {
    throw ShapeError("spectral state length does not match weight rows");
  }
  if (iters < 1) throw ConfigError("power iteration count must be at least 1");
  std::vector<double> u(state.u.begin(), state.u.end());
  std::vector<double> mv;
  double sigma = 0.0;
  for (int it = 0; it < iters; ++it) {
    sigma = half_iteration(weight.data().data(), view, u, mv);
    for (std::size_t i = 0; i < u.size(); ++i) u[i] = mv[i] / sigma;
  }
  for (std::size_t i = 0; i < u.size(); ++i) state.u[i] = static_cast<T>(u[i]);
  return sigma;
}

template <typename T>
double spectral_sigma(const Tensor<T>& weight, const SpectralState<T>& state) {
  const auto view = matrix_view(weight.shape());
  if (static_cast<std::int64_t>(state.u.size()) != view.rows) {
    throw ShapeError("spectral state length does not match weight rows");
  }
  std::vector<double> u(state.u.begin(), state.u.end());
  std::vector<double> mv;
  return half_iteration(weight.data().data(), view, u, mv);
}

template <typename T>
Tensor<T> spectral_normalize(const Tensor<T>& weight, SpectralState<T>& state, int iters) {
  const double sigma = power_iterate(weight, state, iters);
  return ops::scale(weight, static_cast<T>(1.0 / sigma));
}

template <typename T>
void adam_update(std::vector<T>& param, const std::vector<T>& grad, std::vector<T>& m,
                 std::vector<T>& v, std::int64_t step, const AdamConfig& cfg) {
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = grad[i];
    const double mi = cfg.beta1 * static_cast<double>(m[i]) + (1.0 - cfg.beta1) * g;
    const double vi = cfg.beta2 * static_cast<double>(v[i]) + (1.0 - cfg.beta2) * g * g;
    m[i] = static_cast<T>(mi);
    v[i] = static_cast<T>(vi);
    const double mhat = mi / bc1;
    const double vhat = vi / bc2;
    param[i] = static_cast<T>(static_cast<double>(param[i]) -
                              cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps));
  }
}

template <typename T>
void adam_step(ParamMap<T>& params, AdamState<T>& state, const AdamConfig& cfg) {
  for (auto& [name, p] : params) {
    if (!p.has_grad()) continue;
    for (const T g : p.node()->grad) {
      if (!std::isfinite(g)) throw NumericError("non-finite gradient for parameter " + name);
    }
  }
  const std::int64_t step = state.step_count + 1;
  for (auto& [name, p] : params) {
    auto& m = state.m[name];
    auto& v = state.v[name];
    if (m.empty()) m.assign(static_cast<std::size_t>(p.numel()), T(0));
    if (v.empty()) v.assign(static_cast<std::size_t>(p.numel()), T(0));
    if (static_cast<std::int64_t>(m.size()) != p.numel()) {
      throw ShapeError("Adam moment shape disagrees with parameter " + name);
    }
    auto& data = p.node()->data;
    const std::vector<T> grad = p.grad();
    adam_update(data, grad, m, v, step, cfg);
  }
  state.step_count = step;
}

template <typename T>
void zero_grads(ParamMap<T>& params) {
  for (auto& [name, p] : params) p.zero_grad();
}

template struct SpectralState<float>;
template struct SpectralState<double>;
template double power_iterate(const Tensor<float>&, SpectralState<float>&, int);
template double power_iterate(const Tensor<double>&, SpectralState<double>&, int);
template double spectral_sigma(const Tensor<float>&, const SpectralState<float>&);
template double spectral_sigma(const Tensor<double>&, const SpectralState<double>&);
template Tensor<float> spectral_normalize(const Tensor<float>&, SpectralState<float>&, int);
template Tensor<double> spectral_normalize(const Tensor<double>&, SpectralState<double>&, int);
template void adam_update(std::vector<float>&, const std::vector<float>&, std::vector<float>&,
                          std::vector<float>&, std::int64_t, const AdamConfig&);
template void adam_update(std::vector<double>&, const std::vector<double>&,
                          std::vector<double>&, std::vector<double>&, std::int64_t,
                          const AdamConfig&);
template void adam_step(ParamMap<float>&, AdamState<float>&, const AdamConfig&);
template void adam_step(ParamMap<double>&, AdamState<double>&, const AdamConfig&);
template void zero_grads(ParamMap<float>&);
template void zero_grads(ParamMap<double>&);

}  // namespace uattn
