// Copyright 2026 The U-Attention Authors
// SPDX-License-Identifier: Apache-2.0
//
// Differentiable operations. Every function here records a backward closure
// when gradient mode is on and an input requires gradients. Layouts are
// row-major: images are [N, C, H, W], volumes [N, C, T, H, W].

#pragma once

#include <cstdint>

#include "uattn/tensor.hpp"

namespace uattn::ops {

// ---- elementwise ----------------------------------------------------------

template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> scale(const Tensor<T>& x, T factor);
template <typename T> Tensor<T> add_scalar(const Tensor<T>& x, T value);
template <typename T> Tensor<T> abs(const Tensor<T>& x);
template <typename T> Tensor<T> relu(const Tensor<T>& x);

/// max(x, alpha*x) for alpha in (0, 1). The derivative at exactly 0 is 1.
template <typename T> Tensor<T> leaky_relu(const Tensor<T>& x, T alpha = T(0.2));
template <typename T> Tensor<T> tanh(const Tensor<T>& x);

enum class Pointwise { kLeakyRelu, kTanh };
template <typename T> Tensor<T> pointwise(const Tensor<T>& x, Pointwise kind);

// ---- reductions & reshaping ----------------------------------------------

/// Sum of all elements, shape [1]. Accumulates in double.
template <typename T> Tensor<T> sum(const Tensor<T>& x);
template <typename T> Tensor<T> mean(const Tensor<T>& x);

template <typename T> Tensor<T> reshape(const Tensor<T>& x, Shape shape);

/// Concatenates two [N, C, H, W] tensors along channels.
template <typename T> Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b);

/// Window [y0, y0+h) x [x0, x0+w) of a [N, C, H, W] tensor.
template <typename T>
Tensor<T> crop(const Tensor<T>& x, std::int64_t y0, std::int64_t x0, std::int64_t h,
               std::int64_t w);

/// [B, C, H, W] -> [1, C, B, H, W]: the batch axis becomes the temporal axis.
template <typename T> Tensor<T> batch_to_time(const Tensor<T>& x);

// ---- convolution & resampling --------------------------------------------

/// 2D cross-correlation. input [N, C, H, W], weight [Co, C, k, k], bias [Co].
/// Output extent floor((H + 2*pad - k)/stride) + 1.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                 int stride = 1, int pad = 0);

/// 3D cross-correlation with stride 1. input [N, C, D, H, W],
/// weight [Co, C, k, k, k], bias [Co].
template <typename T>
Tensor<T> conv3d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                 int pad = 1);

/// Bilinear 2x upsampling, half-pixel centers, clamped at the border.
template <typename T> Tensor<T> bilinear_upsample_2x(const Tensor<T>& input);

// ---- linear algebra & attention ------------------------------------------

/// [M, K] x [K, N] -> [M, N].
template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

/// Batched product. a [B, M, K]; b [B, K, N], or [B, N, K] when transpose_b.
template <typename T>
Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b, bool transpose_b = false);

/// Softmax along the last axis, stabilized by subtracting the row maximum.
template <typename T> Tensor<T> softmax_rows(const Tensor<T>& x);

/// Per-location normalization over the channel axis of [N, C, H, W], followed
/// by a per-channel affine map.
template <typename T>
Tensor<T> layer_norm_channels(const Tensor<T>& x, const Tensor<T>& gain,
                              const Tensor<T>& bias, T eps = T(1e-5));

/// [N, C, H, W] -> [N, P*P, C, H/P, W/P], patches in row-major order.
template <typename T> Tensor<T> patchify(const Tensor<T>& x, std::int64_t parts);

/// Inverse of patchify: [N, P*P, C, h, w] -> [N, C, P*h, P*w].
template <typename T> Tensor<T> unpatchify(const Tensor<T>& x, std::int64_t parts);

/// Gram matrices F F^T / (C*H*W) of [N, C, H, W] features -> [N, C, C].
template <typename T> Tensor<T> gram(const Tensor<T>& features);

}  // namespace uattn::ops
