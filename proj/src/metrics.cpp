// Copyright 2026 The U-Attention Authors
// SPDX-License-Identifier: Apache-2.0

#include "uattn/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "uattn/ops.hpp"
#include "uattn/rng.hpp"

namespace uattn {

std::vector<double> gaussian_taps(int size, double sigma) {
  std::vector<double> taps(static_cast<std::size_t>(size));
  const double c = (size - 1) / 2.0;
  double total = 0.0;
  for (int i = 0; i < size; ++i) {
    const double d = i - c;
    taps[static_cast<std::size_t>(i)] = std::exp(-d * d / (2.0 * sigma * sigma));
    total += taps[static_cast<std::size_t>(i)];
  }
  for (auto& t : taps) t /= total;
  return taps;
}

namespace {

// Valid-mode separable filtering of an h x w plane.
std::vector<double> filter_valid(const std::vector<double>& src, std::int64_t h, std::int64_t w,
                                 const std::vector<double>& taps) {
  const auto k = static_cast<std::int64_t>(taps.size());
  const auto ow = w - k + 1, oh = h - k + 1;
  std::vector<double> rows(static_cast<std::size_t>(h * ow));
  for (std::int64_t y = 0; y < h; ++y) {
    for (std::int64_t x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (std::int64_t i = 0; i < k; ++i) {
        acc += taps[static_cast<std::size_t>(i)] * src[static_cast<std::size_t>(y * w + x + i)];
      }
      rows[static_cast<std::size_t>(y * ow + x)] = acc;
    }
  }
  std::vector<double> out(static_cast<std::size_t>(oh * ow));
  for (std::int64_t y = 0; y < oh; ++y) {
    for (std::int64_t x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (std::int64_t i = 0; i < k; ++i) {
        acc += taps[static_cast<std::size_t>(i)] * rows[static_cast<std::size_t>((y + i) * ow + x)];
      }
      out[static_cast<std::size_t>(y * ow + x)] = acc;
    }
  }
  return out;
}

void require_image(const TensorF& t, const char* what) {
  if (t.rank() != 3) {
    throw ShapeError(std::string(what) + " expects a [C,H,W] image, got " + to_string(t.shape()));
  }
}

}  // namespace

double ssim(const TensorF& a, const TensorF& b, const SsimParams& params) {
  require_image(a, "ssim");
  if (a.shape() != b.shape()) {
    throw ShapeError("ssim: shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
  const auto c = a.dim(0), h = a.dim(1), w = a.dim(2);
  if (h < params.window || w < params.window) {
    throw ShapeError("ssim: image smaller than the " + std::to_string(params.window) + "px window");
  }
  const auto taps = gaussian_taps(params.window, params.sigma);
  const double c1 = (params.k1) * (params.k1);
  const double c2 = (params.k2) * (params.k2);
  const auto plane = static_cast<std::size_t>(h * w);
  double total = 0.0;
  std::size_t count = 0;
  for (std::int64_t ch = 0; ch < c; ++ch) {
    std::vector<double> x(plane), y(plane), xx(plane), yy(plane), xy(plane);
    for (std::size_t i = 0; i < plane; ++i) {
      const double u = (static_cast<double>(a.data()[ch * plane + i]) + 1.0) * 0.5;
      const double v = (static_cast<double>(b.data()[ch * plane + i]) + 1.0) * 0.5;
      x[i] = u;
      y[i] = v;
      xx[i] = u * u;
      yy[i] = v * v;
      xy[i] = u * v;
    }
    const auto mx = filter_valid(x, h, w, taps);
    const auto my = filter_valid(y, h, w, taps);
    const auto sxx = filter_valid(xx, h, w, taps);
    const auto syy = filter_valid(yy, h, w, taps);
    const auto sxy = filter_valid(xy, h, w, taps);
    for (std::size_t i = 0; i < mx.size(); ++i) {
      const double vx = sxx[i] - mx[i] * mx[i];
      const double vy = syy[i] - my[i] * my[i];
      const double cov = sxy[i] - mx[i] * my[i];
      total += ((2.0 * mx[i] * my[i] + c1) * (2.0 * cov + c2)) /
               ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
    }
    count += mx.size();
  }
  return total / static_cast<double>(count);
}

double crop_feature_distance(const FrozenExtractor& extractor, const TensorF& a, const TensorF& b,
                             int n_crops, double crop_frac, std::uint64_t seed) {
  require_image(a, "crop_feature_distance");
  if (a.shape() != b.shape()) throw ShapeError("crop_feature_distance: shape mismatch");
  if (n_crops < 1) throw ConfigError("crop_feature_distance needs at least one crop");
  if (!(crop_frac > 0.0) || crop_frac > 1.0) {
    throw ShapeError("crop_feature_distance: crop larger than the image");
  }
  const auto h = a.dim(1), w = a.dim(2);
  const auto ch = static_cast<std::int64_t>(std::floor(static_cast<double>(h) * crop_frac));
  const auto cw = static_cast<std::int64_t>(std::floor(static_cast<double>(w) * crop_frac));
  if (ch < 8 || cw < 8) throw ShapeError("crop_feature_distance: crops below 8 pixels");
  NoGradGuard guard;
  const auto ad = ops::reshape(cast<double>(a), {1, a.dim(0), h, w});
  const auto bd = ops::reshape(cast<double>(b), {1, b.dim(0), h, w});
  SplitMix64 rng(seed);
  double total = 0.0;
  for (int i = 0; i < n_crops; ++i) {
    const auto y0 = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(h - ch + 1)));
    const auto x0 = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(w - cw + 1)));
    const auto ca = ops::crop(ad, y0, x0, ch, cw);
    const auto cb = ops::crop(bd, y0, x0, ch, cw);
    total += perceptual_loss(extractor, ca, cb).item();
  }
  return total / n_crops;
}

TensorF naive_tile(const TexturePair& pair) {
  const auto& in = pair.input;
  if (in.rank() != 3 || in.dim(1) != in.dim(2) || in.dim(1) % 4 != 0) {
    throw ShapeError("naive_tile expects a square [C,S,S] pair with S divisible by 4");
  }
  const auto c = in.dim(0), s = in.dim(1), half = s / 2, lo = s / 4;
  std::vector<float> out(static_cast<std::size_t>(c * s * s));
  const auto src = in.data();
  for (std::int64_t ch = 0; ch < c; ++ch) {
    for (std::int64_t y = 0; y < s; ++y) {
      for (std::int64_t x = 0; x < s; ++x) {
        out[static_cast<std::size_t>((ch * s + y) * s + x)] =
            src[static_cast<std::size_t>((ch * s + lo + y % half) * s + lo + x % half)];
      }
    }
  }
  return TensorF::from_data({c, s, s}, std::move(out));
}

AttentionRecord extract_attention(const ModelWeights<float>& gen, const TensorF& image, int stage,
                                  int row, int col) {
  require_image(image, "extract_attention");
  const auto plan = block_plan(gen.variant, image.dim(1));
  if (stage < 1 || stage > static_cast<int>(plan.size())) {
    throw ConfigError("stage " + std::to_string(stage) + " out of range 1.." +
                      std::to_string(plan.size()));
  }
  const auto parts = plan[static_cast<std::size_t>(stage - 1)].stage.parts;
  if (row < 0 || col < 0 || row >= parts || col >= parts) {
    throw ConfigError("patch (" + std::to_string(row) + "," + std::to_string(col) +
                      ") outside the " + std::to_string(parts) + "x" + std::to_string(parts) +
                      " partition");
  }
  NoGradGuard guard;
  ForwardTrace<float> trace;
  trace.capture_attention = true;
  forward(image, gen, &trace);
  for (const auto& cap : trace.attention) {
    if (cap.block != stage || cap.layer != 0) continue;
    AttentionRecord rec;
    rec.stage = stage;
    rec.geometry = cap.stage;
    rec.row = row;
    rec.col = col;
    const auto n = cap.weights.dim(1);
    rec.matrix = ops::reshape(cap.weights, {n, n});
    const auto r = static_cast<std::int64_t>(row) * parts + col;
    for (std::int64_t j = 0; j < n; ++j) {
      rec.weights.push_back(static_cast<double>(rec.matrix.data()[static_cast<std::size_t>(r * n + j)]));
    }
    const auto& bi = cap.block_input;
    rec.block_input = ops::reshape(bi, {bi.dim(1), bi.dim(2), bi.dim(3)});
    return rec;
  }
  throw Error("forward pass captured no attention for stage " + std::to_string(stage));
}

TensorF attention_base_image(const AttentionRecord& record, std::int64_t out_size) {
  const auto& f = record.block_input;
  const auto c = f.dim(0), h = f.dim(1), w = f.dim(2);
  if (out_size < h || out_size % h != 0 || h != w) {
    throw ShapeError("attention base size must be a multiple of the feature map size");
  }
  std::vector<double> mean(static_cast<std::size_t>(h * w), 0.0);
  for (std::int64_t ch = 0; ch < c; ++ch) {
    for (std::int64_t i = 0; i < h * w; ++i) {
      mean[static_cast<std::size_t>(i)] += f.data()[static_cast<std::size_t>(ch * h * w + i)];
    }
  }
  const auto [lo, hi] = std::minmax_element(mean.begin(), mean.end());
  const double span = *hi - *lo;
  const auto scale = out_size / h;
  std::vector<float> out(static_cast<std::size_t>(3 * out_size * out_size));
  for (std::int64_t y = 0; y < out_size; ++y) {
    for (std::int64_t x = 0; x < out_size; ++x) {
      const double m = mean[static_cast<std::size_t>((y / scale) * w + x / scale)];
      const auto v = static_cast<float>(span > 0.0 ? 2.0 * (m - *lo) / span - 1.0 : 0.0);
      for (std::int64_t ch = 0; ch < 3; ++ch) {
        out[static_cast<std::size_t>((ch * out_size + y) * out_size + x)] = v;
      }
    }
  }
  return TensorF::from_data({3, out_size, out_size}, std::move(out));
}

TensorF render_attention_overlay(const AttentionRecord& record, const TensorF& base) {
  require_image(base, "render_attention_overlay");
  const auto parts = record.geometry.parts;
  const auto h = base.dim(1), w = base.dim(2);
  if (base.dim(0) != 3 || h % parts != 0 || w % parts != 0 ||
      static_cast<std::int64_t>(record.weights.size()) != parts * parts) {
    throw ShapeError("attention record geometry does not match the base image");
  }
  const auto ph = h / parts, pw = w / parts;
  const double peak = *std::max_element(record.weights.begin(), record.weights.end());
  std::vector<float> out(static_cast<std::size_t>(3 * h * w));
  const auto src = base.data();
  for (std::int64_t y = 0; y < h; ++y) {
    for (std::int64_t x = 0; x < w; ++x) {
      const auto pi = y / ph, pj = x / pw;
      const double alpha = peak > 0.0 ? record.weights[static_cast<std::size_t>(pi * parts + pj)] / peak : 0.0;
      std::array<double, 3> rgb{};
      for (std::int64_t ch = 0; ch < 3; ++ch) {
        const double v = (static_cast<double>(src[static_cast<std::size_t>((ch * h + y) * w + x)]) + 1.0) * 0.5;
        rgb[static_cast<std::size_t>(ch)] = v * (1.0 - 0.6 * alpha) + (ch == 0 ? 0.6 * alpha : 0.0);
      }
      const bool outline = pi == record.row && pj == record.col &&
                           (y % ph == 0 || y % ph == ph - 1 || x % pw == 0 || x % pw == pw - 1);
      if (outline) {
        rgb = {1.0, 1.0, 1.0};
      } else if (y % ph == 0 || x % pw == 0) {
        rgb = {0.0, 0.0, 0.0};
      }
      for (std::int64_t ch = 0; ch < 3; ++ch) {
        out[static_cast<std::size_t>((ch * h + y) * w + x)] =
            static_cast<float>(2.0 * rgb[static_cast<std::size_t>(ch)] - 1.0);
      }
    }
  }
  return TensorF::from_data({3, h, w}, std::move(out));
}

}  // namespace uattn
