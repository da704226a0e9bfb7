// Copyright 2026 The U-Attention Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "test_util.hpp"
#include "uattn/model.hpp"
#include "uattn/ops.hpp"

namespace uattn {
namespace {

using testing::fd_worst_error;
using testing::random_tensor;

StageSpec small_stage(std::int64_t c, std::int64_t hw, std::int64_t parts) {
  StageSpec s;
  s.index = 1;
  s.height = hw;
  s.width = hw;
  s.channels = c;
  s.parts = parts;
  s.input_hw = hw;
  return s;
}

// Random layer parameters at C channels, ffn kernel k.
TransformerLayerParams<double> random_layer(std::int64_t c, int k, std::uint64_t seed) {
  const double b = 1.0 / std::sqrt(static_cast<double>(c));
  auto conv = [&](std::int64_t kk, std::uint64_t s) {
    return random_tensor<double>({c, c, kk, kk}, derive_seed(seed, s), -b, b);
  };
  auto vec = [&](std::uint64_t s, double lo, double hi) {
    return random_tensor<double>({c}, derive_seed(seed, s), lo, hi);
  };
  TransformerLayerParams<double> p;
  p.attn = {conv(1, 1), vec(2, -0.1, 0.1), conv(1, 3), vec(4, -0.1, 0.1),
            conv(1, 5), vec(6, -0.1, 0.1), conv(1, 7), vec(8, -0.1, 0.1)};
  p.ffn_w = conv(k, 9);
  p.ffn_b = vec(10, -0.1, 0.1);
  p.norm1_gain = vec(11, 0.5, 1.5);
  p.norm1_bias = vec(12, -0.1, 0.1);
  p.norm2_gain = vec(13, 0.5, 1.5);
  p.norm2_bias = vec(14, -0.1, 0.1);
  return p;
}

// Parameter count of one block by the closed form 2 (4 (C^2 + C) + k^2 C^2 + C + 4 C).
std::int64_t block_formula(std::int64_t c, std::int64_t k) {
  return 2 * (4 * (c * c + c) + k * k * c * c + c + 4 * c);
}

std::int64_t conv_count(std::int64_t co, std::int64_t ci, std::int64_t k) {
  return co * ci * k * k + co;
}

TEST(Layout, ConvShapesFollowArchitectureTable) {
  std::map<std::string, Shape> shapes;
  for (const auto& p : parameter_layout(ArchVariant::kUAttention)) shapes[p.name] = p.shape;
  const std::map<std::string, Shape> table = {
      {"enc.conv1.w", {16, 3, 3, 3}},      {"enc.conv2.w", {16, 16, 1, 1}},
      {"down1.conv1.w", {64, 16, 4, 4}},   {"down1.conv2.w", {64, 64, 1, 1}},
      {"down2.conv1.w", {256, 64, 4, 4}},  {"down2.conv2.w", {256, 256, 1, 1}},
      {"up1.conv1.w", {64, 256, 1, 1}},    {"up1.conv2.w", {64, 64, 1, 1}},
      {"fuse1.conv1.w", {64, 128, 1, 1}},  {"fuse1.conv2.w", {64, 64, 1, 1}},
      {"up2.conv1.w", {16, 64, 1, 1}},     {"up2.conv2.w", {16, 16, 1, 1}},
      {"fuse2.conv1.w", {16, 32, 1, 1}},   {"fuse2.conv2.w", {16, 16, 1, 1}},
      {"dec.conv1.w", {3, 16, 3, 3}},      {"dec.conv2.w", {3, 3, 1, 1}},
      {"tb1.l0.ffn.w", {16, 16, 3, 3}},    {"tb2.l1.ffn.w", {64, 64, 3, 3}},
      {"tb3.l0.ffn.w", {256, 256, 1, 1}},  {"tb4.l0.ffn.w", {64, 64, 3, 3}},
      {"tb5.l1.ffn.w", {16, 16, 3, 3}},    {"tb3.l1.attn.q.w", {256, 256, 1, 1}},
  };
  for (const auto& [name, shape] : table) {
    ASSERT_TRUE(shapes.count(name)) << name;
    EXPECT_EQ(shapes[name], shape) << name;
  }
}

TEST(Layout, ParameterCountMatchesEnumeration) {
  std::int64_t oracle = 0;
  oracle += conv_count(16, 3, 3) + conv_count(16, 16, 1);
  oracle += 2 * block_formula(16, 3) + 2 * block_formula(64, 3) + block_formula(256, 1);
  oracle += conv_count(64, 16, 4) + conv_count(64, 64, 1);
  oracle += conv_count(256, 64, 4) + conv_count(256, 256, 1);
  oracle += conv_count(64, 256, 1) + conv_count(64, 64, 1);
  oracle += conv_count(64, 128, 1) + conv_count(64, 64, 1);
  oracle += conv_count(16, 64, 1) + conv_count(16, 16, 1);
  oracle += conv_count(16, 32, 1) + conv_count(16, 16, 1);
  oracle += conv_count(3, 16, 3) + conv_count(3, 3, 1);
  const auto w = build_model<float>(ArchVariant::kUAttention, 128, 0);
  EXPECT_EQ(w.parameter_count(), oracle);
  EXPECT_EQ(oracle, 1274255);
}

TEST(Layout, BlockParameterCountFormula) {
  const auto w = build_model<float>(ArchVariant::kUAttention, 32, 0);
  std::map<int, std::int64_t> per_block;
  for (const auto& [name, t] : w.params) {
    if (name.rfind("tb", 0) == 0) per_block[name[2] - '0'] += t.numel();
  }
  EXPECT_EQ(per_block[1], block_formula(16, 3));
  EXPECT_EQ(per_block[2], block_formula(64, 3));
  EXPECT_EQ(per_block[3], block_formula(256, 1));
  EXPECT_EQ(per_block[4], block_formula(64, 3));
  EXPECT_EQ(per_block[5], block_formula(16, 3));
}

TEST(Build, SameSeedGivesIdenticalWeights) {
  const auto a = build_model<float>(ArchVariant::kUAttention, 32, 7);
  const auto b = build_model<float>(ArchVariant::kUAttention, 32, 7);
  const auto c = build_model<float>(ArchVariant::kUAttention, 32, 8);
  bool any_diff = false;
  for (const auto& [name, t] : a.params) {
    const auto& u = b.at(name);
    ASSERT_TRUE(std::equal(t.data().begin(), t.data().end(), u.data().begin())) << name;
    const auto& v = c.at(name);
    any_diff |= !std::equal(t.data().begin(), t.data().end(), v.data().begin());
  }
  EXPECT_TRUE(any_diff);
}

TEST(Build, InvalidSizeRejected) {
  EXPECT_THROW(build_model<float>(ArchVariant::kUAttention, 40, 0), ShapeError);
}

TEST(Build, ValidateRejectsForeignLayout) {
  auto w = build_model<float>(ArchVariant::kPyramid3, 32, 0);
  w.variant = ArchVariant::kUAttention;
  EXPECT_THROW(validate_weights(w), ShapeError);
}

TEST(Attention, SinglePatchHasUnitWeight) {
  const auto p = random_layer(4, 3, 1).attn;
  const auto seq = partition(random_tensor<double>({4, 4, 4}, 2), 1);
  TensorD weights;
  const auto out = self_attention(seq, p, &weights);
  ASSERT_EQ(weights.shape(), (Shape{1, 1}));
  EXPECT_DOUBLE_EQ(weights.item(), 1.0);
  // With one patch the output is wo(wv(x)).
  const auto x = ops::reshape(seq.patches, {1, 4, 4, 4});
  const auto ref = ops::conv2d(ops::conv2d(x, p.wv, p.bv), p.wo, p.bo);
  for (std::int64_t i = 0; i < ref.numel(); ++i)
    EXPECT_NEAR(out.patches.data()[i], ref.data()[i], 1e-12);
}

TEST(Attention, IdenticalPatchesShareWeightEqually) {
  const auto p = random_layer(3, 3, 3).attn;
  const auto patch = random_tensor<double>({3, 4, 4}, 4);
  TensorD weights;
  // Partitions are square grids, so the smallest repeated sequence has four patches.
  self_attention(sequence_from_patches<double>({patch, patch, patch, patch}), p, &weights);
  for (double w : weights.data()) EXPECT_EQ(w, 0.25);
}

TEST(Attention, PermutationCovariance) {
  const auto p = random_layer(3, 3, 5).attn;
  const auto seq = partition(random_tensor<double>({3, 8, 8}, 6), 2);
  const std::vector<std::int64_t> perm = {2, 0, 3, 1};
  std::vector<TensorD> shuffled;
  for (auto k : perm) shuffled.push_back(seq.patch(k));
  const auto out = self_attention(seq, p);
  const auto out_perm = self_attention(sequence_from_patches(shuffled), p);
  for (std::size_t i = 0; i < perm.size(); ++i) {
    const auto a = out_perm.patch(static_cast<std::int64_t>(i));
    const auto b = out.patch(perm[i]);
    for (std::int64_t j = 0; j < a.numel(); ++j) EXPECT_NEAR(a.data()[j], b.data()[j], 1e-12);
  }
}

TEST(Attention, RowsAreStochastic) {
  const auto p = random_layer(8, 3, 7).attn;
  for (std::uint64_t s = 0; s < 20; ++s) {
    TensorD weights;
    attention_map(random_tensor<double>({2, 8, 8, 8}, s, -3, 3), p, 4, &weights);
    ASSERT_EQ(weights.shape(), (Shape{2, 16, 16}));
    for (std::int64_t n = 0; n < 2; ++n)
      for (std::int64_t r = 0; r < 16; ++r) {
        double acc = 0.0;
        for (std::int64_t c = 0; c < 16; ++c) acc += weights.at({n, r, c});
        EXPECT_NEAR(acc, 1.0, 1e-12);
      }
  }
}

TEST(Layer, ShapePreservedAndGradientMatches) {
  const auto stage = small_stage(16, 8, 2);
  const auto params = random_layer(16, 3, 8);
  const auto x = random_tensor<double>({1, 16, 8, 8}, 9);
  EXPECT_EQ(transformer_layer(x, stage, params, 3).shape(), x.shape());
  const auto r = random_tensor<double>({1, 16, 8, 8}, 10);
  auto loss = [&](const TensorD& v) {
    return ops::sum(ops::mul(transformer_layer(v, stage, params, 3), r));
  };
  EXPECT_LT(fd_worst_error(loss, x, 1e-5, 1e-3), 1e-4);
}

TEST(Layer, ZeroedBranchesReduceToDoubleNorm) {
  const auto stage = small_stage(4, 8, 2);
  auto params = random_layer(4, 3, 11);
  params.attn.wo = TensorD::zeros(params.attn.wo.shape());
  params.attn.bo = TensorD::zeros({4});
  params.ffn_w = TensorD::zeros(params.ffn_w.shape());
  params.ffn_b = TensorD::zeros({4});
  const auto x = random_tensor<double>({1, 4, 8, 8}, 12);
  const auto out = transformer_layer(x, stage, params, 3);
  const auto ref = ops::layer_norm_channels(
      ops::layer_norm_channels(x, params.norm1_gain, params.norm1_bias, kNormEps),
      params.norm2_gain, params.norm2_bias, kNormEps);
  for (std::int64_t i = 0; i < ref.numel(); ++i) EXPECT_NEAR(out.data()[i], ref.data()[i], 1e-12);
}

TEST(Layer, MismatchedStageRejected) {
  const auto params = random_layer(4, 3, 13);
  EXPECT_THROW(transformer_layer(TensorD::zeros({1, 4, 8, 8}), small_stage(4, 16, 2), params, 3),
               ShapeError);
}

TEST(Block, EqualsTwoComposedLayers) {
  const auto stage = small_stage(8, 16, 4);
  const auto a = random_layer(8, 3, 14), b = random_layer(8, 3, 15);
  const auto x = random_tensor<double>({1, 8, 16, 16}, 16);
  const auto block = t_block(x, stage, a, b, 3);
  const auto manual = transformer_layer(transformer_layer(x, stage, a, 3), stage, b, 3);
  for (std::int64_t i = 0; i < block.numel(); ++i) EXPECT_EQ(block.data()[i], manual.data()[i]);
}

TEST(Convs, StageTransitionShapes) {
  const auto w = build_model<float>(ArchVariant::kUAttention, 128, 0);
  EXPECT_EQ(conv_down(TensorF::zeros({1, 16, 128, 128}), w.pair("down1")).shape(),
            (Shape{1, 64, 64, 64}));
  EXPECT_EQ(conv_up(TensorF::zeros({1, 256, 32, 32}), w.pair("up1")).shape(),
            (Shape{1, 64, 64, 64}));
  const auto m = TensorF::zeros({1, 64, 64, 64});
  EXPECT_EQ(conv_fuse(m, m, w.pair("fuse1")).shape(), (Shape{1, 64, 64, 64}));
  EXPECT_THROW(conv_fuse(m, TensorF::zeros({1, 64, 32, 32}), w.pair("fuse1")), ShapeError);
  EXPECT_EQ(encode(TensorF::zeros({1, 3, 128, 128}), w.pair("enc")).shape(),
            (Shape{1, 16, 128, 128}));
}

TEST(Convs, EncoderFiniteAndDecoderBounded) {
  const auto w = build_model<float>(ArchVariant::kUAttention, 32, 1);
  const auto e = encode(TensorF::zeros({1, 3, 32, 32}), w.pair("enc"));
  EXPECT_TRUE(e.all_finite());
  const auto d = decode(random_tensor<float>({1, 16, 32, 32}, 17, -50, 50), w.pair("dec"));
  for (float v : d.data()) {
    EXPECT_GE(v, -1.0f);
    EXPECT_LE(v, 1.0f);
  }
  EXPECT_THROW(encode(TensorF::zeros({1, 4, 32, 32}), w.pair("enc")), ShapeError);
}

TEST(Forward, EveryVariantPreservesImageShape) {
  NoGradGuard no_grad;
  for (auto v : {ArchVariant::kUAttention, ArchVariant::kBaselineCascade3, ArchVariant::kPyramid3,
                 ArchVariant::kSimplifiedHourglass5}) {
    const auto w = build_model<float>(v, 32, 3);
    const auto x = random_tensor<float>({2, 3, 32, 32}, 18);
    const auto y = forward(x, w);
    EXPECT_EQ(y.shape(), x.shape()) << variant_name(v);
    for (float o : y.data()) {
      ASSERT_GT(o, -1.0f);
      ASSERT_LT(o, 1.0f);
    }
  }
}

TEST(Forward, VariantPlans) {
  auto parts = [](ArchVariant v) {
    std::vector<std::int64_t> out;
    for (const auto& b : block_plan(v, 64)) {
      out.push_back(b.stage.parts);
      if (v != ArchVariant::kUAttention) {
        EXPECT_EQ(b.stage.height, 64);
        EXPECT_EQ(b.stage.channels, 16);
      }
    }
    return out;
  };
  EXPECT_EQ(parts(ArchVariant::kBaselineCascade3), (std::vector<std::int64_t>{2, 2, 2}));
  EXPECT_EQ(parts(ArchVariant::kPyramid3), (std::vector<std::int64_t>{2, 4, 8}));
  EXPECT_EQ(parts(ArchVariant::kSimplifiedHourglass5),
            (std::vector<std::int64_t>{2, 4, 8, 4, 2}));
  EXPECT_EQ(parts(ArchVariant::kUAttention), (std::vector<std::int64_t>{2, 4, 8, 4, 2}));
  std::set<std::string> names;
  for (auto v : {"uattn", "baseline", "pyramid", "hourglass-simple"})
    names.insert(variant_name(parse_variant(v)));
  EXPECT_EQ(names.size(), 4u);
  EXPECT_THROW(parse_variant("resnet"), ConfigError);
}

TEST(Forward, TraceRecordsSequenceShapes) {
  NoGradGuard no_grad;
  const auto w = build_model<float>(ArchVariant::kUAttention, 64, 4);
  ForwardTrace<float> trace;
  forward(random_tensor<float>({3, 64, 64}, 19), w, &trace);
  std::map<std::string, Shape> shapes(trace.shapes.begin(), trace.shapes.end());
  EXPECT_EQ(shapes["T-Block2/partition"], (Shape{16, 64, 8, 8}));
  EXPECT_EQ(shapes["T-Block3/partition"], (Shape{64, 256, 2, 2}));
  EXPECT_EQ(trace.attention.size(), 10u);
  EXPECT_EQ(trace.attention[4].weights.shape(), (Shape{1, 64, 64}));
}

TEST(Forward, NonSquareOrBadSizeRejected) {
  const auto w = build_model<float>(ArchVariant::kUAttention, 32, 0);
  EXPECT_THROW(forward(TensorF::zeros({3, 32, 64}), w), ShapeError);
  EXPECT_THROW(forward(TensorF::zeros({3, 48, 48}), w), ShapeError);
}

}  // namespace
}  // namespace uattn
