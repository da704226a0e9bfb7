// Copyright 2026 The U-Attention Authors
// SPDX-License-Identifier: Apache-2.0

#include "uattn/model.hpp"

#include <cmath>

#include "uattn/ops.hpp"
#include "uattn/rng.hpp"

namespace uattn {

std::string variant_name(ArchVariant v) {
  switch (v) {
    case ArchVariant::kUAttention:
      return "uattn";
    case ArchVariant::kBaselineCascade3:
      return "baseline";
    case ArchVariant::kPyramid3:
      return "pyramid";
    case ArchVariant::kSimplifiedHourglass5:
      return "hourglass-simple";
  }
  return "?";
}

ArchVariant parse_variant(const std::string& name) {
  if (name == "uattn") return ArchVariant::kUAttention;
  if (name == "baseline") return ArchVariant::kBaselineCascade3;
  if (name == "pyramid") return ArchVariant::kPyramid3;
  if (name == "hourglass-simple") return ArchVariant::kSimplifiedHourglass5;
  throw ConfigError("unknown architecture '" + name +
                    "' (expected uattn|baseline|pyramid|hourglass-simple)");
}

namespace {

// The finest partition level works on small patches where the feed-forward
// conv is 1x1; coarser levels use 3x3.
int ffn_kernel_for(std::int64_t parts) { return parts >= 8 ? 1 : 3; }

StageSpec flat_stage(int index, std::int64_t hw, std::int64_t parts) {
  StageSpec s;
  s.index = index;
  s.height = hw;
  s.width = hw;
  s.channels = 16;
  s.parts = parts;
  s.input_hw = hw;
  return s;
}

void check_size(std::int64_t input_hw) {
  if (input_hw <= 0 || input_hw % 32 != 0) {
    throw ShapeError("input size must be a positive multiple of 32, got " +
                     std::to_string(input_hw));
  }
}

std::string block_prefix(int block, int layer) {
  return "tb" + std::to_string(block) + ".l" + std::to_string(layer) + ".";
}

void add_conv(std::vector<ParamSpec>& out, const std::string& prefix, std::int64_t co,
              std::int64_t ci, std::int64_t k) {
  out.push_back({prefix + ".w", {co, ci, k, k}, InitKind::kHeUniform});
  out.push_back({prefix + ".b", {co}, InitKind::kZero});
}

void add_pair(std::vector<ParamSpec>& out, const std::string& prefix, std::int64_t c_in,
              std::int64_t c_mid, std::int64_t k1, std::int64_t c_out) {
  add_conv(out, prefix + ".conv1", c_mid, c_in, k1);
  add_conv(out, prefix + ".conv2", c_out, c_mid, 1);
}

}  // namespace

std::vector<BlockPlan> block_plan(ArchVariant variant, std::int64_t input_hw) {
  check_size(input_hw);
  std::vector<BlockPlan> plan;
  auto push = [&plan](const StageSpec& s) { plan.push_back({s, ffn_kernel_for(s.parts)}); };
  switch (variant) {
    case ArchVariant::kUAttention:
      for (const auto& s : hourglass_schedule(input_hw)) push(s);
      break;
    case ArchVariant::kBaselineCascade3:
      for (int i = 1; i <= 3; ++i) push(flat_stage(i, input_hw, 2));
      break;
    case ArchVariant::kPyramid3:
      push(flat_stage(1, input_hw, 2));
      push(flat_stage(2, input_hw, 4));
      push(flat_stage(3, input_hw, 8));
      break;
    case ArchVariant::kSimplifiedHourglass5: {
      const std::int64_t parts[5] = {2, 4, 8, 4, 2};
      for (int i = 0; i < 5; ++i) push(flat_stage(i + 1, input_hw, parts[i]));
      break;
    }
  }
  return plan;
}

std::vector<ParamSpec> parameter_layout(ArchVariant variant) {
  std::vector<ParamSpec> out;
  add_pair(out, "enc", 3, 16, 3, 16);
  const auto plan = block_plan(variant, 32);
  for (const auto& b : plan) {
    const auto c = b.stage.channels;
    for (int l = 0; l < 2; ++l) {
      const auto pre = block_prefix(b.stage.index, l);
      for (const char* proj : {"q", "k", "v", "o"}) add_conv(out, pre + "attn." + proj, c, c, 1);
      add_conv(out, pre + "ffn", c, c, b.ffn_kernel);
      for (const char* norm : {"norm1", "norm2"}) {
        out.push_back({pre + norm + ".g", {c}, InitKind::kOne});
        out.push_back({pre + norm + ".b", {c}, InitKind::kZero});
      }
    }
  }
  if (variant == ArchVariant::kUAttention) {
    add_pair(out, "down1", 16, 64, 4, 64);
    add_pair(out, "down2", 64, 256, 4, 256);
    add_pair(out, "up1", 256, 64, 1, 64);
    add_pair(out, "fuse1", 128, 64, 1, 64);
    add_pair(out, "up2", 64, 16, 1, 16);
    add_pair(out, "fuse2", 32, 16, 1, 16);
  } else if (variant == ArchVariant::kSimplifiedHourglass5) {
    add_pair(out, "fuse1", 32, 16, 1, 16);
    add_pair(out, "fuse2", 32, 16, 1, 16);
  }
  add_conv(out, "dec.conv1", 3, 16, 3);
  add_conv(out, "dec.conv2", 3, 3, 1);
  return out;
}

template <typename T>
const Tensor<T>& ModelWeights<T>::at(const std::string& name) const {
  auto it = params.find(name);
  if (it == params.end()) throw ShapeError("missing generator parameter " + name);
  return it->second;
}

template <typename T>
std::int64_t ModelWeights<T>::parameter_count() const {
  std::int64_t n = 0;
  for (const auto& [name, t] : params) n += t.numel();
  return n;
}

template <typename T>
TransformerLayerParams<T> ModelWeights<T>::layer(int block, int layer) const {
  const auto pre = block_prefix(block, layer);
  TransformerLayerParams<T> p;
  p.attn = {at(pre + "attn.q.w"), at(pre + "attn.q.b"), at(pre + "attn.k.w"),
            at(pre + "attn.k.b"), at(pre + "attn.v.w"), at(pre + "attn.v.b"),
            at(pre + "attn.o.w"), at(pre + "attn.o.b")};
  p.ffn_w = at(pre + "ffn.w");
  p.ffn_b = at(pre + "ffn.b");
  p.norm1_gain = at(pre + "norm1.g");
  p.norm1_bias = at(pre + "norm1.b");
  p.norm2_gain = at(pre + "norm2.g");
  p.norm2_bias = at(pre + "norm2.b");
  return p;
}

template <typename T>
ConvPair<T> ModelWeights<T>::pair(const std::string& prefix) const {
  return {at(prefix + ".conv1.w"), at(prefix + ".conv1.b"), at(prefix + ".conv2.w"),
          at(prefix + ".conv2.b")};
}

template <typename T>
ModelWeights<T> build_model(ArchVariant variant, std::int64_t input_hw, std::uint64_t seed) {
  check_size(input_hw);
  ModelWeights<T> w;
  w.variant = variant;
  w.input_hw = input_hw;
  for (const auto& spec : parameter_layout(variant)) {
    const auto n = static_cast<std::size_t>(numel(spec.shape));
    std::vector<T> data(n, T(0));
    if (spec.init == InitKind::kOne) {
      std::fill(data.begin(), data.end(), T(1));
    } else if (spec.init == InitKind::kHeUniform) {
      const auto fan_in = numel(spec.shape) / spec.shape[0];
      const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
      SplitMix64 rng(derive_seed(seed, fnv1a(spec.name.data(), spec.name.size())));
      for (auto& x : data) x = static_cast<T>(rng.uniform(-bound, bound));
    }
    w.params.emplace(spec.name, Tensor<T>::from_data(spec.shape, std::move(data), true));
  }
  return w;
}

template <typename T>
void validate_weights(const ModelWeights<T>& weights) {
  const auto layout = parameter_layout(weights.variant);
  if (layout.size() != weights.params.size()) {
    throw ShapeError("generator weights do not match the " + variant_name(weights.variant) +
                     " layout (" + std::to_string(weights.params.size()) + " tensors, expected " +
                     std::to_string(layout.size()) + ")");
  }
  for (const auto& spec : layout) {
    const auto& t = weights.at(spec.name);
    if (t.shape() != spec.shape) {
      throw ShapeError("parameter " + spec.name + " has shape " + to_string(t.shape()) +
                       ", expected " + to_string(spec.shape));
    }
  }
}

// ---- building blocks ---------------------------------------------------------

namespace {

template <typename T>
Tensor<T> lrelu(const Tensor<T>& x) {
  return ops::leaky_relu(x, static_cast<T>(kLeakySlope));
}

}  // namespace

template <typename T>
Tensor<T> attention_map(const Tensor<T>& map, const AttentionParams<T>& params,
                        std::int64_t parts, Tensor<T>* attention_out) {
  if (map.rank() != 4) throw ShapeError("attention expects [N,C,H,W]");
  const auto c = map.dim(1);
  if (params.wq.dim(1) != c || params.wq.dim(0) != c) {
    throw ShapeError("attention projections expect " + std::to_string(params.wq.dim(1)) +
                     " channels, map has " + std::to_string(c));
  }
  const auto n = map.dim(0);
  const auto seq = parts * parts;
  const auto d = c * (map.dim(2) / parts) * (map.dim(3) / parts);
  // 1x1 projections commute with partitioning, so they run on the whole map.
  auto rows = [&](const Tensor<T>& w, const Tensor<T>& b) {
    return ops::reshape(ops::patchify(ops::conv2d(map, w, b), parts), {n, seq, d});
  };
  const auto q = rows(params.wq, params.bq);
  const auto k = rows(params.wk, params.bk);
  const auto v = rows(params.wv, params.bv);
  const auto logits =
      ops::scale(ops::bmm(q, k, true), static_cast<T>(1.0 / std::sqrt(static_cast<double>(d))));
  const auto weights = ops::softmax_rows(logits);
  if (attention_out) *attention_out = weights;
  const auto mixed = ops::bmm(weights, v);
  const auto h = map.dim(2) / parts, w = map.dim(3) / parts;
  const auto back = ops::unpatchify(ops::reshape(mixed, {n, seq, c, h, w}), parts);
  return ops::conv2d(back, params.wo, params.bo);
}

template <typename T>
PatchSequence<T> self_attention(const PatchSequence<T>& seq, const AttentionParams<T>& params,
                                Tensor<T>* attention_out) {
  const auto map = arrange_back(seq);
  const auto batched = ops::reshape(map, {1, map.dim(0), map.dim(1), map.dim(2)});
  Tensor<T> weights;
  const auto out = attention_map(batched, params, seq.parts, &weights);
  if (attention_out) *attention_out = ops::reshape(weights, {weights.dim(1), weights.dim(2)});
  return partition(ops::reshape(out, {out.dim(1), out.dim(2), out.dim(3)}), seq.parts);
}

template <typename T>
Tensor<T> transformer_layer(const Tensor<T>& map, const StageSpec& stage,
                            const TransformerLayerParams<T>& params, int ffn_kernel,
                            Tensor<T>* attention_out) {
  if (map.rank() != 4 || map.dim(1) != stage.channels || map.dim(2) != stage.height ||
      map.dim(3) != stage.width) {
    throw ShapeError("transformer layer input " + to_string(map.shape()) +
                     " does not match stage " + std::to_string(stage.index));
  }
  const T eps = static_cast<T>(kNormEps);
  const auto attn = attention_map(map, params.attn, stage.parts, attention_out);
  const auto x1 =
      ops::layer_norm_channels(ops::add(map, attn), params.norm1_gain, params.norm1_bias, eps);

  Tensor<T> ffn;
  if (ffn_kernel == 1) {
    ffn = lrelu(ops::conv2d(x1, params.ffn_w, params.ffn_b));
  } else {
    // Each patch is convolved on its own with zero padding at its borders.
    const auto n = map.dim(0), seq = stage.sequence_length();
    const auto ph = stage.patch_height(), pw = stage.patch_width();
    const auto patches =
        ops::reshape(ops::patchify(x1, stage.parts), {n * seq, stage.channels, ph, pw});
    const auto conv = lrelu(ops::conv2d(patches, params.ffn_w, params.ffn_b, 1, ffn_kernel / 2));
    ffn = ops::unpatchify(ops::reshape(conv, {n, seq, stage.channels, ph, pw}), stage.parts);
  }
  return ops::layer_norm_channels(ops::add(x1, ffn), params.norm2_gain, params.norm2_bias, eps);
}

template <typename T>
Tensor<T> t_block(const Tensor<T>& map, const StageSpec& stage,
                  const TransformerLayerParams<T>& first, const TransformerLayerParams<T>& second,
                  int ffn_kernel, Tensor<T>* first_attention, Tensor<T>* second_attention) {
  const auto x = transformer_layer(map, stage, first, ffn_kernel, first_attention);
  return transformer_layer(x, stage, second, ffn_kernel, second_attention);
}

template <typename T>
Tensor<T> conv_down(const Tensor<T>& map, const ConvPair<T>& p) {
  if (p.w1.dim(0) != 4 * map.dim(1)) throw ShapeError("conv_down expects C -> 4C weights");
  const auto x = lrelu(ops::conv2d(map, p.w1, p.b1, 2, 1));
  return lrelu(ops::conv2d(x, p.w2, p.b2));
}

template <typename T>
Tensor<T> conv_up(const Tensor<T>& map, const ConvPair<T>& p) {
  if (p.w1.dim(0) * 4 != map.dim(1)) throw ShapeError("conv_up expects C -> C/4 weights");
  const auto x = lrelu(ops::conv2d(ops::bilinear_upsample_2x(map), p.w1, p.b1));
  return lrelu(ops::conv2d(x, p.w2, p.b2));
}

template <typename T>
Tensor<T> conv_fuse(const Tensor<T>& skip, const Tensor<T>& upsampled, const ConvPair<T>& p) {
  if (skip.shape() != upsampled.shape()) {
    throw ShapeError("conv_fuse: skip " + to_string(skip.shape()) + " and upsampled " +
                     to_string(upsampled.shape()) + " differ");
  }
  const auto x = lrelu(ops::conv2d(ops::concat_channels(skip, upsampled), p.w1, p.b1));
  return lrelu(ops::conv2d(x, p.w2, p.b2));
}

template <typename T>
Tensor<T> encode(const Tensor<T>& image, const ConvPair<T>& p) {
  if (image.rank() != 4 || image.dim(1) != 3) {
    throw ShapeError("encoder expects 3-channel images, got " + to_string(image.shape()));
  }
  const auto x = lrelu(ops::conv2d(image, p.w1, p.b1, 1, 1));
  return lrelu(ops::conv2d(x, p.w2, p.b2));
}

template <typename T>
Tensor<T> decode(const Tensor<T>& features, const ConvPair<T>& p) {
  if (features.rank() != 4 || features.dim(1) != 16) {
    throw ShapeError("decoder expects 16-channel features, got " + to_string(features.shape()));
  }
  const auto x = lrelu(ops::conv2d(features, p.w1, p.b1, 1, 1));
  return ops::tanh(ops::conv2d(x, p.w2, p.b2));
}

// ---- full network ------------------------------------------------------------

namespace {

Shape per_image(const Shape& s) { return Shape(s.begin() + 1, s.end()); }

template <typename T>
class Runner {
 public:
  Runner(const ModelWeights<T>& w, ForwardTrace<T>* trace, std::int64_t hw)
      : w_(w), trace_(trace), plan_(block_plan(w.variant, hw)) {}

  void note(const std::string& label, const Tensor<T>& t) {
    if (trace_) trace_->shapes.emplace_back(label, per_image(t.shape()));
  }

  Tensor<T> block(int index, const Tensor<T>& x) {
    const auto& bp = plan_.at(static_cast<std::size_t>(index - 1));
    const auto& s = bp.stage;
    const std::string label = "T-Block" + std::to_string(index);
    if (trace_) {
      trace_->shapes.emplace_back(label + "/partition",
                                  Shape{s.sequence_length(), s.channels, s.patch_height(),
                                        s.patch_width()});
    }
    const bool capture = trace_ && trace_->capture_attention;
    Tensor<T> a0, a1;
    auto out = t_block(x, s, w_.layer(index, 0), w_.layer(index, 1), bp.ffn_kernel,
                       capture ? &a0 : nullptr, capture ? &a1 : nullptr);
    if (capture) {
      const auto input = x.detach();
      trace_->attention.push_back({index, 0, s, a0.detach(), input});
      trace_->attention.push_back({index, 1, s, a1.detach(), input});
    }
    note(label, out);
    return out;
  }

  template <typename F>
  Tensor<T> stage(const std::string& label, F&& f) {
    auto out = f();
    note(label, out);
    return out;
  }

  const ModelWeights<T>& w() const { return w_; }

 private:
  const ModelWeights<T>& w_;
  ForwardTrace<T>* trace_;
  std::vector<BlockPlan> plan_;
};

}  // namespace

template <typename T>
Tensor<T> forward(const Tensor<T>& images, const ModelWeights<T>& weights,
                  ForwardTrace<T>* trace) {
  const bool single = images.rank() == 3;
  if (!single && images.rank() != 4) {
    throw ShapeError("forward expects [3,S,S] or [N,3,S,S], got " + to_string(images.shape()));
  }
  const auto x = single ? ops::reshape(images, {1, images.dim(0), images.dim(1), images.dim(2)})
                        : images;
  if (x.dim(1) != 3 || x.dim(2) != x.dim(3)) {
    throw ShapeError("forward expects square 3-channel images, got " + to_string(x.shape()));
  }
  check_size(x.dim(2));
  validate_weights(weights);

  Runner<T> r(weights, trace, x.dim(2));
  const auto& w = weights;
  const auto e = r.stage("Encoder", [&] { return encode(x, w.pair("enc")); });
  Tensor<T> feat;
  switch (w.variant) {
    case ArchVariant::kUAttention: {
      const auto t1 = r.block(1, e);
      const auto d1 = r.stage("ConvDown1", [&] { return conv_down(t1, w.pair("down1")); });
      const auto t2 = r.block(2, d1);
      const auto d2 = r.stage("ConvDown2", [&] { return conv_down(t2, w.pair("down2")); });
      const auto t3 = r.block(3, d2);
      const auto u1 = r.stage("ConvUp1", [&] { return conv_up(t3, w.pair("up1")); });
      const auto f1 = r.stage("ConvFuse1", [&] { return conv_fuse(t2, u1, w.pair("fuse1")); });
      const auto t4 = r.block(4, f1);
      const auto u2 = r.stage("ConvUp2", [&] { return conv_up(t4, w.pair("up2")); });
      const auto f2 = r.stage("ConvFuse2", [&] { return conv_fuse(t1, u2, w.pair("fuse2")); });
      feat = r.block(5, f2);
      break;
    }
    case ArchVariant::kBaselineCascade3:
    case ArchVariant::kPyramid3:
      feat = r.block(3, r.block(2, r.block(1, e)));
      break;
    case ArchVariant::kSimplifiedHourglass5: {
      const auto t1 = r.block(1, e);
      const auto t2 = r.block(2, t1);
      const auto t3 = r.block(3, t2);
      const auto f1 = r.stage("ConvFuse1", [&] { return conv_fuse(t2, t3, w.pair("fuse1")); });
      const auto t4 = r.block(4, f1);
      const auto f2 = r.stage("ConvFuse2", [&] { return conv_fuse(t1, t4, w.pair("fuse2")); });
      feat = r.block(5, f2);
      break;
    }
  }
  const auto out = r.stage("Decoder", [&] { return decode(feat, w.pair("dec")); });
  if (single) return ops::reshape(out, {out.dim(1), out.dim(2), out.dim(3)});
  return out;
}

#define UATTN_INSTANTIATE_MODEL(T)                                                            \
  template struct ModelWeights<T>;                                                            \
  template ModelWeights<T> build_model<T>(ArchVariant, std::int64_t, std::uint64_t);          \
  template void validate_weights(const ModelWeights<T>&);                                     \
  template Tensor<T> attention_map(const Tensor<T>&, const AttentionParams<T>&, std::int64_t, \
                                   Tensor<T>*);                                               \
  template PatchSequence<T> self_attention(const PatchSequence<T>&, const AttentionParams<T>&, \
                                           Tensor<T>*);                                       \
  template Tensor<T> transformer_layer(const Tensor<T>&, const StageSpec&,                    \
                                       const TransformerLayerParams<T>&, int, Tensor<T>*);    \
  template Tensor<T> t_block(const Tensor<T>&, const StageSpec&,                              \
                             const TransformerLayerParams<T>&,                                \
                             const TransformerLayerParams<T>&, int, Tensor<T>*, Tensor<T>*);  \
  template Tensor<T> conv_down(const Tensor<T>&, const ConvPair<T>&);                         \
  template Tensor<T> conv_up(const Tensor<T>&, const ConvPair<T>&);                           \
  template Tensor<T> conv_fuse(const Tensor<T>&, const Tensor<T>&, const ConvPair<T>&);       \
  template Tensor<T> encode(const Tensor<T>&, const ConvPair<T>&);                            \
  template Tensor<T> decode(const Tensor<T>&, const ConvPair<T>&);                            \
  template Tensor<T> forward(const Tensor<T>&, const ModelWeights<T>&, ForwardTrace<T>*);

UATTN_INSTANTIATE_MODEL(float)
UATTN_INSTANTIATE_MODEL(double)

#undef UATTN_INSTANTIATE_MODEL

}  // namespace uattn
