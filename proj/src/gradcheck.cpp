// Copyright 2026 The U-Attention Authors
// SPDX-License-Identifier: Apache-2.0

#include "uattn/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <numeric>

#include "uattn/losses.hpp"
#include "uattn/ops.hpp"
#include "uattn/rng.hpp"

namespace uattn {

double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

namespace {

using Inputs = std::vector<TensorD>;
using OpFn = std::function<TensorD(const Inputs&)>;

struct Case {
  Inputs inputs;  // the leaves whose gradients are checked
  OpFn fn;
};

struct Entry {
  std::string name;
  std::function<std::vector<Case>(SplitMix64&)> cases;
};

// Uniform values in [-1, 1]; with `margin` > 0 values are pushed at least that
// far from each point in `kinks`.
TensorD random(SplitMix64& rng, Shape shape, double margin = 0.0,
               std::vector<double> kinks = {0.0}) {
  std::vector<double> v(static_cast<std::size_t>(numel(shape)));
  for (auto& x : v) {
    x = rng.uniform(-1.0, 1.0);
    for (double k : kinks) {
      if (margin > 0.0 && std::abs(x - k) < margin) x = k + (x >= k ? margin : -margin);
    }
  }
  return TensorD::from_data(std::move(shape), std::move(v), true);
}

// sum(f(inputs) * r) for a fixed random r, so every output entry matters.
double projected(const OpFn& fn, const Inputs& in, const TensorD& r) {
  NoGradGuard guard;
  const auto out = fn(in);
  return ops::sum(ops::mul(out, r)).item();
}

void check_case(const Case& c, const GradcheckConfig& cfg, SplitMix64& rng, GradcheckReport& rep) {
  TensorD probe;
  {
    NoGradGuard guard;
    probe = c.fn(c.inputs);
  }
  const auto r = random(rng, probe.shape());
  r.node()->requires_grad = false;
  for (auto t : c.inputs) t.zero_grad();
  ops::sum(ops::mul(c.fn(c.inputs), r)).backward();
  for (auto t : c.inputs) {
    const auto analytic = t.grad();
    auto values = t.mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double keep = values[i];
      values[i] = keep + cfg.step;
      const double up = projected(c.fn, c.inputs, r);
      values[i] = keep - cfg.step;
      const double down = projected(c.fn, c.inputs, r);
      values[i] = keep;
      const double numeric = (up - down) / (2.0 * cfg.step);
      rep.worst_error = std::max(rep.worst_error, relative_error(analytic[i], numeric));
      ++rep.entries;
    }
  }
}

std::vector<Entry> registry() {
  std::vector<Entry> e;
  auto unary = [](std::function<TensorD(const TensorD&)> f) {
    return [f](const Inputs& in) { return f(in[0]); };
  };
  auto binary = [](std::function<TensorD(const TensorD&, const TensorD&)> f) {
    return [f](const Inputs& in) { return f(in[0], in[1]); };
  };
  e.push_back({"add", [=](SplitMix64& g) {
                 return std::vector<Case>{{{random(g, {2, 3, 4}), random(g, {2, 3, 4})},
                                           binary(ops::add<double>)}};
               }});
  e.push_back({"sub", [=](SplitMix64& g) {
                 return std::vector<Case>{{{random(g, {2, 3, 4}), random(g, {2, 3, 4})},
                                           binary(ops::sub<double>)}};
               }});
  e.push_back({"mul", [=](SplitMix64& g) {
                 return std::vector<Case>{{{random(g, {2, 3, 4}), random(g, {2, 3, 4})},
                                           binary(ops::mul<double>)}};
               }});
  e.push_back({"scale", [=](SplitMix64& g) {
                 return std::vector<Case>{
                     {{random(g, {3, 5})}, unary([](const TensorD& x) { return ops::scale(x, -1.7); })}};
               }});
  e.push_back({"add_scalar", [=](SplitMix64& g) {
                 return std::vector<Case>{{{random(g, {3, 5})}, unary([](const TensorD& x) {
                                             return ops::add_scalar(x, 0.3);
                                           })}};
               }});
  e.push_back({"abs", [=](SplitMix64& g) {
                 return std::vector<Case>{{{random(g, {4, 6}, 0.05)}, unary(ops::abs<double>)}};
               }});
  e.push_back({"relu", [=](SplitMix64& g) {
                 return std::vector<Case>{{{random(g, {4, 6}, 0.05)}, unary(ops::relu<double>)}};
               }});
  e.push_back({"leaky_relu", [=](SplitMix64& g) {
                 return std::vector<Case>{{{random(g, {4, 6}, 0.05)}, unary([](const TensorD& x) {
                                             return ops::leaky_relu(x, 0.2);
                                           })}};
               }});
  e.push_back({"tanh", [=](SplitMix64& g) {
                 return std::vector<Case>{{{random(g, {4, 6})}, unary(ops::tanh<double>)}};
               }});
  e.push_back({"sum", [=](SplitMix64& g) {
                 return std::vector<Case>{{{random(g, {3, 4})}, unary(ops::sum<double>)}};
               }});
  e.push_back({"mean", [=](SplitMix64& g) {
                 return std::vector<Case>{{{random(g, {3, 4})}, unary(ops::mean<double>)}};
               }});
  e.push_back({"reshape", [=](SplitMix64& g) {
                 return std::vector<Case>{{{random(g, {2, 3, 4})}, unary([](const TensorD& x) {
                                             return ops::reshape(x, {4, 6});
                                           })}};
               }});
  e.push_back({"concat_channels", [=](SplitMix64& g) {
                 return std::vector<Case>{{{random(g, {2, 2, 3, 3}), random(g, {2, 3, 3, 3})},
                                           binary(ops::concat_channels<double>)}};
               }});
  e.push_back({"crop", [=](SplitMix64& g) {
                 return std::vector<Case>{{{random(g, {2, 2, 6, 5})}, unary([](const TensorD& x) {
                                             return ops::crop(x, 1, 2, 3, 2);
                                           })}};
               }});
  e.push_back({"batch_to_time", [=](SplitMix64& g) {
                 return std::vector<Case>{
                     {{random(g, {3, 2, 3, 3})}, unary(ops::batch_to_time<double>)}};
               }});
  e.push_back({"conv2d", [=](SplitMix64& g) {
                 auto conv = [](int stride, int pad) {
                   return [=](const Inputs& in) { return ops::conv2d(in[0], in[1], in[2], stride, pad); };
                 };
                 return std::vector<Case>{
                     {{random(g, {1, 2, 6, 6}), random(g, {3, 2, 3, 3}), random(g, {3})}, conv(1, 1)},
                     {{random(g, {2, 2, 6, 6}), random(g, {3, 2, 4, 4}), random(g, {3})}, conv(2, 1)},
                     {{random(g, {2, 3, 4, 4}), random(g, {2, 3, 1, 1}), random(g, {2})}, conv(1, 0)},
                 };
               }});
  e.push_back({"conv3d", [=](SplitMix64& g) {
                 return std::vector<Case>{
                     {{random(g, {1, 1, 3, 4, 4}), random(g, {2, 1, 3, 3, 3}), random(g, {2})},
                      [](const Inputs& in) { return ops::conv3d(in[0], in[1], in[2], 1); }},
                     {{random(g, {1, 2, 2, 3, 3}), random(g, {2, 2, 3, 3, 3}), random(g, {2})},
                      [](const Inputs& in) { return ops::conv3d(in[0], in[1], in[2], 1); }},
                 };
               }});
  e.push_back({"bilinear_upsample_2x", [=](SplitMix64& g) {
                 return std::vector<Case>{
                     {{random(g, {1, 2, 3, 4})}, unary(ops::bilinear_upsample_2x<double>)}};
               }});
  e.push_back({"matmul", [=](SplitMix64& g) {
                 return std::vector<Case>{{{random(g, {3, 4}), random(g, {4, 2})},
                                           binary(ops::matmul<double>)}};
               }});
  e.push_back({"bmm", [=](SplitMix64& g) {
                 return std::vector<Case>{
                     {{random(g, {2, 3, 4}), random(g, {2, 4, 2})},
                      binary([](const TensorD& a, const TensorD& b) { return ops::bmm(a, b); })},
                     {{random(g, {2, 3, 4}), random(g, {2, 5, 4})},
                      binary([](const TensorD& a, const TensorD& b) { return ops::bmm(a, b, true); })},
                 };
               }});
  e.push_back({"softmax_rows", [=](SplitMix64& g) {
                 return std::vector<Case>{{{random(g, {2, 3, 5})}, unary(ops::softmax_rows<double>)}};
               }});
  e.push_back({"layer_norm_channels", [=](SplitMix64& g) {
                 return std::vector<Case>{
                     {{random(g, {2, 4, 3, 3}), random(g, {4}), random(g, {4})},
                      [](const Inputs& in) { return ops::layer_norm_channels(in[0], in[1], in[2], 1e-5); }}};
               }});
  e.push_back({"patchify", [=](SplitMix64& g) {
                 return std::vector<Case>{{{random(g, {1, 2, 4, 4})}, unary([](const TensorD& x) {
                                             return ops::patchify(x, 2);
                                           })}};
               }});
  e.push_back({"unpatchify", [=](SplitMix64& g) {
                 return std::vector<Case>{{{random(g, {1, 4, 2, 2, 2})}, unary([](const TensorD& x) {
                                             return ops::unpatchify(x, 2);
                                           })}};
               }});
  e.push_back({"gram", [=](SplitMix64& g) {
                 return std::vector<Case>{{{random(g, {2, 3, 3, 4})}, unary(ops::gram<double>)}};
               }});
  e.push_back({"attention", [=](SplitMix64& g) {
                 Inputs in{random(g, {1, 4, 4, 4})};
                 for (int i = 0; i < 4; ++i) {
                   in.push_back(random(g, {4, 4, 1, 1}));
                   in.push_back(random(g, {4}));
                 }
                 return std::vector<Case>{{in, [](const Inputs& v) {
                                             AttentionParams<double> p{v[1], v[2], v[3], v[4],
                                                                       v[5], v[6], v[7], v[8]};
                                             return attention_map(v[0], p, 2);
                                           }}};
               }});
  e.push_back({"transformer_layer", [=](SplitMix64& g) {
                 Inputs in{random(g, {1, 16, 8, 8})};
                 for (int i = 0; i < 4; ++i) {
                   in.push_back(random(g, {16, 16, 1, 1}));
                   in.push_back(random(g, {16}));
                 }
                 in.push_back(random(g, {16, 16, 3, 3}));
                 in.push_back(random(g, {16}));
                 for (int i = 0; i < 4; ++i) in.push_back(random(g, {16}));
                 return std::vector<Case>{{in, [](const Inputs& v) {
                                             TransformerLayerParams<double> p;
                                             p.attn = {v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8]};
                                             p.ffn_w = v[9];
                                             p.ffn_b = v[10];
                                             p.norm1_gain = v[11];
                                             p.norm1_bias = v[12];
                                             p.norm2_gain = v[13];
                                             p.norm2_bias = v[14];
                                             StageSpec s;
                                             s.index = 1;
                                             s.height = s.width = 8;
                                             s.channels = 16;
                                             s.parts = 2;
                                             s.input_hw = 8;
                                             return transformer_layer(v[0], s, p, 3);
                                           }}};
               }});
  e.push_back({"l1_loss", [=](SplitMix64& g) {
                 return std::vector<Case>{{{random(g, {1, 3, 4, 4}), random(g, {1, 3, 4, 4})},
                                           binary([](const TensorD& a, const TensorD& b) {
                                             return l1_loss(a, b);
                                           })}};
               }});
  e.push_back({"perceptual_loss", [=](SplitMix64& g) {
                 return std::vector<Case>{{{random(g, {1, 3, 8, 8}), random(g, {1, 3, 8, 8})},
                                           binary([](const TensorD& a, const TensorD& b) {
                                             static const FrozenExtractor fx;
                                             return perceptual_loss(fx, a, b);
                                           })}};
               }});
  e.push_back({"style_loss", [=](SplitMix64& g) {
                 return std::vector<Case>{{{random(g, {1, 3, 8, 8}), random(g, {1, 3, 8, 8})},
                                           binary([](const TensorD& a, const TensorD& b) {
                                             static const FrozenExtractor fx;
                                             return style_loss(fx, a, b);
                                           })}};
               }});
  e.push_back({"hinge_d_loss", [=](SplitMix64& g) {
                 std::vector<double> kinks{1.0, -1.0};
                 return std::vector<Case>{
                     {{random(g, {2, 5}, 0.05, kinks), random(g, {2, 5}, 0.05, kinks)},
                      binary([](const TensorD& a, const TensorD& b) { return hinge_d_loss(a, b); })}};
               }});
  e.push_back({"hinge_g_loss", [=](SplitMix64& g) {
                 return std::vector<Case>{{{random(g, {2, 5})}, unary([](const TensorD& x) {
                                             return hinge_g_loss(x);
                                           })}};
               }});
  return e;
}

const std::vector<Entry>& entries() {
  static const std::vector<Entry> e = registry();
  return e;
}

}  // namespace

const std::vector<std::string>& gradcheck_op_names() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> n;
    for (const auto& e : entries()) n.push_back(e.name);
    return n;
  }();
  return names;
}

std::vector<GradcheckReport> run_gradcheck(const std::vector<std::string>& names,
                                           const GradcheckConfig& config) {
  for (const auto& n : names) {
    const auto& all = gradcheck_op_names();
    if (std::find(all.begin(), all.end(), n) == all.end()) {
      throw ConfigError("unknown gradcheck op '" + n + "'");
    }
  }
  std::vector<GradcheckReport> out;
  for (const auto& e : entries()) {
    if (!names.empty() && std::find(names.begin(), names.end(), e.name) == names.end()) continue;
    SplitMix64 rng(derive_seed(config.seed, fnv1a(e.name.data(), e.name.size())));
    GradcheckReport rep;
    rep.name = e.name;
    for (const auto& c : e.cases(rng)) check_case(c, config, rng, rep);
    rep.passed = rep.worst_error < config.tol;
    out.push_back(rep);
  }
  return out;
}

// ---- full network ---------------------------------------------------------------------

namespace {

// The generator unrolled into layers whose outputs are cached, so that a
// perturbed parameter only reruns the layers from its own onwards.
class LayeredNetwork {
 public:
  LayeredNetwork(const ModelWeights<double>& w, std::int64_t hw) {
    const auto plan = block_plan(w.variant, hw);
    auto layer_steps = [&](int block) {
      const auto& bp = plan[static_cast<std::size_t>(block - 1)];
      for (int l = 0; l < 2; ++l) {
        const auto prefix = "tb" + std::to_string(block) + ".l" + std::to_string(l);
        const auto params = w.layer(block, l);
        const auto src = last();
        add(prefix, [=](const Cache& c) {
          return transformer_layer(c[static_cast<std::size_t>(src)], bp.stage, params, bp.ffn_kernel);
        });
      }
      return last();
    };
    auto single = [&](const std::string& prefix, std::function<TensorD(const TensorD&)> f) {
      const auto src = last();
      add(prefix, [=](const Cache& c) { return f(c[static_cast<std::size_t>(src)]); });
      return last();
    };
    auto fuse = [&](const std::string& prefix, int skip, int up) {
      const auto p = w.pair(prefix);
      add(prefix, [=](const Cache& c) {
        return conv_fuse(c[static_cast<std::size_t>(skip)], c[static_cast<std::size_t>(up)], p);
      });
      return last();
    };
    const auto enc = w.pair("enc");
    add("enc", [=](const Cache& c) { return encode(c[0], enc); });
    switch (w.variant) {
      case ArchVariant::kUAttention: {
        const int t1 = layer_steps(1);
        const auto d1 = w.pair("down1");
        single("down1", [=](const TensorD& x) { return conv_down(x, d1); });
        const int t2 = layer_steps(2);
        const auto d2 = w.pair("down2");
        single("down2", [=](const TensorD& x) { return conv_down(x, d2); });
        layer_steps(3);
        const auto u1 = w.pair("up1");
        const int up1 = single("up1", [=](const TensorD& x) { return conv_up(x, u1); });
        fuse("fuse1", t2, up1);
        layer_steps(4);
        const auto u2 = w.pair("up2");
        const int up2 = single("up2", [=](const TensorD& x) { return conv_up(x, u2); });
        fuse("fuse2", t1, up2);
        layer_steps(5);
        break;
      }
      case ArchVariant::kBaselineCascade3:
      case ArchVariant::kPyramid3:
        for (int b = 1; b <= 3; ++b) layer_steps(b);
        break;
      case ArchVariant::kSimplifiedHourglass5: {
        const int t1 = layer_steps(1);
        const int t2 = layer_steps(2);
        const int t3 = layer_steps(3);
        fuse("fuse1", t2, t3);
        const int t4 = layer_steps(4);
        fuse("fuse2", t1, t4);
        layer_steps(5);
        break;
      }
    }
    const auto dec = w.pair("dec");
    single("dec", [=](const TensorD& x) { return decode(x, dec); });
  }

  using Cache = std::vector<TensorD>;  // slot 0 holds the input image batch

  /// Reruns layers from `first` (0-based) on a copy of the cached outputs.
  TensorD evaluate(const Cache& cache, std::size_t first) const {
    Cache work(cache.begin(), cache.end());
    for (std::size_t i = first; i < steps_.size(); ++i) work[i + 1] = steps_[i].fn(work);
    return work.back();
  }

  Cache prime(const TensorD& input) const {
    Cache c(steps_.size() + 1);
    c[0] = input;
    for (std::size_t i = 0; i < steps_.size(); ++i) c[i + 1] = steps_[i].fn(c);
    return c;
  }

  /// Layer index (0-based in steps_) that owns a parameter.
  std::size_t owner(const std::string& param) const {
    for (std::size_t i = 0; i < steps_.size(); ++i) {
      const auto& p = steps_[i].prefix;
      if (param.compare(0, p.size(), p) == 0 && param.size() > p.size() && param[p.size()] == '.') {
        return i;
      }
    }
    throw Error("parameter " + param + " belongs to no layer");
  }

 private:
  struct Step {
    std::string prefix;
    std::function<TensorD(const Cache&)> fn;
  };

  int last() const { return static_cast<int>(steps_.size()); }
  void add(std::string prefix, std::function<TensorD(const Cache&)> fn) {
    steps_.push_back({std::move(prefix), std::move(fn)});
  }

  std::vector<Step> steps_;
};

}  // namespace

NetworkGradcheckReport network_gradcheck(const NetworkGradcheckConfig& cfg) {
  const auto w32 = build_model<float>(cfg.variant, cfg.input_hw, cfg.seed);
  SplitMix64 rng(derive_seed(cfg.seed, 0x6e6574));
  const auto s = cfg.input_hw;
  std::vector<double> img(static_cast<std::size_t>(3 * s * s)), proj(img.size());
  for (auto& v : img) v = rng.uniform(-1.0, 1.0);
  for (auto& v : proj) v = rng.uniform(-1.0, 1.0);
  const auto x32 = TensorF::from_data({1, 3, s, s}, std::vector<float>(img.begin(), img.end()));
  const auto r32 = TensorF::from_data({1, 3, s, s}, std::vector<float>(proj.begin(), proj.end()));

  auto params32 = w32.params;
  zero_grads(params32);
  ops::sum(ops::mul(forward(x32, w32), r32)).backward();

  ModelWeights<double> w64;
  w64.variant = w32.variant;
  w64.input_hw = w32.input_hw;
  for (const auto& [name, t] : w32.params) w64.params.emplace(name, cast<double>(t));
  const auto x64 = cast<double>(x32);
  const auto r64 = cast<double>(r32);

  NoGradGuard guard;
  const LayeredNetwork net(w64, s);
  auto cache = net.prime(x64);
  {
    const auto reference = forward(x64, w64);
    const auto& out = cache.back();
    if (!std::equal(out.data().begin(), out.data().end(), reference.data().begin())) {
      throw Error("layered evaluation disagrees with forward()");
    }
  }
  auto loss_from = [&](std::size_t first) {
    return ops::sum(ops::mul(net.evaluate(cache, first), r64)).item();
  };

  struct Sample {
    std::string name;
    std::int64_t index;
    double analytic, numeric;
  };
  std::vector<Sample> samples;
  for (auto& [name, t64] : w64.params) {
    const auto n = t64.numel();
    const auto k = std::max<std::int64_t>(1, std::llround(cfg.fraction * static_cast<double>(n)));
    std::vector<std::int64_t> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), 0);
    for (std::int64_t i = 0; i < k; ++i) {
      const auto j = i + static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(n - i)));
      std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
    }
    const auto first = net.owner(name);
    const auto grad = w32.params.at(name).grad();
    auto values = t64.mutable_data();
    for (std::int64_t i = 0; i < k; ++i) {
      const auto e = static_cast<std::size_t>(idx[static_cast<std::size_t>(i)]);
      const double keep = values[e];
      values[e] = keep + cfg.step;
      const double up = loss_from(first);
      values[e] = keep - cfg.step;
      const double down = loss_from(first);
      values[e] = keep;
      samples.push_back({name, static_cast<std::int64_t>(e), grad[e], (up - down) / (2.0 * cfg.step)});
    }
  }

  NetworkGradcheckReport rep;
  rep.sampled = static_cast<std::int64_t>(samples.size());
  for (const auto& smp : samples) {
    rep.max_abs_gradient = std::max(rep.max_abs_gradient, std::abs(smp.numeric));
  }
  const double floor = cfg.floor * rep.max_abs_gradient;
  for (const auto& smp : samples) {
    const double err = relative_error(smp.analytic, smp.numeric, floor);
    if (err > rep.worst_error) {
      rep.worst_error = err;
      rep.worst_parameter = smp.name;
      rep.worst_index = smp.index;
    }
  }
  return rep;
}

}  // namespace uattn
