// Copyright 2026 The U-Attention Authors
// SPDX-License-Identifier: Apache-2.0

#include "uattn/cli.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <optional>
#include <ostream>
#include <sstream>

#include "uattn/data.hpp"
#include "uattn/gradcheck.hpp"
#include "uattn/metrics.hpp"
#include "uattn/model.hpp"
#include "uattn/train.hpp"

namespace uattn {

namespace {

class UsageError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

template <typename F>
auto as_data_error(F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const NumericError&) {
    throw;
  } catch (const Error& e) {
    throw DataError(e.what());
  }
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

struct Global {
  std::optional<std::uint64_t> seed;
  std::string config;
};

struct TrainArgs {
  std::string data, procedural, out, arch, resume, fine_tune;
  bool no_gan = false;
  std::optional<std::int64_t> epochs, batch, size;
};

struct InferArgs {
  std::string ckpt, input, output;
};

struct EvalArgs {
  std::string ckpt, data, procedural, metrics = "ssim,cfd", baseline;
};

struct VizArgs {
  std::string ckpt, input, patch = "0,0", out;
  int stage = 0;
};

struct GradArgs {
  std::string ops;
  double tol = 1e-4;
  bool network = false;
  double fraction = 0.01;
};

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::vector<TensorF> procedural_targets(const std::string& manifest, std::int64_t size) {
  std::vector<TensorF> out;
  for (const auto& spec : load_manifest(manifest)) out.push_back(generate(spec, size));
  return out;
}

// Accepts a crop of half the model size (zero-padded here) or a full-size input.
TensorF model_input(const TensorF& img, std::int64_t size) {
  if (img.dim(1) != img.dim(2)) throw UsageError("input image must be square");
  if (img.dim(1) == size) return img;
  if (img.dim(1) != size / 2) {
    throw UsageError("input of side " + std::to_string(img.dim(1)) + " does not fit a model of size " +
                     std::to_string(size) + " (expected " + std::to_string(size / 2) + " or " +
                     std::to_string(size) + ")");
  }
  std::vector<float> padded(static_cast<std::size_t>(3 * size * size), 0.0f);
  const auto half = size / 2, lo = size / 4;
  for (std::int64_t c = 0; c < 3; ++c) {
    for (std::int64_t y = 0; y < half; ++y) {
      for (std::int64_t x = 0; x < half; ++x) {
        padded[static_cast<std::size_t>((c * size + lo + y) * size + lo + x)] =
            img.data()[static_cast<std::size_t>((c * half + y) * half + x)];
      }
    }
  }
  return TensorF::from_data({3, size, size}, std::move(padded));
}

int cmd_train(const Global& g, const TrainArgs& a, std::ostream& out) {
  if (a.data.empty() == a.procedural.empty()) {
    throw UsageError("train needs exactly one of --data or --procedural");
  }
  TrainConfig cfg;
  std::optional<TrainState> start;
  if (!a.resume.empty() || !a.fine_tune.empty()) {
    if (!a.resume.empty() && !a.fine_tune.empty()) {
      throw UsageError("--resume and --fine-tune are mutually exclusive");
    }
    start = as_data_error([&] { return load_checkpoint(a.resume.empty() ? a.fine_tune : a.resume); });
    cfg = start->config;
  } else if (!g.config.empty()) {
    cfg = load_config(g.config);
  }
  if (!a.resume.empty()) {
    if (!a.arch.empty() || a.no_gan || a.batch || a.size || g.seed) {
      throw UsageError("--resume continues the stored run; only --epochs may change");
    }
    if (a.epochs) cfg.epochs = *a.epochs;
  } else {
    if (!a.arch.empty()) cfg.variant = parse_variant(a.arch);
    if (a.no_gan) cfg.use_gan = false;
    if (a.epochs) cfg.epochs = *a.epochs;
    if (a.batch) cfg.batch_size = *a.batch;
    if (a.size) cfg.input_hw = *a.size;
    if (g.seed) cfg.model_seed = cfg.data_seed = *g.seed;
  }
  cfg.validate();
  if (start && !a.fine_tune.empty() && start->config.variant != cfg.variant) {
    throw UsageError("--fine-tune cannot change the architecture");
  }

  const auto targets = as_data_error([&] {
    return a.data.empty() ? procedural_targets(a.procedural, cfg.input_hw)
                          : load_directory(a.data, cfg.input_hw);
  });
  if (targets.empty()) throw DataError("no training images found");
  if (static_cast<std::int64_t>(targets.size()) < cfg.batch_size) {
    throw DataError("dataset of " + std::to_string(targets.size()) + " images is smaller than batch " +
                    std::to_string(cfg.batch_size));
  }
  const auto dataset = make_dataset(targets);

  TrainOptions opts;
  opts.out_dir = a.out;
  TrainState state;
  TrainResult result;
  if (!a.fine_tune.empty()) {
    start->config.batch_size = cfg.batch_size;
    start->config.use_gan = cfg.use_gan;
    state = fine_tune(*start, cfg.input_hw, cfg.epochs, dataset, opts);
  } else {
    if (start) {
      state = std::move(*start);
      state.config = cfg;
    } else {
      state = init_state(cfg);
    }
    result = train(state, dataset, opts);
  }
  out << "variant: " << variant_name(state.config.variant) << "\n"
      << "input_hw: " << state.config.input_hw << "\n"
      << "steps: " << state.step << "\n";
  if (!result.history.empty()) {
    const auto& last = result.history.back().gen;
    out << "final_l1: " << fmt(last.l1) << "\n"
        << "final_total: " << fmt(last.total) << "\n";
  }
  for (const auto& p : result.checkpoints) out << "checkpoint: " << p.string() << "\n";
  return kExitOk;
}

int cmd_infer(const InferArgs& a, std::ostream& out) {
  const auto state = as_data_error([&] { return load_checkpoint(a.ckpt); });
  const auto img = as_data_error([&] { return load_image(a.input); });
  const auto x = model_input(img, state.config.input_hw);
  TensorF y;
  {
    NoGradGuard guard;
    y = forward(x, state.gen);
  }
  as_data_error([&] {
    save_image(y, a.output);
    return 0;
  });
  out << "output: " << a.output << " (" << y.dim(2) << "x" << y.dim(1) << ")\n";
  return kExitOk;
}

int cmd_eval(const Global& g, const EvalArgs& a, std::ostream& out) {
  if (a.data.empty() == a.procedural.empty()) {
    throw UsageError("eval needs exactly one of --data or --procedural");
  }
  bool want_ssim = false, want_cfd = false;
  for (const auto& m : split_list(a.metrics)) {
    if (m == "ssim") want_ssim = true;
    else if (m == "cfd") want_cfd = true;
    else throw UsageError("unknown metric '" + m + "' (expected ssim,cfd)");
  }
  if (!a.baseline.empty() && a.baseline != "naive-tile") {
    throw UsageError("unknown baseline '" + a.baseline + "' (expected naive-tile)");
  }
  const bool baseline = !a.baseline.empty();
  const auto state = as_data_error([&] { return load_checkpoint(a.ckpt); });
  const auto size = state.config.input_hw;
  std::vector<std::string> names;
  const auto targets = as_data_error([&] {
    if (!a.data.empty()) {
      for (const auto& f : image_files(a.data)) names.push_back(f.filename().string());
      return load_directory(a.data, size);
    }
    auto t = procedural_targets(a.procedural, size);
    for (std::size_t i = 0; i < t.size(); ++i) names.push_back("procedural[" + std::to_string(i) + "]");
    return t;
  });
  if (targets.empty()) throw DataError("no evaluation images found");

  const FrozenExtractor fx(state.config.extractor_seed);
  const std::uint64_t seed = g.seed.value_or(0);
  double s_sum = 0, c_sum = 0, bs_sum = 0, bc_sum = 0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const auto pair = make_pair(targets[i]);
    TensorF y;
    {
      NoGradGuard guard;
      y = forward(pair.input, state.gen);
    }
    out << "image: " << names[i] << "\n";
    if (want_ssim) {
      const double v = ssim(y, pair.target);
      s_sum += v;
      out << "  ssim: " << fmt(v) << "\n";
    }
    if (want_cfd) {
      const double v = crop_feature_distance(fx, y, pair.target, 8, 0.5, seed);
      c_sum += v;
      out << "  cfd: " << fmt(v) << "\n";
    }
    if (baseline) {
      const auto tile = naive_tile(pair);
      if (want_ssim) {
        const double v = ssim(tile, pair.target);
        bs_sum += v;
        out << "  naive_tile_ssim: " << fmt(v) << "\n";
      }
      if (want_cfd) {
        const double v = crop_feature_distance(fx, tile, pair.target, 8, 0.5, seed);
        bc_sum += v;
        out << "  naive_tile_cfd: " << fmt(v) << "\n";
      }
    }
  }
  const auto n = static_cast<double>(targets.size());
  out << "images: " << targets.size() << "\n";
  if (want_ssim) out << "mean_ssim: " << fmt(s_sum / n) << "\n";
  if (want_cfd) out << "mean_cfd: " << fmt(c_sum / n) << "\n";
  if (baseline && want_ssim) out << "mean_naive_tile_ssim: " << fmt(bs_sum / n) << "\n";
  if (baseline && want_cfd) out << "mean_naive_tile_cfd: " << fmt(bc_sum / n) << "\n";
  return kExitOk;
}

int cmd_viz(const VizArgs& a, std::ostream& out) {
  const auto parts = split_list(a.patch);
  int row = 0, col = 0;
  try {
    if (parts.size() != 2) throw std::invalid_argument("patch");
    row = std::stoi(parts[0]);
    col = std::stoi(parts[1]);
  } catch (const std::logic_error&) {
    throw UsageError("--patch expects r,c");
  }
  const auto state = as_data_error([&] { return load_checkpoint(a.ckpt); });
  const auto blocks = static_cast<int>(block_plan(state.config.variant, state.config.input_hw).size());
  if (a.stage < 1 || a.stage > blocks) {
    throw UsageError("--stage must lie in 1.." + std::to_string(blocks));
  }
  const auto img = as_data_error([&] { return load_image(a.input); });
  const auto x = model_input(img, state.config.input_hw);
  AttentionRecord rec;
  try {
    rec = extract_attention(state.gen, x, a.stage, row, col);
  } catch (const ConfigError& e) {
    throw UsageError(e.what());
  }
  const auto base = attention_base_image(rec, state.config.input_hw);
  const auto overlay = render_attention_overlay(rec, base);
  as_data_error([&] {
    save_image(overlay, a.out);
    return 0;
  });
  out << "stage: " << a.stage << "\n"
      << "grid: " << rec.geometry.parts << "x" << rec.geometry.parts << "\n"
      << "patch: " << row << "," << col << "\n"
      << "weights:";
  for (double w : rec.weights) out << " " << fmt(w);
  out << "\noutput: " << a.out << "\n";
  return kExitOk;
}

int cmd_gradcheck(const GradArgs& a, std::ostream& out) {
  GradcheckConfig cfg;
  cfg.tol = a.tol;
  std::vector<GradcheckReport> reports;
  try {
    reports = run_gradcheck(split_list(a.ops), cfg);
  } catch (const ConfigError& e) {
    throw UsageError(e.what());
  }
  bool ok = true;
  for (const auto& r : reports) {
    char line[160];
    std::snprintf(line, sizeof line, "%-22s worst_rel_error=%.3e entries=%lld %s", r.name.c_str(),
                  r.worst_error, static_cast<long long>(r.entries), r.passed ? "PASS" : "FAIL");
    out << line << "\n";
    ok = ok && r.passed;
  }
  if (a.network) {
    NetworkGradcheckConfig ncfg;
    ncfg.fraction = a.fraction;
    const auto r = network_gradcheck(ncfg);
    const bool pass = r.worst_error < 1e-3;
    char line[200];
    std::snprintf(line, sizeof line, "%-22s worst_rel_error=%.3e sampled=%lld %s", "network",
                  r.worst_error, static_cast<long long>(r.sampled), pass ? "PASS" : "FAIL");
    out << line << "\n";
    ok = ok && pass;
  }
  return ok ? kExitOk : kExitCheckFailed;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"U-Attention texture synthesis", "uattn"};
  app.require_subcommand(1);
  app.fallthrough();
  Global g;
  std::uint64_t seed_value = 0;
  auto* seed_opt = app.add_option("--seed", seed_value, "Seed for weights, data order and crops");
  app.add_option("--config", g.config, "key=value configuration file")->check(CLI::ExistingFile);

  TrainArgs ta;
  auto* train_cmd = app.add_subcommand("train", "Train a generator");
  train_cmd->add_option("--data", ta.data, "Directory of PPM textures");
  train_cmd->add_option("--procedural", ta.procedural, "Procedural texture manifest");
  train_cmd->add_option("--out", ta.out, "Output directory")->required();
  train_cmd->add_option("--arch", ta.arch, "uattn|baseline|pyramid|hourglass-simple");
  train_cmd->add_flag("--no-gan", ta.no_gan, "Drop the adversarial loss");
  train_cmd->add_option("--epochs", ta.epochs, "Epochs");
  train_cmd->add_option("--batch", ta.batch, "Batch size");
  train_cmd->add_option("--size", ta.size, "Target side length (multiple of 32)");
  train_cmd->add_option("--resume", ta.resume, "Continue from a checkpoint");
  train_cmd->add_option("--fine-tune", ta.fine_tune, "Fine-tune a checkpoint at --size");

  InferArgs ia;
  auto* infer_cmd = app.add_subcommand("infer", "Synthesize a 2x texture");
  infer_cmd->add_option("--ckpt", ia.ckpt)->required();
  infer_cmd->add_option("--input", ia.input)->required();
  infer_cmd->add_option("--output", ia.output)->required();

  EvalArgs ea;
  auto* eval_cmd = app.add_subcommand("eval", "Score a generator on held-out textures");
  eval_cmd->add_option("--ckpt", ea.ckpt)->required();
  eval_cmd->add_option("--data", ea.data, "Directory of PPM targets");
  eval_cmd->add_option("--procedural", ea.procedural, "Procedural texture manifest");
  eval_cmd->add_option("--metrics", ea.metrics, "Comma list of ssim,cfd");
  eval_cmd->add_option("--baseline", ea.baseline, "naive-tile");

  VizArgs va;
  auto* viz_cmd = app.add_subcommand("viz-attn", "Render the attention of one output patch");
  viz_cmd->add_option("--ckpt", va.ckpt)->required();
  viz_cmd->add_option("--input", va.input)->required();
  viz_cmd->add_option("--stage", va.stage, "Transformer block 1..5")->required();
  viz_cmd->add_option("--patch", va.patch, "Output patch r,c (default 0,0)");
  viz_cmd->add_option("--out", va.out)->required();

  GradArgs ga;
  auto* grad_cmd = app.add_subcommand("gradcheck", "Finite-difference gradient verification");
  grad_cmd->add_option("--ops", ga.ops, "Comma list of ops (default: all)");
  grad_cmd->add_option("--tol", ga.tol, "Relative error tolerance");
  grad_cmd->add_flag("--network", ga.network, "Also run the sampled full-network check");
  grad_cmd->add_option("--fraction", ga.fraction, "Share of parameters sampled by --network");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  if (seed_opt->count() > 0) g.seed = seed_value;

  try {
    if (*train_cmd) return cmd_train(g, ta, out);
    if (*infer_cmd) return cmd_infer(ia, out);
    if (*eval_cmd) return cmd_eval(g, ea, out);
    if (*viz_cmd) return cmd_viz(va, out);
    if (*grad_cmd) return cmd_gradcheck(ga, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const NumericError& e) {
    err << "numeric abort: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const IoError& e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const FormatError& e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ShapeError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << "\n";
    return kExitInternal;
  }
  return kExitUsage;
}

}  // namespace uattn
