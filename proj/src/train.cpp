// Copyright 2026 The U-Attention Authors
// SPDX-License-Identifier: Apache-2.0

#include "uattn/train.hpp"

#include <bit>
#include <chrono>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "uattn/ops.hpp"
#include "uattn/rng.hpp"

namespace uattn {

// ---- config ----------------------------------------------------------------------------

bool TrainConfig::operator==(const TrainConfig& o) const {
  return variant == o.variant && input_hw == o.input_hw && batch_size == o.batch_size &&
         epochs == o.epochs && adam.lr == o.adam.lr && adam.beta1 == o.adam.beta1 &&
         adam.beta2 == o.adam.beta2 && adam.eps == o.adam.eps && loss == o.loss &&
         use_gan == o.use_gan && model_seed == o.model_seed && data_seed == o.data_seed &&
         extractor_seed == o.extractor_seed && checkpoint_every == o.checkpoint_every;
}

void TrainConfig::validate() const {
  if (input_hw < 32 || input_hw % 32 != 0) {
    throw ConfigError("input_hw must be a positive multiple of 32, got " +
                      std::to_string(input_hw));
  }
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (use_gan && batch_size < 2) {
    throw ConfigError("the adversarial loss needs batch_size >= 2 (batch axis is time)");
  }
  if (epochs < 0) throw ConfigError("epochs must be non-negative");
  if (checkpoint_every < 1) throw ConfigError("checkpoint_every must be at least 1");
  if (!(adam.lr > 0.0) || !(adam.eps > 0.0) || adam.beta1 < 0.0 || adam.beta1 >= 1.0 ||
      adam.beta2 < 0.0 || adam.beta2 >= 1.0) {
    throw ConfigError("invalid Adam hyper-parameters");
  }
  for (double w : {loss.l1, loss.perceptual, loss.style, loss.gan}) {
    if (!std::isfinite(w) || w < 0.0) throw ConfigError("loss weights must be finite and >= 0");
  }
}

namespace {

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double parse_double(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double out = 0.0;
  try {
    out = std::stod(v, &used);
  } catch (const std::logic_error&) {
    used = 0;
  }
  if (used != v.size() || v.empty()) throw ConfigError("bad number for " + key + ": '" + v + "'");
  return out;
}

std::int64_t parse_int(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  long long out = 0;
  try {
    out = std::stoll(v, &used);
  } catch (const std::logic_error&) {
    used = 0;
  }
  if (used != v.size() || v.empty()) throw ConfigError("bad integer for " + key + ": '" + v + "'");
  return out;
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  unsigned long long out = 0;
  try {
    if (!v.empty() && v[0] != '-') out = std::stoull(v, &used);
  } catch (const std::logic_error&) {
    used = 0;
  }
  if (used != v.size() || v.empty()) throw ConfigError("bad seed for " + key + ": '" + v + "'");
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("bad boolean for " + key + ": '" + v + "'");
}

}  // namespace

std::string format_config(const TrainConfig& c) {
  std::ostringstream os;
  os << "[model]\n"
     << "variant = " << variant_name(c.variant) << "\n"
     << "input_hw = " << c.input_hw << "\n"
     << "\n[optim]\n"
     << "lr = " << fmt_double(c.adam.lr) << "\n"
     << "beta1 = " << fmt_double(c.adam.beta1) << "\n"
     << "beta2 = " << fmt_double(c.adam.beta2) << "\n"
     << "eps = " << fmt_double(c.adam.eps) << "\n"
     << "\n[loss]\n"
     << "l1 = " << fmt_double(c.loss.l1) << "\n"
     << "perceptual = " << fmt_double(c.loss.perceptual) << "\n"
     << "style = " << fmt_double(c.loss.style) << "\n"
     << "gan = " << fmt_double(c.loss.gan) << "\n"
     << "use_gan = " << (c.use_gan ? "true" : "false") << "\n"
     << "\n[seeds]\n"
     << "model = " << c.model_seed << "\n"
     << "data = " << c.data_seed << "\n"
     << "extractor = " << c.extractor_seed << "\n"
     << "\n[train]\n"
     << "batch_size = " << c.batch_size << "\n"
     << "epochs = " << c.epochs << "\n"
     << "checkpoint_every = " << c.checkpoint_every << "\n";
  return os.str();
}

void apply_config(TrainConfig& c, std::istream& in) {
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto where = "config line " + std::to_string(lineno) + ": ";
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where + "unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      if (section != "model" && section != "optim" && section != "loss" && section != "seeds" &&
          section != "train") {
        throw ConfigError(where + "unknown section [" + section + "]");
      }
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + "expected key = value");
    const auto key = section + "." + trim(line.substr(0, eq));
    const auto v = trim(line.substr(eq + 1));
    try {
      if (key == "model.variant") c.variant = parse_variant(v);
      else if (key == "model.input_hw") c.input_hw = parse_int(key, v);
      else if (key == "optim.lr") c.adam.lr = parse_double(key, v);
      else if (key == "optim.beta1") c.adam.beta1 = parse_double(key, v);
      else if (key == "optim.beta2") c.adam.beta2 = parse_double(key, v);
      else if (key == "optim.eps") c.adam.eps = parse_double(key, v);
      else if (key == "loss.l1") c.loss.l1 = parse_double(key, v);
      else if (key == "loss.perceptual") c.loss.perceptual = parse_double(key, v);
      else if (key == "loss.style") c.loss.style = parse_double(key, v);
      else if (key == "loss.gan") c.loss.gan = parse_double(key, v);
      else if (key == "loss.use_gan") c.use_gan = parse_bool(key, v);
      else if (key == "seeds.model") c.model_seed = parse_u64(key, v);
      else if (key == "seeds.data") c.data_seed = parse_u64(key, v);
      else if (key == "seeds.extractor") c.extractor_seed = parse_u64(key, v);
      else if (key == "train.batch_size") c.batch_size = parse_int(key, v);
      else if (key == "train.epochs") c.epochs = parse_int(key, v);
      else if (key == "train.checkpoint_every") c.checkpoint_every = parse_int(key, v);
      else throw ConfigError("unknown key '" + key + "'");
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    }
  }
}

TrainConfig parse_config(const std::string& text) {
  TrainConfig c;
  std::istringstream in(text);
  apply_config(c, in);
  return c;
}

TrainConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  TrainConfig c;
  apply_config(c, in);
  return c;
}

// ---- state & step -------------------------------------------------------------------------

namespace {

std::uint64_t disc_seed(const TrainConfig& c) {
  static constexpr char kSalt[] = "discriminator";
  return derive_seed(c.model_seed, fnv1a(kSalt, sizeof kSalt - 1));
}

template <typename T>
void zero_moments(const ParamMap<T>& params, AdamState<T>& state) {
  state.step_count = 0;
  state.m.clear();
  state.v.clear();
  for (const auto& [name, p] : params) {
    state.m[name].assign(static_cast<std::size_t>(p.numel()), T(0));
    state.v[name].assign(static_cast<std::size_t>(p.numel()), T(0));
  }
}

void require_finite(const TensorF& t, const std::string& what, std::int64_t step) {
  if (!t.all_finite()) {
    throw NumericError("non-finite " + what + " at step " + std::to_string(step));
  }
}

}  // namespace

TrainState init_state(const TrainConfig& config) {
  config.validate();
  TrainState s;
  s.config = config;
  s.gen = build_model<float>(config.variant, config.input_hw, config.model_seed);
  s.disc = Discriminator::build(disc_seed(config));
  zero_moments(s.gen.params, s.adam_gen);
  zero_moments(s.disc.params, s.adam_disc);
  return s;
}

StepResult train_step(const std::vector<TexturePair>& batch, TrainState& state,
                      const FrozenExtractor& extractor) {
  const auto& cfg = state.config;
  if (batch.empty()) throw ConfigError("empty batch");
  if (cfg.use_gan && batch.size() < 2) {
    throw ConfigError("the adversarial loss needs at least 2 pairs per batch");
  }
  std::vector<TensorF> inputs, targets;
  for (const auto& p : batch) {
    if (p.target.dim(1) != cfg.input_hw) {
      throw ShapeError("training pair of size " + std::to_string(p.target.dim(1)) +
                       " for a model of input size " + std::to_string(cfg.input_hw));
    }
    inputs.push_back(p.input);
    targets.push_back(p.target);
  }
  const auto x = stack(inputs);
  const auto y = stack(targets);
  const std::int64_t step = state.step + 1;
  StepResult result;
  result.step = step;

  if (cfg.use_gan) {
    TensorF fake;
    {
      NoGradGuard guard;
      fake = forward(x, state.gen);
    }
    require_finite(fake, "generator output", step);
    zero_grads(state.disc.params);
    // Power iteration advances on a copy so a failing step leaves u untouched.
    auto spectral = state.disc.spectral;
    const auto weights = spectral_weights(state.disc, 1, true);
    const auto real_scores = discriminate(y, state.disc, weights);
    const auto fake_scores = discriminate(fake, state.disc, weights);
    const auto d_loss = hinge_d_loss(real_scores, fake_scores);
    try {
      require_finite(real_scores, "discriminator real scores", step);
      require_finite(fake_scores, "discriminator fake scores", step);
      require_finite(d_loss, "discriminator loss", step);
      d_loss.backward();
      adam_step(state.disc.params, state.adam_disc, cfg.adam);
    } catch (...) {
      std::swap(state.disc.spectral, spectral);
      throw;
    }
    result.d_loss = d_loss.item();
  }

  zero_grads(state.gen.params);
  const auto out = forward(x, state.gen);
  require_finite(out, "generator output", step);
  TensorF gan_g;
  if (cfg.use_gan) {
    const auto frozen = spectral_weights(state.disc, 0, false);
    gan_g = hinge_g_loss(discriminate(out, state.disc, frozen));
  }
  const auto terms = total_loss(extractor, out, y, gan_g, cfg.loss);
  require_finite(terms.l1, "l1 loss", step);
  require_finite(terms.perceptual, "perceptual loss", step);
  require_finite(terms.style, "style loss", step);
  require_finite(terms.gan_g, "adversarial generator loss", step);
  require_finite(terms.total, "total loss", step);
  terms.total.backward();
  adam_step(state.gen.params, state.adam_gen, cfg.adam);
  // The generator pass accumulates into discriminator biases; drop them.
  if (cfg.use_gan) zero_grads(state.disc.params);
  result.gen = terms.report();
  state.step = step;
  return result;
}

// ---- checkpoint encoding -------------------------------------------------------------------

namespace {

enum class DType : std::uint8_t { kF32 = 1 };

class Writer {
 public:
  void bytes(const void* p, std::size_t n) { out_.append(static_cast<const char*>(p), n); }
  void u8(std::uint8_t v) { out_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void i64(std::int64_t v) { u64(static_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    u64(s.size());
    bytes(s.data(), s.size());
  }
  std::size_t size() const { return out_.size(); }
  const std::string& buffer() const { return out_; }
  std::uint64_t checksum_since(std::size_t start) const {
    return fnv1a(out_.data() + start, out_.size() - start);
  }

  void tensor(const std::string& name, const Shape& shape, std::span<const float> values) {
    const auto start = size();
    u32(static_cast<std::uint32_t>(name.size()));
    bytes(name.data(), name.size());
    u8(static_cast<std::uint8_t>(DType::kF32));
    u32(static_cast<std::uint32_t>(shape.size()));
    for (auto e : shape) u64(static_cast<std::uint64_t>(e));
    for (float f : values) u32(std::bit_cast<std::uint32_t>(f));
    u64(checksum_since(start));
  }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(const std::string& in) : in_(in) {}

  void need(std::size_t n) const {
    if (in_.size() - pos_ < n) throw FormatError("truncated checkpoint");
  }
  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(in_[pos_++]);
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(u8()) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(u8()) << (8 * i);
    return v;
  }
  std::int64_t i64() { return static_cast<std::int64_t>(u64()); }
  std::string raw(std::size_t n) {
    need(n);
    auto s = in_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::string str() {
    const auto n = u64();
    if (n > in_.size()) throw FormatError("truncated checkpoint");
    return raw(static_cast<std::size_t>(n));
  }
  std::size_t pos() const { return pos_; }
  bool done() const { return pos_ == in_.size(); }
  std::uint64_t checksum_since(std::size_t start) const {
    return fnv1a(in_.data() + start, pos_ - start);
  }

  struct Entry {
    std::string name;
    Shape shape;
    std::vector<float> values;
  };

  Entry tensor() {
    const auto start = pos_;
    Entry e;
    const auto name_len = u32();
    e.name = raw(name_len);
    if (u8() != static_cast<std::uint8_t>(DType::kF32)) {
      throw FormatError("unsupported dtype for tensor '" + e.name + "'");
    }
    const auto rank = u32();
    if (rank > 8) throw FormatError("implausible rank for tensor '" + e.name + "'");
    std::uint64_t count = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
      const auto d = u64();
      if (d > (1ULL << 32)) throw FormatError("implausible extent for tensor '" + e.name + "'");
      e.shape.push_back(static_cast<std::int64_t>(d));
      count *= d;
      if (count > in_.size()) throw FormatError("truncated checkpoint");
    }
    need(static_cast<std::size_t>(count) * 4);
    e.values.resize(static_cast<std::size_t>(count));
    for (auto& f : e.values) f = std::bit_cast<float>(u32());
    const auto expected = checksum_since(start);
    if (u64() != expected) throw FormatError("checksum mismatch in tensor '" + e.name + "'");
    return e;
  }

 private:
  const std::string& in_;
  std::size_t pos_ = 0;
};

// Every tensor of a state in serialization order.
template <typename Fn>
void for_each_tensor(const TrainState& s, Fn&& fn) {
  for (const auto& [name, t] : s.gen.params) fn("gen/" + name, t.shape(), t.data());
  for (const auto& [name, t] : s.disc.params) fn("disc/" + name, t.shape(), t.data());
  for (int i = 1; i <= Discriminator::kLayers; ++i) {
    const auto& u = s.disc.spectral[static_cast<std::size_t>(i - 1)].u;
    fn("disc/" + Discriminator::weight_name(i) + ".u", Shape{static_cast<std::int64_t>(u.size())},
       std::span<const float>(u));
  }
  auto moments = [&](const std::string& prefix, const auto& params, const AdamState<float>& st) {
    for (const auto& [name, t] : params) {
      const auto m = st.m.find(name);
      const auto v = st.v.find(name);
      if (m == st.m.end() || v == st.v.end()) {
        throw Error("Adam state lacks moments for " + name);
      }
      fn(prefix + "/m/" + name, t.shape(), std::span<const float>(m->second));
      fn(prefix + "/v/" + name, t.shape(), std::span<const float>(v->second));
    }
  };
  moments("adam_gen", s.gen.params, s.adam_gen);
  moments("adam_disc", s.disc.params, s.adam_disc);
}

}  // namespace

std::string encode_checkpoint(const TrainState& s) {
  Writer w;
  w.bytes(kCheckpointMagic, sizeof kCheckpointMagic);
  w.u32(kCheckpointVersion);
  w.str(format_config(s.config));
  w.i64(s.step);
  w.i64(s.adam_gen.step_count);
  w.i64(s.adam_disc.step_count);
  std::uint64_t count = 0;
  for_each_tensor(s, [&](const std::string&, const Shape&, std::span<const float>) { ++count; });
  w.u64(count);
  w.u64(w.checksum_since(0));
  for_each_tensor(s, [&](const std::string& name, const Shape& shape,
                         std::span<const float> v) { w.tensor(name, shape, v); });
  return w.buffer();
}

TrainState decode_checkpoint(const std::string& bytes) {
  Reader r(bytes);
  if (r.raw(sizeof kCheckpointMagic) != std::string(kCheckpointMagic, sizeof kCheckpointMagic)) {
    throw FormatError("not a checkpoint (bad magic)");
  }
  const auto version = r.u32();
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto config_text = r.str();
  const auto step = r.i64();
  const auto gen_steps = r.i64();
  const auto disc_steps = r.i64();
  const auto count = r.u64();
  const auto header_sum = r.checksum_since(0);
  if (r.u64() != header_sum) throw FormatError("checksum mismatch in checkpoint header");

  TrainConfig config;
  try {
    config = parse_config(config_text);
    config.validate();
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint config: ") + e.what());
  }
  // The expected layout comes from a freshly built state; values are replaced.
  TrainState s = init_state(config);
  s.step = step;
  s.adam_gen.step_count = gen_steps;
  s.adam_disc.step_count = disc_steps;

  std::map<std::string, std::pair<Shape, std::span<float>>> slots;
  for (auto& [name, t] : s.gen.params) slots["gen/" + name] = {t.shape(), t.mutable_data()};
  for (auto& [name, t] : s.disc.params) slots["disc/" + name] = {t.shape(), t.mutable_data()};
  for (int i = 1; i <= Discriminator::kLayers; ++i) {
    auto& u = s.disc.spectral[static_cast<std::size_t>(i - 1)].u;
    slots["disc/" + Discriminator::weight_name(i) + ".u"] = {
        Shape{static_cast<std::int64_t>(u.size())}, std::span<float>(u)};
  }
  auto moment_slots = [&](const std::string& prefix, auto& params, AdamState<float>& st) {
    for (auto& [name, t] : params) {
      slots[prefix + "/m/" + name] = {t.shape(), std::span<float>(st.m[name])};
      slots[prefix + "/v/" + name] = {t.shape(), std::span<float>(st.v[name])};
    }
  };
  moment_slots("adam_gen", s.gen.params, s.adam_gen);
  moment_slots("adam_disc", s.disc.params, s.adam_disc);

  if (count != slots.size()) {
    throw FormatError("checkpoint holds " + std::to_string(count) + " tensors, config implies " +
                      std::to_string(slots.size()));
  }
  std::set<std::string> seen;
  for (std::uint64_t i = 0; i < count; ++i) {
    auto e = r.tensor();
    const auto slot = slots.find(e.name);
    if (slot == slots.end()) throw FormatError("unexpected tensor '" + e.name + "'");
    if (!seen.insert(e.name).second) throw FormatError("duplicate tensor '" + e.name + "'");
    if (e.shape != slot->second.first) {
      throw FormatError("tensor '" + e.name + "' has shape " + to_string(e.shape) +
                        ", config implies " + to_string(slot->second.first));
    }
    std::copy(e.values.begin(), e.values.end(), slot->second.second.begin());
  }
  if (!r.done()) throw FormatError("trailing bytes after checkpoint payload");
  return s;
}

void save_checkpoint(const TrainState& state, const std::filesystem::path& path) {
  const auto bytes = encode_checkpoint(state);
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint " + tmp);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("failed writing checkpoint " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into place: " + ec.message());
}

TrainState load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return decode_checkpoint(ss.str());
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

std::string checkpoint_filename(std::int64_t step) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "checkpoint_%08" PRId64 ".ckpt", step);
  return buf;
}

// ---- loop -------------------------------------------------------------------------------

std::int64_t steps_per_epoch(std::size_t dataset_size, std::int64_t batch_size) {
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  return static_cast<std::int64_t>(dataset_size) / batch_size;
}

TrainResult train(TrainState& state, const std::vector<TexturePair>& dataset,
                  const TrainOptions& options) {
  const auto& cfg = state.config;
  cfg.validate();
  if (dataset.empty()) throw ConfigError("empty dataset");
  const auto per_epoch = steps_per_epoch(dataset.size(), cfg.batch_size);
  if (per_epoch == 0) {
    throw ConfigError("batch size " + std::to_string(cfg.batch_size) + " exceeds dataset size " +
                      std::to_string(dataset.size()));
  }
  const auto total = cfg.epochs * per_epoch;
  if (state.step > total) {
    throw ConfigError("checkpoint step " + std::to_string(state.step) +
                      " lies beyond the configured run of " + std::to_string(total) + " steps");
  }
  const FrozenExtractor extractor(cfg.extractor_seed);
  const bool write = !options.out_dir.empty();
  std::ofstream log;
  if (write) {
    std::filesystem::create_directories(options.out_dir);
    const auto log_path = options.out_dir / "metrics.log";
    const bool fresh = state.step == 0 || !std::filesystem::exists(log_path);
    log.open(log_path, fresh ? std::ios::trunc : std::ios::app);
    if (!log) throw IoError("cannot write " + log_path.string());
    if (fresh) log << kMetricsHeader << "\n";
  }
  TrainResult result;
  auto checkpoint = [&] {
    if (!write) return;
    const auto path = options.out_dir / checkpoint_filename(state.step);
    save_checkpoint(state, path);
    result.checkpoints.push_back(path);
  };
  if (state.step == total) {
    checkpoint();
    return result;
  }
  const auto t0 = std::chrono::steady_clock::now();
  std::int64_t cached_epoch = -1;
  std::vector<std::vector<std::size_t>> order;
  while (state.step < total) {
    const auto epoch = state.step / per_epoch;
    if (epoch != cached_epoch) {
      order = batches(dataset.size(), static_cast<std::size_t>(cfg.batch_size),
                      derive_seed(cfg.data_seed, static_cast<std::uint64_t>(epoch)));
      cached_epoch = epoch;
    }
    std::vector<TexturePair> batch;
    for (auto i : order[static_cast<std::size_t>(state.step % per_epoch)]) {
      batch.push_back(dataset[i]);
    }
    const auto r = train_step(batch, state, extractor);
    result.history.push_back(r);
    if (write) {
      const double wall =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      char line[320];
      std::snprintf(line, sizeof line, "%" PRId64 " %" PRId64 " %.9g %.9g %.9g %.9g %.9g %.9g %.3f",
                    r.step, epoch, r.gen.l1, r.gen.perceptual, r.gen.style, r.gen.gan_g,
                    r.gen.total, r.d_loss, wall);
      log << line << "\n" << std::flush;
    }
    if (options.on_step) options.on_step(r);
    if (state.step % cfg.checkpoint_every == 0 || state.step == total) checkpoint();
  }
  return result;
}

TrainState fine_tune(const TrainState& pretrained, std::int64_t new_input_hw,
                     std::int64_t epochs, const std::vector<TexturePair>& dataset,
                     const TrainOptions& options) {
  TrainConfig cfg = pretrained.config;
  cfg.input_hw = new_input_hw;
  cfg.epochs = epochs;
  cfg.validate();
  TrainState s;
  s.config = cfg;
  s.gen.variant = pretrained.gen.variant;
  s.gen.input_hw = new_input_hw;
  for (const auto& [name, t] : pretrained.gen.params) s.gen.params.emplace(name, t.clone());
  validate_weights(s.gen);
  for (const auto& [name, t] : pretrained.disc.params) s.disc.params.emplace(name, t.clone());
  s.disc.spectral = pretrained.disc.spectral;
  zero_moments(s.gen.params, s.adam_gen);
  zero_moments(s.disc.params, s.adam_disc);
  s.step = 0;
  if (epochs > 0) {
    train(s, dataset, options);
  } else if (!options.out_dir.empty()) {
    std::filesystem::create_directories(options.out_dir);
    save_checkpoint(s, options.out_dir / checkpoint_filename(0));
  }
  return s;
}

}  // namespace uattn
