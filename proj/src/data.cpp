// Copyright 2026 The U-Attention Authors
// SPDX-License-Identifier: Apache-2.0

#include "uattn/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "uattn/rng.hpp"

namespace uattn {

std::string pattern_name(PatternKind k) {
  switch (k) {
    case PatternKind::kChecker:
      return "checker";
    case PatternKind::kStripes:
      return "stripes";
    case PatternKind::kBricks:
      return "bricks";
    case PatternKind::kValueNoise:
      return "value_noise";
    case PatternKind::kBlobLattice:
      return "blob_lattice";
  }
  return "?";
}

PatternKind parse_pattern(const std::string& name) {
  for (auto k : {PatternKind::kChecker, PatternKind::kStripes, PatternKind::kBricks,
                 PatternKind::kValueNoise, PatternKind::kBlobLattice}) {
    if (pattern_name(k) == name) return k;
  }
  throw ConfigError("unknown pattern kind '" + name + "'");
}

// ---- procedural textures -----------------------------------------------------

namespace {

using Color = std::array<double, 3>;

struct Palette {
  Color a, b;
};

Palette make_palette(SplitMix64& rng) {
  Palette p{};
  for (int c = 0; c < 3; ++c) {
    const double a = rng.uniform(-0.9, 0.9);
    const double step = rng.uniform(0.8, 1.6);
    p.a[c] = a;
    p.b[c] = std::clamp(a > 0 ? a - step : a + step, -1.0, 1.0);
  }
  return p;
}

std::int64_t wrap(std::int64_t v, std::int64_t m) { return ((v % m) + m) % m; }

double smoothstep(double t) { return t * t * (3.0 - 2.0 * t); }

}  // namespace

std::int64_t repeat_length(const ProceduralSpec& spec, std::int64_t size) {
  switch (spec.kind) {
    case PatternKind::kChecker:
      return 2 * spec.period;
    case PatternKind::kStripes:
    case PatternKind::kBricks:
      return spec.period;
    case PatternKind::kValueNoise:
    case PatternKind::kBlobLattice:
      return size;  // lattice wraps around the image
  }
  return size;
}

TensorF generate(const ProceduralSpec& spec, std::int64_t size) {
  if (size < 32) throw ConfigError("procedural textures need size >= 32");
  const std::int64_t min_period = spec.kind == PatternKind::kBricks ? 4 : 2;
  if (spec.period < min_period || spec.period > size || size % spec.period != 0 ||
      size % repeat_length(spec, size) != 0) {
    throw ConfigError("invalid period " + std::to_string(spec.period) + " for " +
                      pattern_name(spec.kind) + " at size " + std::to_string(size));
  }
  SplitMix64 rng(derive_seed(spec.seed, static_cast<std::uint64_t>(spec.kind) + 1));
  const Palette pal = make_palette(rng);
  const std::int64_t p = spec.period;
  std::vector<float> data(static_cast<std::size_t>(3 * size * size));
  auto put = [&](std::int64_t y, std::int64_t x, const Color& c) {
    for (int ch = 0; ch < 3; ++ch) {
      data[static_cast<std::size_t>((ch * size + y) * size + x)] = static_cast<float>(c[ch]);
    }
  };
  auto mix = [&](double t) {
    Color c{};
    for (int ch = 0; ch < 3; ++ch) c[ch] = pal.a[ch] + (pal.b[ch] - pal.a[ch]) * t;
    return c;
  };

  switch (spec.kind) {
    case PatternKind::kChecker:
      for (std::int64_t y = 0; y < size; ++y) {
        for (std::int64_t x = 0; x < size; ++x) {
          const auto cell = wrap(x + spec.phase_x, size) / p + wrap(y + spec.phase_y, size) / p;
          put(y, x, cell % 2 ? pal.b : pal.a);
        }
      }
      break;
    case PatternKind::kStripes: {
      const auto orientation = rng.below(3);  // vertical, horizontal, diagonal
      for (std::int64_t y = 0; y < size; ++y) {
        for (std::int64_t x = 0; x < size; ++x) {
          const auto xs = x + spec.phase_x, ys = y + spec.phase_y;
          const auto u = orientation == 0 ? xs : orientation == 1 ? ys : xs + ys;
          put(y, x, wrap(u, p) < p / 2 ? pal.a : pal.b);
        }
      }
      break;
    }
    case PatternKind::kBricks: {
      const auto course = p / 2;
      const auto mortar = std::max<std::int64_t>(1, p / 16);
      for (std::int64_t y = 0; y < size; ++y) {
        for (std::int64_t x = 0; x < size; ++x) {
          const auto ys = wrap(y + spec.phase_y, size);
          const auto row = ys / course;
          const auto u = wrap(x + spec.phase_x + (row % 2 ? p / 2 : 0), p);
          const auto v = ys % course;
          put(y, x, (u < mortar || v < mortar) ? pal.b : pal.a);
        }
      }
      break;
    }
    case PatternKind::kValueNoise: {
      const auto cells = size / p;
      std::vector<double> lattice(static_cast<std::size_t>(cells * cells));
      for (auto& v : lattice) v = rng.uniform(-1.0, 1.0);
      Color gain{};
      for (auto& g : gain) g = rng.uniform(0.6, 1.0);
      auto at = [&](std::int64_t i, std::int64_t j) {
        return lattice[static_cast<std::size_t>(wrap(i, cells) * cells + wrap(j, cells))];
      };
      for (std::int64_t y = 0; y < size; ++y) {
        for (std::int64_t x = 0; x < size; ++x) {
          const auto ys = wrap(y + spec.phase_y, size), xs = wrap(x + spec.phase_x, size);
          const auto i = ys / p, j = xs / p;
          const double ty = smoothstep(static_cast<double>(ys % p) / static_cast<double>(p));
          const double tx = smoothstep(static_cast<double>(xs % p) / static_cast<double>(p));
          const double top = at(i, j) + (at(i, j + 1) - at(i, j)) * tx;
          const double bot = at(i + 1, j) + (at(i + 1, j + 1) - at(i + 1, j)) * tx;
          const double n = top + (bot - top) * ty;
          put(y, x, Color{n * gain[0], n * gain[1], n * gain[2]});
        }
      }
      break;
    }
    case PatternKind::kBlobLattice: {
      const auto cells = size / p;
      std::vector<std::array<double, 2>> centres(static_cast<std::size_t>(cells * cells));
      for (auto& c : centres) {
        c = {rng.uniform(0.25, 0.75) * static_cast<double>(p),
             rng.uniform(0.25, 0.75) * static_cast<double>(p)};
      }
      const double sigma = static_cast<double>(p) / 5.0;
      for (std::int64_t y = 0; y < size; ++y) {
        for (std::int64_t x = 0; x < size; ++x) {
          const auto ys = wrap(y + spec.phase_y, size), xs = wrap(x + spec.phase_x, size);
          double best = 1e300;
          for (std::int64_t di = -1; di <= 1; ++di) {
            for (std::int64_t dj = -1; dj <= 1; ++dj) {
              const auto i = ys / p + di, j = xs / p + dj;
              const auto& c = centres[static_cast<std::size_t>(wrap(i, cells) * cells +
                                                               wrap(j, cells))];
              const double cy = static_cast<double>(i * p) + c[0];
              const double cx = static_cast<double>(j * p) + c[1];
              const double dy = static_cast<double>(ys) + 0.5 - cy;
              const double dx = static_cast<double>(xs) + 0.5 - cx;
              best = std::min(best, dy * dy + dx * dx);
            }
          }
          put(y, x, mix(std::exp(-best / (2.0 * sigma * sigma))));
        }
      }
      break;
    }
  }
  return TensorF::from_data({3, size, size}, std::move(data));
}

std::string format_spec(const ProceduralSpec& spec) {
  std::ostringstream os;
  os << "kind=" << pattern_name(spec.kind) << " seed=" << spec.seed << " period=" << spec.period
     << " phase_x=" << spec.phase_x << " phase_y=" << spec.phase_y;
  return os.str();
}

std::vector<ProceduralSpec> parse_manifest(std::istream& in) {
  std::vector<ProceduralSpec> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream fields(line);
    std::string field;
    ProceduralSpec spec;
    bool any = false, has_kind = false;
    while (fields >> field) {
      const auto eq = field.find('=');
      if (eq == std::string::npos) {
        throw ConfigError("manifest line " + std::to_string(lineno) + ": expected key=value, got '" +
                          field + "'");
      }
      const auto key = field.substr(0, eq);
      const auto value = field.substr(eq + 1);
      any = true;
      try {
        if (key == "kind") {
          spec.kind = parse_pattern(value);
          has_kind = true;
        } else if (key == "seed") {
          spec.seed = std::stoull(value);
        } else if (key == "period") {
          spec.period = std::stoll(value);
        } else if (key == "phase_x") {
          spec.phase_x = std::stoll(value);
        } else if (key == "phase_y") {
          spec.phase_y = std::stoll(value);
        } else {
          throw ConfigError("unknown key '" + key + "'");
        }
      } catch (const std::logic_error&) {
        throw ConfigError("manifest line " + std::to_string(lineno) + ": bad value for " + key);
      } catch (const ConfigError& e) {
        throw ConfigError("manifest line " + std::to_string(lineno) + ": " + e.what());
      }
    }
    if (!any) continue;
    if (!has_kind) throw ConfigError("manifest line " + std::to_string(lineno) + ": missing kind");
    out.push_back(spec);
  }
  return out;
}

std::vector<ProceduralSpec> load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  return parse_manifest(in);
}

// ---- PPM ---------------------------------------------------------------------------

namespace {

// Next header token, skipping whitespace and '#' comments.
std::string header_token(const std::string& bytes, std::size_t& pos) {
  while (pos < bytes.size()) {
    const char c = bytes[pos];
    if (c == '#') {
      while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
    } else if (std::isspace(static_cast<unsigned char>(c))) {
      ++pos;
    } else {
      break;
    }
  }
  const auto start = pos;
  while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos])) &&
         bytes[pos] != '#') {
    ++pos;
  }
  if (start == pos) throw FormatError("malformed PPM header");
  return bytes.substr(start, pos - start);
}

std::int64_t header_int(const std::string& bytes, std::size_t& pos, const char* what) {
  const auto tok = header_token(bytes, pos);
  if (tok.empty() || !std::all_of(tok.begin(), tok.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); })) {
    throw FormatError(std::string("malformed PPM ") + what + " '" + tok + "'");
  }
  return std::stoll(tok);
}

}  // namespace

TensorF decode_ppm(const std::string& bytes) {
  std::size_t pos = 0;
  if (header_token(bytes, pos) != "P6") throw FormatError("not a binary PPM (P6) file");
  const auto w = header_int(bytes, pos, "width");
  const auto h = header_int(bytes, pos, "height");
  const auto maxval = header_int(bytes, pos, "maxval");
  if (w <= 0 || h <= 0) throw FormatError("PPM with zero extent");
  if (maxval != 255) throw FormatError("unsupported PPM maxval " + std::to_string(maxval));
  if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos]))) {
    throw FormatError("malformed PPM header terminator");
  }
  ++pos;
  const auto n = static_cast<std::size_t>(w * h * 3);
  if (bytes.size() - pos < n) throw FormatError("truncated PPM payload");
  std::vector<float> data(n);
  for (std::int64_t y = 0; y < h; ++y) {
    for (std::int64_t x = 0; x < w; ++x) {
      for (std::int64_t c = 0; c < 3; ++c) {
        const auto b = static_cast<unsigned char>(bytes[pos + static_cast<std::size_t>((y * w + x) * 3 + c)]);
        data[static_cast<std::size_t>((c * h + y) * w + x)] =
            2.0f * static_cast<float>(b) / 255.0f - 1.0f;
      }
    }
  }
  return TensorF::from_data({3, h, w}, std::move(data));
}

std::string encode_ppm(const TensorF& image) {
  if (image.rank() != 3 || image.dim(0) != 3) {
    throw ShapeError("save_image expects a [3,H,W] image, got " + to_string(image.shape()));
  }
  const auto h = image.dim(1), w = image.dim(2);
  std::string out = "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  const auto header = out.size();
  out.resize(header + static_cast<std::size_t>(w * h * 3));
  const auto src = image.data();
  for (std::int64_t y = 0; y < h; ++y) {
    for (std::int64_t x = 0; x < w; ++x) {
      for (std::int64_t c = 0; c < 3; ++c) {
        const double v = (static_cast<double>(src[static_cast<std::size_t>((c * h + y) * w + x)]) + 1.0) * 127.5;
        const double r = std::floor(v + 0.5);
        const auto b = static_cast<int>(std::clamp(std::isnan(r) ? 0.0 : r, 0.0, 255.0));
        out[header + static_cast<std::size_t>((y * w + x) * 3 + c)] = static_cast<char>(b);
      }
    }
  }
  return out;
}

TensorF load_image(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open image " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return decode_ppm(ss.str());
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void save_image(const TensorF& image, const std::filesystem::path& path) {
  const auto bytes = encode_ppm(image);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write image " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing image " + path.string());
}

// ---- resampling & pairs ---------------------------------------------------------------

TensorF resize_bilinear(const TensorF& image, std::int64_t target_h, std::int64_t target_w) {
  if (image.rank() != 3) throw ShapeError("resize_bilinear expects [C,H,W]");
  const auto c = image.dim(0), h = image.dim(1), w = image.dim(2);
  if (h < 2 || w < 2) throw ShapeError("resize_bilinear needs at least 2 pixels per side");
  if (target_h < 1 || target_w < 1) throw ShapeError("resize_bilinear: degenerate target size");
  struct Tap {
    std::int64_t i0, i1;
    double f;
  };
  auto taps = [](std::int64_t in, std::int64_t out) {
    std::vector<Tap> t(static_cast<std::size_t>(out));
    const double ratio = static_cast<double>(in) / static_cast<double>(out);
    for (std::int64_t o = 0; o < out; ++o) {
      double src = (static_cast<double>(o) + 0.5) * ratio - 0.5;
      src = std::clamp(src, 0.0, static_cast<double>(in - 1));
      const auto i0 = static_cast<std::int64_t>(std::floor(src));
      t[static_cast<std::size_t>(o)] = {i0, std::min(i0 + 1, in - 1), src - static_cast<double>(i0)};
    }
    return t;
  };
  const auto ty = taps(h, target_h);
  const auto tx = taps(w, target_w);
  const auto src = image.data();
  std::vector<float> out(static_cast<std::size_t>(c * target_h * target_w));
  for (std::int64_t ch = 0; ch < c; ++ch) {
    const float* plane = src.data() + ch * h * w;
    for (std::int64_t y = 0; y < target_h; ++y) {
      const auto& a = ty[static_cast<std::size_t>(y)];
      for (std::int64_t x = 0; x < target_w; ++x) {
        const auto& b = tx[static_cast<std::size_t>(x)];
        const double top = plane[a.i0 * w + b.i0] * (1.0 - b.f) + plane[a.i0 * w + b.i1] * b.f;
        const double bot = plane[a.i1 * w + b.i0] * (1.0 - b.f) + plane[a.i1 * w + b.i1] * b.f;
        out[static_cast<std::size_t>((ch * target_h + y) * target_w + x)] =
            static_cast<float>(top * (1.0 - a.f) + bot * a.f);
      }
    }
  }
  return TensorF::from_data({c, target_h, target_w}, std::move(out));
}

TexturePair make_pair(const TensorF& target) {
  if (target.rank() != 3 || target.dim(0) != 3 || target.dim(1) != target.dim(2)) {
    throw ShapeError("make_pair expects a square [3,S,S] target, got " + to_string(target.shape()));
  }
  const auto s = target.dim(1);
  if (s % 4 != 0) throw ShapeError("make_pair needs S divisible by 4, got " + std::to_string(s));
  const auto lo = s / 4, hi = 3 * s / 4;
  std::vector<float> input(static_cast<std::size_t>(target.numel()), 0.0f);
  const auto src = target.data();
  for (std::int64_t c = 0; c < 3; ++c) {
    for (std::int64_t y = lo; y < hi; ++y) {
      const auto off = static_cast<std::size_t>((c * s + y) * s);
      std::copy(src.begin() + static_cast<std::ptrdiff_t>(off + lo),
                src.begin() + static_cast<std::ptrdiff_t>(off + hi),
                input.begin() + static_cast<std::ptrdiff_t>(off + lo));
    }
  }
  return {TensorF::from_data(target.shape(), std::move(input)), target.detach()};
}

std::vector<std::filesystem::path> image_files(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw IoError("not a directory: " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".ppm") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  return files;
}

std::vector<TensorF> load_directory(const std::filesystem::path& dir, std::int64_t size) {
  std::vector<TensorF> out;
  for (const auto& f : image_files(dir)) {
    auto img = load_image(f);
    if (img.dim(1) != size || img.dim(2) != size) img = resize_bilinear(img, size, size);
    out.push_back(img);
  }
  return out;
}

std::vector<TexturePair> make_dataset(const std::vector<TensorF>& targets) {
  std::vector<TexturePair> out;
  out.reserve(targets.size());
  for (const auto& t : targets) out.push_back(make_pair(t));
  return out;
}

std::vector<std::vector<std::size_t>> batches(std::size_t dataset_size, std::size_t batch_size,
                                              std::uint64_t epoch_seed) {
  if (dataset_size == 0) throw ConfigError("empty dataset");
  if (batch_size == 0 || batch_size > dataset_size) {
    throw ConfigError("batch size " + std::to_string(batch_size) + " exceeds dataset size " +
                      std::to_string(dataset_size));
  }
  std::vector<std::size_t> order(dataset_size);
  std::iota(order.begin(), order.end(), std::size_t{0});
  SplitMix64 rng(epoch_seed);
  for (std::size_t i = dataset_size - 1; i > 0; --i) {
    std::swap(order[i], order[static_cast<std::size_t>(rng.below(i + 1))]);
  }
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t b = 0; b + batch_size <= dataset_size; b += batch_size) {
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(b),
                     order.begin() + static_cast<std::ptrdiff_t>(b + batch_size));
  }
  return out;
}

TensorF stack(const std::vector<TensorF>& images) {
  if (images.empty()) throw ShapeError("stack of zero images");
  const auto& s = images.front().shape();
  std::vector<float> data;
  data.reserve(images.size() * static_cast<std::size_t>(numel(s)));
  for (const auto& img : images) {
    if (img.shape() != s) throw ShapeError("stack: images differ in shape");
    data.insert(data.end(), img.data().begin(), img.data().end());
  }
  Shape out{static_cast<std::int64_t>(images.size())};
  out.insert(out.end(), s.begin(), s.end());
  return TensorF::from_data(std::move(out), std::move(data));
}

TensorF unstack(const TensorF& batch, std::int64_t b) {
  if (batch.rank() != 4 || b < 0 || b >= batch.dim(0)) throw ShapeError("unstack: bad index");
  const auto len = batch.numel() / batch.dim(0);
  std::vector<float> data(batch.data().begin() + b * len, batch.data().begin() + (b + 1) * len);
  return TensorF::from_data({batch.dim(1), batch.dim(2), batch.dim(3)}, std::move(data));
}

}  // namespace uattn
