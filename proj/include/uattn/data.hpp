// Copyright 2026 The U-Attention Authors
// SPDX-License-Identifier: Apache-2.0
//
// Training data: procedural textures, PPM image I/O, bilinear resizing and
// the (zero-padded centre crop, full target) pair construction.
//
// Images are [3, H, W] float tensors with values in [-1, 1].

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "uattn/tensor.hpp"

namespace uattn {

struct TexturePair {
  TensorF input;   // zeros except the central S/2 x S/2 window
  TensorF target;  // full S x S texture
};

enum class PatternKind { kChecker, kStripes, kBricks, kValueNoise, kBlobLattice };

std::string pattern_name(PatternKind k);
PatternKind parse_pattern(const std::string& name);

/// One procedural texture. `period` is the checker square side, the stripe
/// and brick repeat, or the lattice spacing for noise and blobs. Palette and
/// orientation derive from `seed`.
struct ProceduralSpec {
  PatternKind kind = PatternKind::kChecker;
  std::uint64_t seed = 0;
  std::int64_t period = 16;
  std::int64_t phase_x = 0;
  std::int64_t phase_y = 0;

  bool operator==(const ProceduralSpec&) const = default;
};

/// Length after which the pattern repeats; must divide the image size.
std::int64_t repeat_length(const ProceduralSpec& spec, std::int64_t size);

/// Deterministic size x size texture. Throws ConfigError for size < 32 or a
/// period whose repeat does not divide size.
TensorF generate(const ProceduralSpec& spec, std::int64_t size);

/// Manifest: one record per line, whitespace-separated key=value pairs
/// (kind, seed, period, phase_x, phase_y). '#' starts a comment.
std::vector<ProceduralSpec> parse_manifest(std::istream& in);
std::vector<ProceduralSpec> load_manifest(const std::filesystem::path& path);
std::string format_spec(const ProceduralSpec& spec);

/// Binary PPM (P6, maxval 255). Bytes b map to 2b/255 - 1.
TensorF load_image(const std::filesystem::path& path);
/// Inverse mapping with round-half-up and clamping to [0, 255].
void save_image(const TensorF& image, const std::filesystem::path& path);
TensorF decode_ppm(const std::string& bytes);
std::string encode_ppm(const TensorF& image);

/// Half-pixel-centre bilinear resampling of a [3, H, W] image.
TensorF resize_bilinear(const TensorF& image, std::int64_t target_h, std::int64_t target_w);
inline TensorF resize_bilinear(const TensorF& image, std::int64_t target) {
  return resize_bilinear(image, target, target);
}

/// Zero-padded centre crop: input keeps target[S/4 : 3S/4] in both axes.
TexturePair make_pair(const TensorF& target);

/// Every *.ppm in a flat directory, sorted by name.
std::vector<std::filesystem::path> image_files(const std::filesystem::path& dir);

/// The images of image_files(dir), resized to size x size.
std::vector<TensorF> load_directory(const std::filesystem::path& dir, std::int64_t size);

std::vector<TexturePair> make_dataset(const std::vector<TensorF>& targets);

/// Shuffled index batches for one epoch; the permutation depends only on
/// epoch_seed and the trailing partial batch is dropped.
std::vector<std::vector<std::size_t>> batches(std::size_t dataset_size, std::size_t batch_size,
                                              std::uint64_t epoch_seed);

/// Stacks [3, S, S] images into [B, 3, S, S].
TensorF stack(const std::vector<TensorF>& images);
/// Slice b of a [B, 3, S, S] batch.
TensorF unstack(const TensorF& batch, std::int64_t b);

}  // namespace uattn
