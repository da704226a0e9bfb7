// Copyright 2026 The U-Attention Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>

namespace uattn {

/// SplitMix64 (Steele, Lea & Flood). Every seeded stream in the project comes
/// from this generator so that runs are bit-reproducible across platforms.
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n). Modulo bias is below 2^-40 for the n used here.
  std::uint64_t below(std::uint64_t n) { return next() % n; }

  std::uint64_t state() const { return state_; }

 private:
  std::uint64_t state_;
};

/// Derives an independent stream seed from a base seed and a label hash.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t salt) {
  SplitMix64 mix(base ^ (salt * 0xD1B54A32D192ED03ULL));
  return mix.next();
}

/// FNV-1a over a string, used to turn parameter names into seed salts.
inline std::uint64_t fnv1a(const void* bytes, std::size_t len,
                           std::uint64_t hash = 0xCBF29CE484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(bytes);
  for (std::size_t i = 0; i < len; ++i) {
    hash ^= p[i];
    hash *= 0x100000001B3ULL;
  }
  return hash;
}

}  // namespace uattn
