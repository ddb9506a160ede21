// Copyright (c) 2026 ehrfuse authors
// SPDX-License-Identifier: Apache-2.0
//
// Deterministic random streams. The engine (mt19937_64) is bit-specified by
// the standard, and every transform below is written out explicitly instead
// of going through std distributions, whose output is implementation-defined.
// Identical seeds therefore give identical bytes everywhere.

#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace ehrfuse::rng {

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline uint64_t fnv1a(std::string_view s) {
  uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

// Stream seed derivation: mixes a parent seed with a tag and an index so that
// sub-streams (per patient, per epoch, per parameter) are independent and
// reproducible in isolation.
inline uint64_t derive(uint64_t seed, std::string_view tag, uint64_t index = 0) {
  return splitmix64(seed ^ splitmix64(fnv1a(tag) + 0x9e3779b97f4a7c15ULL * (index + 1)));
}

class Stream {
 public:
  explicit Stream(uint64_t seed) : eng_(seed) {}

  uint64_t next_u64() { return eng_(); }

  // Uniform in [0, 1) with 53 significand bits.
  double u01() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * u01(); }

  // Integer in [lo, hi] by rejection-free scaled draw (desk-scale ranges).
  int64_t uniform_int(int64_t lo, int64_t hi) {
    return lo + static_cast<int64_t>(u01() * static_cast<double>(hi - lo + 1));
  }

  bool bernoulli(double p) { return u01() < p; }

  // Box-Muller, cosine branch; consumes two uniforms per draw.
  double normal() {
    const double u1 = 1.0 - u01();  // (0, 1]
    const double u2 = u01();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  // Exponential inter-arrival gap with the given rate (per hour).
  double exp_gap(double rate) { return -std::log1p(-u01()) / rate; }

  // Draw from unnormalized weights.
  size_t categorical(const std::vector<double>& weights) {
    double total = 0.0;
    for (double w : weights) total += w;
    double r = u01() * total;
    for (size_t i = 0; i < weights.size(); ++i) {
      r -= weights[i];
      if (r < 0.0) return i;
    }
    return weights.size() - 1;
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(uniform_int(0, static_cast<int64_t>(i) - 1));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 eng_;
};

}  // namespace ehrfuse::rng
