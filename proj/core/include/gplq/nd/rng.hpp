// Copyright 2026 The gplq Authors
// Licensed under the Apache License, Version 2.0

#pragma once

#include <array>
#include <cstdint>

namespace gplq::nd {

std::uint64_t splitmix64(std::uint64_t& state) noexcept;

// Derives an independent stream seed from (seed, stream) without touching
// any global state.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) noexcept;

/// xoshiro256** seeded through splitmix64. The distribution helpers are
/// implemented here rather than via <random> distributions so that sequences
/// are identical across standard library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) noexcept;

  std::uint64_t next_u64() noexcept;
  // Uniform in [0, 1) with 53 bits of mantissa.
  double uniform() noexcept;
  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }
  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) noexcept;
  // Standard normal via Box-Muller; the spare value is cached.
  double normal() noexcept;
  double normal(double mean, double stddev) noexcept { return mean + stddev * normal(); }

 private:
  std::array<std::uint64_t, 4> s_{};
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace gplq::nd
