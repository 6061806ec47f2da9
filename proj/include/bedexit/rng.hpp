#pragma once

#include <cstdint>
#include <string_view>

namespace bedexit {

/// SplitMix64 finalizer. Bijective mixing of a 64-bit word.
std::uint64_t splitmix64(std::uint64_t x);

/// 64-bit FNV-1a hash, used for purpose tags and golden hashes.
std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t basis = 0xcbf29ce484222325ULL);

/// Derives an independent stream key from the run seed, a purpose tag and an index:
///   key = splitmix64(splitmix64(seed ^ fnv1a64(purpose)) + index)
std::uint64_t derive_seed(std::uint64_t seed, std::string_view purpose, std::uint64_t index = 0);

/// Counter-based generator: the n-th output is splitmix64(key + n * 0x9E3779B97F4A7C15).
/// Every draw is a pure function of (key, counter), so streams are reproducible across
/// platforms. Distributions are implemented here rather than taken from <random>, whose
/// distribution algorithms are implementation-defined.
class CounterRng {
public:
  explicit CounterRng(std::uint64_t key) : key_(key) {}

  std::uint64_t next_u64();
  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n); n > 0. Rejection sampling, no modulo bias.
  std::uint64_t below(std::uint64_t n);
  /// Standard normal via Box-Muller (both variates are used).
  double normal();
  /// Normal(0, std) redrawn until it falls within +-2 std.
  double truncated_normal(double std);

  std::uint64_t counter() const { return counter_; }

private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace bedexit
