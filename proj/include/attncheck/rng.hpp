#pragma once

#include <cstdint>
#include <string>

namespace attncheck {

/// Hash a label into a stream id (FNV-1a, 64-bit).
uint64_t hash_label(const std::string& label);

/// Derive an independent child seed from (seed, label). Used to fan one
/// run-level seed out into named sub-streams (weights, inputs, dropout, ...).
uint64_t derive_seed(uint64_t seed, const std::string& label);

/// Deterministic generator over splitmix64. All transforms are written out
/// explicitly so streams are identical across standard libraries.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next_u64();

  /// Uniform in [0, 1).
  double uniform();

  /// Standard normal via Box-Muller.
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  bool bernoulli(double p) { return uniform() < p; }

 private:
  uint64_t state_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace attncheck
