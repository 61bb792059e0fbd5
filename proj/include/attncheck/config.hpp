#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "attncheck/types.hpp"

namespace attncheck {

struct PosEncodingConfig {
  PosScheme scheme = PosScheme::NoneP;
  int64_t max_positions = 512;  // LearnedAbsolute table length
  int64_t num_buckets = 32;     // RelativeBucketed
  int64_t max_distance = 128;   // RelativeBucketed
};

/// Every dimensional and behavioral parameter of one attention run.
/// Valid configs satisfy d_q == d_k and d_m == n_h * d_h; injectors build
/// invalid ones deliberately, so structural validation lives in
/// validate_structure() and the math surfaces the rest at run time.
struct AttentionConfig {
  int64_t B = 1;
  int64_t L = 8;
  int64_t d_m = 32;
  int64_t n_h = 2;
  int64_t d_h = 16;
  int64_t d_q = 32;
  int64_t d_k = 32;
  int64_t d_v = 32;
  bool scaling_enabled = true;
  MaskMode mask_mode = MaskMode::Causal;
  std::string mask_convention = "AdditiveNegInf";
  double dropout_rate = 0.0;
  DropoutPlacement dropout_placement = DropoutPlacement::AfterSoftmaxPreAggregation;
  PosEncodingConfig pos;
  Dtype dtype_x = Dtype::F64Sim;
  Dtype dtype_wq = Dtype::F64Sim;
  Dtype dtype_wk = Dtype::F64Sim;
  Dtype dtype_wv = Dtype::F64Sim;
  double input_std = 0.5;
  /// Keep/drop flag per (batch, position), row-major, size B*L; empty = all kept.
  std::vector<int> padding;
  std::string kernel_preference = "reference";
  DispatchPolicy dispatch_policy = DispatchPolicy::StrictFail;
  int64_t m_avail = int64_t{1} << 30;  // memory budget in scalar elements
  uint64_t seed = 0;

  json to_json() const;
  static AttentionConfig from_json(const json& j);

  /// Structural problems (positivity, enum ranges, padding length). Dimension
  /// couplings like d_q == d_k are intentionally not checked here.
  std::vector<std::string> validate_structure() const;

  /// Stable content hash used in corpus manifests.
  uint64_t digest() const;
};

/// Base configuration shared by the injector catalogue and the clean suite.
AttentionConfig default_base_config(uint64_t seed);

}  // namespace attncheck
