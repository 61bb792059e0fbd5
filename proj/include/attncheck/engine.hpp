#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "attncheck/config.hpp"
#include "attncheck/kernels.hpp"
#include "attncheck/tensor.hpp"
#include "attncheck/trace.hpp"
#include "attncheck/types.hpp"

namespace attncheck {

/// Projection weights for one attention layer. `registered` is the set of
/// parameter names visible to the update step; anything missing stays frozen.
struct AttentionWeights {
  Tensor wq;  // [d_m, d_q]
  Tensor wk;  // [d_m, d_k]
  Tensor wv;  // [d_m, d_v]
  std::vector<std::string> registered = {"wq", "wk", "wv"};

  Tensor* find(const std::string& name);
};

/// Deliberate deviations from the clean pipeline. Defaults are all inert;
/// injectors flip exactly the knob matching their root cause.
struct EngineOverrides {
  bool zero_mask = false;                       // build an all-zero mask
  std::optional<int64_t> mask_frozen_len;       // causal mask built for a prefix only
  bool mask_after_softmax = false;              // apply mask to weights, post-softmax
  std::optional<Dtype> force_score_dtype;       // downcast raw scores
  bool sum_heads_instead_of_concat = false;     // merge by summing head blocks
  int64_t position_offset = 0;                  // shift position indices
  int64_t relative_bucket_offset = 0;           // shift relative buckets
  bool disable_relative_bias = false;           // degenerate to absolute encoding
  std::optional<KernelRegistry> registry;       // replaces the standard registry
  bool force_select_reference = false;          // variant layer pins the slow kernel
  bool embed_output = true;                     // embed full output tensor in trace
};

struct ForwardResult {
  Tensor output;  // [B, L, d_v]; empty when an error was surfaced
  RunTrace trace;
};

/// -- individual pipeline operations -----------------------------------------

/// Plain projections X*W per weight; each output takes its weight's dtype.
void qkv_project(const Tensor& x, const Tensor& wq, const Tensor& wk, const Tensor& wv,
                 Tensor& q, Tensor& k, Tensor& v);

/// [B, L, d] -> [B, n_h, L, d/n_h]; throws IndivisibleHeads.
Tensor split_heads(const Tensor& t, int64_t n_h);
/// Inverse of split_heads.
Tensor merge_heads(const Tensor& t);

/// S = Q K^T (optionally divided by sqrt of the key width). Throws
/// QkDimMismatch when the last dims of Q and K disagree.
Tensor scaled_scores(const Tensor& q, const Tensor& k, bool scaling_enabled);

/// Additive causal mask: kNegMask strictly above the diagonal, 0 elsewhere.
Tensor build_causal_mask(int64_t L);

/// Additive padding mask [B, 1, 1, L] from keep flags (B*L entries).
Tensor build_padding_mask(const std::vector<int>& keep, int64_t B, int64_t L);

/// Elementwise S + M under broadcasting.
Tensor apply_mask(const Tensor& scores, const Tensor& mask);

/// Numerically stable row softmax over the last dim. NaN rows propagate.
Tensor softmax_rows(const Tensor& scores);

/// Normalized Shannon entropy per row, natural log, in [0, 1]; single-element
/// rows count as 1 (they are the uniform distribution over their support).
/// Throws NotRowStochastic when a row is not a probability vector within 1e-6.
std::vector<double> row_entropy_normalized(const Tensor& weights, double* mean = nullptr);

/// Sinusoidal table rows for the given positions (interleaved sin/cos).
Tensor sinusoidal_embedding(const std::vector<int64_t>& positions, int64_t d);

/// Table lookups; throws PositionOutOfRange past the table.
Tensor learned_embedding(const std::vector<int64_t>& positions, const Tensor& table);

/// Symmetric log-spaced relative-position bucket for distance d = j - i.
int64_t relative_bucket(int64_t i, int64_t j, int64_t num_buckets, int64_t max_distance);

/// Result dtype of an op combining two formats (higher precision wins;
/// mixed half formats promote to F32Sim).
Dtype promote_dtype(Dtype a, Dtype b);

/// Deterministic inputs and weights for a config (seeded sub-streams).
Tensor make_input(const AttentionConfig& config);
AttentionWeights make_weights(const AttentionConfig& config);
/// Learned-position table for a config (seeded).
Tensor make_position_table(const AttentionConfig& config);
/// Per-bucket additive score bias for relative attention (seeded).
std::vector<double> make_relative_bias(const AttentionConfig& config);

/// Full forward pass. Stage errors are recorded in trace.raised_error and
/// returned rather than thrown.
ForwardResult attention_forward(const AttentionConfig& config, const Tensor& x,
                                const AttentionWeights& weights,
                                const EngineOverrides& overrides = {});

/// Convenience: inputs and weights generated from the config seed.
ForwardResult attention_forward(const AttentionConfig& config,
                                const EngineOverrides& overrides = {});

}  // namespace attncheck
