#pragma once

#include <optional>
#include <vector>

#include "attncheck/config.hpp"
#include "attncheck/engine.hpp"
#include "attncheck/tensor.hpp"
#include "attncheck/trace.hpp"

namespace attncheck {

struct CacheEntry {
  Tensor k;  // [B, d_k]
  Tensor v;  // [B, d_v]
  int64_t position_id = 0;
};

/// Per-layer key/value store for stepwise decoding. Canonical layout keeps
/// position ids strictly increasing 0..length-1; the transposed layout writes
/// entries with head and channel axes swapped while reads assume canonical.
struct KvCache {
  CacheLayout layout = CacheLayout::Canonical;
  std::vector<CacheEntry> entries;

  int64_t length() const { return static_cast<int64_t>(entries.size()); }
};

/// Append under the canonical-position contract; throws PositionGap when the
/// id does not continue the sequence.
void cache_append(KvCache& cache, const Tensor& k, const Tensor& v, int64_t position_id);

/// Append without the position check. Fault-injection entry point.
void cache_append_unchecked(KvCache& cache, const Tensor& k, const Tensor& v,
                            int64_t position_id);

enum class ScheduleItem { AppendA, AppendB, SyncAB, SkipSync_FAULTY };
std::string to_string(ScheduleItem s);

struct ReplicaPair {
  KvCache a;
  KvCache b;
};

/// One deterministic transition of the two-replica model. Append items consume
/// `entry`; SyncAB copies a onto b; SkipSync_FAULTY leaves b behind.
void replica_step(ReplicaPair& pair, ScheduleItem item, const CacheEntry* entry = nullptr);

/// Replicas agree elementwise.
bool replicas_converged(const ReplicaPair& pair);

struct DecodeOptions {
  /// Swap projection weights at this step (deterministic re-init).
  std::optional<int64_t> weight_swap_step;
  /// Rebuild cached entries with the new weights at the swap (clean
  /// behavior); false keeps the stale entries.
  bool invalidate_on_swap = true;
  /// From this step on, position ids restart at zero instead of advancing.
  std::optional<int64_t> freeze_position_ids_from;
  CacheLayout layout = CacheLayout::Canonical;
  /// At this step the appended value tensor is the previous step's (torn
  /// interleaved write).
  std::optional<int64_t> stale_value_step;
  /// Replica b stops receiving syncs from this step on.
  std::optional<int64_t> replica_skip_sync_from;
  bool with_replica = false;
  bool embed_outputs = true;
};

struct DecodeResult {
  std::vector<Tensor> step_outputs;  // one [B, 1, d_v] tensor per step
  Tensor output;                     // concatenated [B, L, d_v]
  RunTrace trace;
};

/// Stepwise autoregressive pass over the cache. Requires a causal mask mode;
/// cache errors surface in trace.raised_error.
DecodeResult incremental_decode(const AttentionConfig& config, const Tensor& x,
                                const AttentionWeights& weights,
                                const DecodeOptions& options = {});

DecodeResult incremental_decode(const AttentionConfig& config,
                                const DecodeOptions& options = {});

}  // namespace attncheck
