#include "attncheck/kvcache.hpp"

#include <cmath>

#include "attncheck/rng.hpp"

namespace attncheck {

namespace {

/// Running element statistics for a tensor accumulated across decode steps.
struct StatsAcc {
  int64_t nan_count = 0;
  int64_t inf_count = 0;
  bool any_finite = false;
  double min = 0.0;
  double max = 0.0;
  Dtype dtype = Dtype::F64Sim;

  void add(const Tensor& t) {
    dtype = t.dtype;
    for (double v : t.data) {
      if (std::isnan(v)) {
        ++nan_count;
      } else if (std::isinf(v)) {
        ++inf_count;
      } else if (!any_finite) {
        min = max = v;
        any_finite = true;
      } else {
        min = std::min(min, v);
        max = std::max(max, v);
      }
    }
  }

  TensorSummary summary(std::vector<int64_t> shape) const {
    TensorSummary s;
    s.shape = std::move(shape);
    s.dtype = dtype;
    s.nan_count = nan_count;
    s.inf_count = inf_count;
    if (any_finite) {
      s.min = min;
      s.max = max;
    }
    return s;
  }
};

/// Permute one entry row from [n_h, d/n_h] to its transpose, flattened.
Tensor transpose_entry(const Tensor& t, int64_t n_h) {
  int64_t B = t.dim(0), d = t.dim(1);
  if (n_h <= 0 || d % n_h != 0) return t;
  int64_t dh = d / n_h;
  Tensor out = t;
  for (int64_t b = 0; b < B; ++b)
    for (int64_t h = 0; h < n_h; ++h)
      for (int64_t c = 0; c < dh; ++c)
        out.at({b, c * n_h + h}) = t.at({b, h * dh + c});
  return out;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  double worst = 0.0;
  for (size_t i = 0; i < a.data.size() && i < b.data.size(); ++i) {
    double d = std::fabs(a.data[i] - b.data[i]);
    if (std::isnan(d)) return std::nan("");
    worst = std::max(worst, d);
  }
  return worst;
}

}  // namespace

void cache_append(KvCache& cache, const Tensor& k, const Tensor& v, int64_t position_id) {
  if (cache.layout == CacheLayout::Canonical && position_id != cache.length()) {
    throw Error(ErrorCode::PositionGap, "cache append does not continue the position sequence",
                {{"expected", cache.length()}, {"got", position_id}});
  }
  cache_append_unchecked(cache, k, v, position_id);
}

void cache_append_unchecked(KvCache& cache, const Tensor& k, const Tensor& v,
                            int64_t position_id) {
  cache.entries.push_back({k, v, position_id});
}

std::string to_string(ScheduleItem s) {
  switch (s) {
    case ScheduleItem::AppendA: return "AppendA";
    case ScheduleItem::AppendB: return "AppendB";
    case ScheduleItem::SyncAB: return "SyncAB";
    case ScheduleItem::SkipSync_FAULTY: return "SkipSync_FAULTY";
  }
  return "unknown";
}

void replica_step(ReplicaPair& pair, ScheduleItem item, const CacheEntry* entry) {
  switch (item) {
    case ScheduleItem::AppendA:
      if (entry == nullptr)
        throw Error(ErrorCode::ConfigInvalid, "AppendA requires an entry");
      cache_append_unchecked(pair.a, entry->k, entry->v, entry->position_id);
      break;
    case ScheduleItem::AppendB:
      if (entry == nullptr)
        throw Error(ErrorCode::ConfigInvalid, "AppendB requires an entry");
      cache_append_unchecked(pair.b, entry->k, entry->v, entry->position_id);
      break;
    case ScheduleItem::SyncAB:
      pair.b = pair.a;
      break;
    case ScheduleItem::SkipSync_FAULTY:
      break;
  }
}

bool replicas_converged(const ReplicaPair& pair) {
  if (pair.a.length() != pair.b.length()) return false;
  for (int64_t i = 0; i < pair.a.length(); ++i) {
    const CacheEntry& ea = pair.a.entries[static_cast<size_t>(i)];
    const CacheEntry& eb = pair.b.entries[static_cast<size_t>(i)];
    if (ea.position_id != eb.position_id || !(ea.k == eb.k) || !(ea.v == eb.v)) return false;
  }
  return true;
}

DecodeResult incremental_decode(const AttentionConfig& config, const DecodeOptions& options) {
  return incremental_decode(config, make_input(config), make_weights(config), options);
}

DecodeResult incremental_decode(const AttentionConfig& config, const Tensor& x,
                                const AttentionWeights& weights,
                                const DecodeOptions& options) {
  DecodeResult result;
  RunTrace& trace = result.trace;
  trace.config = config;

  const int64_t B = config.B, L = config.L, dm = config.d_m;
  if (config.pos.scheme == PosScheme::LearnedAbsolute)
    trace.position_table_size = config.pos.max_positions;

  try {
    if (!mask_has_causal(config.mask_mode)) {
      throw Error(ErrorCode::ConfigInvalid, "incremental decoding requires a causal mask mode");
    }
    auto [selected, event] =
        dispatch(config, KernelRegistry::standard(), config.dispatch_policy, true);
    trace.dispatch_events.push_back(event);
    trace.selected_kernel = selected;
    trace.wall_cost = event.cost_incurred *
                      static_cast<double>(B * config.n_h * L * L *
                                          std::max<int64_t>(config.d_h, 1)) /
                      1e6;
    if (auto oom = simulate_oom(config, config.m_avail)) {
      throw Error(ErrorCode::OutOfMemory, "score buffer exceeds the memory budget",
                  {{"required", oom->required}, {"available", oom->available}});
    }

    AttentionWeights active = weights;
    AttentionWeights swapped = weights;
    if (options.weight_swap_step) {
      AttentionConfig swap_cfg = config;
      swap_cfg.seed = derive_seed(config.seed, "swap");
      swapped = make_weights(swap_cfg);
    }

    Tensor pos_table;
    if (config.pos.scheme == PosScheme::LearnedAbsolute) pos_table = make_position_table(config);
    std::vector<double> rel_bias;
    if (config.pos.scheme == PosScheme::RelativeBucketed) rel_bias = make_relative_bias(config);

    // Per-token encoded inputs as a function of the position id actually used.
    auto encode_token = [&](int64_t t, int64_t pos_id) {
      Tensor xt = Tensor::zeros({B, 1, dm}, x.dtype);
      for (int64_t b = 0; b < B; ++b)
        for (int64_t j = 0; j < dm; ++j) xt.at({b, 0, j}) = x.at({b, t, j});
      if (config.pos.scheme == PosScheme::SinusoidalAbsolute) {
        Tensor pe = sinusoidal_embedding({pos_id}, dm);
        xt = quantize(add_broadcast(xt, reshape(pe, {1, 1, dm})), x.dtype);
      } else if (config.pos.scheme == PosScheme::LearnedAbsolute) {
        Tensor pe = learned_embedding({pos_id}, pos_table);
        xt = quantize(add_broadcast(xt, reshape(pe, {1, 1, dm})), x.dtype);
      }
      return xt;
    };

    auto project_token = [&](const Tensor& xt, const AttentionWeights& w) {
      Tensor q, k, v;
      qkv_project(xt, w.wq, w.wk, w.wv, q, k, v);
      return std::tuple<Tensor, Tensor, Tensor>(q, k, v);
    };

    KvCache cache{options.layout, {}};
    ReplicaPair replicas;
    replicas.a.layout = options.layout;
    replicas.b.layout = options.layout;

    StatsAcc acc_q, acc_k, acc_v, acc_s, acc_w, acc_y;
    std::vector<double> all_row_sums;
    double entropy_sum = 0.0;
    int64_t entropy_rows = 0;
    const int64_t n_h = config.n_h;

    // Attention of one query row over a cache snapshot.
    auto attend = [&](const Tensor& q_t, const KvCache& snapshot, int64_t query_pos,
                      bool record) -> Tensor {
      int64_t len = snapshot.length();
      int64_t dk = q_t.dim(-1);
      Tensor k_cat = Tensor::zeros({B, len, dk});
      Tensor v_cat = Tensor::zeros({B, len, snapshot.entries[0].v.dim(-1)});
      for (int64_t e = 0; e < len; ++e) {
        const CacheEntry& entry = snapshot.entries[static_cast<size_t>(e)];
        for (int64_t b = 0; b < B; ++b) {
          for (int64_t j = 0; j < dk; ++j) k_cat.at({b, e, j}) = entry.k.at({b, j});
          for (int64_t j = 0; j < v_cat.dim(-1); ++j) v_cat.at({b, e, j}) = entry.v.at({b, j});
        }
      }
      Tensor qh = split_heads(q_t, n_h);
      Tensor kh = split_heads(k_cat, n_h);
      Tensor vh = split_heads(v_cat, n_h);
      Tensor s = scaled_scores(qh, kh, config.scaling_enabled);
      if (!rel_bias.empty()) {
        for (int64_t b = 0; b < B; ++b)
          for (int64_t h = 0; h < n_h; ++h)
            for (int64_t e = 0; e < len; ++e) {
              int64_t bucket = relative_bucket(
                  query_pos, snapshot.entries[static_cast<size_t>(e)].position_id,
                  config.pos.num_buckets, config.pos.max_distance);
              s.at({b, h, 0, e}) += rel_bias[static_cast<size_t>(bucket)];
            }
      }
      Tensor w = softmax_rows(s);
      if (record) {
        acc_s.add(s);
        acc_w.add(w);
        int64_t cols = w.dim(-1);
        int64_t rows = w.numel() / cols;
        for (int64_t r = 0; r < rows; ++r) {
          const double* p = w.data.data() + r * cols;
          double sum = 0.0, h = 0.0;
          bool finite = true;
          for (int64_t j = 0; j < cols; ++j) {
            sum += p[j];
            if (!std::isfinite(p[j])) finite = false;
          }
          all_row_sums.push_back(sum);
          if (finite) {
            if (cols > 1) {
              for (int64_t j = 0; j < cols; ++j)
                if (p[j] > 0.0) h -= p[j] * std::log(p[j]);
              h /= std::log(static_cast<double>(cols));
            } else {
              h = 1.0;
            }
            entropy_sum += h;
            ++entropy_rows;
          }
        }
      }
      Tensor y_heads = matmul(w, vh);
      return merge_heads(y_heads);
    };

    result.output = Tensor::zeros({B, L, config.d_v});
    for (int64_t t = 0; t < L; ++t) {
      if (options.weight_swap_step && t == *options.weight_swap_step) {
        active = swapped;
        if (options.invalidate_on_swap) {
          // Clean semantics: rebuild every cached entry under the new weights.
          KvCache rebuilt{options.layout, {}};
          for (int64_t e = 0; e < cache.length(); ++e) {
            int64_t pos = cache.entries[static_cast<size_t>(e)].position_id;
            Tensor xe = encode_token(e, pos);
            auto [q_e, k_e, v_e] = project_token(xe, active);
            Tensor k_row = reshape(k_e, {B, config.d_k});
            Tensor v_row = reshape(v_e, {B, config.d_v});
            if (options.layout == CacheLayout::Transposed_FAULTY) {
              k_row = transpose_entry(k_row, n_h);
              v_row = transpose_entry(v_row, n_h);
            }
            cache_append_unchecked(rebuilt, k_row, v_row, pos);
          }
          cache = rebuilt;
          if (options.with_replica) {
            replicas.a = cache;
            replicas.b = cache;
          }
        }
      }

      int64_t pos_id = t;
      if (options.freeze_position_ids_from && t >= *options.freeze_position_ids_from)
        pos_id = t - *options.freeze_position_ids_from;

      Tensor xt = encode_token(t, pos_id);
      auto [q_t, k_t, v_t] = project_token(xt, active);
      acc_q.add(q_t);
      acc_k.add(k_t);
      acc_v.add(v_t);

      Tensor k_row = reshape(k_t, {B, config.d_k});
      Tensor v_row = reshape(v_t, {B, config.d_v});
      if (options.stale_value_step && t == *options.stale_value_step && t > 0) {
        v_row = cache.entries.back().v;  // torn write: value lags one step
      }
      if (options.layout == CacheLayout::Transposed_FAULTY) {
        k_row = transpose_entry(k_row, n_h);
        v_row = transpose_entry(v_row, n_h);
      }

      if (options.freeze_position_ids_from || options.layout != CacheLayout::Canonical) {
        cache_append_unchecked(cache, k_row, v_row, pos_id);
      } else {
        cache_append(cache, k_row, v_row, pos_id);
      }

      std::vector<int64_t> ids;
      ids.reserve(static_cast<size_t>(cache.length()));
      for (const auto& e : cache.entries) ids.push_back(e.position_id);
      trace.cache_events.push_back({t, cache.length(), ids, options.layout});

      Tensor y_t = attend(q_t, cache, pos_id, /*record=*/true);
      acc_y.add(y_t);

      if (options.with_replica) {
        CacheEntry entry{k_row, v_row, pos_id};
        replica_step(replicas, ScheduleItem::AppendA, &entry);
        bool synced = !(options.replica_skip_sync_from && t >= *options.replica_skip_sync_from);
        replica_step(replicas,
                     synced ? ScheduleItem::SyncAB : ScheduleItem::SkipSync_FAULTY);
        Tensor y_b = attend(q_t, replicas.b, pos_id, /*record=*/false);
        double diff = max_abs_diff(y_t, y_b);
        bool diverged = replicas.a.length() != replicas.b.length() ||
                        !(std::isfinite(diff) && diff <= 1e-9);
        trace.replica_events.push_back(
            {t, replicas.a.length(), replicas.b.length(), diverged, diff});
      }

      for (int64_t b = 0; b < B; ++b)
        for (int64_t j = 0; j < config.d_v; ++j)
          result.output.at({b, t, j}) = y_t.at({b, 0, j});
      result.step_outputs.push_back(y_t);
      if (options.embed_outputs) {
        trace.step_outputs.push_back({t, y_t.shape, y_t.data});
      }
    }

    std::vector<int64_t> final_ids;
    for (const auto& e : cache.entries) final_ids.push_back(e.position_id);
    trace.position_indices = final_ids;

    trace.stages.push_back({"project",
                            {{"q", acc_q.summary({B, L, config.d_q})},
                             {"k", acc_k.summary({B, L, config.d_k})},
                             {"v", acc_v.summary({B, L, config.d_v})}}});
    trace.stages.push_back({"split_heads",
                            {{"q", acc_q.summary({B, n_h, L, config.d_q / std::max<int64_t>(n_h, 1)})},
                             {"k", acc_k.summary({B, n_h, L, config.d_k / std::max<int64_t>(n_h, 1)})},
                             {"v", acc_v.summary({B, n_h, L, config.d_v / std::max<int64_t>(n_h, 1)})}}});
    trace.stages.push_back({"scores", {{"s", acc_s.summary({B, n_h, L, L})}}});
    trace.stages.push_back({"mask", {{"s", acc_s.summary({B, n_h, L, L})}}});
    TensorSummary w_summary = acc_w.summary({B, n_h, L, L});
    if (entropy_rows > 0)
      w_summary.mean_norm_entropy = entropy_sum / static_cast<double>(entropy_rows);
    trace.stages.push_back({"softmax", {{"w", w_summary}}});
    trace.stages.push_back({"dropout", {{"w", w_summary}}});
    trace.stages.push_back({"aggregate", {{"y", acc_y.summary({B, n_h, L, config.d_v / std::max<int64_t>(n_h, 1)})}}});
    trace.stages.push_back({"merge_heads", {{"y", acc_y.summary({B, L, config.d_v})}}});

    TensorSummary weff = w_summary;
    weff.row_sums = all_row_sums;
    trace.weights_summary = weff;

    trace.output_summary = summarize(result.output);
    if (options.embed_outputs) trace.output = result.output;
  } catch (const Error& e) {
    trace.raised_error = ErrorRecord::from_error(e);
  }
  return result;
}

}  // namespace attncheck
