#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "attncheck/kvcache.hpp"
#include "attncheck/rng.hpp"

using namespace attncheck;

namespace {

Tensor row2(double a, double b) { return Tensor({1, 2}, {a, b}); }

double max_abs_diff(const Tensor& a, const Tensor& b) {
  REQUIRE(a.shape == b.shape);
  double worst = 0.0;
  for (size_t i = 0; i < a.data.size(); ++i)
    worst = std::max(worst, std::fabs(a.data[i] - b.data[i]));
  return worst;
}

AttentionConfig decode_config(uint64_t seed, int64_t L) {
  AttentionConfig c = default_base_config(seed);
  c.L = L;
  return c;
}

}  // namespace

TEST_CASE("cache_append enforces the canonical position contract") {
  KvCache cache;
  cache_append(cache, row2(1, 2), row2(3, 4), 0);
  CHECK(cache.length() == 1);

  cache_append(cache, row2(5, 6), row2(7, 8), 1);
  cache_append(cache, row2(9, 10), row2(11, 12), 2);
  CHECK_THROWS_AS(cache_append(cache, row2(0, 0), row2(0, 0), 5), Error);
  try {
    cache_append(cache, row2(0, 0), row2(0, 0), 5);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::PositionGap);
    CHECK(e.details()["expected"] == 3);
    CHECK(e.details()["got"] == 5);
  }
}

TEST_CASE("cache_append preserves earlier entries bitwise") {
  Rng rng(42);
  KvCache cache;
  std::vector<CacheEntry> appended;
  for (int64_t i = 0; i < 20; ++i) {
    Tensor k = Tensor::zeros({2, 4});
    Tensor v = Tensor::zeros({2, 4});
    for (double& x : k.data) x = rng.normal();
    for (double& x : v.data) x = rng.normal();
    appended.push_back({k, v, i});
    cache_append(cache, k, v, i);
    for (int64_t e = 0; e <= i; ++e) {
      CHECK(cache.entries[e].k == appended[e].k);
      CHECK(cache.entries[e].v == appended[e].v);
    }
  }
}

TEST_CASE("incremental decode equals the full forward pass") {
  for (int64_t L : {1, 2, 5, 13, 24, 32}) {
    AttentionConfig c = decode_config(100 + L, L);
    Tensor x = make_input(c);
    AttentionWeights w = make_weights(c);
    ForwardResult full = attention_forward(c, x, w);
    DecodeResult inc = incremental_decode(c, x, w);
    REQUIRE_FALSE(full.trace.raised_error.has_value());
    REQUIRE_FALSE(inc.trace.raised_error.has_value());
    CHECK(max_abs_diff(full.output, inc.output) <= 1e-9);
  }
}

TEST_CASE("incremental decode matches full forward with positional encodings") {
  for (PosScheme scheme : {PosScheme::SinusoidalAbsolute, PosScheme::LearnedAbsolute,
                           PosScheme::RelativeBucketed}) {
    AttentionConfig c = decode_config(7, 16);
    c.pos.scheme = scheme;
    Tensor x = make_input(c);
    AttentionWeights w = make_weights(c);
    ForwardResult full = attention_forward(c, x, w);
    DecodeResult inc = incremental_decode(c, x, w);
    REQUIRE_FALSE(full.trace.raised_error.has_value());
    REQUIRE_FALSE(inc.trace.raised_error.has_value());
    CHECK(max_abs_diff(full.output, inc.output) <= 1e-9);
  }
}

TEST_CASE("decode requires a causal mask mode") {
  AttentionConfig c = decode_config(1, 4);
  c.mask_mode = MaskMode::None;
  DecodeResult r = incremental_decode(c);
  REQUIRE(r.trace.raised_error.has_value());
  CHECK(r.trace.raised_error->code == ErrorCode::ConfigInvalid);
}

TEST_CASE("stale cache after a weight swap breaks the equivalence") {
  AttentionConfig c = decode_config(55, 24);
  DecodeOptions faulty;
  faulty.weight_swap_step = 16;
  faulty.invalidate_on_swap = false;
  DecodeOptions clean = faulty;
  clean.invalidate_on_swap = true;
  DecodeResult bad = incremental_decode(c, faulty);
  DecodeResult good = incremental_decode(c, clean);
  double pre_swap = 0.0, post_swap = 0.0;
  for (int64_t t = 0; t < 24; ++t) {
    double d = max_abs_diff(bad.step_outputs[t], good.step_outputs[t]);
    if (t < 16) pre_swap = std::max(pre_swap, d);
    else post_swap = std::max(post_swap, d);
  }
  CHECK(pre_swap == 0.0);
  CHECK(post_swap > 1e-3);
}

TEST_CASE("cache events are append-only under the canonical layout") {
  AttentionConfig c = decode_config(3, 12);
  DecodeResult r = incremental_decode(c);
  REQUIRE(r.trace.cache_events.size() == 12);
  for (size_t i = 0; i < r.trace.cache_events.size(); ++i) {
    const CacheEvent& ev = r.trace.cache_events[i];
    CHECK(ev.length == static_cast<int64_t>(i) + 1);
    CHECK(ev.layout == CacheLayout::Canonical);
    for (size_t p = 0; p < ev.position_ids.size(); ++p)
      CHECK(ev.position_ids[p] == static_cast<int64_t>(p));
    if (i > 0) {
      const CacheEvent& prev = r.trace.cache_events[i - 1];
      for (size_t p = 0; p < prev.position_ids.size(); ++p)
        CHECK(prev.position_ids[p] == ev.position_ids[p]);
    }
  }
}

TEST_CASE("replica schedule semantics") {
  CacheEntry e0{row2(1, 2), row2(3, 4), 0};
  ReplicaPair pair;
  replica_step(pair, ScheduleItem::AppendA, &e0);
  replica_step(pair, ScheduleItem::SyncAB);
  CHECK(pair.a.length() == 1);
  CHECK(pair.b.length() == 1);
  CHECK(replicas_converged(pair));

  ReplicaPair skipped;
  replica_step(skipped, ScheduleItem::AppendA, &e0);
  replica_step(skipped, ScheduleItem::SkipSync_FAULTY);
  CHECK(skipped.a.length() == 1);
  CHECK(skipped.b.length() == 0);
  CHECK_FALSE(replicas_converged(skipped));

  replica_step(skipped, ScheduleItem::SyncAB);
  CHECK(replicas_converged(skipped));
}

TEST_CASE("replica divergence is zero after syncs and grows after skips") {
  AttentionConfig c = decode_config(19, 24);
  DecodeOptions opts;
  opts.with_replica = true;
  opts.replica_skip_sync_from = 16;
  DecodeResult r = incremental_decode(c, opts);
  REQUIRE(r.trace.replica_events.size() == 24);
  int64_t lag = 0;
  for (const auto& ev : r.trace.replica_events) {
    if (ev.step < 16) {
      CHECK_FALSE(ev.diverged);
      CHECK(ev.len_a == ev.len_b);
    } else {
      CHECK(ev.diverged);
      CHECK(ev.max_output_diff > 1e-6);
      int64_t new_lag = ev.len_a - ev.len_b;
      CHECK(new_lag >= lag);  // monotone between syncs
      lag = new_lag;
    }
  }
}

TEST_CASE("transposed cache layout scrambles reads") {
  AttentionConfig c = decode_config(23, 8);
  DecodeOptions opts;
  opts.layout = CacheLayout::Transposed_FAULTY;
  DecodeResult bad = incremental_decode(c, opts);
  DecodeResult good = incremental_decode(c);
  CHECK(max_abs_diff(bad.output, good.output) > 1e-6);
  for (const auto& ev : bad.trace.cache_events)
    CHECK(ev.layout == CacheLayout::Transposed_FAULTY);
}

TEST_CASE("frozen position ids diverge only after the prefix") {
  AttentionConfig c = decode_config(29, 24);
  c.pos.scheme = PosScheme::RelativeBucketed;
  DecodeOptions opts;
  opts.freeze_position_ids_from = 16;
  DecodeResult bad = incremental_decode(c, opts);
  DecodeResult good = incremental_decode(c);
  for (int64_t t = 0; t < 16; ++t)
    CHECK(max_abs_diff(bad.step_outputs[t], good.step_outputs[t]) <= 1e-12);
  double post = 0.0;
  for (int64_t t = 16; t < 24; ++t)
    post = std::max(post, max_abs_diff(bad.step_outputs[t], good.step_outputs[t]));
  CHECK(post > 1e-3);
  CHECK(bad.trace.position_indices[16] == 0);  // ids restarted
}
