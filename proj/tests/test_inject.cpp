#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <map>
#include <set>

#include "attncheck/inject.hpp"
#include "attncheck/kvcache.hpp"

using namespace attncheck;

TEST_CASE("one injector per root cause, labels valid") {
  const auto& specs = injector_specs();
  REQUIRE(specs.size() == 25);
  std::set<std::string> seen;
  for (const auto& s : specs) {
    CHECK(seen.insert(s.root_cause).second);
    CHECK(validate_label({s.category, s.root_cause}));
    if (s.expected_heuristic) {
      CHECK(heuristic_category(*s.expected_heuristic) == s.category);
    }
  }
  CHECK(seen.size() == 25);
}

TEST_CASE("unknown root cause") {
  CHECK_THROWS_AS(inject("bogus_cause", 1), Error);
  try {
    inject("bogus_cause", 1);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::UnknownRootCause);
  }
}

TEST_CASE("dimension_mismatch surfaces the width error") {
  InjectedCase c = inject("dimension_mismatch", 11);
  REQUIRE(c.trace.raised_error.has_value());
  CHECK(c.trace.raised_error->code == ErrorCode::QkDimMismatch);
  CHECK(c.trace.config.d_q == 64);
  CHECK(c.trace.config.d_k == 32);
  CHECK_FALSE(c.oracle_trace.raised_error.has_value());
}

TEST_CASE("mask_application degrades the weight row sums without an error") {
  InjectedCase c = inject("mask_application", 11);
  CHECK_FALSE(c.trace.raised_error.has_value());
  REQUIRE(c.trace.weights_summary.has_value());
  REQUIRE(c.trace.weights_summary->row_sums.has_value());
  bool violated = false;
  for (double s : *c.trace.weights_summary->row_sums)
    if (std::fabs(s - 1.0) > 1e-6) violated = true;
  CHECK(violated);
}

TEST_CASE("cache_position_mismatch matches the oracle before the prefix boundary") {
  InjectedCase c = inject("cache_position_mismatch", 11);
  CHECK_FALSE(c.trace.raised_error.has_value());
  DivergenceProfile profile = divergence_profile(c.trace, c.oracle_trace);
  REQUIRE(profile.first_step.has_value());
  CHECK(*profile.first_step == 16);
  CHECK(profile.max_abs_diff > 1e-3);
}

TEST_CASE("silent_fallback records the event in the trace") {
  InjectedCase c = inject("silent_fallback", 11);
  REQUIRE_FALSE(c.trace.dispatch_events.empty());
  const DispatchEvent& ev = c.trace.dispatch_events.front();
  CHECK(ev.reason == DispatchReason::SilentFallback);
  CHECK_FALSE(ev.warned);
  CHECK(ev.selected == "reference");
  CHECK(ev.cost_incurred > 1.0);
}

TEST_CASE("precision_fault overflows the downcast scores into NaN output") {
  InjectedCase c = inject("precision_fault", 11);
  CHECK_FALSE(c.trace.raised_error.has_value());
  const TensorSummary* s = c.trace.find_tensor("scores", "s");
  REQUIRE(s != nullptr);
  CHECK(s->inf_count > 0);
  REQUIRE(c.trace.output_summary.has_value());
  CHECK(c.trace.output_summary->nan_count > 0);
  // Projections stay finite: the overflow is a score-stage event.
  const TensorSummary* q = c.trace.find_tensor("project", "q");
  REQUIRE(q != nullptr);
  CHECK(q->nan_count + q->inf_count == 0);
}

TEST_CASE("injector soundness: every faulty trace differs from its oracle") {
  for (const auto& spec : injector_specs()) {
    INFO(spec.root_cause);
    InjectedCase c = inject(spec.root_cause, 42);
    CHECK(serialize_trace(c.trace) != serialize_trace(c.oracle_trace));
    CHECK(validate_label(c.label));
  }
}

TEST_CASE("injectors are bitwise reproducible") {
  for (const auto& spec : injector_specs()) {
    InjectedCase a = inject(spec.root_cause, 123);
    InjectedCase b = inject(spec.root_cause, 123);
    CHECK(serialize_trace(a.trace) == serialize_trace(b.trace));
    CHECK(serialize_trace(a.oracle_trace) == serialize_trace(b.oracle_trace));
    CHECK(a.probe_results == b.probe_results);
  }
}

TEST_CASE("frozen parameter probe") {
  AttentionConfig c = default_base_config(9);
  AttentionWeights w = make_weights(c);

  std::map<std::string, Tensor> all{{"wq", w.wq}, {"wk", w.wk}, {"wv", w.wv}};
  auto moved = frozen_parameter_probe(all, standard_update_step({"wq", "wk", "wv"}));
  CHECK(moved.at("wq"));
  CHECK(moved.at("wk"));
  CHECK(moved.at("wv"));

  std::map<std::string, Tensor> partial{{"wq", w.wq}, {"wk", w.wk}, {"wv", w.wv}};
  auto partial_moved = frozen_parameter_probe(partial, standard_update_step({"wk", "wv"}));
  CHECK_FALSE(partial_moved.at("wq"));
  CHECK(partial_moved.at("wk"));
  CHECK(partial_moved.at("wv"));

  std::map<std::string, Tensor> empty;
  auto none = frozen_parameter_probe(empty, standard_update_step({}));
  CHECK(none.empty());
}

TEST_CASE("corpus allocation follows the proportions") {
  auto corpus = generate_corpus(1000, default_proportions(), 42);
  REQUIRE(corpus.size() == 1000);
  std::map<FaultCategory, int64_t> counts;
  std::set<std::string> ids;
  for (const auto& c : corpus) {
    counts[c.label.category] += 1;
    CHECK(ids.insert(c.case_id).second);
  }
  CHECK(counts[FaultCategory::Masking] == 250);
  CHECK(counts[FaultCategory::QkvMultiHead] == 219);
  CHECK(counts[FaultCategory::KernelSelection] == 185);
  CHECK(counts[FaultCategory::ScoreComputation] == 130);
  CHECK(counts[FaultCategory::PositionalEncoding] == 116);
  CHECK(counts[FaultCategory::KvCache] == 79);
  CHECK(counts[FaultCategory::VariantSelection] == 21);
}

TEST_CASE("uniform allocation differs by at most one") {
  auto corpus = generate_corpus(7, uniform_proportions(), 1);
  std::map<FaultCategory, int64_t> counts;
  for (const auto& c : corpus) counts[c.label.category] += 1;
  int64_t lo = 1000, hi = -1;
  for (const auto& cat : categories()) {
    lo = std::min(lo, counts[cat.id]);
    hi = std::max(hi, counts[cat.id]);
  }
  CHECK(hi - lo <= 1);
}

TEST_CASE("invalid proportions are rejected") {
  auto bad = default_proportions();
  bad[FaultCategory::Masking] = 0.15;  // now sums to 0.9
  CHECK_THROWS_AS(generate_corpus(10, bad, 1), Error);
  try {
    generate_corpus(10, bad, 1);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::InvalidProportions);
  }
}

TEST_CASE("round-robin cycling within a category") {
  auto corpus = generate_corpus(100, default_proportions(), 9);
  // First Masking cases alternate over the three masking causes in order.
  std::vector<std::string> masking_order;
  for (const auto& c : corpus)
    if (c.label.category == FaultCategory::Masking) masking_order.push_back(c.label.root_cause);
  REQUIRE(masking_order.size() >= 6);
  CHECK(masking_order[0] == "mask_generation");
  CHECK(masking_order[1] == "mask_application");
  CHECK(masking_order[2] == "dynamic_mask_mismatch");
  CHECK(masking_order[3] == "mask_generation");
}
