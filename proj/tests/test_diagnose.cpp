#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "attncheck/diagnose.hpp"
#include "attncheck/engine.hpp"
#include "attncheck/inject.hpp"

using namespace attncheck;

namespace {

/// A fully clean trace every single-condition test can start from.
RunTrace clean_trace(int64_t L = 8) {
  AttentionConfig c = default_base_config(1);
  c.B = 1;
  c.L = L;
  ForwardResult r = attention_forward(c);
  REQUIRE_FALSE(r.trace.raised_error.has_value());
  return r.trace;
}

bool fires(const std::optional<Finding>& f) { return f.has_value(); }

std::vector<Heuristic> fired_heuristics(const RunTrace& t) {
  std::vector<Heuristic> out;
  DiagnosisReport report = diagnose(t);
  for (const auto& f : report.findings)
    if (f.heuristic) out.push_back(*f.heuristic);
  return out;
}

}  // namespace

TEST_CASE("clean trace fires nothing") {
  RunTrace t = clean_trace();
  CHECK_FALSE(fires(detect_h1(t)));
  CHECK_FALSE(fires(detect_h2(t)));
  CHECK_FALSE(fires(detect_h3(t)));
  CHECK_FALSE(fires(detect_h4(t)));
  DiagnosisReport report = diagnose(t);
  CHECK(report.observability == Observ::Clean);
  CHECK(report.findings.empty());
  CHECK(report.undiagnosed);
}

TEST_CASE("rule 1 single conditions") {
  SUBCASE("query/key width mismatch") {
    RunTrace t = clean_trace();
    t.config.d_q = 64;
    t.config.d_k = 32;
    auto f = detect_h1(t);
    REQUIRE(fires(f));
    CHECK(f->predicted_category == FaultCategory::QkvMultiHead);
    CHECK(f->evidence["d_q"] == 64);
    CHECK(f->evidence["d_k"] == 32);
    CHECK(fired_heuristics(t) == std::vector<Heuristic>{Heuristic::H1});
  }
  SUBCASE("model width does not tile into heads") {
    RunTrace t = clean_trace();
    t.config.d_m = 30;  // n_h=2, d_h=16
    auto f = detect_h1(t);
    REQUIRE(fires(f));
    CHECK(fired_heuristics(t) == std::vector<Heuristic>{Heuristic::H1});
  }
  SUBCASE("query/key dtype mismatch") {
    RunTrace t = clean_trace();
    t.stages[0].tensors["q"].dtype = Dtype::F16Sim;
    t.stages[0].tensors["k"].dtype = Dtype::F32Sim;
    auto f = detect_h1(t);
    REQUIRE(fires(f));
    CHECK(fired_heuristics(t) == std::vector<Heuristic>{Heuristic::H1});
  }
  SUBCASE("key/value dtype mismatch") {
    RunTrace t = clean_trace();
    t.stages[0].tensors["v"].dtype = Dtype::BF16Sim;
    auto f = detect_h1(t);
    REQUIRE(fires(f));
    CHECK(fired_heuristics(t) == std::vector<Heuristic>{Heuristic::H1});
  }
  SUBCASE("non-finite projection values") {
    RunTrace t = clean_trace();
    t.stages[0].tensors["k"].nan_count = 3;
    auto f = detect_h1(t);
    REQUIRE(fires(f));
    CHECK(fired_heuristics(t) == std::vector<Heuristic>{Heuristic::H1});
  }
  SUBCASE("valid multi-head split does not fire") {
    RunTrace t = clean_trace();
    t.config.d_m = 512;
    t.config.n_h = 8;
    t.config.d_h = 64;
    t.config.d_q = t.config.d_k = t.config.d_v = 512;
    CHECK_FALSE(fires(detect_h1(t)));
  }
  SUBCASE("missing projection stage") {
    RunTrace t = clean_trace();
    t.stages.clear();
    CHECK_THROWS_AS(detect_h1(t), Error);
  }
}

TEST_CASE("rule 2 single conditions") {
  SUBCASE("entropy collapse") {
    RunTrace t = clean_trace();
    for (auto& st : t.stages)
      if (st.stage == "softmax") st.tensors["w"].mean_norm_entropy = 0.05;
    auto f = detect_h2(t);
    REQUIRE(fires(f));
    CHECK(f->predicted_category == FaultCategory::Masking);
    CHECK(fired_heuristics(t) == std::vector<Heuristic>{Heuristic::H2});
  }
  SUBCASE("unblocked future entry in a causal mask") {
    RunTrace t = clean_trace(3);
    REQUIRE(t.mask_snapshot.has_value());
    t.mask_snapshot->at({0, 2}) = 0.0;
    auto f = detect_h2(t);
    REQUIRE(fires(f));
    CHECK(f->evidence["unblocked_future"] == json::array({0, 2}));
    CHECK(fired_heuristics(t) == std::vector<Heuristic>{Heuristic::H2});
  }
  SUBCASE("position indices past the table") {
    RunTrace t = clean_trace();
    t.position_table_size = 512;
    t.position_indices.back() = 512;
    auto f = detect_h2(t);
    REQUIRE(fires(f));
    CHECK(f->evidence["max_index"] == 512);
    CHECK(fired_heuristics(t) == std::vector<Heuristic>{Heuristic::H2});
  }
  SUBCASE("position indices past the sequence") {
    RunTrace t = clean_trace(8);
    t.position_indices.back() = 8;  // reference is the sequence length
    auto f = detect_h2(t);
    REQUIRE(fires(f));
  }
  SUBCASE("row sum off unity") {
    RunTrace t = clean_trace();
    REQUIRE(t.weights_summary.has_value());
    (*t.weights_summary->row_sums)[2] = 1.5;
    auto f = detect_h2(t);
    REQUIRE(fires(f));
    CHECK(fired_heuristics(t) == std::vector<Heuristic>{Heuristic::H2});
  }
  SUBCASE("tolerance boundary: 1e-6 deviations stay quiet") {
    RunTrace t = clean_trace();
    (*t.weights_summary->row_sums)[0] = 1.0 + 0.99e-6;
    CHECK_FALSE(fires(detect_h2(t)));
    (*t.weights_summary->row_sums)[0] = 1.0 + 1.01e-6;
    CHECK(fires(detect_h2(t)));
  }
}

TEST_CASE("rule 3 single conditions") {
  SUBCASE("mask incompatible with the score shape") {
    RunTrace t = clean_trace();
    t.mask_snapshot = Tensor::zeros({3, 3});
    // A [3,3] zero mask also unblocks the future; restrict to shape only by
    // removing the causal flag.
    t.config.mask_mode = MaskMode::Padding;
    t.config.padding.clear();
    auto f = detect_h3(t);
    REQUIRE(fires(f));
    CHECK(f->predicted_category == FaultCategory::Masking);
    CHECK(fired_heuristics(t) == std::vector<Heuristic>{Heuristic::H3});
  }
  SUBCASE("non-finite mask entries") {
    RunTrace t = clean_trace();
    t.mask_snapshot->at({0, 1}) = -HUGE_VAL;
    auto f = detect_h3(t);
    REQUIRE(fires(f));
    CHECK(f->evidence["non_finite_mask_entries"] == true);
    CHECK(fired_heuristics(t) == std::vector<Heuristic>{Heuristic::H3});
  }
  SUBCASE("padded position left reachable") {
    AttentionConfig c = default_base_config(2);
    c.B = 1;
    c.L = 3;
    c.mask_mode = MaskMode::Padding;
    c.padding = {1, 1, 0};
    ForwardResult r = attention_forward(c);
    RunTrace t = r.trace;
    CHECK_FALSE(fires(detect_h3(t)));  // well-formed padding mask
    t.mask_snapshot = Tensor::zeros({1, 1, 1, 3});
    auto f = detect_h3(t);
    REQUIRE(fires(f));
    CHECK(f->evidence["unmasked_padding"] == json::array({0, 2}));
    CHECK(fired_heuristics(t) == std::vector<Heuristic>{Heuristic::H3});
  }
  SUBCASE("well-formed causal plus padding mask is quiet") {
    AttentionConfig c = default_base_config(2);
    c.mask_mode = MaskMode::CausalPlusPadding;
    c.padding.assign(static_cast<size_t>(c.B * c.L), 1);
    for (int64_t b = 0; b < c.B; ++b)
      c.padding[static_cast<size_t>(b * c.L + c.L - 1)] = 0;
    ForwardResult r = attention_forward(c);
    CHECK_FALSE(fires(detect_h3(r.trace)));
    CHECK_FALSE(fires(detect_h2(r.trace)));
  }
}

TEST_CASE("rule 4 single conditions") {
  SUBCASE("sequence beyond the kernel limit") {
    RunTrace t = clean_trace();
    t.config.L = 16384;
    t.config.m_avail = int64_t{1} << 62;  // keep the memory branch quiet
    KernelDescriptor flash = *KernelRegistry::standard().find("flashlike");
    t.selected_kernel = flash;
    auto f = detect_h4(t);
    REQUIRE(fires(f));
    CHECK(f->evidence["L"] == 16384);
    CHECK(f->evidence["L_max"] == 8192);
    CHECK(f->predicted_category == FaultCategory::KernelSelection);
    CHECK(fired_heuristics(t) == std::vector<Heuristic>{Heuristic::H4});
  }
  SUBCASE("score buffer beyond the memory budget") {
    RunTrace t = clean_trace();
    t.config.B = 4;
    t.config.L = 2048;
    t.config.d_h = 64;
    t.config.n_h = 2;
    t.config.d_m = 128;  // keep rule 1 quiet
    t.config.d_q = t.config.d_k = t.config.d_v = 128;
    t.config.m_avail = 1000000000;
    auto f = detect_h4(t);
    REQUIRE(fires(f));
    CHECK(f->evidence["required"] == 1073741824);
    CHECK(fired_heuristics(t) == std::vector<Heuristic>{Heuristic::H4});
  }
  SUBCASE("small config is quiet") {
    RunTrace t = clean_trace();
    t.config.m_avail = 1000000000;
    CHECK_FALSE(fires(detect_h4(t)));
  }
}

TEST_CASE("symptom detectors") {
  SUBCASE("raised width error maps to shape_dimension_error") {
    InjectedCase c = inject("dimension_mismatch", 3);
    auto symptoms = detect_symptoms(c.trace);
    REQUIRE_FALSE(symptoms.empty());
    CHECK(symptoms[0].detector == "shape_dimension_error");
    CHECK(symptoms[0].severity_hint == Observ::Explicit);
  }
  SUBCASE("silent fallback event maps to silent_performance_regression") {
    InjectedCase c = inject("silent_fallback", 3);
    auto symptoms = detect_symptoms(c.trace);
    bool found = false;
    for (const auto& f : symptoms)
      if (f.detector == "silent_performance_regression") found = true;
    CHECK(found);
  }
  SUBCASE("clean trace with oracle yields nothing") {
    RunTrace t = clean_trace();
    auto symptoms = detect_symptoms(t, &t);
    CHECK(symptoms.empty());
  }
}

TEST_CASE("observability classification") {
  SUBCASE("raised error is Explicit") {
    InjectedCase c = inject("dimension_mismatch", 3);
    CHECK(diagnose(c.trace, &c.oracle_trace).observability == Observ::Explicit);
  }
  SUBCASE("divergence at or past the horizon is Latent") {
    RunTrace t = clean_trace();
    DivergenceProfile profile;
    profile.first_step = 20;
    CHECK(classify_observability({}, t, profile) == Observ::Latent);
    profile.first_step = 15;
    Finding divergence;
    divergence.detector = "silent_output_divergence";
    CHECK(classify_observability({divergence}, t, profile) == Observ::Silent);
  }
  SUBCASE("no findings is Clean") {
    RunTrace t = clean_trace();
    CHECK(classify_observability({}, t, std::nullopt) == Observ::Clean);
  }
}

TEST_CASE("diagnose end-to-end on injected cases") {
  SUBCASE("dimension mismatch is pinned to the projection category") {
    InjectedCase c = inject("dimension_mismatch", 8);
    DiagnosisReport report = diagnose(c.trace, &c.oracle_trace);
    REQUIRE_FALSE(report.findings.empty());
    CHECK(report.findings[0].heuristic == Heuristic::H1);
    CHECK(report.findings[0].predicted_category == FaultCategory::QkvMultiHead);
    CHECK_FALSE(report.undiagnosed);
  }
  SUBCASE("missing scaling stays outside the rules but shows the entropy drop") {
    InjectedCase c = inject("missing_scaling", 8);
    DiagnosisReport report = diagnose(c.trace, &c.oracle_trace);
    CHECK(report.undiagnosed);
    bool entropy_drop = false;
    for (const auto& f : report.findings)
      if (f.detector == "entropy_drop") entropy_drop = true;
    CHECK(entropy_drop);
    CHECK(report.observability == Observ::Silent);
  }
  SUBCASE("unsupported schema is rejected") {
    RunTrace t = clean_trace();
    t.schema = "trace_schema_v0";
    CHECK_THROWS_AS(diagnose(t), Error);
    try {
      diagnose(t);
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::SchemaVersionMismatch);
    }
  }
}

TEST_CASE("heuristic monotonicity: adding a violation never removes findings") {
  RunTrace t = clean_trace();
  t.config.d_q = 64;  // rule 1 fires
  auto before = fired_heuristics(t);
  REQUIRE(before == std::vector<Heuristic>{Heuristic::H1});
  // Add a rule 2 violation on top.
  (*t.weights_summary->row_sums)[0] = 2.0;
  auto after = fired_heuristics(t);
  CHECK(after == std::vector<Heuristic>{Heuristic::H1, Heuristic::H2});
  // And a rule 4 violation on top of that.
  t.config.m_avail = 1;
  auto final_set = fired_heuristics(t);
  CHECK(final_set == std::vector<Heuristic>{Heuristic::H1, Heuristic::H2, Heuristic::H4});
}

TEST_CASE("report serialization round-trips") {
  InjectedCase c = inject("mask_generation", 5);
  DiagnosisReport report = diagnose(c.trace, &c.oracle_trace);
  json j = report.to_json();
  DiagnosisReport parsed = DiagnosisReport::from_json(j);
  CHECK(parsed.to_json() == j);
}
