#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "attncheck/inject.hpp"
#include "attncheck/metrics.hpp"
#include "attncheck/rng.hpp"

using namespace attncheck;

namespace {

/// Independent chi-square route: expected counts computed row-by-row with
/// explicit rationals, accumulated in reverse order.
double chi_square_reference(const std::vector<std::vector<int64_t>>& cells) {
  size_t rows = cells.size(), cols = cells[0].size();
  std::vector<long double> row_t(rows, 0.0L), col_t(cols, 0.0L);
  long double grand = 0.0L;
  for (size_t r = 0; r < rows; ++r)
    for (size_t c = 0; c < cols; ++c) {
      row_t[r] += cells[r][c];
      col_t[c] += cells[r][c];
      grand += cells[r][c];
    }
  long double stat = 0.0L;
  for (size_t r = rows; r-- > 0;) {
    for (size_t c = cols; c-- > 0;) {
      long double expected = row_t[r] * col_t[c] / grand;
      long double d = static_cast<long double>(cells[r][c]) - expected;
      stat += d * d / expected;
    }
  }
  return static_cast<double>(stat);
}

std::pair<DiagnosisReport, FaultLabel> fake_case(const std::string& detector,
                                                 std::optional<Heuristic> h,
                                                 FaultCategory cat, const std::string& rc) {
  DiagnosisReport rep;
  Finding f;
  f.detector = detector;
  f.heuristic = h;
  if (h) f.predicted_category = heuristic_category(*h);
  rep.findings.push_back(f);
  rep.observability = Observ::Silent;
  rep.undiagnosed = !h.has_value();
  return {rep, FaultLabel{cat, rc}};
}

}  // namespace

TEST_CASE("support, recall, confidence") {
  EvalCounts row1{27, 27, 64, 292};
  CHECK(std::fabs(100.0 * support(row1) - 9.2) <= 0.05);
  CHECK(std::fabs(100.0 * recall(row1) - 42.2) <= 0.05);

  EvalCounts row3{20, 20, 73, 292};
  CHECK(std::fabs(100.0 * support(row3) - 6.8) <= 0.05);
  CHECK(std::fabs(100.0 * recall(row3) - 27.4) <= 0.05);

  EvalCounts conf{20, 18, 50, 100};
  CHECK(confidence(conf) == doctest::Approx(0.90));

  EvalCounts zero{0, 0, 0, 0};
  CHECK_THROWS_AS(support(zero), Error);
  CHECK_THROWS_AS(recall(zero), Error);
  CHECK_THROWS_AS(confidence(zero), Error);
}

TEST_CASE("support identity: support == recall * category_share") {
  Rng rng(17);
  for (int trial = 0; trial < 200; ++trial) {
    int64_t N = 1 + static_cast<int64_t>(rng.next_u64() % 500);
    int64_t cat = 1 + static_cast<int64_t>(rng.next_u64() % N);
    int64_t correct = static_cast<int64_t>(rng.next_u64() % (cat + 1));
    EvalCounts c{correct, correct, cat, N};
    double lhs = support(c);
    double rhs = recall(c) * (static_cast<double>(cat) / static_cast<double>(N));
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
  }
}

TEST_CASE("chi-square matches the closed-form 2x2 value") {
  ContingencyTable t;
  t.cells = {{10, 20}, {20, 10}};
  double stat = chi_square(t);
  CHECK(std::fabs(stat - 6.6666666666666667) <= 1e-9);
  // Closed form N(ad-bc)^2 / ((a+b)(c+d)(a+c)(b+d)).
  double closed = 60.0 * std::pow(10.0 * 10 - 20.0 * 20, 2) / (30.0 * 30 * 30 * 30);
  CHECK(stat == doctest::Approx(closed).epsilon(1e-12));
  CHECK(chi_square_dof(t) == 1);
}

TEST_CASE("chi-square on independent tables is zero") {
  // Cells equal to the independence product exactly.
  ContingencyTable t;
  t.cells = {{6, 12, 18}, {2, 4, 6}};
  CHECK(chi_square(t) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("chi-square rejects degenerate tables") {
  ContingencyTable zero_col;
  zero_col.cells = {{1, 0}, {3, 0}};
  CHECK_THROWS_AS(chi_square(zero_col), Error);
  try {
    chi_square(zero_col);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::DegenerateTable);
  }
  ContingencyTable empty;
  CHECK_THROWS_AS(chi_square(empty), Error);
}

TEST_CASE("chi-square agrees with the reference on random tables") {
  Rng rng(4);
  for (int trial = 0; trial < 5; ++trial) {
    size_t rows = 2 + rng.next_u64() % 3;
    size_t cols = 2 + rng.next_u64() % 3;
    std::vector<std::vector<int64_t>> cells(rows, std::vector<int64_t>(cols));
    for (auto& row : cells)
      for (auto& cell : row) cell = 1 + static_cast<int64_t>(rng.next_u64() % 50);
    ContingencyTable t;
    t.cells = cells;
    CHECK(std::fabs(chi_square(t) - chi_square_reference(cells)) <= 1e-9);
  }
}

TEST_CASE("chi-square is permutation invariant and scales linearly") {
  ContingencyTable t;
  t.cells = {{10, 20, 5}, {7, 3, 30}};
  double base = chi_square(t);

  ContingencyTable swapped_rows;
  swapped_rows.cells = {{7, 3, 30}, {10, 20, 5}};
  CHECK(chi_square(swapped_rows) == doctest::Approx(base).epsilon(1e-12));

  ContingencyTable swapped_cols;
  swapped_cols.cells = {{20, 10, 5}, {3, 7, 30}};
  CHECK(chi_square(swapped_cols) == doctest::Approx(base).epsilon(1e-12));

  ContingencyTable scaled;
  scaled.cells = {{30, 60, 15}, {21, 9, 90}};
  CHECK(chi_square(scaled) == doctest::Approx(3.0 * base).epsilon(1e-9));
}

TEST_CASE("co-occurrence threshold is inclusive at the minimum") {
  std::vector<std::pair<DiagnosisReport, FaultLabel>> corpus;
  for (int i = 0; i < 12; ++i)
    corpus.push_back(fake_case("h2_attention_distribution", Heuristic::H2,
                               FaultCategory::Masking, "mask_generation"));
  for (int i = 0; i < 11; ++i)
    corpus.push_back(fake_case("silent_output_divergence", std::nullopt,
                               FaultCategory::ScoreComputation, "missing_scaling"));
  auto pairs = cooccurrence(corpus, 12);
  REQUIRE(pairs.size() == 1);
  CHECK(pairs[0].symptom == "h2_attention_distribution");
  CHECK(pairs[0].count == 12);

  auto pairs11 = cooccurrence(corpus, 11);
  CHECK(pairs11.size() == 2);

  CHECK_THROWS_AS(cooccurrence({}, 12), Error);
}

TEST_CASE("co-occurrence is threshold-monotone and sorted") {
  std::vector<std::pair<DiagnosisReport, FaultLabel>> corpus;
  for (int i = 0; i < 30; ++i)
    corpus.push_back(fake_case("a_detector", std::nullopt, FaultCategory::Masking, "mask_generation"));
  for (int i = 0; i < 20; ++i)
    corpus.push_back(fake_case("b_detector", std::nullopt, FaultCategory::KvCache, "memory_layout"));
  for (int i = 0; i < 20; ++i)
    corpus.push_back(fake_case("a_detector", std::nullopt, FaultCategory::KvCache, "cache_invalidation"));
  size_t prev = 1000;
  for (int64_t threshold : {1, 5, 15, 21, 25, 31}) {
    auto pairs = cooccurrence(corpus, threshold);
    CHECK(pairs.size() <= prev);
    prev = pairs.size();
    for (size_t i = 1; i < pairs.size(); ++i) {
      bool ordered = pairs[i - 1].count > pairs[i].count ||
                     (pairs[i - 1].count == pairs[i].count &&
                      (pairs[i - 1].symptom < pairs[i].symptom ||
                       (pairs[i - 1].symptom == pairs[i].symptom &&
                        pairs[i - 1].root_cause < pairs[i].root_cause)));
      CHECK(ordered);
    }
  }
}

TEST_CASE("published table reproduction") {
  auto rows = published_rule_table();
  REQUIRE(rows.size() == 4);
  const double support_expected[] = {9.2, 8.6, 6.8, 5.1};
  const double recall_expected[] = {42.2, 34.2, 27.4, 27.8};
  const double confidence_expected[] = {93.0, 91.0, 87.0, 90.0};
  double support_sum = 0.0;
  for (size_t i = 0; i < rows.size(); ++i) {
    CHECK(std::fabs(rows[i].support_pct - support_expected[i]) <= 0.05);
    CHECK(std::fabs(rows[i].recall_pct - recall_expected[i]) <= 0.05);
    CHECK(rows[i].confidence_pct == confidence_expected[i]);
    support_sum += rows[i].support_pct;
  }
  CHECK(std::fabs(support_sum - 29.7) <= 0.2);
  CHECK(rows[1].category == "Mask");
  CHECK(rows[1].category_total == 73);
  CHECK(rows[3].support_count == 15);
}

TEST_CASE("corpus evaluation aggregates per-heuristic counts") {
  std::vector<std::pair<DiagnosisReport, FaultLabel>> corpus;
  // Two rule-1 fires on projection faults, one rule-1 fire mislabeled.
  corpus.push_back(fake_case("h1_qkv_consistency", Heuristic::H1,
                             FaultCategory::QkvMultiHead, "dimension_mismatch"));
  corpus.push_back(fake_case("h1_qkv_consistency", Heuristic::H1,
                             FaultCategory::QkvMultiHead, "dimension_mismatch"));
  corpus.push_back(fake_case("h1_qkv_consistency", Heuristic::H1,
                             FaultCategory::Masking, "mask_generation"));
  corpus.push_back(fake_case("silent_output_divergence", std::nullopt,
                             FaultCategory::ScoreComputation, "missing_scaling"));
  MetricsReport report = evaluate_corpus(corpus, 1);
  REQUIRE(report.per_heuristic.size() == 4);
  const HeuristicEval& h1 = report.per_heuristic[0];
  CHECK(h1.counts.fired == 3);
  CHECK(h1.counts.fired_correct == 2);
  CHECK(h1.counts.category_total == 2);
  CHECK(h1.precision_value == doctest::Approx(2.0 / 3.0));
  CHECK(report.n_cases == 4);
  CHECK_THROWS_AS(evaluate_corpus({}, 12), Error);
}

TEST_CASE("metrics report serializes with its schema tag") {
  std::vector<std::pair<DiagnosisReport, FaultLabel>> corpus;
  corpus.push_back(fake_case("h1_qkv_consistency", Heuristic::H1,
                             FaultCategory::QkvMultiHead, "dimension_mismatch"));
  MetricsReport report = evaluate_corpus(corpus, 1);
  json j = report.to_json();
  CHECK(j["schema"] == "report_schema_v1");
  CHECK(j.contains("per_heuristic"));
  CHECK(j.contains("chi_square"));
}
