#pragma once

#include <map>
#include <string>
#include <vector>

#include "attncheck/diagnose.hpp"
#include "attncheck/taxonomy.hpp"
#include "attncheck/types.hpp"

namespace attncheck {

/// Raw evaluation counts for one heuristic over a corpus.
struct EvalCounts {
  int64_t fired = 0;
  int64_t fired_correct = 0;
  int64_t category_total = 0;
  int64_t corpus_total = 0;
};

/// fired_correct / N
double support(const EvalCounts& counts);
/// fired_correct / category_total
double recall(const EvalCounts& counts);
/// fired_correct / fired
double confidence(const EvalCounts& counts);

struct ContingencyTable {
  std::vector<std::string> row_labels;
  std::vector<std::string> col_labels;
  std::vector<std::vector<int64_t>> cells;  // row-major counts
};

/// Pearson statistic sum (obs-exp)^2/exp; throws DegenerateTable on a zero
/// row or column and on an empty table.
double chi_square(const ContingencyTable& table);
int64_t chi_square_dof(const ContingencyTable& table);

struct PairCount {
  std::string symptom;
  std::string root_cause;
  int64_t count = 0;
};

/// (finding, root cause) pairs occurring at least min_support times, sorted
/// by descending count then lexicographically. Throws EmptyCorpus.
std::vector<PairCount> cooccurrence(
    const std::vector<std::pair<DiagnosisReport, FaultLabel>>& corpus,
    int64_t min_support = 12);

struct PublishedRow {
  std::string heuristic;
  std::string category;
  int64_t category_total = 0;
  int64_t support_count = 0;
  double support_pct = 0.0;
  double confidence_pct = 0.0;  // published fixture, not recomputed
  double recall_pct = 0.0;
};

/// Support/recall columns recomputed from the published per-rule counts;
/// confidence values attached as fixtures (fired totals are not published).
std::vector<PublishedRow> published_rule_table();

struct HeuristicEval {
  Heuristic heuristic;
  FaultCategory category;
  EvalCounts counts;
  double support_value = 0.0;
  double confidence_value = 0.0;
  double recall_value = 0.0;
  double precision_value = 0.0;  // same quantity as confidence on this corpus
};

struct MetricsReport {
  int64_t n_cases = 0;
  std::vector<HeuristicEval> per_heuristic;
  std::map<std::string, int64_t> observability_counts;
  std::vector<PairCount> cooccurrence_pairs;
  int64_t cooccurrence_min_support = 12;
  double chi_square_statistic = 0.0;
  int64_t chi_square_dof_value = 0;

  json to_json() const;
};

/// Aggregate per-heuristic counts, observability tallies, co-occurrence
/// pairs and the association statistic over diagnosed cases.
MetricsReport evaluate_corpus(const std::vector<std::pair<DiagnosisReport, FaultLabel>>& corpus,
                              int64_t min_support = 12);

}  // namespace attncheck
