#include "attncheck/metrics.hpp"

#include <algorithm>
#include <cmath>

namespace attncheck {

namespace {

void require_positive(int64_t v, const char* what) {
  if (v <= 0) {
    throw Error(ErrorCode::ZeroDenominator, std::string(what) + " must be positive",
                {{"value", v}});
  }
}

}  // namespace

double support(const EvalCounts& counts) {
  require_positive(counts.corpus_total, "corpus total");
  return static_cast<double>(counts.fired_correct) / static_cast<double>(counts.corpus_total);
}

double recall(const EvalCounts& counts) {
  require_positive(counts.category_total, "category total");
  return static_cast<double>(counts.fired_correct) / static_cast<double>(counts.category_total);
}

double confidence(const EvalCounts& counts) {
  require_positive(counts.fired, "fired count");
  return static_cast<double>(counts.fired_correct) / static_cast<double>(counts.fired);
}

double chi_square(const ContingencyTable& table) {
  size_t rows = table.cells.size();
  if (rows == 0 || table.cells[0].empty()) {
    throw Error(ErrorCode::DegenerateTable, "empty contingency table");
  }
  size_t cols = table.cells[0].size();
  std::vector<double> row_totals(rows, 0.0), col_totals(cols, 0.0);
  double grand = 0.0;
  for (size_t r = 0; r < rows; ++r) {
    if (table.cells[r].size() != cols) {
      throw Error(ErrorCode::DegenerateTable, "ragged contingency table");
    }
    for (size_t c = 0; c < cols; ++c) {
      double v = static_cast<double>(table.cells[r][c]);
      if (v < 0) throw Error(ErrorCode::DegenerateTable, "negative cell count");
      row_totals[r] += v;
      col_totals[c] += v;
      grand += v;
    }
  }
  if (grand <= 0) throw Error(ErrorCode::DegenerateTable, "grand total is zero");
  for (size_t r = 0; r < rows; ++r)
    if (row_totals[r] == 0.0)
      throw Error(ErrorCode::DegenerateTable, "zero row total", {{"row", r}});
  for (size_t c = 0; c < cols; ++c)
    if (col_totals[c] == 0.0)
      throw Error(ErrorCode::DegenerateTable, "zero column total", {{"col", c}});
  double stat = 0.0;
  for (size_t r = 0; r < rows; ++r) {
    for (size_t c = 0; c < cols; ++c) {
      double expected = row_totals[r] * col_totals[c] / grand;
      double diff = static_cast<double>(table.cells[r][c]) - expected;
      stat += diff * diff / expected;
    }
  }
  return stat;
}

int64_t chi_square_dof(const ContingencyTable& table) {
  if (table.cells.empty() || table.cells[0].empty()) return 0;
  return static_cast<int64_t>(table.cells.size() - 1) *
         static_cast<int64_t>(table.cells[0].size() - 1);
}

std::vector<PairCount> cooccurrence(
    const std::vector<std::pair<DiagnosisReport, FaultLabel>>& corpus, int64_t min_support) {
  if (corpus.empty()) {
    throw Error(ErrorCode::EmptyCorpus, "co-occurrence over an empty corpus");
  }
  std::map<std::pair<std::string, std::string>, int64_t> counts;
  for (const auto& [report, label] : corpus) {
    for (const auto& finding : report.findings) {
      counts[{finding.detector, label.root_cause}] += 1;
    }
  }
  std::vector<PairCount> out;
  for (const auto& [key, count] : counts) {
    if (count >= min_support) out.push_back({key.first, key.second, count});
  }
  std::sort(out.begin(), out.end(), [](const PairCount& a, const PairCount& b) {
    if (a.count != b.count) return a.count > b.count;
    if (a.symptom != b.symptom) return a.symptom < b.symptom;
    return a.root_cause < b.root_cause;
  });
  return out;
}

std::vector<PublishedRow> published_rule_table() {
  struct Published {
    const char* heuristic;
    const char* category;
    int64_t category_total;
    int64_t support_count;
    double confidence_pct;
  };
  constexpr int64_t kN = 292;
  const Published published[] = {
      {"H1", "QKV", 64, 27, 93.0},
      {"H2", "Mask", 73, 25, 91.0},
      {"H3", "Mask", 73, 20, 87.0},
      {"H4", "Kernel", 54, 15, 90.0},
  };
  std::vector<PublishedRow> rows;
  for (const auto& p : published) {
    PublishedRow row;
    row.heuristic = p.heuristic;
    row.category = p.category;
    row.category_total = p.category_total;
    row.support_count = p.support_count;
    EvalCounts counts{p.support_count, p.support_count, p.category_total, kN};
    row.support_pct = 100.0 * support(counts);
    row.recall_pct = 100.0 * recall(counts);
    row.confidence_pct = p.confidence_pct;
    rows.push_back(row);
  }
  return rows;
}

json MetricsReport::to_json() const {
  json per = json::array();
  for (const auto& h : per_heuristic) {
    per.push_back({{"heuristic", to_string(h.heuristic)},
                   {"category", to_string(h.category)},
                   {"fired", h.counts.fired},
                   {"correct", h.counts.fired_correct},
                   {"category_total", h.counts.category_total},
                   {"support", h.support_value},
                   {"confidence", h.confidence_value},
                   {"recall", h.recall_value},
                   {"precision", h.precision_value}});
  }
  json pairs = json::array();
  for (const auto& p : cooccurrence_pairs) {
    pairs.push_back({{"symptom", p.symptom}, {"root_cause", p.root_cause}, {"count", p.count}});
  }
  return json{{"schema", "report_schema_v1"},
              {"n_cases", n_cases},
              {"per_heuristic", per},
              {"observability_counts", observability_counts},
              {"cooccurrence", {{"min_support", cooccurrence_min_support}, {"pairs", pairs}}},
              {"chi_square", {{"statistic", chi_square_statistic}, {"dof", chi_square_dof_value}}}};
}

MetricsReport evaluate_corpus(const std::vector<std::pair<DiagnosisReport, FaultLabel>>& corpus,
                              int64_t min_support) {
  if (corpus.empty()) {
    throw Error(ErrorCode::EmptyCorpus, "evaluation over an empty corpus");
  }
  MetricsReport report;
  report.n_cases = static_cast<int64_t>(corpus.size());
  report.cooccurrence_min_support = min_support;

  std::map<FaultCategory, int64_t> category_totals;
  for (const auto& [_, label] : corpus) category_totals[label.category] += 1;
  for (const auto& [rep, _] : corpus)
    report.observability_counts[to_string(rep.observability)] += 1;

  for (Heuristic h : {Heuristic::H1, Heuristic::H2, Heuristic::H3, Heuristic::H4}) {
    HeuristicEval eval;
    eval.heuristic = h;
    eval.category = heuristic_category(h);
    eval.counts.corpus_total = report.n_cases;
    eval.counts.category_total = category_totals[eval.category];
    for (const auto& [rep, label] : corpus) {
      bool fired = false;
      for (const auto& f : rep.findings) {
        if (f.heuristic && *f.heuristic == h) {
          fired = true;
          break;
        }
      }
      if (!fired) continue;
      eval.counts.fired += 1;
      if (label.category == eval.category) eval.counts.fired_correct += 1;
    }
    eval.support_value = support(eval.counts);
    eval.recall_value = eval.counts.category_total > 0 ? recall(eval.counts) : 0.0;
    eval.confidence_value = eval.counts.fired > 0 ? confidence(eval.counts) : 0.0;
    eval.precision_value = eval.confidence_value;
    report.per_heuristic.push_back(eval);
  }

  report.cooccurrence_pairs = cooccurrence(corpus, min_support);

  // Symptom-by-root-cause association over the findings that occurred.
  std::map<std::string, size_t> row_index;
  std::map<std::string, size_t> col_index;
  for (const auto& [rep, label] : corpus) {
    for (const auto& f : rep.findings) {
      if (!row_index.contains(f.detector)) {
        size_t next = row_index.size();
        row_index[f.detector] = next;
      }
    }
    if (!col_index.contains(label.root_cause)) {
      size_t next = col_index.size();
      col_index[label.root_cause] = next;
    }
  }
  if (!row_index.empty() && !col_index.empty()) {
    ContingencyTable table;
    table.row_labels.resize(row_index.size());
    table.col_labels.resize(col_index.size());
    for (const auto& [name, i] : row_index) table.row_labels[i] = name;
    for (const auto& [name, i] : col_index) table.col_labels[i] = name;
    table.cells.assign(row_index.size(), std::vector<int64_t>(col_index.size(), 0));
    for (const auto& [rep, label] : corpus) {
      for (const auto& f : rep.findings) {
        table.cells[row_index[f.detector]][col_index[label.root_cause]] += 1;
      }
    }
    // Root causes whose findings never materialized would zero a column;
    // drop empty rows/columns before the test.
    std::vector<std::vector<int64_t>> cells;
    std::vector<std::string> rows_kept;
    for (size_t r = 0; r < table.cells.size(); ++r) {
      int64_t total = 0;
      for (int64_t v : table.cells[r]) total += v;
      if (total > 0) {
        cells.push_back(table.cells[r]);
        rows_kept.push_back(table.row_labels[r]);
      }
    }
    std::vector<size_t> cols_kept;
    for (size_t c = 0; c < table.col_labels.size(); ++c) {
      int64_t total = 0;
      for (const auto& row : cells) total += row[c];
      if (total > 0) cols_kept.push_back(c);
    }
    ContingencyTable trimmed;
    trimmed.row_labels = rows_kept;
    for (size_t c : cols_kept) trimmed.col_labels.push_back(table.col_labels[c]);
    for (const auto& row : cells) {
      std::vector<int64_t> out_row;
      for (size_t c : cols_kept) out_row.push_back(row[c]);
      trimmed.cells.push_back(std::move(out_row));
    }
    if (trimmed.cells.size() >= 2 && trimmed.cells[0].size() >= 2) {
      report.chi_square_statistic = chi_square(trimmed);
      report.chi_square_dof_value = chi_square_dof(trimmed);
    }
  }
  return report;
}

}  // namespace attncheck
