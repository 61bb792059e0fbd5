#pragma once

#include <optional>
#include <string>
#include <vector>

#include "attncheck/taxonomy.hpp"
#include "attncheck/trace.hpp"
#include "attncheck/types.hpp"

namespace attncheck {

enum class Heuristic { H1, H2, H3, H4 };
std::string to_string(Heuristic h);
Heuristic heuristic_from_string(const std::string& s);

/// Category a heuristic predicts; a pure function of the rule id.
FaultCategory heuristic_category(Heuristic h);

struct Finding {
  std::string detector;
  std::optional<Heuristic> heuristic;
  std::optional<FaultCategory> predicted_category;
  json evidence = json::object();
  Observ severity_hint = Observ::Silent;

  json to_json() const;
  static Finding from_json(const json& j);
};

struct DiagnosisReport {
  std::string case_id;
  std::vector<Finding> findings;
  Observ observability = Observ::Clean;
  bool undiagnosed = true;

  json to_json() const;
  static DiagnosisReport from_json(const json& j);
};

/// Per-step (or per-position) divergence of a trace against its clean oracle.
struct DivergenceProfile {
  std::optional<int64_t> first_step;  // first step with |diff| > 1e-6
  double max_abs_diff = 0.0;
  std::vector<double> per_step;
};

DivergenceProfile divergence_profile(const RunTrace& trace, const RunTrace& oracle);

/// Rule 1: projection consistency. Fires on mismatched projection widths,
/// a head split that does not tile the model width, mixed Q/K/V dtypes, or
/// non-finite values in any projection. Throws MissingStage without
/// projection summaries.
std::optional<Finding> detect_h1(const RunTrace& trace);

/// Rule 2: attention-weight distribution. Fires on collapsed mean entropy,
/// an unblocked strict-upper-triangle causal entry, position indices past the
/// table or sequence, or a weight row sum off unity by more than 1e-6.
std::optional<Finding> detect_h2(const RunTrace& trace);

/// Rule 3: mask integrity. Fires on a mask/score shape incompatibility,
/// NaN/inf mask entries (sentinel excluded), or an insufficiently blocked
/// padded position.
std::optional<Finding> detect_h3(const RunTrace& trace);

/// Rule 4: kernel capacity. Fires when the sequence exceeds the selected
/// kernel's limit or the score buffer exceeds the memory budget.
std::optional<Finding> detect_h4(const RunTrace& trace);

/// Non-heuristic symptom detectors (raised errors, silent fallbacks, NaN,
/// frozen parameters, replica mismatch, context bleeding, positional
/// degradation, oracle divergence).
std::vector<Finding> detect_symptoms(const RunTrace& trace, const RunTrace* oracle = nullptr);

Observ classify_observability(const std::vector<Finding>& findings, const RunTrace& trace,
                              const std::optional<DivergenceProfile>& divergence,
                              int64_t latent_horizon = kDefaultLatentHorizon);

/// Full pipeline: H1..H4 in order, then symptom detectors, then the
/// observability classification.
DiagnosisReport diagnose(const RunTrace& trace, const RunTrace* oracle = nullptr,
                         int64_t latent_horizon = kDefaultLatentHorizon);

}  // namespace attncheck
