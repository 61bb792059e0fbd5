#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "attncheck/config.hpp"
#include "attncheck/diagnose.hpp"
#include "attncheck/engine.hpp"
#include "attncheck/taxonomy.hpp"
#include "attncheck/trace.hpp"

namespace attncheck {

/// Static description of one injector: which root cause it realizes, what it
/// perturbs, and what the run is expected to look like.
struct InjectorSpec {
  std::string root_cause;
  FaultCategory category;
  Observ expected_observability;
  std::optional<Heuristic> expected_heuristic;
  std::string perturbation;
};

/// One spec per root cause, in taxonomy declaration order.
const std::vector<InjectorSpec>& injector_specs();

struct InjectedCase {
  std::string case_id;
  FaultLabel label;
  Observ expected_observability = Observ::Silent;
  std::optional<Heuristic> expected_heuristic;
  RunTrace trace;
  RunTrace oracle_trace;
  json probe_results = json::object();
};

/// Build the faulty run plus its clean oracle for one root cause.
/// Deterministic in (root_cause, base_config, seed); throws UnknownRootCause.
InjectedCase inject(const std::string& root_cause, const AttentionConfig& base_config,
                    uint64_t seed);

InjectedCase inject(const std::string& root_cause, uint64_t seed);

/// One deterministic perturbation-and-apply cycle over named parameters;
/// a parameter counts as moved iff it changed bitwise.
std::map<std::string, bool> frozen_parameter_probe(
    std::map<std::string, Tensor>& params,
    const std::function<void(std::map<std::string, Tensor>&)>& update_step);

/// Update step that bumps exactly the registered parameters.
std::function<void(std::map<std::string, Tensor>&)> standard_update_step(
    const std::vector<std::string>& registered);

/// Stratified corpus: largest-remainder allocation over categories, root
/// causes cycled round-robin within each category. Proportions must sum to
/// 1 within 1e-9 (InvalidProportions otherwise).
std::vector<InjectedCase> generate_corpus(int64_t n,
                                          const std::map<FaultCategory, double>& proportions,
                                          uint64_t seed);

/// Category proportions matching the taxonomy prevalence fixture.
std::map<FaultCategory, double> default_proportions();

std::map<FaultCategory, double> uniform_proportions();

}  // namespace attncheck
