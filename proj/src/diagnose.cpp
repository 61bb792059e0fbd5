#include "attncheck/diagnose.hpp"

#include <algorithm>
#include <cmath>

namespace attncheck {

namespace {

constexpr double kRowSumTolerance = 1e-6;
constexpr double kEntropyCollapse = 0.1;
constexpr double kDivergenceTolerance = 1e-6;
constexpr double kCostRegressionRatio = 1.5;
constexpr double kEntropyDropThreshold = 0.01;

/// An entry counts as blocked when it carries at least half the sentinel.
bool is_blocked(double v) { return !std::isnan(v) && v <= kNegMask * 0.5; }

std::string error_symptom(ErrorCode code) {
  switch (code) {
    case ErrorCode::ShapeMismatch:
    case ErrorCode::IndivisibleHeads:
    case ErrorCode::QkDimMismatch:
    case ErrorCode::BroadcastError:
      return "shape_dimension_error";
    case ErrorCode::KernelReject:
      return "kernel_compatibility_error";
    case ErrorCode::PositionOutOfRange:
      return "position_index_error";
    case ErrorCode::PositionGap:
      return "cache_update_error";
    case ErrorCode::OutOfMemory:
      return "out_of_memory";
    default:
      return "runtime_error";
  }
}

const TensorSummary* stage_tensor(const RunTrace& trace, const char* stage, const char* name) {
  return trace.find_tensor(stage, name);
}

double element_diff(double a, double b) {
  bool na = !std::isfinite(a), nb = !std::isfinite(b);
  if (na || nb) {
    if (std::isnan(a) && std::isnan(b)) return 0.0;
    if (a == b) return 0.0;  // matching infinities
    return HUGE_VAL;
  }
  return std::fabs(a - b);
}

}  // namespace

std::string to_string(Heuristic h) {
  switch (h) {
    case Heuristic::H1: return "H1";
    case Heuristic::H2: return "H2";
    case Heuristic::H3: return "H3";
    case Heuristic::H4: return "H4";
  }
  return "unknown";
}

Heuristic heuristic_from_string(const std::string& s) {
  if (s == "H1") return Heuristic::H1;
  if (s == "H2") return Heuristic::H2;
  if (s == "H3") return Heuristic::H3;
  if (s == "H4") return Heuristic::H4;
  throw Error(ErrorCode::ParseError, "unknown heuristic: " + s);
}

FaultCategory heuristic_category(Heuristic h) {
  switch (h) {
    case Heuristic::H1: return FaultCategory::QkvMultiHead;
    case Heuristic::H2: return FaultCategory::Masking;
    case Heuristic::H3: return FaultCategory::Masking;
    case Heuristic::H4: return FaultCategory::KernelSelection;
  }
  return FaultCategory::Masking;
}

json Finding::to_json() const {
  json j{{"detector", detector},
         {"evidence", evidence},
         {"severity_hint", to_string(severity_hint)}};
  if (heuristic) j["heuristic"] = to_string(*heuristic);
  if (predicted_category) j["predicted_category"] = to_string(*predicted_category);
  return j;
}

Finding Finding::from_json(const json& j) {
  Finding f;
  f.detector = j.at("detector");
  f.evidence = j.value("evidence", json::object());
  f.severity_hint = observ_from_string(j.at("severity_hint"));
  if (j.contains("heuristic")) f.heuristic = heuristic_from_string(j["heuristic"]);
  if (j.contains("predicted_category"))
    f.predicted_category = fault_category_from_string(j["predicted_category"]);
  return f;
}

json DiagnosisReport::to_json() const {
  json arr = json::array();
  for (const auto& f : findings) arr.push_back(f.to_json());
  return json{{"schema", "report_schema_v1"},
              {"case_id", case_id},
              {"observability", to_string(observability)},
              {"findings", arr},
              {"undiagnosed", undiagnosed}};
}

DiagnosisReport DiagnosisReport::from_json(const json& j) {
  DiagnosisReport r;
  r.case_id = j.value("case_id", "");
  r.observability = observ_from_string(j.at("observability"));
  r.undiagnosed = j.at("undiagnosed");
  for (const auto& f : j.at("findings")) r.findings.push_back(Finding::from_json(f));
  return r;
}

DivergenceProfile divergence_profile(const RunTrace& trace, const RunTrace& oracle) {
  DivergenceProfile profile;
  auto note = [&](int64_t step, double diff) {
    profile.per_step.push_back(diff);
    if (std::isnan(diff)) diff = HUGE_VAL;
    profile.max_abs_diff = std::max(profile.max_abs_diff, diff);
    if (!profile.first_step && diff > kDivergenceTolerance) profile.first_step = step;
  };
  if (!trace.step_outputs.empty() && !oracle.step_outputs.empty()) {
    size_t n = std::min(trace.step_outputs.size(), oracle.step_outputs.size());
    for (size_t s = 0; s < n; ++s) {
      const auto& a = trace.step_outputs[s];
      const auto& b = oracle.step_outputs[s];
      double worst = 0.0;
      size_t m = std::min(a.values.size(), b.values.size());
      if (a.values.size() != b.values.size()) worst = HUGE_VAL;
      for (size_t i = 0; i < m; ++i)
        worst = std::max(worst, element_diff(a.values[i], b.values[i]));
      note(a.step, worst);
    }
  } else if (trace.output && oracle.output) {
    // Full forward: treat sequence positions as steps.
    const Tensor& a = *trace.output;
    const Tensor& b = *oracle.output;
    if (a.shape != b.shape) {
      note(0, HUGE_VAL);
    } else {
      int64_t B = a.dim(0), L = a.dim(1), D = a.dim(2);
      for (int64_t l = 0; l < L; ++l) {
        double worst = 0.0;
        for (int64_t bi = 0; bi < B; ++bi)
          for (int64_t d = 0; d < D; ++d)
            worst = std::max(worst, element_diff(a.at({bi, l, d}), b.at({bi, l, d})));
        note(l, worst);
      }
    }
  }
  return profile;
}

std::optional<Finding> detect_h1(const RunTrace& trace) {
  const TensorSummary* q = stage_tensor(trace, "project", "q");
  const TensorSummary* k = stage_tensor(trace, "project", "k");
  const TensorSummary* v = stage_tensor(trace, "project", "v");
  if (q == nullptr || k == nullptr || v == nullptr) {
    throw Error(ErrorCode::MissingStage, "projection summaries absent from trace",
                {{"stage", "project"}});
  }
  const AttentionConfig& c = trace.config;
  json evidence = json::object();
  bool fired = false;
  if (c.d_q != c.d_k) {
    evidence["d_q"] = c.d_q;
    evidence["d_k"] = c.d_k;
    fired = true;
  }
  if (c.d_m != c.n_h * c.d_h) {
    evidence["d_m"] = c.d_m;
    evidence["n_h"] = c.n_h;
    evidence["d_h"] = c.d_h;
    fired = true;
  }
  if (q->dtype != k->dtype || k->dtype != v->dtype) {
    evidence["dtype_q"] = to_string(q->dtype);
    evidence["dtype_k"] = to_string(k->dtype);
    evidence["dtype_v"] = to_string(v->dtype);
    fired = true;
  }
  int64_t nonfinite = q->nan_count + q->inf_count + k->nan_count + k->inf_count +
                      v->nan_count + v->inf_count;
  if (nonfinite > 0) {
    evidence["nonfinite_qkv"] = nonfinite;
    fired = true;
  }
  if (!fired) return std::nullopt;
  return Finding{"h1_qkv_consistency", Heuristic::H1, heuristic_category(Heuristic::H1),
                 evidence, Observ::Silent};
}

std::optional<Finding> detect_h2(const RunTrace& trace) {
  const TensorSummary* w = stage_tensor(trace, "softmax", "w");
  const TensorSummary* eff = trace.weights_summary ? &*trace.weights_summary : nullptr;
  if (w == nullptr && eff == nullptr && !trace.mask_snapshot && trace.position_indices.empty()) {
    throw Error(ErrorCode::MissingStage, "no attention-weight material in trace",
                {{"stage", "softmax"}});
  }
  json evidence = json::object();
  bool fired = false;
  if (w != nullptr && w->mean_norm_entropy && *w->mean_norm_entropy < kEntropyCollapse) {
    evidence["mean_norm_entropy"] = *w->mean_norm_entropy;
    fired = true;
  }
  if (trace.mask_snapshot && mask_has_causal(trace.config.mask_mode)) {
    const Tensor& m = *trace.mask_snapshot;
    int64_t L = m.dim(-1);
    int64_t rows = m.dim(-2);
    int64_t batch = m.numel() / (rows * L);
    bool done = false;
    for (int64_t b = 0; b < batch && !done; ++b) {
      for (int64_t i = 0; i < rows && !done; ++i) {
        for (int64_t j = i + 1; j < L; ++j) {
          double val = m.data[static_cast<size_t>((b * rows + i) * L + j)];
          if (!is_blocked(val)) {
            evidence["unblocked_future"] = json::array({i, j});
            fired = true;
            done = true;
            break;
          }
        }
      }
    }
  }
  if (!trace.position_indices.empty()) {
    int64_t max_index =
        *std::max_element(trace.position_indices.begin(), trace.position_indices.end());
    int64_t reference = trace.position_table_size
                            ? *trace.position_table_size
                            : static_cast<int64_t>(trace.position_indices.size());
    if (max_index >= reference) {
      evidence["max_index"] = max_index;
      evidence["index_reference"] = reference;
      fired = true;
    }
  }
  if (eff != nullptr && eff->row_sums) {
    for (size_t i = 0; i < eff->row_sums->size(); ++i) {
      double dev = std::fabs((*eff->row_sums)[i] - 1.0);
      if (dev > kRowSumTolerance) {
        evidence["row_sum_violation"] = json::array({i, (*eff->row_sums)[i]});
        fired = true;
        break;
      }
    }
  }
  if (!fired) return std::nullopt;
  return Finding{"h2_attention_distribution", Heuristic::H2, heuristic_category(Heuristic::H2),
                 evidence, Observ::Silent};
}

std::optional<Finding> detect_h3(const RunTrace& trace) {
  if (!trace.mask_snapshot) {
    if (trace.config.mask_mode == MaskMode::None) return std::nullopt;
    throw Error(ErrorCode::MissingStage, "mask snapshot absent from trace",
                {{"stage", "mask"}});
  }
  const Tensor& m = *trace.mask_snapshot;
  json evidence = json::object();
  bool fired = false;
  const TensorSummary* s = stage_tensor(trace, "scores", "s");
  if (s != nullptr && !broadcast_compatible(m.shape, s->shape)) {
    evidence["mask_shape"] = m.shape;
    evidence["score_shape"] = s->shape;
    fired = true;
  }
  for (double val : m.data) {
    if (std::isnan(val) || std::isinf(val)) {
      evidence["non_finite_mask_entries"] = true;
      fired = true;
      break;
    }
  }
  const AttentionConfig& c = trace.config;
  if (mask_has_padding(c.mask_mode) && !c.padding.empty() && m.rank() >= 1) {
    // Every padded key column must stay blocked in every attention row.
    int64_t L = m.dim(-1);
    int64_t rows = m.rank() >= 2 ? m.dim(-2) : 1;
    int64_t batch = m.numel() / (rows * L);
    bool done = false;
    for (int64_t b = 0; b < batch && !done; ++b) {
      // Mask batch dim either matches B or broadcasts.
      int64_t pad_row = (batch == c.B) ? b : 0;
      for (int64_t i = 0; i < rows && !done; ++i) {
        for (int64_t j = 0; j < L; ++j) {
          if (c.padding[static_cast<size_t>(pad_row * L + j)] != 0) continue;
          double val = m.data[static_cast<size_t>((b * rows + i) * L + j)];
          if (!is_blocked(val)) {
            evidence["unmasked_padding"] = json::array({i, j});
            fired = true;
            done = true;
            break;
          }
        }
      }
    }
  }
  if (!fired) return std::nullopt;
  return Finding{"h3_mask_integrity", Heuristic::H3, heuristic_category(Heuristic::H3),
                 evidence, Observ::Silent};
}

std::optional<Finding> detect_h4(const RunTrace& trace) {
  const AttentionConfig& c = trace.config;
  json evidence = json::object();
  bool fired = false;
  if (trace.selected_kernel && c.L > trace.selected_kernel->max_seq_len) {
    evidence["L"] = c.L;
    evidence["L_max"] = trace.selected_kernel->max_seq_len;
    fired = true;
  }
  int64_t required = 0;
  try {
    required = kernel_memory_required(c.B, c.L, c.d_h);
  } catch (const Error&) {
    required = -1;  // overflow: certainly past any budget
  }
  if (required < 0 || required > c.m_avail) {
    evidence["required"] = required;
    evidence["m_avail"] = c.m_avail;
    fired = true;
  }
  if (!fired) return std::nullopt;
  return Finding{"h4_kernel_capacity", Heuristic::H4, heuristic_category(Heuristic::H4),
                 evidence, Observ::Silent};
}

std::vector<Finding> detect_symptoms(const RunTrace& trace, const RunTrace* oracle) {
  std::vector<Finding> out;

  if (trace.raised_error) {
    out.push_back({error_symptom(trace.raised_error->code), std::nullopt, std::nullopt,
                   json{{"code", to_string(trace.raised_error->code)},
                        {"message", trace.raised_error->message},
                        {"details", trace.raised_error->details}},
                   Observ::Explicit});
  }

  const KernelRegistry standard_registry = KernelRegistry::standard();
  for (const auto& ev : trace.dispatch_events) {
    bool silent_fallback = ev.reason == DispatchReason::SilentFallback;
    bool cost_regression = false;
    if (const KernelDescriptor* requested = standard_registry.find(ev.requested)) {
      cost_regression =
          ev.cost_incurred > kCostRegressionRatio * requested->cost_multiplier;
    }
    if (silent_fallback || cost_regression) {
      out.push_back({"silent_performance_regression", std::nullopt, std::nullopt,
                     json{{"requested", ev.requested},
                          {"selected", ev.selected},
                          {"cost_incurred", ev.cost_incurred},
                          {"warned", ev.warned}},
                     Observ::Silent});
      break;
    }
  }

  int64_t nonfinite = 0;
  for (const auto& st : trace.stages)
    for (const auto& [_, summary] : st.tensors) nonfinite += summary.nan_count + summary.inf_count;
  if (trace.output_summary)
    nonfinite += trace.output_summary->nan_count + trace.output_summary->inf_count;
  if (nonfinite > 0) {
    out.push_back({"numerical_instability", std::nullopt, std::nullopt,
                   json{{"nonfinite_values", nonfinite}}, Observ::Silent});
  }

  if (trace.probe_results.contains("moved")) {
    json frozen = json::array();
    for (const auto& [name, moved] : trace.probe_results["moved"].items()) {
      if (!moved.get<bool>()) frozen.push_back(name);
    }
    if (!frozen.empty()) {
      out.push_back({"frozen_parameters", std::nullopt, std::nullopt,
                     json{{"frozen", frozen}}, Observ::Silent});
    }
  }

  for (const auto& ev : trace.replica_events) {
    if (ev.diverged) {
      out.push_back({"node_output_mismatch", std::nullopt, std::nullopt,
                     json{{"first_step", ev.step},
                          {"len_a", ev.len_a},
                          {"len_b", ev.len_b},
                          {"max_output_diff", std::isfinite(ev.max_output_diff)
                                                  ? json(ev.max_output_diff)
                                                  : json("non-finite")}},
                     ev.step >= kDefaultLatentHorizon ? Observ::Latent : Observ::Silent});
      break;
    }
  }

  if (trace.weights_summary && trace.weights_summary->max_padding_mass &&
      *trace.weights_summary->max_padding_mass > 1e-9) {
    out.push_back({"context_bleeding", std::nullopt, std::nullopt,
                   json{{"max_padding_mass", *trace.weights_summary->max_padding_mass}},
                   Observ::Silent});
  }

  if (oracle != nullptr) {
    DivergenceProfile profile = divergence_profile(trace, *oracle);
    if (profile.first_step) {
      // Error confined to later positions after an initially clean span. The
      // span must cover at least two positions: under a causal mask the first
      // position is insensitive to weight-space faults, so onset 1 says
      // nothing about position dependence.
      bool starts_clean = *profile.first_step >= 2;
      bool grows = false;
      if (starts_clean) {
        grows = true;
        for (int64_t s = 0; s < *profile.first_step; ++s) {
          if (profile.per_step[static_cast<size_t>(s)] > 1e-9) grows = false;
        }
      }
      if (grows) {
        out.push_back({"positional_degradation", std::nullopt, std::nullopt,
                       json{{"onset_step", *profile.first_step},
                            {"max_abs_diff", std::isfinite(profile.max_abs_diff)
                                                 ? json(profile.max_abs_diff)
                                                 : json("non-finite")}},
                       *profile.first_step >= kDefaultLatentHorizon ? Observ::Latent
                                                                    : Observ::Silent});
      }
      const TensorSummary* w = trace.find_tensor("softmax", "w");
      const TensorSummary* wo = oracle->find_tensor("softmax", "w");
      if (w != nullptr && wo != nullptr && w->mean_norm_entropy && wo->mean_norm_entropy &&
          *wo->mean_norm_entropy - *w->mean_norm_entropy > kEntropyDropThreshold) {
        out.push_back({"entropy_drop", std::nullopt, std::nullopt,
                       json{{"entropy", *w->mean_norm_entropy},
                            {"oracle_entropy", *wo->mean_norm_entropy}},
                       Observ::Silent});
      }
      out.push_back({"silent_output_divergence", std::nullopt, std::nullopt,
                     json{{"first_step", *profile.first_step},
                          {"max_abs_diff", std::isfinite(profile.max_abs_diff)
                                               ? json(profile.max_abs_diff)
                                               : json("non-finite")}},
                     Observ::Silent});
    }
  }
  return out;
}

Observ classify_observability(const std::vector<Finding>& findings, const RunTrace& trace,
                              const std::optional<DivergenceProfile>& divergence,
                              int64_t latent_horizon) {
  if (trace.raised_error) return Observ::Explicit;
  std::optional<int64_t> first_step;
  if (divergence && divergence->first_step) first_step = divergence->first_step;
  for (const auto& ev : trace.replica_events) {
    if (ev.diverged) {
      if (!first_step || ev.step < *first_step) first_step = ev.step;
      break;
    }
  }
  if (first_step && *first_step >= latent_horizon) return Observ::Latent;
  if (!findings.empty()) return Observ::Silent;
  return Observ::Clean;
}

DiagnosisReport diagnose(const RunTrace& trace, const RunTrace* oracle,
                         int64_t latent_horizon) {
  if (trace.schema != kTraceSchema) {
    throw Error(ErrorCode::SchemaVersionMismatch, "unsupported trace schema: " + trace.schema,
                {{"expected", kTraceSchema}, {"got", trace.schema}});
  }
  DiagnosisReport report;
  report.case_id = trace.case_id;
  auto run_rule = [&](auto&& rule) {
    // Aborted runs legitimately miss stages; a rule without its inputs
    // simply does not fire.
    try {
      if (auto f = rule(trace)) report.findings.push_back(*f);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::MissingStage) throw;
    }
  };
  run_rule(detect_h1);
  run_rule(detect_h2);
  run_rule(detect_h3);
  run_rule(detect_h4);
  auto symptoms = detect_symptoms(trace, oracle);
  report.findings.insert(report.findings.end(), symptoms.begin(), symptoms.end());
  report.undiagnosed = true;
  for (const auto& f : report.findings)
    if (f.heuristic) report.undiagnosed = false;
  std::optional<DivergenceProfile> divergence;
  if (oracle != nullptr) divergence = divergence_profile(trace, *oracle);
  report.observability =
      classify_observability(report.findings, trace, divergence, latent_horizon);
  return report;
}

}  // namespace attncheck
