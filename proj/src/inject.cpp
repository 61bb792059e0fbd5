#include "attncheck/inject.hpp"

#include <algorithm>
#include <cmath>

#include "attncheck/kvcache.hpp"
#include "attncheck/rng.hpp"

namespace attncheck {

namespace {

const std::vector<InjectorSpec> kSpecs = {
    {"mask_generation", FaultCategory::Masking, Observ::Silent, Heuristic::H3,
     "replace the combined causal+padding mask with all zeros"},
    {"mask_application", FaultCategory::Masking, Observ::Silent, Heuristic::H2,
     "apply the mask to the weights after softmax instead of to the scores"},
    {"dynamic_mask_mismatch", FaultCategory::Masking, Observ::Silent, Heuristic::H2,
     "causal mask built for a 16-token prefix and zero-padded to the grown length"},

    {"dimension_mismatch", FaultCategory::QkvMultiHead, Observ::Explicit, Heuristic::H1,
     "set d_q=64 against d_k=32"},
    {"parameter_initialization", FaultCategory::QkvMultiHead, Observ::Silent, std::nullopt,
     "zero-initialize all projection weights"},
    {"head_interaction", FaultCategory::QkvMultiHead, Observ::Silent, std::nullopt,
     "sum head outputs and repeat the block instead of concatenating"},
    {"dynamic_parameter_registration", FaultCategory::QkvMultiHead, Observ::Silent, std::nullopt,
     "exclude the query projection from the registered parameter set"},

    {"hardware_incompat", FaultCategory::KernelSelection, Observ::Explicit, std::nullopt,
     "request the half-precision-only kernel with single-precision inputs, strict policy"},
    {"feature_constraint", FaultCategory::KernelSelection, Observ::Explicit, std::nullopt,
     "request the no-mask kernel with a causal mask, strict policy"},
    {"silent_fallback", FaultCategory::KernelSelection, Observ::Silent, std::nullopt,
     "faulty policy falls back to the reference kernel without warning"},
    {"kernel_precision", FaultCategory::KernelSelection, Observ::Silent, std::nullopt,
     "select the kernel that rounds intermediates to the half-precision grid"},
    {"kernel_memory", FaultCategory::KernelSelection, Observ::Explicit, Heuristic::H4,
     "configure B=4, L=2048, d_h=64 against a 1e9-element budget"},

    {"missing_scaling", FaultCategory::ScoreComputation, Observ::Silent, std::nullopt,
     "disable the inverse-root scaling of the dot-product scores"},
    {"normalization_fault", FaultCategory::ScoreComputation, Observ::Silent, std::nullopt,
     "apply uncompensated dropout after normalization"},
    {"precision_fault", FaultCategory::ScoreComputation, Observ::Silent, std::nullopt,
     "downcast oversized scores to the half-precision grid"},

    {"indexing_fault", FaultCategory::PositionalEncoding, Observ::Silent, std::nullopt,
     "start position indices at one instead of zero"},
    {"interpolation_fault", FaultCategory::PositionalEncoding, Observ::Explicit, std::nullopt,
     "run 24 positions against a 16-row embedding table without clamping"},
    {"relative_mismatch", FaultCategory::PositionalEncoding, Observ::Silent, std::nullopt,
     "offset every relative-distance bucket by one"},

    {"cache_invalidation", FaultCategory::KvCache, Observ::Latent, std::nullopt,
     "keep stale cache entries after the step-16 weight swap"},
    {"memory_layout", FaultCategory::KvCache, Observ::Silent, std::nullopt,
     "write cache entries transposed while reads assume the canonical layout"},
    {"update_synchronization", FaultCategory::KvCache, Observ::Silent, std::nullopt,
     "torn interleaved append: the value tensor lags one step at step 8"},
    {"cache_position_mismatch", FaultCategory::KvCache, Observ::Latent, std::nullopt,
     "restart position ids at zero for tokens appended after the 16-token prefix"},
    {"distributed_sync", FaultCategory::KvCache, Observ::Latent, std::nullopt,
     "replica b stops receiving cache syncs from step 16 on"},

    {"dynamic_dispatch", FaultCategory::VariantSelection, Observ::Silent, std::nullopt,
     "variant logic pins the slow universal kernel although the fast one fits"},
    {"variant_configuration", FaultCategory::VariantSelection, Observ::Silent, std::nullopt,
     "silently disable the relative-attention flag, degenerating to absolute encoding"},
};

const InjectorSpec& spec_for(const std::string& root_cause) {
  for (const auto& s : kSpecs)
    if (s.root_cause == root_cause) return s;
  throw Error(ErrorCode::UnknownRootCause, "no injector for root cause: " + root_cause,
              {{"root_cause", root_cause}});
}

std::vector<int> tail_padding(int64_t B, int64_t L, int64_t padded) {
  std::vector<int> keep(static_cast<size_t>(B * L), 1);
  for (int64_t b = 0; b < B; ++b)
    for (int64_t j = L - padded; j < L; ++j) keep[static_cast<size_t>(b * L + j)] = 0;
  return keep;
}

void attach_divergence(InjectedCase& c) {
  DivergenceProfile profile = divergence_profile(c.trace, c.oracle_trace);
  json d = json::object();
  d["max_abs_diff"] =
      std::isfinite(profile.max_abs_diff) ? json(profile.max_abs_diff) : json("non-finite");
  if (profile.first_step) d["first_divergence_step"] = *profile.first_step;
  c.probe_results["divergence"] = d;
  for (auto& [key, value] : c.probe_results.items())
    c.trace.probe_results[key] = value;
}

}  // namespace

const std::vector<InjectorSpec>& injector_specs() { return kSpecs; }

std::map<std::string, bool> frozen_parameter_probe(
    std::map<std::string, Tensor>& params,
    const std::function<void(std::map<std::string, Tensor>&)>& update_step) {
  std::map<std::string, Tensor> before = params;
  update_step(params);
  std::map<std::string, bool> moved;
  for (const auto& [name, tensor] : params) {
    auto it = before.find(name);
    moved[name] = it == before.end() || !(it->second == tensor);
  }
  return moved;
}

std::function<void(std::map<std::string, Tensor>&)> standard_update_step(
    const std::vector<std::string>& registered) {
  return [registered](std::map<std::string, Tensor>& params) {
    for (const auto& name : registered) {
      auto it = params.find(name);
      if (it == params.end()) continue;
      for (double& v : it->second.data) v += 1e-3;
    }
  };
}

InjectedCase inject(const std::string& root_cause, uint64_t seed) {
  return inject(root_cause, default_base_config(seed), seed);
}

InjectedCase inject(const std::string& root_cause, const AttentionConfig& base_config,
                    uint64_t seed) {
  const InjectorSpec& spec = spec_for(root_cause);
  InjectedCase c;
  c.case_id = root_cause + "-" + std::to_string(seed);
  c.label = {spec.category, spec.root_cause};
  c.expected_observability = spec.expected_observability;
  c.expected_heuristic = spec.expected_heuristic;

  AttentionConfig cfg = base_config;
  cfg.seed = seed;

  if (root_cause == "mask_generation") {
    cfg.mask_mode = MaskMode::CausalPlusPadding;
    cfg.padding = tail_padding(cfg.B, cfg.L, std::max<int64_t>(cfg.L / 4, 1));
    EngineOverrides faulty;
    faulty.zero_mask = true;
    c.trace = attention_forward(cfg, faulty).trace;
    c.oracle_trace = attention_forward(cfg).trace;
  } else if (root_cause == "mask_application") {
    EngineOverrides faulty;
    faulty.mask_after_softmax = true;
    c.trace = attention_forward(cfg, faulty).trace;
    c.oracle_trace = attention_forward(cfg).trace;
  } else if (root_cause == "dynamic_mask_mismatch") {
    EngineOverrides faulty;
    faulty.mask_frozen_len = kDefaultLatentHorizon;
    c.trace = attention_forward(cfg, faulty).trace;
    c.oracle_trace = attention_forward(cfg).trace;
  } else if (root_cause == "dimension_mismatch") {
    AttentionConfig bad = cfg;
    bad.d_q = 64;
    bad.d_k = 32;
    c.trace = attention_forward(bad).trace;
    c.oracle_trace = attention_forward(cfg).trace;
  } else if (root_cause == "parameter_initialization") {
    AttentionWeights zeroed = make_weights(cfg);
    for (double& v : zeroed.wq.data) v = 0.0;
    for (double& v : zeroed.wk.data) v = 0.0;
    for (double& v : zeroed.wv.data) v = 0.0;
    c.trace = attention_forward(cfg, make_input(cfg), zeroed).trace;
    c.oracle_trace = attention_forward(cfg).trace;
  } else if (root_cause == "head_interaction") {
    EngineOverrides faulty;
    faulty.sum_heads_instead_of_concat = true;
    c.trace = attention_forward(cfg, faulty).trace;
    c.oracle_trace = attention_forward(cfg).trace;
  } else if (root_cause == "dynamic_parameter_registration") {
    AttentionWeights weights = make_weights(cfg);
    std::map<std::string, Tensor> faulty_params{
        {"wq", weights.wq}, {"wk", weights.wk}, {"wv", weights.wv}};
    auto moved = frozen_parameter_probe(faulty_params, standard_update_step({"wk", "wv"}));
    AttentionWeights after;
    after.wq = faulty_params["wq"];
    after.wk = faulty_params["wk"];
    after.wv = faulty_params["wv"];
    c.trace = attention_forward(cfg, make_input(cfg), after).trace;
    std::map<std::string, Tensor> clean_params{
        {"wq", weights.wq}, {"wk", weights.wk}, {"wv", weights.wv}};
    frozen_parameter_probe(clean_params, standard_update_step({"wq", "wk", "wv"}));
    AttentionWeights oracle_after;
    oracle_after.wq = clean_params["wq"];
    oracle_after.wk = clean_params["wk"];
    oracle_after.wv = clean_params["wv"];
    c.oracle_trace = attention_forward(cfg, make_input(cfg), oracle_after).trace;
    json moved_j = json::object();
    for (const auto& [name, did_move] : moved) moved_j[name] = did_move;
    c.probe_results["moved"] = moved_j;
  } else if (root_cause == "missing_scaling") {
    AttentionConfig bad = cfg;
    bad.scaling_enabled = false;
    c.trace = attention_forward(bad).trace;
    c.oracle_trace = attention_forward(cfg).trace;
  } else if (root_cause == "normalization_fault") {
    AttentionConfig bad = cfg;
    bad.dropout_rate = 0.25;
    bad.dropout_placement = DropoutPlacement::AfterNormalization_FAULTY;
    c.trace = attention_forward(bad).trace;
    c.oracle_trace = attention_forward(cfg).trace;
  } else if (root_cause == "precision_fault") {
    AttentionConfig big = cfg;
    big.input_std = 400.0;  // unscaled projections push scores past 65504
    EngineOverrides faulty;
    faulty.force_score_dtype = Dtype::F16Sim;
    c.trace = attention_forward(big, faulty).trace;
    c.oracle_trace = attention_forward(big).trace;
  } else if (root_cause == "hardware_incompat") {
    AttentionConfig bad = cfg;
    bad.mask_mode = MaskMode::None;
    bad.dtype_x = Dtype::F32Sim;
    bad.kernel_preference = "flashlike";
    bad.dispatch_policy = DispatchPolicy::StrictFail;
    c.trace = attention_forward(bad).trace;
    AttentionConfig oracle = bad;
    oracle.kernel_preference = "reference";
    c.oracle_trace = attention_forward(oracle).trace;
  } else if (root_cause == "feature_constraint") {
    AttentionConfig bad = cfg;
    bad.dtype_x = bad.dtype_wq = bad.dtype_wk = bad.dtype_wv = Dtype::F16Sim;
    bad.kernel_preference = "flashlike";
    bad.dispatch_policy = DispatchPolicy::StrictFail;
    c.trace = attention_forward(bad).trace;
    AttentionConfig oracle = bad;
    oracle.kernel_preference = "reference";
    c.oracle_trace = attention_forward(oracle).trace;
  } else if (root_cause == "silent_fallback") {
    AttentionConfig bad = cfg;
    bad.dtype_x = bad.dtype_wq = bad.dtype_wk = bad.dtype_wv = Dtype::F16Sim;
    bad.kernel_preference = "flashlike";
    bad.dispatch_policy = DispatchPolicy::SilentFallback_FAULTY;
    c.trace = attention_forward(bad).trace;
    AttentionConfig oracle = bad;
    oracle.kernel_preference = "reference";
    oracle.dispatch_policy = DispatchPolicy::StrictFail;
    c.oracle_trace = attention_forward(oracle).trace;
  } else if (root_cause == "kernel_precision") {
    AttentionConfig bad = cfg;
    bad.dtype_x = bad.dtype_wq = bad.dtype_wk = bad.dtype_wv = Dtype::F32Sim;
    bad.kernel_preference = "xformerslike";
    c.trace = attention_forward(bad).trace;
    AttentionConfig oracle = bad;
    oracle.kernel_preference = "reference";
    c.oracle_trace = attention_forward(oracle).trace;
  } else if (root_cause == "kernel_memory") {
    AttentionConfig bad = cfg;
    bad.B = 4;
    bad.L = 2048;
    bad.n_h = 2;
    bad.d_h = 64;
    bad.d_m = 128;
    bad.d_q = bad.d_k = bad.d_v = 128;
    bad.m_avail = 1000000000;  // required 4*2048^2*64 exceeds this
    c.trace = attention_forward(bad).trace;
    c.oracle_trace = attention_forward(cfg).trace;
  } else if (root_cause == "indexing_fault") {
    AttentionConfig enc = cfg;
    enc.pos.scheme = PosScheme::LearnedAbsolute;
    enc.pos.max_positions = 512;
    EngineOverrides faulty;
    faulty.position_offset = 1;
    c.trace = attention_forward(enc, faulty).trace;
    c.oracle_trace = attention_forward(enc).trace;
  } else if (root_cause == "interpolation_fault") {
    AttentionConfig bad = cfg;
    bad.pos.scheme = PosScheme::LearnedAbsolute;
    bad.pos.max_positions = kDefaultLatentHorizon;  // 16 rows against 24 positions
    c.trace = attention_forward(bad).trace;
    AttentionConfig oracle = bad;
    oracle.pos.max_positions = 512;
    c.oracle_trace = attention_forward(oracle).trace;
  } else if (root_cause == "relative_mismatch") {
    AttentionConfig enc = cfg;
    enc.pos.scheme = PosScheme::RelativeBucketed;
    EngineOverrides faulty;
    faulty.relative_bucket_offset = 1;
    c.trace = attention_forward(enc, faulty).trace;
    c.oracle_trace = attention_forward(enc).trace;
  } else if (root_cause == "cache_invalidation") {
    DecodeOptions faulty;
    faulty.weight_swap_step = kDefaultLatentHorizon;
    faulty.invalidate_on_swap = false;
    c.trace = incremental_decode(cfg, faulty).trace;
    DecodeOptions oracle = faulty;
    oracle.invalidate_on_swap = true;
    c.oracle_trace = incremental_decode(cfg, oracle).trace;
  } else if (root_cause == "memory_layout") {
    DecodeOptions faulty;
    faulty.layout = CacheLayout::Transposed_FAULTY;
    c.trace = incremental_decode(cfg, faulty).trace;
    c.oracle_trace = incremental_decode(cfg).trace;
  } else if (root_cause == "update_synchronization") {
    DecodeOptions faulty;
    faulty.stale_value_step = 8;
    c.trace = incremental_decode(cfg, faulty).trace;
    c.oracle_trace = incremental_decode(cfg).trace;
  } else if (root_cause == "cache_position_mismatch") {
    AttentionConfig enc = cfg;
    enc.pos.scheme = PosScheme::RelativeBucketed;
    DecodeOptions faulty;
    faulty.freeze_position_ids_from = kDefaultLatentHorizon;
    c.trace = incremental_decode(enc, faulty).trace;
    c.oracle_trace = incremental_decode(enc).trace;
  } else if (root_cause == "distributed_sync") {
    DecodeOptions faulty;
    faulty.with_replica = true;
    faulty.replica_skip_sync_from = kDefaultLatentHorizon;
    c.trace = incremental_decode(cfg, faulty).trace;
    DecodeOptions oracle;
    oracle.with_replica = true;
    c.oracle_trace = incremental_decode(cfg, oracle).trace;
  } else if (root_cause == "dynamic_dispatch") {
    AttentionConfig bad = cfg;
    bad.mask_mode = MaskMode::None;
    bad.dtype_x = bad.dtype_wq = bad.dtype_wk = bad.dtype_wv = Dtype::F16Sim;
    bad.kernel_preference = "flashlike";
    EngineOverrides faulty;
    faulty.force_select_reference = true;
    c.trace = attention_forward(bad, faulty).trace;
    c.oracle_trace = attention_forward(bad).trace;
  } else if (root_cause == "variant_configuration") {
    AttentionConfig enc = cfg;
    enc.pos.scheme = PosScheme::RelativeBucketed;
    EngineOverrides faulty;
    faulty.disable_relative_bias = true;
    c.trace = attention_forward(enc, faulty).trace;
    c.oracle_trace = attention_forward(enc).trace;
  } else {
    throw Error(ErrorCode::UnknownRootCause, "no injector for root cause: " + root_cause,
                {{"root_cause", root_cause}});
  }

  c.trace.case_id = c.case_id;
  c.oracle_trace.case_id = c.case_id + "-oracle";
  attach_divergence(c);
  return c;
}

std::map<FaultCategory, double> default_proportions() {
  std::map<FaultCategory, double> p;
  for (const auto& cat : categories()) p[cat.id] = cat.prevalence;
  return p;
}

std::map<FaultCategory, double> uniform_proportions() {
  std::map<FaultCategory, double> p;
  for (const auto& cat : categories()) p[cat.id] = 1.0 / static_cast<double>(categories().size());
  return p;
}

std::vector<InjectedCase> generate_corpus(int64_t n,
                                          const std::map<FaultCategory, double>& proportions,
                                          uint64_t seed) {
  double total = 0.0;
  for (const auto& [_, p] : proportions) total += p;
  if (std::fabs(total - 1.0) > 1e-9) {
    throw Error(ErrorCode::InvalidProportions, "category proportions must sum to 1",
                {{"sum", total}});
  }
  if (n <= 0) {
    throw Error(ErrorCode::InvalidProportions, "corpus size must be positive", {{"n", n}});
  }

  // Largest-remainder allocation in category declaration order.
  struct Alloc {
    FaultCategory category;
    int64_t count;
    double remainder;
  };
  std::vector<Alloc> allocs;
  int64_t assigned = 0;
  for (const auto& cat : categories()) {
    auto it = proportions.find(cat.id);
    double share = it == proportions.end() ? 0.0 : it->second;
    double quota = share * static_cast<double>(n);
    int64_t base = static_cast<int64_t>(std::floor(quota + 1e-12));
    allocs.push_back({cat.id, base, quota - static_cast<double>(base)});
    assigned += base;
  }
  std::vector<size_t> order(allocs.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    return allocs[a].remainder > allocs[b].remainder;
  });
  for (size_t i = 0; assigned < n; ++i) {
    allocs[order[i % order.size()]].count += 1;
    ++assigned;
  }

  std::vector<InjectedCase> corpus;
  corpus.reserve(static_cast<size_t>(n));
  int64_t global_index = 0;
  for (const auto& alloc : allocs) {
    auto causes = list_root_causes(alloc.category);
    for (int64_t i = 0; i < alloc.count; ++i) {
      const std::string& rc = causes[static_cast<size_t>(i % static_cast<int64_t>(causes.size()))].id;
      uint64_t case_seed = derive_seed(seed, "case-" + std::to_string(global_index));
      InjectedCase c = inject(rc, case_seed);
      char buf[32];
      std::snprintf(buf, sizeof(buf), "case-%04lld", static_cast<long long>(global_index));
      c.case_id = std::string(buf) + "-" + rc;
      c.trace.case_id = c.case_id;
      c.oracle_trace.case_id = c.case_id + "-oracle";
      corpus.push_back(std::move(c));
      ++global_index;
    }
  }
  return corpus;
}

}  // namespace attncheck
