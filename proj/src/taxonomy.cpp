#include "attncheck/taxonomy.hpp"

#include <array>

namespace attncheck {

namespace {

constexpr std::array<std::pair<FaultCategory, const char*>, 7> kCategoryNames{{
    {FaultCategory::Masking, "Masking"},
    {FaultCategory::QkvMultiHead, "QkvMultiHead"},
    {FaultCategory::KernelSelection, "KernelSelection"},
    {FaultCategory::ScoreComputation, "ScoreComputation"},
    {FaultCategory::PositionalEncoding, "PositionalEncoding"},
    {FaultCategory::KvCache, "KvCache"},
    {FaultCategory::VariantSelection, "VariantSelection"},
}};

constexpr std::array<std::pair<Observ, const char*>, 4> kObservNames{{
    {Observ::Explicit, "Explicit"},
    {Observ::Silent, "Silent"},
    {Observ::Latent, "Latent"},
    {Observ::Clean, "Clean"},
}};

constexpr std::array<std::pair<ImpactSurface, const char*>, 3> kSurfaceNames{{
    {ImpactSurface::RuntimeComputation, "RuntimeComputation"},
    {ImpactSurface::OutputQuality, "OutputQuality"},
    {ImpactSurface::ResourceManagement, "ResourceManagement"},
}};

const std::vector<CategoryInfo> kCategories = {
    {FaultCategory::Masking, "Attention Masking", 0.25},
    {FaultCategory::QkvMultiHead, "QKV Projection & Multi-Head Handling", 0.219},
    {FaultCategory::KernelSelection, "Attention Kernel Selection & Integration", 0.185},
    {FaultCategory::ScoreComputation, "Attention Score Computation", 0.130},
    {FaultCategory::PositionalEncoding, "Positional Encoding Integration", 0.116},
    {FaultCategory::KvCache, "KV Cache Management", 0.079},
    {FaultCategory::VariantSelection, "Attention Variant Selection", 0.021},
};

// Expected observability per root cause is a curated fixture: it is the class
// the matching injector produces on the default setup, and the snapshot test
// pins the assignment.
const std::vector<RootCause> kRootCauses = {
    // Masking
    {"mask_generation", FaultCategory::Masking, Observ::Silent,
     "mask built with wrong values or shape, leaving blocked positions reachable"},
    {"mask_application", FaultCategory::Masking, Observ::Silent,
     "mask applied at the wrong pipeline stage (after normalization instead of before)"},
    {"dynamic_mask_mismatch", FaultCategory::Masking, Observ::Silent,
     "mask not extended when the sequence grows, leaving new positions unblocked"},

    // QkvMultiHead
    {"dimension_mismatch", FaultCategory::QkvMultiHead, Observ::Explicit,
     "query and key projection widths disagree, breaking the score product"},
    {"parameter_initialization", FaultCategory::QkvMultiHead, Observ::Silent,
     "projection weights initialized degenerately (all zero)"},
    {"head_interaction", FaultCategory::QkvMultiHead, Observ::Silent,
     "head outputs summed instead of concatenated, destroying head separation"},
    {"dynamic_parameter_registration", FaultCategory::QkvMultiHead, Observ::Silent,
     "a projection is left out of the registered parameter set and never updates"},

    // KernelSelection
    {"hardware_incompat", FaultCategory::KernelSelection, Observ::Explicit,
     "requested kernel rejects the run for an unsupported numeric format"},
    {"feature_constraint", FaultCategory::KernelSelection, Observ::Explicit,
     "requested kernel rejects the run because a non-null mask is unsupported"},
    {"silent_fallback", FaultCategory::KernelSelection, Observ::Silent,
     "dispatcher substitutes the slow universal kernel without any warning"},
    {"kernel_precision", FaultCategory::KernelSelection, Observ::Silent,
     "selected kernel rounds intermediates to a low-precision grid"},
    {"kernel_memory", FaultCategory::KernelSelection, Observ::Explicit,
     "score buffer exceeds available memory and the run aborts"},

    // ScoreComputation
    {"missing_scaling", FaultCategory::ScoreComputation, Observ::Silent,
     "dot-product scores not divided by the key-width root, sharpening weights"},
    {"normalization_fault", FaultCategory::ScoreComputation, Observ::Silent,
     "dropout applied after normalization without compensation, biasing weights"},
    {"precision_fault", FaultCategory::ScoreComputation, Observ::Silent,
     "scores downcast to a half-precision grid, overflowing to inf and then NaN"},

    // PositionalEncoding
    {"indexing_fault", FaultCategory::PositionalEncoding, Observ::Silent,
     "position indices start at one instead of zero, shifting every embedding"},
    {"interpolation_fault", FaultCategory::PositionalEncoding, Observ::Explicit,
     "lookup past the embedding table without clamping or interpolation"},
    {"relative_mismatch", FaultCategory::PositionalEncoding, Observ::Silent,
     "relative-distance buckets offset by one, mispairing distances and biases"},

    // KvCache
    {"cache_invalidation", FaultCategory::KvCache, Observ::Latent,
     "stale cache entries kept after a weight swap instead of being recomputed"},
    {"memory_layout", FaultCategory::KvCache, Observ::Silent,
     "cache entries stored transposed and read back assuming the canonical layout"},
    {"update_synchronization", FaultCategory::KvCache, Observ::Silent,
     "interleaved partial append writes a stale value tensor for one step"},
    {"cache_position_mismatch", FaultCategory::KvCache, Observ::Latent,
     "position ids not advanced for tokens appended after a cached prefix"},
    {"distributed_sync", FaultCategory::KvCache, Observ::Latent,
     "replica cache misses synchronization and serves stale entries"},

    // VariantSelection
    {"dynamic_dispatch", FaultCategory::VariantSelection, Observ::Silent,
     "variant logic picks the slow universal implementation for this input"},
    {"variant_configuration", FaultCategory::VariantSelection, Observ::Silent,
     "relative-attention flag silently disabled, degenerating to absolute encoding"},
};

const std::vector<SymptomCode> kSymptoms = {
    {"shape_dimension_error", Observ::Explicit, ImpactSurface::RuntimeComputation},
    {"kernel_compatibility_error", Observ::Explicit, ImpactSurface::RuntimeComputation},
    {"position_index_error", Observ::Explicit, ImpactSurface::RuntimeComputation},
    {"cache_update_error", Observ::Explicit, ImpactSurface::RuntimeComputation},
    {"out_of_memory", Observ::Explicit, ImpactSurface::ResourceManagement},
    {"runtime_error", Observ::Explicit, ImpactSurface::RuntimeComputation},
    {"numerical_instability", Observ::Silent, ImpactSurface::RuntimeComputation},
    {"silent_performance_regression", Observ::Silent, ImpactSurface::ResourceManagement},
    {"frozen_parameters", Observ::Silent, ImpactSurface::RuntimeComputation},
    {"node_output_mismatch", Observ::Latent, ImpactSurface::ResourceManagement},
    {"context_bleeding", Observ::Silent, ImpactSurface::OutputQuality},
    {"positional_degradation", Observ::Latent, ImpactSurface::OutputQuality},
    {"entropy_drop", Observ::Silent, ImpactSurface::OutputQuality},
    {"silent_output_divergence", Observ::Silent, ImpactSurface::OutputQuality},
};

}  // namespace

std::string to_string(FaultCategory c) {
  for (const auto& [e, s] : kCategoryNames)
    if (e == c) return s;
  return "unknown";
}

FaultCategory fault_category_from_string(const std::string& s) {
  for (const auto& [e, name] : kCategoryNames)
    if (s == name) return e;
  throw Error(ErrorCode::ParseError, "unknown fault category: " + s);
}

std::string to_string(Observ o) {
  for (const auto& [e, s] : kObservNames)
    if (e == o) return s;
  return "unknown";
}

Observ observ_from_string(const std::string& s) {
  for (const auto& [e, name] : kObservNames)
    if (s == name) return e;
  throw Error(ErrorCode::ParseError, "unknown observability: " + s);
}

std::string to_string(ImpactSurface s) {
  for (const auto& [e, n] : kSurfaceNames)
    if (e == s) return n;
  return "unknown";
}

ImpactSurface impact_surface_from_string(const std::string& s) {
  for (const auto& [e, name] : kSurfaceNames)
    if (s == name) return e;
  throw Error(ErrorCode::ParseError, "unknown impact surface: " + s);
}

const std::vector<CategoryInfo>& categories() { return kCategories; }
const std::vector<RootCause>& root_causes() { return kRootCauses; }
const std::vector<SymptomCode>& symptom_codes() { return kSymptoms; }

std::vector<RootCause> list_root_causes(FaultCategory category) {
  std::vector<RootCause> out;
  for (const auto& rc : kRootCauses)
    if (rc.category == category) out.push_back(rc);
  return out;
}

const RootCause* find_root_cause(const std::string& id) {
  for (const auto& rc : kRootCauses)
    if (rc.id == id) return &rc;
  return nullptr;
}

const SymptomCode* find_symptom(const std::string& id) {
  for (const auto& s : kSymptoms)
    if (s.id == id) return &s;
  return nullptr;
}

bool validate_label(const FaultLabel& label) {
  const RootCause* rc = find_root_cause(label.root_cause);
  return rc != nullptr && rc->category == label.category;
}

std::map<FaultCategory, double> category_distribution(std::span<const FaultLabel> labels) {
  if (labels.empty()) {
    throw Error(ErrorCode::EmptyCorpus, "category distribution over an empty label list");
  }
  std::map<FaultCategory, double> out;
  for (const auto& c : kCategories) out[c.id] = 0.0;
  for (const auto& l : labels) out[l.category] += 1.0;
  for (auto& [_, v] : out) v /= static_cast<double>(labels.size());
  return out;
}

json taxonomy_json() {
  json cats = json::array();
  for (const auto& c : kCategories) {
    json rcs = json::array();
    for (const auto& rc : kRootCauses) {
      if (rc.category != c.id) continue;
      rcs.push_back({{"id", rc.id},
                     {"expected_observability", to_string(rc.expected_observability)},
                     {"description", rc.description}});
    }
    cats.push_back({{"id", to_string(c.id)},
                    {"display_name", c.display_name},
                    {"prevalence", c.prevalence},
                    {"root_causes", rcs}});
  }
  json syms = json::array();
  for (const auto& s : kSymptoms) {
    syms.push_back({{"id", s.id},
                    {"observability", to_string(s.observability)},
                    {"impact_surface", to_string(s.impact_surface)}});
  }
  return json{{"schema", "taxonomy_schema_v1"}, {"categories", cats}, {"symptoms", syms}};
}

}  // namespace attncheck
