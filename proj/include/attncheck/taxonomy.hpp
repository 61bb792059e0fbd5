#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "attncheck/types.hpp"

namespace attncheck {

enum class FaultCategory {
  Masking,
  QkvMultiHead,
  KernelSelection,
  ScoreComputation,
  PositionalEncoding,
  KvCache,
  VariantSelection,
};

std::string to_string(FaultCategory c);
FaultCategory fault_category_from_string(const std::string& s);

/// Observability of a symptom or expected observability of a root cause.
/// Clean is only used by diagnosis reports, never by the taxonomy itself.
enum class Observ { Explicit, Silent, Latent, Clean };
std::string to_string(Observ o);
Observ observ_from_string(const std::string& s);

enum class ImpactSurface { RuntimeComputation, OutputQuality, ResourceManagement };
std::string to_string(ImpactSurface s);
ImpactSurface impact_surface_from_string(const std::string& s);

struct CategoryInfo {
  FaultCategory id;
  std::string display_name;
  double prevalence;  // fraction of attention-specific faults, fixed fixture
};

struct RootCause {
  std::string id;  // stable lowercase snake-case, referenced byte-exactly in files
  FaultCategory category;
  Observ expected_observability;
  std::string description;
};

struct SymptomCode {
  std::string id;
  Observ observability;
  ImpactSurface impact_surface;
};

struct FaultLabel {
  FaultCategory category;
  std::string root_cause;
};

/// The seven categories in fixed declaration order, prevalences summing to 1.
const std::vector<CategoryInfo>& categories();

/// All 25 root causes in fixed declaration order (grouped by category).
const std::vector<RootCause>& root_causes();

const std::vector<SymptomCode>& symptom_codes();

std::vector<RootCause> list_root_causes(FaultCategory category);

const RootCause* find_root_cause(const std::string& id);
const SymptomCode* find_symptom(const std::string& id);

bool validate_label(const FaultLabel& label);

/// Fraction of labels per category. Throws EmptyCorpus on an empty list.
std::map<FaultCategory, double> category_distribution(std::span<const FaultLabel> labels);

/// Versioned taxonomy document (taxonomy_schema_v1).
json taxonomy_json();

}  // namespace attncheck
