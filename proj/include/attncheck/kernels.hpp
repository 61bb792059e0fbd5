#pragma once

#include <optional>
#include <set>
#include <string>
#include <vector>

#include "attncheck/config.hpp"
#include "attncheck/types.hpp"

namespace attncheck {

enum class PrecisionProfile { Exact, RoundedIntermediate };
std::string to_string(PrecisionProfile p);
PrecisionProfile precision_profile_from_string(const std::string& s);

enum class DispatchReason { Direct, SilentFallback, ExplicitReject };
std::string to_string(DispatchReason r);
DispatchReason dispatch_reason_from_string(const std::string& s);

/// Capability sheet of one simulated attention kernel.
struct KernelDescriptor {
  std::string id;
  std::set<Dtype> supported_dtypes;
  int64_t max_seq_len = 0;
  std::set<int64_t> supported_head_sizes;  // empty set = any head size
  bool allows_nonnull_mask = true;
  double cost_multiplier = 1.0;  // relative latency
  PrecisionProfile precision = PrecisionProfile::Exact;

  json to_json() const;
  static KernelDescriptor from_json(const json& j);
};

struct KernelRegistry {
  std::vector<KernelDescriptor> kernels;

  const KernelDescriptor* find(const std::string& id) const;

  /// Built-in registry: the universal reference kernel plus three optimized
  /// kernels with realistic constraint profiles.
  static KernelRegistry standard();

  json to_json() const;
  static KernelRegistry from_json(const json& j);
};

struct CapabilityViolation {
  std::string constraint;
  std::string expected;
  std::string actual;

  json to_json() const;
};

struct DispatchEvent {
  std::string requested;
  std::string selected;
  DispatchReason reason = DispatchReason::Direct;
  bool warned = false;
  double cost_incurred = 0.0;

  json to_json() const;
  static DispatchEvent from_json(const json& j);
};

struct OomEvent {
  int64_t required = 0;
  int64_t available = 0;
};

/// Scores-only footprint B*L^2*d_h in scalar elements, overflow-checked.
int64_t kernel_memory_required(int64_t B, int64_t L, int64_t d_h);

std::vector<CapabilityViolation> check_capabilities(const KernelDescriptor& kernel,
                                                    const AttentionConfig& config,
                                                    bool mask_present);

/// Select a kernel for the config under the given policy. StrictFail throws
/// KernelReject on any violation; the fallback policies select the reference
/// kernel, warned or silent.
std::pair<KernelDescriptor, DispatchEvent> dispatch(const AttentionConfig& config,
                                                    const KernelRegistry& registry,
                                                    DispatchPolicy policy,
                                                    bool mask_present);

/// OOM iff required memory strictly exceeds the budget; ties pass.
std::optional<OomEvent> simulate_oom(const AttentionConfig& config, int64_t m_avail);

}  // namespace attncheck
