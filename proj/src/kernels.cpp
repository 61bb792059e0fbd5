#include "attncheck/kernels.hpp"

#include <sstream>

namespace attncheck {

namespace {

std::string dtype_set_string(const std::set<Dtype>& dtypes) {
  std::ostringstream os;
  os << "{";
  bool first = true;
  for (Dtype d : dtypes) {
    if (!first) os << ",";
    os << to_string(d);
    first = false;
  }
  os << "}";
  return os.str();
}

std::string head_set_string(const std::set<int64_t>& sizes) {
  if (sizes.empty()) return "any";
  std::ostringstream os;
  os << "{";
  bool first = true;
  for (int64_t s : sizes) {
    if (!first) os << ",";
    os << s;
    first = false;
  }
  os << "}";
  return os.str();
}

}  // namespace

std::string to_string(PrecisionProfile p) {
  return p == PrecisionProfile::Exact ? "Exact" : "RoundedIntermediate";
}

PrecisionProfile precision_profile_from_string(const std::string& s) {
  if (s == "Exact") return PrecisionProfile::Exact;
  if (s == "RoundedIntermediate") return PrecisionProfile::RoundedIntermediate;
  throw Error(ErrorCode::ParseError, "unknown precision profile: " + s);
}

std::string to_string(DispatchReason r) {
  switch (r) {
    case DispatchReason::Direct: return "Direct";
    case DispatchReason::SilentFallback: return "SilentFallback";
    case DispatchReason::ExplicitReject: return "ExplicitReject";
  }
  return "unknown";
}

DispatchReason dispatch_reason_from_string(const std::string& s) {
  if (s == "Direct") return DispatchReason::Direct;
  if (s == "SilentFallback") return DispatchReason::SilentFallback;
  if (s == "ExplicitReject") return DispatchReason::ExplicitReject;
  throw Error(ErrorCode::ParseError, "unknown dispatch reason: " + s);
}

json KernelDescriptor::to_json() const {
  json dtypes = json::array();
  for (Dtype d : supported_dtypes) dtypes.push_back(to_string(d));
  json heads = json::array();
  for (int64_t h : supported_head_sizes) heads.push_back(h);
  return json{{"id", id},
              {"supported_dtypes", dtypes},
              {"max_seq_len", max_seq_len},
              {"supported_head_sizes", heads},
              {"allows_nonnull_mask", allows_nonnull_mask},
              {"cost_multiplier", cost_multiplier},
              {"precision_profile", to_string(precision)}};
}

KernelDescriptor KernelDescriptor::from_json(const json& j) {
  KernelDescriptor d;
  d.id = j.at("id");
  for (const auto& s : j.at("supported_dtypes")) d.supported_dtypes.insert(dtype_from_string(s));
  d.max_seq_len = j.at("max_seq_len");
  for (const auto& h : j.at("supported_head_sizes")) d.supported_head_sizes.insert(h.get<int64_t>());
  d.allows_nonnull_mask = j.at("allows_nonnull_mask");
  d.cost_multiplier = j.at("cost_multiplier");
  d.precision = precision_profile_from_string(j.at("precision_profile"));
  return d;
}

const KernelDescriptor* KernelRegistry::find(const std::string& id) const {
  for (const auto& k : kernels)
    if (k.id == id) return &k;
  return nullptr;
}

KernelRegistry KernelRegistry::standard() {
  KernelRegistry reg;
  // Universal fallback: supports everything, costs the most.
  reg.kernels.push_back({"reference",
                         {Dtype::F64Sim, Dtype::F32Sim, Dtype::F16Sim, Dtype::BF16Sim},
                         int64_t{1} << 40,
                         {},
                         true,
                         4.0,
                         PrecisionProfile::Exact});
  reg.kernels.push_back({"flashlike",
                         {Dtype::F16Sim, Dtype::BF16Sim},
                         8192,
                         {8, 16, 32, 64, 128},
                         false,
                         1.0,
                         PrecisionProfile::Exact});
  reg.kernels.push_back({"sdpalike",
                         {Dtype::F64Sim, Dtype::F32Sim, Dtype::F16Sim, Dtype::BF16Sim},
                         16384,
                         {8, 16, 32, 64, 128, 256},
                         true,
                         1.5,
                         PrecisionProfile::Exact});
  reg.kernels.push_back({"xformerslike",
                         {Dtype::F32Sim, Dtype::F16Sim, Dtype::BF16Sim},
                         4096,
                         {8, 16, 32, 64, 128},
                         true,
                         1.2,
                         PrecisionProfile::RoundedIntermediate});
  return reg;
}

json KernelRegistry::to_json() const {
  json arr = json::array();
  for (const auto& k : kernels) arr.push_back(k.to_json());
  return json{{"kernels", arr}};
}

KernelRegistry KernelRegistry::from_json(const json& j) {
  KernelRegistry reg;
  for (const auto& k : j.at("kernels")) reg.kernels.push_back(KernelDescriptor::from_json(k));
  return reg;
}

json CapabilityViolation::to_json() const {
  return json{{"constraint", constraint}, {"expected", expected}, {"actual", actual}};
}

json DispatchEvent::to_json() const {
  return json{{"requested", requested},
              {"selected", selected},
              {"reason", to_string(reason)},
              {"warned", warned},
              {"cost_incurred", cost_incurred}};
}

DispatchEvent DispatchEvent::from_json(const json& j) {
  DispatchEvent e;
  e.requested = j.at("requested");
  e.selected = j.at("selected");
  e.reason = dispatch_reason_from_string(j.at("reason"));
  e.warned = j.at("warned");
  e.cost_incurred = j.at("cost_incurred");
  return e;
}

int64_t kernel_memory_required(int64_t B, int64_t L, int64_t d_h) {
  if (B <= 0 || L <= 0 || d_h <= 0) {
    throw Error(ErrorCode::ShapeMismatch, "kernel memory model requires positive dims",
                {{"B", B}, {"L", L}, {"d_h", d_h}});
  }
  int64_t l2 = 0, out = 0;
  if (__builtin_mul_overflow(L, L, &l2) || __builtin_mul_overflow(l2, B, &out) ||
      __builtin_mul_overflow(out, d_h, &out)) {
    throw Error(ErrorCode::CapacityOverflow, "B*L^2*d_h overflows 64-bit arithmetic",
                {{"B", B}, {"L", L}, {"d_h", d_h}});
  }
  return out;
}

std::vector<CapabilityViolation> check_capabilities(const KernelDescriptor& kernel,
                                                    const AttentionConfig& config,
                                                    bool mask_present) {
  std::vector<CapabilityViolation> out;
  if (!kernel.supported_dtypes.contains(config.dtype_x)) {
    out.push_back({"DtypeUnsupported", dtype_set_string(kernel.supported_dtypes),
                   to_string(config.dtype_x)});
  }
  if (config.L > kernel.max_seq_len) {
    out.push_back({"SeqLenExceeded", "L <= " + std::to_string(kernel.max_seq_len),
                   std::to_string(config.L)});
  }
  if (!kernel.supported_head_sizes.empty() &&
      !kernel.supported_head_sizes.contains(config.d_h)) {
    out.push_back({"HeadSizeUnsupported", head_set_string(kernel.supported_head_sizes),
                   std::to_string(config.d_h)});
  }
  if (mask_present && !kernel.allows_nonnull_mask) {
    out.push_back({"MaskUnsupported", "mask must be null", "non-null mask"});
  }
  return out;
}

std::pair<KernelDescriptor, DispatchEvent> dispatch(const AttentionConfig& config,
                                                    const KernelRegistry& registry,
                                                    DispatchPolicy policy,
                                                    bool mask_present) {
  const KernelDescriptor* reference = registry.find("reference");
  if (reference == nullptr) {
    throw Error(ErrorCode::ConfigInvalid, "registry is missing the reference kernel");
  }
  const KernelDescriptor* requested = registry.find(config.kernel_preference);
  if (requested == nullptr) {
    throw Error(ErrorCode::ConfigInvalid,
                "unknown kernel preference: " + config.kernel_preference);
  }
  auto violations = check_capabilities(*requested, config, mask_present);
  DispatchEvent event;
  event.requested = requested->id;
  if (violations.empty()) {
    event.selected = requested->id;
    event.reason = DispatchReason::Direct;
    event.warned = false;
    event.cost_incurred = requested->cost_multiplier;
    return {*requested, event};
  }
  if (policy == DispatchPolicy::StrictFail) {
    json vj = json::array();
    for (const auto& v : violations) vj.push_back(v.to_json());
    throw Error(ErrorCode::KernelReject,
                "kernel " + requested->id + " rejected the configuration",
                {{"kernel", requested->id}, {"violations", vj}});
  }
  event.selected = reference->id;
  if (policy == DispatchPolicy::WarnedFallback) {
    // The requested kernel rejected the run; the substitution is announced.
    event.reason = DispatchReason::ExplicitReject;
    event.warned = true;
  } else {
    event.reason = DispatchReason::SilentFallback;
    event.warned = false;
  }
  event.cost_incurred = reference->cost_multiplier;
  return {*reference, event};
}

std::optional<OomEvent> simulate_oom(const AttentionConfig& config, int64_t m_avail) {
  int64_t required = kernel_memory_required(config.B, config.L, config.d_h);
  if (required > m_avail) return OomEvent{required, m_avail};
  return std::nullopt;
}

}  // namespace attncheck
