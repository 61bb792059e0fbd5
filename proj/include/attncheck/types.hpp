#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

#include <json.hpp>

namespace attncheck {

using json = nlohmann::json;

/// Additive mask sentinel. Finite on purpose: adding two sentinels stays
/// finite, so a doubly-masked entry cannot round to -inf and poison softmax.
inline constexpr double kNegMask = -1e9;

/// Decode steps at or beyond this index count as late-surfacing divergence.
inline constexpr int64_t kDefaultLatentHorizon = 16;

enum class Dtype { F64Sim, F32Sim, F16Sim, BF16Sim };

std::string to_string(Dtype d);
Dtype dtype_from_string(const std::string& s);

enum class ErrorCode {
  ShapeMismatch,
  IndivisibleHeads,
  QkDimMismatch,
  BroadcastError,
  NotRowStochastic,
  PositionOutOfRange,
  PositionGap,
  CapacityOverflow,
  KernelReject,
  OutOfMemory,
  EmptyCorpus,
  InvalidProportions,
  UnknownRootCause,
  MissingStage,
  SchemaVersionMismatch,
  ZeroDenominator,
  DegenerateTable,
  ConfigInvalid,
  ParseError,
};

std::string to_string(ErrorCode c);
ErrorCode error_code_from_string(const std::string& s);

/// Library-wide exception. Carries a stable code plus structured details so
/// traces and reports can record the failure byte-exactly.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message, json details = json::object())
      : std::runtime_error(message), code_(code), details_(std::move(details)) {}

  ErrorCode code() const { return code_; }
  const json& details() const { return details_; }

 private:
  ErrorCode code_;
  json details_;
};

enum class MaskMode { None, Causal, Padding, CausalPlusPadding };
std::string to_string(MaskMode m);
MaskMode mask_mode_from_string(const std::string& s);
bool mask_has_causal(MaskMode m);
bool mask_has_padding(MaskMode m);

enum class DropoutPlacement {
  BeforeSoftmax,
  AfterSoftmaxPreAggregation,
  AfterNormalization_FAULTY,
};
std::string to_string(DropoutPlacement p);
DropoutPlacement dropout_placement_from_string(const std::string& s);

enum class PosScheme { NoneP, SinusoidalAbsolute, LearnedAbsolute, RelativeBucketed };
std::string to_string(PosScheme s);
PosScheme pos_scheme_from_string(const std::string& s);

enum class DispatchPolicy { StrictFail, SilentFallback_FAULTY, WarnedFallback };
std::string to_string(DispatchPolicy p);
DispatchPolicy dispatch_policy_from_string(const std::string& s);

enum class CacheLayout { Canonical, Transposed_FAULTY };
std::string to_string(CacheLayout l);
CacheLayout cache_layout_from_string(const std::string& s);

}  // namespace attncheck
