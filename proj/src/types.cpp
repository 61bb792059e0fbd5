#include "attncheck/types.hpp"

#include <array>

namespace attncheck {
namespace {

template <typename E, size_t N>
std::string lookup(const std::array<std::pair<E, const char*>, N>& table, E v) {
  for (const auto& [e, s] : table) {
    if (e == v) return s;
  }
  return "unknown";
}

template <typename E, size_t N>
E reverse_lookup(const std::array<std::pair<E, const char*>, N>& table,
                 const std::string& s, const char* what) {
  for (const auto& [e, name] : table) {
    if (s == name) return e;
  }
  throw Error(ErrorCode::ParseError, std::string("unknown ") + what + ": " + s);
}

constexpr std::array<std::pair<Dtype, const char*>, 4> kDtypes{{
    {Dtype::F64Sim, "F64Sim"},
    {Dtype::F32Sim, "F32Sim"},
    {Dtype::F16Sim, "F16Sim"},
    {Dtype::BF16Sim, "BF16Sim"},
}};

constexpr std::array<std::pair<ErrorCode, const char*>, 19> kErrorCodes{{
    {ErrorCode::ShapeMismatch, "ShapeMismatch"},
    {ErrorCode::IndivisibleHeads, "IndivisibleHeads"},
    {ErrorCode::QkDimMismatch, "QkDimMismatch"},
    {ErrorCode::BroadcastError, "BroadcastError"},
    {ErrorCode::NotRowStochastic, "NotRowStochastic"},
    {ErrorCode::PositionOutOfRange, "PositionOutOfRange"},
    {ErrorCode::PositionGap, "PositionGap"},
    {ErrorCode::CapacityOverflow, "CapacityOverflow"},
    {ErrorCode::KernelReject, "KernelReject"},
    {ErrorCode::OutOfMemory, "OutOfMemory"},
    {ErrorCode::EmptyCorpus, "EmptyCorpus"},
    {ErrorCode::InvalidProportions, "InvalidProportions"},
    {ErrorCode::UnknownRootCause, "UnknownRootCause"},
    {ErrorCode::MissingStage, "MissingStage"},
    {ErrorCode::SchemaVersionMismatch, "SchemaVersionMismatch"},
    {ErrorCode::ZeroDenominator, "ZeroDenominator"},
    {ErrorCode::DegenerateTable, "DegenerateTable"},
    {ErrorCode::ConfigInvalid, "ConfigInvalid"},
    {ErrorCode::ParseError, "ParseError"},
}};

constexpr std::array<std::pair<MaskMode, const char*>, 4> kMaskModes{{
    {MaskMode::None, "None"},
    {MaskMode::Causal, "Causal"},
    {MaskMode::Padding, "Padding"},
    {MaskMode::CausalPlusPadding, "CausalPlusPadding"},
}};

constexpr std::array<std::pair<DropoutPlacement, const char*>, 3> kPlacements{{
    {DropoutPlacement::BeforeSoftmax, "BeforeSoftmax"},
    {DropoutPlacement::AfterSoftmaxPreAggregation, "AfterSoftmaxPreAggregation"},
    {DropoutPlacement::AfterNormalization_FAULTY, "AfterNormalization_FAULTY"},
}};

constexpr std::array<std::pair<PosScheme, const char*>, 4> kPosSchemes{{
    {PosScheme::NoneP, "NoneP"},
    {PosScheme::SinusoidalAbsolute, "SinusoidalAbsolute"},
    {PosScheme::LearnedAbsolute, "LearnedAbsolute"},
    {PosScheme::RelativeBucketed, "RelativeBucketed"},
}};

constexpr std::array<std::pair<DispatchPolicy, const char*>, 3> kPolicies{{
    {DispatchPolicy::StrictFail, "StrictFail"},
    {DispatchPolicy::SilentFallback_FAULTY, "SilentFallback_FAULTY"},
    {DispatchPolicy::WarnedFallback, "WarnedFallback"},
}};

constexpr std::array<std::pair<CacheLayout, const char*>, 2> kLayouts{{
    {CacheLayout::Canonical, "Canonical"},
    {CacheLayout::Transposed_FAULTY, "Transposed_FAULTY"},
}};

}  // namespace

std::string to_string(Dtype d) { return lookup(kDtypes, d); }
Dtype dtype_from_string(const std::string& s) { return reverse_lookup(kDtypes, s, "dtype"); }

std::string to_string(ErrorCode c) { return lookup(kErrorCodes, c); }
ErrorCode error_code_from_string(const std::string& s) {
  return reverse_lookup(kErrorCodes, s, "error code");
}

std::string to_string(MaskMode m) { return lookup(kMaskModes, m); }
MaskMode mask_mode_from_string(const std::string& s) {
  return reverse_lookup(kMaskModes, s, "mask mode");
}
bool mask_has_causal(MaskMode m) {
  return m == MaskMode::Causal || m == MaskMode::CausalPlusPadding;
}
bool mask_has_padding(MaskMode m) {
  return m == MaskMode::Padding || m == MaskMode::CausalPlusPadding;
}

std::string to_string(DropoutPlacement p) { return lookup(kPlacements, p); }
DropoutPlacement dropout_placement_from_string(const std::string& s) {
  return reverse_lookup(kPlacements, s, "dropout placement");
}

std::string to_string(PosScheme s) { return lookup(kPosSchemes, s); }
PosScheme pos_scheme_from_string(const std::string& s) {
  return reverse_lookup(kPosSchemes, s, "positional scheme");
}

std::string to_string(DispatchPolicy p) { return lookup(kPolicies, p); }
DispatchPolicy dispatch_policy_from_string(const std::string& s) {
  return reverse_lookup(kPolicies, s, "dispatch policy");
}

std::string to_string(CacheLayout l) { return lookup(kLayouts, l); }
CacheLayout cache_layout_from_string(const std::string& s) {
  return reverse_lookup(kLayouts, s, "cache layout");
}

}  // namespace attncheck
