#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "attncheck/config.hpp"
#include "attncheck/kernels.hpp"
#include "attncheck/tensor.hpp"
#include "attncheck/types.hpp"

namespace attncheck {

inline constexpr const char* kTraceSchema = "trace_schema_v1";

/// Compact statistics for one tensor at one pipeline stage. row_sums and the
/// entropy/padding fields are only populated for weight-like matrices.
struct TensorSummary {
  std::vector<int64_t> shape;
  Dtype dtype = Dtype::F64Sim;
  int64_t nan_count = 0;
  int64_t inf_count = 0;
  std::optional<double> min;
  std::optional<double> max;
  std::optional<std::vector<double>> row_sums;
  std::optional<double> mean_norm_entropy;
  std::optional<double> max_padding_mass;

  json to_json() const;
  static TensorSummary from_json(const json& j);
};

TensorSummary summarize(const Tensor& t);

struct StageRecord {
  std::string stage;
  std::map<std::string, TensorSummary> tensors;
};

struct CacheEvent {
  int64_t step = 0;
  int64_t length = 0;
  std::vector<int64_t> position_ids;
  CacheLayout layout = CacheLayout::Canonical;
};

struct ReplicaEvent {
  int64_t step = 0;
  int64_t len_a = 0;
  int64_t len_b = 0;
  bool diverged = false;
  double max_output_diff = 0.0;
};

struct StepOutput {
  int64_t step = 0;
  std::vector<int64_t> shape;
  std::vector<double> values;
};

struct ErrorRecord {
  ErrorCode code = ErrorCode::ParseError;
  std::string message;
  json details = json::object();

  static ErrorRecord from_error(const Error& e);
};

/// Ordered record of one forward or decoding run: everything the detectors
/// and heuristics consume.
struct RunTrace {
  std::string schema = kTraceSchema;
  std::string case_id;
  AttentionConfig config;
  std::vector<StageRecord> stages;
  /// Effective attention weights entering aggregation, captured after any
  /// (possibly misordered) masking but before dropout.
  std::optional<TensorSummary> weights_summary;
  std::optional<Tensor> mask_snapshot;
  std::vector<int64_t> position_indices;
  std::optional<int64_t> position_table_size;
  std::vector<DispatchEvent> dispatch_events;
  std::optional<KernelDescriptor> selected_kernel;
  std::vector<CacheEvent> cache_events;
  std::vector<ReplicaEvent> replica_events;
  std::vector<StepOutput> step_outputs;
  std::optional<Tensor> output;  // embedded when the run requests full tensors
  std::optional<TensorSummary> output_summary;
  json probe_results = json::object();
  std::optional<ErrorRecord> raised_error;
  double wall_cost = 0.0;

  const StageRecord* find_stage(const std::string& name) const;
  const TensorSummary* find_tensor(const std::string& stage, const std::string& name) const;
};

/// JSON-lines serialization: one record per line, header first.
std::string serialize_trace(const RunTrace& trace);
RunTrace parse_trace(const std::string& jsonl);

/// Doubles in trace files keep non-finite values as strings so files stay
/// valid JSON and round-trip exactly.
json encode_values(const std::vector<double>& values);
std::vector<double> decode_values(const json& j);

}  // namespace attncheck
