#include "attncheck/trace.hpp"

#include <cmath>
#include <sstream>

namespace attncheck {

namespace {

json encode_double(double v) {
  if (std::isnan(v)) return "NaN";
  if (std::isinf(v)) return v > 0 ? "Inf" : "-Inf";
  return v;
}

double decode_double(const json& j) {
  if (j.is_string()) {
    const std::string s = j.get<std::string>();
    if (s == "NaN") return std::nan("");
    if (s == "Inf") return HUGE_VAL;
    if (s == "-Inf") return -HUGE_VAL;
    throw Error(ErrorCode::ParseError, "unexpected value literal: " + s);
  }
  return j.get<double>();
}

json tensor_to_json(const Tensor& t) {
  return json{{"shape", t.shape}, {"dtype", to_string(t.dtype)}, {"data", encode_values(t.data)}};
}

Tensor tensor_from_json(const json& j) {
  return Tensor(j.at("shape").get<std::vector<int64_t>>(), decode_values(j.at("data")),
                dtype_from_string(j.at("dtype")));
}

}  // namespace

json encode_values(const std::vector<double>& values) {
  json arr = json::array();
  for (double v : values) arr.push_back(encode_double(v));
  return arr;
}

std::vector<double> decode_values(const json& j) {
  std::vector<double> out;
  out.reserve(j.size());
  for (const auto& v : j) out.push_back(decode_double(v));
  return out;
}

json TensorSummary::to_json() const {
  json j{{"shape", shape},
         {"dtype", to_string(dtype)},
         {"nan_count", nan_count},
         {"inf_count", inf_count}};
  if (min) j["min"] = *min;
  if (max) j["max"] = *max;
  if (row_sums) j["row_sums"] = encode_values(*row_sums);
  if (mean_norm_entropy) j["mean_norm_entropy"] = *mean_norm_entropy;
  if (max_padding_mass) j["max_padding_mass"] = *max_padding_mass;
  return j;
}

TensorSummary TensorSummary::from_json(const json& j) {
  TensorSummary s;
  s.shape = j.at("shape").get<std::vector<int64_t>>();
  s.dtype = dtype_from_string(j.at("dtype"));
  s.nan_count = j.at("nan_count");
  s.inf_count = j.at("inf_count");
  if (j.contains("min")) s.min = j["min"].get<double>();
  if (j.contains("max")) s.max = j["max"].get<double>();
  if (j.contains("row_sums")) s.row_sums = decode_values(j["row_sums"]);
  if (j.contains("mean_norm_entropy")) s.mean_norm_entropy = j["mean_norm_entropy"].get<double>();
  if (j.contains("max_padding_mass")) s.max_padding_mass = j["max_padding_mass"].get<double>();
  return s;
}

TensorSummary summarize(const Tensor& t) {
  TensorSummary s;
  s.shape = t.shape;
  s.dtype = t.dtype;
  bool any_finite = false;
  double mn = 0.0, mx = 0.0;
  for (double v : t.data) {
    if (std::isnan(v)) {
      ++s.nan_count;
    } else if (std::isinf(v)) {
      ++s.inf_count;
    } else {
      if (!any_finite) {
        mn = mx = v;
        any_finite = true;
      } else {
        mn = std::min(mn, v);
        mx = std::max(mx, v);
      }
    }
  }
  if (any_finite) {
    s.min = mn;
    s.max = mx;
  }
  return s;
}

ErrorRecord ErrorRecord::from_error(const Error& e) {
  return ErrorRecord{e.code(), e.what(), e.details()};
}

const StageRecord* RunTrace::find_stage(const std::string& name) const {
  for (const auto& st : stages)
    if (st.stage == name) return &st;
  return nullptr;
}

const TensorSummary* RunTrace::find_tensor(const std::string& stage,
                                           const std::string& name) const {
  const StageRecord* st = find_stage(stage);
  if (st == nullptr) return nullptr;
  auto it = st->tensors.find(name);
  return it == st->tensors.end() ? nullptr : &it->second;
}

std::string serialize_trace(const RunTrace& trace) {
  std::ostringstream os;
  json header{{"record", "header"},
              {"schema", trace.schema},
              {"case_id", trace.case_id},
              {"config", trace.config.to_json()}};
  os << header.dump() << "\n";
  for (const auto& st : trace.stages) {
    json tensors = json::object();
    for (const auto& [name, summary] : st.tensors) tensors[name] = summary.to_json();
    os << json{{"record", "stage"}, {"stage", st.stage}, {"tensors", tensors}}.dump() << "\n";
  }
  if (trace.weights_summary) {
    os << json{{"record", "weights"}, {"summary", trace.weights_summary->to_json()}}.dump()
       << "\n";
  }
  if (trace.mask_snapshot) {
    os << json{{"record", "mask"}, {"tensor", tensor_to_json(*trace.mask_snapshot)}}.dump()
       << "\n";
  }
  if (!trace.position_indices.empty() || trace.position_table_size) {
    json p{{"record", "positions"}, {"indices", trace.position_indices}};
    if (trace.position_table_size) p["table_size"] = *trace.position_table_size;
    os << p.dump() << "\n";
  }
  for (const auto& ev : trace.dispatch_events) {
    json d = ev.to_json();
    d["record"] = "dispatch";
    os << d.dump() << "\n";
  }
  if (trace.selected_kernel) {
    os << json{{"record", "kernel"}, {"descriptor", trace.selected_kernel->to_json()}}.dump()
       << "\n";
  }
  for (const auto& ev : trace.cache_events) {
    os << json{{"record", "cache"},
               {"step", ev.step},
               {"length", ev.length},
               {"position_ids", ev.position_ids},
               {"layout", to_string(ev.layout)}}
              .dump()
       << "\n";
  }
  for (const auto& ev : trace.replica_events) {
    os << json{{"record", "replica"},
               {"step", ev.step},
               {"len_a", ev.len_a},
               {"len_b", ev.len_b},
               {"diverged", ev.diverged},
               {"max_output_diff", encode_values({ev.max_output_diff})[0]}}
              .dump()
       << "\n";
  }
  for (const auto& so : trace.step_outputs) {
    os << json{{"record", "step_output"},
               {"step", so.step},
               {"shape", so.shape},
               {"values", encode_values(so.values)}}
              .dump()
       << "\n";
  }
  if (trace.output) {
    os << json{{"record", "output"}, {"tensor", tensor_to_json(*trace.output)}}.dump() << "\n";
  }
  if (trace.output_summary) {
    os << json{{"record", "output_summary"}, {"summary", trace.output_summary->to_json()}}.dump()
       << "\n";
  }
  if (!trace.probe_results.empty()) {
    os << json{{"record", "probe"}, {"results", trace.probe_results}}.dump() << "\n";
  }
  if (trace.raised_error) {
    os << json{{"record", "error"},
               {"code", to_string(trace.raised_error->code)},
               {"message", trace.raised_error->message},
               {"details", trace.raised_error->details}}
              .dump()
       << "\n";
  }
  os << json{{"record", "end"}, {"wall_cost", trace.wall_cost}}.dump() << "\n";
  return os.str();
}

RunTrace parse_trace(const std::string& jsonl) {
  RunTrace trace;
  std::istringstream is(jsonl);
  std::string line;
  bool have_header = false;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw Error(ErrorCode::ParseError, std::string("bad trace line: ") + e.what());
    }
    const std::string record = j.value("record", "");
    if (!have_header) {
      if (record != "header") {
        throw Error(ErrorCode::ParseError, "trace must start with a header record");
      }
      const std::string schema = j.value("schema", "");
      if (schema != kTraceSchema) {
        throw Error(ErrorCode::SchemaVersionMismatch, "unsupported trace schema: " + schema,
                    {{"expected", kTraceSchema}, {"got", schema}});
      }
      trace.schema = schema;
      trace.case_id = j.value("case_id", "");
      trace.config = AttentionConfig::from_json(j.at("config"));
      have_header = true;
      continue;
    }
    if (record == "stage") {
      StageRecord st;
      st.stage = j.at("stage");
      for (const auto& [name, summary] : j.at("tensors").items()) {
        st.tensors[name] = TensorSummary::from_json(summary);
      }
      trace.stages.push_back(std::move(st));
    } else if (record == "weights") {
      trace.weights_summary = TensorSummary::from_json(j.at("summary"));
    } else if (record == "mask") {
      trace.mask_snapshot = tensor_from_json(j.at("tensor"));
    } else if (record == "positions") {
      trace.position_indices = j.at("indices").get<std::vector<int64_t>>();
      if (j.contains("table_size")) trace.position_table_size = j["table_size"].get<int64_t>();
    } else if (record == "dispatch") {
      trace.dispatch_events.push_back(DispatchEvent::from_json(j));
    } else if (record == "kernel") {
      trace.selected_kernel = KernelDescriptor::from_json(j.at("descriptor"));
    } else if (record == "cache") {
      CacheEvent ev;
      ev.step = j.at("step");
      ev.length = j.at("length");
      ev.position_ids = j.at("position_ids").get<std::vector<int64_t>>();
      ev.layout = cache_layout_from_string(j.at("layout"));
      trace.cache_events.push_back(std::move(ev));
    } else if (record == "replica") {
      ReplicaEvent ev;
      ev.step = j.at("step");
      ev.len_a = j.at("len_a");
      ev.len_b = j.at("len_b");
      ev.diverged = j.at("diverged");
      ev.max_output_diff = decode_values(json::array({j.at("max_output_diff")}))[0];
      trace.replica_events.push_back(ev);
    } else if (record == "step_output") {
      StepOutput so;
      so.step = j.at("step");
      so.shape = j.at("shape").get<std::vector<int64_t>>();
      so.values = decode_values(j.at("values"));
      trace.step_outputs.push_back(std::move(so));
    } else if (record == "output") {
      trace.output = tensor_from_json(j.at("tensor"));
    } else if (record == "output_summary") {
      trace.output_summary = TensorSummary::from_json(j.at("summary"));
    } else if (record == "probe") {
      trace.probe_results = j.at("results");
    } else if (record == "error") {
      ErrorRecord err;
      err.code = error_code_from_string(j.at("code"));
      err.message = j.at("message");
      err.details = j.at("details");
      trace.raised_error = std::move(err);
    } else if (record == "end") {
      trace.wall_cost = j.at("wall_cost");
    } else {
      throw Error(ErrorCode::ParseError, "unknown trace record: " + record);
    }
  }
  if (!have_header) {
    throw Error(ErrorCode::ParseError, "empty trace");
  }
  return trace;
}

}  // namespace attncheck
