#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "attncheck/diagnose.hpp"
#include "attncheck/engine.hpp"
#include "attncheck/harness.hpp"
#include "attncheck/inject.hpp"
#include "attncheck/kvcache.hpp"
#include "attncheck/metrics.hpp"
#include "attncheck/taxonomy.hpp"

namespace py = pybind11;
using namespace attncheck;

namespace {

py::object json_to_py(const json& j) {
  switch (j.type()) {
    case json::value_t::null:
      return py::none();
    case json::value_t::boolean:
      return py::bool_(j.get<bool>());
    case json::value_t::number_integer:
      return py::int_(j.get<int64_t>());
    case json::value_t::number_unsigned:
      return py::int_(j.get<uint64_t>());
    case json::value_t::number_float:
      return py::float_(j.get<double>());
    case json::value_t::string:
      return py::str(j.get<std::string>());
    case json::value_t::array: {
      py::list out;
      for (const auto& item : j) out.append(json_to_py(item));
      return out;
    }
    case json::value_t::object: {
      py::dict out;
      for (const auto& [key, value] : j.items()) out[py::str(key)] = json_to_py(value);
      return out;
    }
    default:
      return py::none();
  }
}

json py_to_json(const py::handle& obj) {
  if (obj.is_none()) return nullptr;
  if (py::isinstance<py::bool_>(obj)) return obj.cast<bool>();
  if (py::isinstance<py::int_>(obj)) return obj.cast<int64_t>();
  if (py::isinstance<py::float_>(obj)) return obj.cast<double>();
  if (py::isinstance<py::str>(obj)) return obj.cast<std::string>();
  if (py::isinstance<py::dict>(obj)) {
    json out = json::object();
    for (const auto& item : obj.cast<py::dict>())
      out[item.first.cast<std::string>()] = py_to_json(item.second);
    return out;
  }
  if (py::isinstance<py::list>(obj) || py::isinstance<py::tuple>(obj)) {
    json out = json::array();
    for (const auto& item : obj.cast<py::sequence>()) out.push_back(py_to_json(item));
    return out;
  }
  throw py::type_error("unsupported value for JSON conversion");
}

AttentionConfig config_from_py(const py::object& obj) {
  if (obj.is_none()) return default_base_config(0);
  return AttentionConfig::from_json(py_to_json(obj));
}

py::dict report_to_py(const DiagnosisReport& report) {
  return json_to_py(report.to_json()).cast<py::dict>();
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "attncheck core: reference attention, fault injection, trace diagnostics";

  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      PyErr_SetString(PyExc_RuntimeError,
                      (to_string(e.code()) + ": " + std::string(e.what())).c_str());
    }
  });

  m.def("taxonomy", [] { return json_to_py(taxonomy_json()); },
        "Versioned taxonomy document (categories, root causes, symptoms).");

  m.def(
      "default_config",
      [](uint64_t seed) { return json_to_py(default_base_config(seed).to_json()); },
      py::arg("seed") = 0);

  m.def(
      "run",
      [](const py::object& config, bool embed_output) {
        AttentionConfig cfg = config_from_py(config);
        EngineOverrides overrides;
        overrides.embed_output = embed_output;
        ForwardResult result = attention_forward(cfg, overrides);
        py::dict out;
        out["trace"] = py::str(serialize_trace(result.trace));
        out["output_shape"] = json_to_py(json(result.output.shape));
        out["raised_error"] = result.trace.raised_error
                                  ? py::object(py::str(to_string(result.trace.raised_error->code)))
                                  : py::object(py::none());
        out["wall_cost"] = result.trace.wall_cost;
        return out;
      },
      py::arg("config") = py::none(), py::arg("embed_output") = true,
      "Run one forward pass; returns the serialized trace and run facts.");

  m.def(
      "decode",
      [](const py::object& config) {
        AttentionConfig cfg = config_from_py(config);
        DecodeResult result = incremental_decode(cfg);
        py::dict out;
        out["trace"] = py::str(serialize_trace(result.trace));
        out["output_shape"] = json_to_py(json(result.output.shape));
        out["raised_error"] = result.trace.raised_error
                                  ? py::object(py::str(to_string(result.trace.raised_error->code)))
                                  : py::object(py::none());
        return out;
      },
      py::arg("config") = py::none(),
      "Run stepwise cache-backed decoding; returns the serialized trace.");

  m.def(
      "inject",
      [](const std::string& root_cause, uint64_t seed, const py::object& config) {
        InjectedCase c = config.is_none() ? inject(root_cause, seed)
                                          : inject(root_cause, config_from_py(config), seed);
        py::dict out;
        out["case_id"] = c.case_id;
        out["category"] = to_string(c.label.category);
        out["root_cause"] = c.label.root_cause;
        out["expected_observability"] = to_string(c.expected_observability);
        out["trace"] = py::str(serialize_trace(c.trace));
        out["oracle"] = py::str(serialize_trace(c.oracle_trace));
        out["probe_results"] = json_to_py(c.probe_results);
        return out;
      },
      py::arg("root_cause"), py::arg("seed") = 0, py::arg("config") = py::none(),
      "Inject one root cause; returns the faulty and oracle traces.");

  m.def(
      "diagnose",
      [](const std::string& trace, const py::object& oracle, int64_t latent_horizon) {
        RunTrace t = parse_trace(trace);
        std::optional<RunTrace> o;
        if (!oracle.is_none()) o = parse_trace(oracle.cast<std::string>());
        return report_to_py(diagnose(t, o ? &*o : nullptr, latent_horizon));
      },
      py::arg("trace"), py::arg("oracle") = py::none(),
      py::arg("latent_horizon") = kDefaultLatentHorizon,
      "Diagnose a serialized trace (optionally against its oracle).");

  m.def(
      "diagnose_case",
      [](const std::string& root_cause, uint64_t seed, int64_t latent_horizon) {
        InjectedCase c = inject(root_cause, seed);
        DiagnosisReport report = diagnose(c.trace, &c.oracle_trace, latent_horizon);
        py::dict out = report_to_py(report);
        out["expected_observability"] = to_string(c.expected_observability);
        out["root_cause"] = c.label.root_cause;
        out["category"] = to_string(c.label.category);
        return out;
      },
      py::arg("root_cause"), py::arg("seed") = 0,
      py::arg("latent_horizon") = kDefaultLatentHorizon,
      "Inject one root cause and diagnose the resulting trace.");

  m.def(
      "evaluate_corpus",
      [](int64_t n, uint64_t seed, const std::string& proportions, int64_t min_support) {
        auto props = proportions == "uniform" ? uniform_proportions() : default_proportions();
        auto corpus = generate_corpus(n, props, seed);
        std::vector<std::pair<DiagnosisReport, FaultLabel>> diagnosed;
        diagnosed.reserve(corpus.size());
        for (const auto& c : corpus)
          diagnosed.emplace_back(diagnose(c.trace, &c.oracle_trace), c.label);
        return json_to_py(evaluate_corpus(diagnosed, min_support).to_json());
      },
      py::arg("n") = 100, py::arg("seed") = 0, py::arg("proportions") = "observed",
      py::arg("min_support") = 12,
      "Generate, diagnose, and score a stratified fault corpus in memory.");

  m.def("published_table", [] {
    py::list rows;
    for (const auto& r : published_rule_table()) {
      py::dict row;
      row["heuristic"] = r.heuristic;
      row["category"] = r.category;
      row["category_total"] = r.category_total;
      row["support_count"] = r.support_count;
      row["support_pct"] = r.support_pct;
      row["confidence_pct"] = r.confidence_pct;
      row["recall_pct"] = r.recall_pct;
      rows.append(row);
    }
    return rows;
  });

  m.def(
      "chi_square",
      [](const std::vector<std::vector<int64_t>>& cells) {
        ContingencyTable table;
        table.cells = cells;
        return chi_square(table);
      },
      py::arg("cells"));

  m.def("relative_bucket", &relative_bucket, py::arg("i"), py::arg("j"),
        py::arg("num_buckets") = 32, py::arg("max_distance") = 128);

  m.def(
      "quantize",
      [](const std::vector<double>& values, const std::string& dtype) {
        std::vector<double> out;
        out.reserve(values.size());
        Dtype d = dtype_from_string(dtype);
        for (double v : values) out.push_back(quantize_value(v, d));
        return out;
      },
      py::arg("values"), py::arg("dtype"));

  m.def(
      "softmax",
      [](const std::vector<double>& row) {
        Tensor t({static_cast<int64_t>(row.size())}, row);
        return softmax_rows(t).data;
      },
      py::arg("row"));

  m.attr("__version__") = "0.1.0";
}
