#include "attncheck/harness.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "attncheck/kvcache.hpp"
#include "attncheck/rng.hpp"

namespace attncheck {

namespace fs = std::filesystem;

namespace {

void set_message(std::string* sink, const std::string& text) {
  if (sink != nullptr) *sink = text;
}

json manifest_entry(const InjectedCase& c) {
  return json{{"case_id", c.case_id},
              {"root_cause", c.label.root_cause},
              {"category", to_string(c.label.category)},
              {"seed", c.trace.config.seed},
              {"config_digest", c.trace.config.digest()},
              {"dir", "cases/" + c.case_id}};
}

json label_json(const InjectedCase& c) {
  json j{{"category", to_string(c.label.category)},
         {"root_cause", c.label.root_cause},
         {"expected_observability", to_string(c.expected_observability)}};
  if (c.expected_heuristic) j["expected_heuristic"] = to_string(*c.expected_heuristic);
  return j;
}

}  // namespace

fs::path default_output_dir() {
  const char* env = std::getenv("ATTNCHECK_OUT");
  if (env != nullptr && *env != '\0') return fs::path(env);
  return fs::current_path();
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw Error(ErrorCode::ParseError, "cannot read file: " + path.string());
  }
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_file(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw Error(ErrorCode::ParseError, "cannot write file: " + path.string());
  }
  out << content;
}

void write_case(const fs::path& dir, const InjectedCase& c) {
  fs::path case_dir = dir / "cases" / c.case_id;
  write_file(case_dir / "trace.jsonl", serialize_trace(c.trace));
  write_file(case_dir / "oracle.jsonl", serialize_trace(c.oracle_trace));
  write_file(case_dir / "label.json", label_json(c).dump(2) + "\n");
  write_file(case_dir / "probe.json", c.probe_results.dump(2) + "\n");
}

LoadedCase load_case(const fs::path& case_dir) {
  LoadedCase loaded;
  loaded.trace = parse_trace(read_file(case_dir / "trace.jsonl"));
  loaded.oracle = parse_trace(read_file(case_dir / "oracle.jsonl"));
  json label = json::parse(read_file(case_dir / "label.json"));
  loaded.label.category = fault_category_from_string(label.at("category"));
  loaded.label.root_cause = label.at("root_cause");
  loaded.case_id = loaded.trace.case_id;
  return loaded;
}

int cmd_run(const fs::path& config_file, const RunOptions& options,
            const fs::path& out_file, std::string* message) {
  AttentionConfig config;
  EngineOverrides overrides;
  overrides.embed_output = options.embed_tensors;
  try {
    config = AttentionConfig::from_json(json::parse(read_file(config_file)));
    if (options.registry_file) {
      overrides.registry = KernelRegistry::from_json(
          json::parse(read_file(*options.registry_file)));
    }
  } catch (const json::exception& e) {
    set_message(message, std::string("config parse failure: ") + e.what());
    return kExitUsage;
  } catch (const Error& e) {
    set_message(message, json{{"error", to_string(e.code())}, {"message", e.what()}}.dump());
    return kExitUsage;
  }
  if (options.seed) config.seed = *options.seed;
  auto problems = config.validate_structure();
  if (!problems.empty()) {
    json j{{"error", "ConfigInvalid"}, {"problems", problems}};
    set_message(message, j.dump());
    return kExitUsage;
  }
  ForwardResult result = attention_forward(config, overrides);
  write_file(out_file, serialize_trace(result.trace));
  if (result.trace.raised_error) {
    set_message(message, json{{"raised_error", to_string(result.trace.raised_error->code)},
                              {"message", result.trace.raised_error->message}}
                             .dump());
    return kExitFault;
  }
  set_message(message, "trace written to " + out_file.string());
  return kExitClean;
}

int cmd_inject(const std::string& root_cause, const std::optional<fs::path>& config_file,
               uint64_t seed, const fs::path& out_dir, std::string* message) {
  if (find_root_cause(root_cause) == nullptr) {
    set_message(message, "unknown root cause: " + root_cause);
    return kExitUsage;
  }
  AttentionConfig base = default_base_config(seed);
  if (config_file) {
    try {
      base = AttentionConfig::from_json(json::parse(read_file(*config_file)));
    } catch (const std::exception& e) {
      set_message(message, std::string("config parse failure: ") + e.what());
      return kExitUsage;
    }
  }
  InjectedCase c = inject(root_cause, base, seed);
  write_case(out_dir, c);
  json manifest{{"schema", kManifestSchema},
                {"seed", seed},
                {"n", 1},
                {"cases", json::array({manifest_entry(c)})}};
  write_file(out_dir / "manifest.json", manifest.dump(2) + "\n");
  set_message(message, "case " + c.case_id + " written to " + out_dir.string());
  return kExitClean;
}

int cmd_corpus(int64_t n, const std::string& proportions_preset, uint64_t seed,
               const fs::path& out_dir, std::string* message) {
  std::map<FaultCategory, double> proportions;
  if (proportions_preset == "observed" || proportions_preset.empty()) {
    proportions = default_proportions();
  } else if (proportions_preset == "uniform") {
    proportions = uniform_proportions();
  } else {
    set_message(message, "unknown proportions preset: " + proportions_preset);
    return kExitUsage;
  }
  std::vector<InjectedCase> corpus;
  try {
    corpus = generate_corpus(n, proportions, seed);
  } catch (const Error& e) {
    set_message(message, e.what());
    return kExitUsage;
  }
  json entries = json::array();
  json prop_j = json::object();
  for (const auto& [cat, p] : proportions) prop_j[to_string(cat)] = p;
  for (const auto& c : corpus) {
    write_case(out_dir, c);
    entries.push_back(manifest_entry(c));
  }
  json manifest{{"schema", kManifestSchema},
                {"seed", seed},
                {"n", n},
                {"proportions", prop_j},
                {"cases", entries}};
  write_file(out_dir / "manifest.json", manifest.dump(2) + "\n");
  set_message(message, std::to_string(corpus.size()) + " cases written to " + out_dir.string());
  return kExitClean;
}

int cmd_diagnose(const fs::path& trace_file, const std::optional<fs::path>& oracle_file,
                 const fs::path& out_file, int64_t latent_horizon, std::string* message) {
  RunTrace trace;
  std::optional<RunTrace> oracle;
  try {
    trace = parse_trace(read_file(trace_file));
    if (oracle_file) oracle = parse_trace(read_file(*oracle_file));
  } catch (const Error& e) {
    set_message(message, e.what());
    return kExitUsage;
  }
  DiagnosisReport report =
      diagnose(trace, oracle ? &*oracle : nullptr, latent_horizon);
  write_file(out_file, report.to_json().dump(2) + "\n");
  set_message(message, "report written to " + out_file.string());
  return trace.raised_error ? kExitFault : kExitClean;
}

int cmd_evaluate(const fs::path& corpus_dir, const fs::path& out_file, int64_t min_support,
                 int64_t latent_horizon, std::string* message) {
  fs::path manifest_path = corpus_dir / "manifest.json";
  if (!fs::exists(manifest_path)) {
    set_message(message, "missing manifest: " + manifest_path.string());
    return kExitUsage;
  }
  json manifest;
  try {
    manifest = json::parse(read_file(manifest_path));
  } catch (const json::exception& e) {
    set_message(message, std::string("manifest parse failure: ") + e.what());
    return kExitUsage;
  }
  if (manifest.value("schema", "") != kManifestSchema) {
    set_message(message, "unsupported manifest schema");
    return kExitUsage;
  }
  std::vector<std::pair<DiagnosisReport, FaultLabel>> corpus;
  std::vector<std::string> missing;
  for (const auto& entry : manifest.at("cases")) {
    fs::path case_dir = corpus_dir / entry.at("dir").get<std::string>();
    if (!fs::exists(case_dir / "trace.jsonl")) {
      missing.push_back(entry.at("case_id"));
      continue;
    }
    LoadedCase loaded = load_case(case_dir);
    DiagnosisReport report = diagnose(loaded.trace, &loaded.oracle, latent_horizon);
    corpus.emplace_back(std::move(report), loaded.label);
  }
  if (!missing.empty()) {
    json j{{"error", "missing traces"}, {"case_ids", missing}};
    set_message(message, j.dump());
    return kExitUsage;
  }
  if (corpus.empty()) {
    set_message(message, "corpus is empty");
    return kExitUsage;
  }
  MetricsReport report = evaluate_corpus(corpus, min_support);
  write_file(out_file, report.to_json().dump(2) + "\n");
  set_message(message, "report written to " + out_file.string());
  return kExitClean;
}

int cmd_taxonomy_export(const fs::path& out_file, std::string* message) {
  write_file(out_file, taxonomy_json().dump(2) + "\n");
  set_message(message, "taxonomy written to " + out_file.string());
  return kExitClean;
}

}  // namespace attncheck
