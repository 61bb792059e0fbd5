#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "attncheck/harness.hpp"

namespace {

int report(int code, const std::string& message) {
  if (!message.empty()) {
    (code == attncheck::kExitUsage ? std::cerr : std::cout) << message << "\n";
  }
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"attncheck: reference attention engine, fault injectors, and trace diagnostics"};
  app.require_subcommand(1);

  std::string config_file;
  std::string root_cause;
  std::string trace_file;
  std::string oracle_file;
  std::string corpus_dir;
  std::string out_path;
  std::string preset = "observed";
  uint64_t seed = 0;
  bool seed_set = false;
  int64_t corpus_n = 100;
  int64_t min_support = 12;
  int64_t latent_horizon = attncheck::kDefaultLatentHorizon;

  std::string registry_file;
  bool summary_only = false;
  auto* run = app.add_subcommand("run", "run one configuration and write its trace");
  run->add_option("--config", config_file, "config JSON file")->required();
  run->add_option("--seed", seed, "override the config seed")->each([&](const std::string&) {
    seed_set = true;
  });
  run->add_option("--registry", registry_file, "kernel registry JSON file");
  run->add_flag("--summary-only", summary_only, "summarize tensors instead of embedding them");
  run->add_option("--out", out_path, "trace output file (JSON lines)");

  auto* inject = app.add_subcommand("inject", "inject one root cause and write the case");
  inject->add_option("root_cause", root_cause, "root-cause identifier")->required();
  inject->add_option("--config", config_file, "base config JSON file");
  inject->add_option("--seed", seed, "case seed");
  inject->add_option("--out", out_path, "output directory");

  auto* diagnose = app.add_subcommand("diagnose", "diagnose a trace file");
  diagnose->add_option("--trace", trace_file, "trace JSON-lines file")->required();
  diagnose->add_option("--oracle", oracle_file, "clean oracle trace for divergence symptoms");
  diagnose->add_option("--latent-horizon", latent_horizon, "decode steps before Latent");
  diagnose->add_option("--out", out_path, "report output file");

  auto* corpus = app.add_subcommand("corpus", "generate a stratified fault corpus");
  corpus->add_option("--n", corpus_n, "number of cases");
  corpus->add_option("--proportions", preset, "category preset: observed|uniform");
  corpus->add_option("--seed", seed, "corpus seed");
  corpus->add_option("--out", out_path, "output directory");

  auto* evaluate = app.add_subcommand("evaluate", "diagnose a corpus and emit metrics");
  evaluate->add_option("--corpus", corpus_dir, "corpus directory")->required();
  evaluate->add_option("--min-support", min_support, "co-occurrence support threshold");
  evaluate->add_option("--latent-horizon", latent_horizon, "decode steps before Latent");
  evaluate->add_option("--out", out_path, "report output file");

  auto* taxonomy = app.add_subcommand("taxonomy-export", "write the taxonomy document");
  taxonomy->add_option("--out", out_path, "output file");

  CLI11_PARSE(app, argc, argv);

  const auto out_dir = attncheck::default_output_dir();
  std::string message;
  try {
    if (run->parsed()) {
      auto out = out_path.empty() ? out_dir / "trace.jsonl" : std::filesystem::path(out_path);
      attncheck::RunOptions options;
      if (seed_set) options.seed = seed;
      if (!registry_file.empty()) options.registry_file = registry_file;
      options.embed_tensors = !summary_only;
      return report(attncheck::cmd_run(config_file, options, out, &message), message);
    }
    if (inject->parsed()) {
      auto out = out_path.empty() ? out_dir : std::filesystem::path(out_path);
      std::optional<std::filesystem::path> cfg;
      if (!config_file.empty()) cfg = config_file;
      return report(attncheck::cmd_inject(root_cause, cfg, seed, out, &message), message);
    }
    if (diagnose->parsed()) {
      auto out = out_path.empty() ? out_dir / "report.json" : std::filesystem::path(out_path);
      std::optional<std::filesystem::path> oracle;
      if (!oracle_file.empty()) oracle = oracle_file;
      return report(
          attncheck::cmd_diagnose(trace_file, oracle, out, latent_horizon, &message), message);
    }
    if (corpus->parsed()) {
      auto out = out_path.empty() ? out_dir / "corpus" : std::filesystem::path(out_path);
      return report(attncheck::cmd_corpus(corpus_n, preset, seed, out, &message), message);
    }
    if (evaluate->parsed()) {
      auto out = out_path.empty() ? out_dir / "metrics.json" : std::filesystem::path(out_path);
      return report(
          attncheck::cmd_evaluate(corpus_dir, out, min_support, latent_horizon, &message),
          message);
    }
    if (taxonomy->parsed()) {
      auto out = out_path.empty() ? out_dir / "taxonomy.json" : std::filesystem::path(out_path);
      return report(attncheck::cmd_taxonomy_export(out, &message), message);
    }
  } catch (const attncheck::Error& e) {
    std::cerr << attncheck::to_string(e.code()) << ": " << e.what() << "\n";
    return attncheck::kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << e.what() << "\n";
    return attncheck::kExitUsage;
  }
  return attncheck::kExitUsage;
}
