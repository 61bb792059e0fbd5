#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "attncheck/inject.hpp"
#include "attncheck/metrics.hpp"
#include "attncheck/types.hpp"

namespace attncheck {

/// Exit-code contract shared by every subcommand:
/// 0 clean, 1 usage/configuration error, 2 fault surfaced in the run.
inline constexpr int kExitClean = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitFault = 2;

inline constexpr const char* kManifestSchema = "manifest_schema_v1";

/// Default output directory: $ATTNCHECK_OUT or the current directory.
std::filesystem::path default_output_dir();

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::string& content);

/// Write one injected case under dir/cases/<case_id>/.
void write_case(const std::filesystem::path& dir, const InjectedCase& c);

struct LoadedCase {
  std::string case_id;
  FaultLabel label;
  RunTrace trace;
  RunTrace oracle;
};

LoadedCase load_case(const std::filesystem::path& case_dir);

struct RunOptions {
  std::optional<uint64_t> seed;                          // overrides the config seed
  std::optional<std::filesystem::path> registry_file;    // kernel registry JSON
  bool embed_tensors = true;  // false writes summaries only
};

/// Run a config file through the forward pass and write the trace.
int cmd_run(const std::filesystem::path& config_file, const RunOptions& options,
            const std::filesystem::path& out_file, std::string* message = nullptr);

/// Inject one root cause and write the case directory plus manifest.
int cmd_inject(const std::string& root_cause,
               const std::optional<std::filesystem::path>& config_file, uint64_t seed,
               const std::filesystem::path& out_dir, std::string* message = nullptr);

/// Generate a stratified corpus on disk.
int cmd_corpus(int64_t n, const std::string& proportions_preset, uint64_t seed,
               const std::filesystem::path& out_dir, std::string* message = nullptr);

/// Diagnose one trace file (optionally against an oracle trace).
int cmd_diagnose(const std::filesystem::path& trace_file,
                 const std::optional<std::filesystem::path>& oracle_file,
                 const std::filesystem::path& out_file, int64_t latent_horizon,
                 std::string* message = nullptr);

/// Diagnose every case in a corpus directory and write the metrics report.
int cmd_evaluate(const std::filesystem::path& corpus_dir,
                 const std::filesystem::path& out_file, int64_t min_support,
                 int64_t latent_horizon, std::string* message = nullptr);

/// Write the versioned taxonomy document.
int cmd_taxonomy_export(const std::filesystem::path& out_file, std::string* message = nullptr);

}  // namespace attncheck
