#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "optfee/contracts.h"
#include "optfee/core_model.h"

namespace optfee {

enum class RunMode { simulate, agent, oracle, optimize, verify, report };

const char* to_string(RunMode mode);
RunMode run_mode_from_string(std::string_view name);

struct RunSettings {
  RunMode mode = RunMode::verify;
  std::size_t budget = 200;
  std::string output_dir = "optfee_out";
  int threads = 1;
  double screening_fraction = 0.4;
  std::size_t jp_paths = 0;     // 0: model.n_paths
  std::size_t agent_paths = 0;  // 0: model.n_paths
  std::size_t dump_paths = 0;   // paths written to paths.csv in simulate mode
  bool binary_dump = false;     // paths.bin in simulate mode
  std::size_t grid_stride = 4;  // (w, z) thinning of the grid CSVs
  std::string policy = "closed_form";  // simulate mode: lower, zero, upper, closed_form, best_response
  std::size_t hjb_signal = 0;
  std::size_t hjb_inventory = 0;
  std::size_t hjb_stat = 0;

  bool operator==(const RunSettings&) const = default;
};

struct OracleSettings {
  std::size_t instances = 100;
  std::size_t max_depth = 2;
  std::size_t branching = 2;
  std::size_t trials = 100;

  bool operator==(const OracleSettings&) const = default;
};

struct VerifySettings {
  std::size_t paths = 100000;
  std::size_t moment_paths = 20000;
  /// Rate bounds +-rate_bound replace (L, U) in the weight-based checks.
  double rate_bound = 1.0;
  std::size_t oracle_instances = 100;

  bool operator==(const VerifySettings&) const = default;
};

/// Flat config with sections model., family., contract., run., oracle., verify.
struct ExperimentConfig {
  ModelParams model;
  FamilySpec family;
  /// Family coefficients of the fixed contract used by simulate/agent/report; empty means zeros.
  std::vector<double> contract_coefficients;
  RunSettings run;
  OracleSettings oracle;
  VerifySettings verify;

  bool operator==(const ExperimentConfig&) const = default;
};

/// Throws ConfigError citing the line and key on any malformed or unknown entry,
/// or ModelError when a block fails validation.
ExperimentConfig parse_config(std::string_view text);
ExperimentConfig load_config(const std::filesystem::path& path);
void validate_config(const ExperimentConfig& config);

/// Canonical text; parse_config(echo_config(c)) == c.
std::string echo_config(const ExperimentConfig& config);

/// Contract built from the family and contract.coefficients.
Contract configured_contract(const ExperimentConfig& config);

/// Git blob id: SHA-1 of "blob <size>\0" followed by the bytes.
std::string git_blob_hash(std::string_view content);

struct RunOutcome {
  int exit_status = 0;
  std::filesystem::path directory;
  std::vector<std::string> files;  // relative to directory, manifest excluded
  std::string summary;
};

/// Runs the configured mode, writing every artifact under run.output_dir
/// plus summary.txt and manifest.json. Module errors propagate with the mode
/// prepended; a verify run with a failing check returns exit status 1.
RunOutcome run_experiment(const ExperimentConfig& config, std::ostream& log);

}  // namespace optfee
