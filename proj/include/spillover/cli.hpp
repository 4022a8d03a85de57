#pragma once
// Config-driven command pipeline behind the `spillover` executable.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "spillover/denoiser.hpp"
#include "spillover/ingest.hpp"
#include "spillover/rolling.hpp"
#include "spillover/var.hpp"

namespace spillover::cli {

enum class ModeSelection { Traditional, Denoised, Both };

struct RestSource {
  std::string endpoint = "https://eodhd.com/api";
  std::vector<std::string> symbols;
  std::string from;
  std::string to;
  std::filesystem::path cache_dir;  // default: <output_dir>/cache
};

struct RunConfig {
  std::filesystem::path config_path;

  // Exactly one source.
  std::optional<std::filesystem::path> csv_path;
  CsvSchema csv_schema;
  std::optional<RestSource> rest;
  std::vector<std::string> labels;

  std::vector<Target> targets{Target::Returns, Target::Volatility};
  int volatility_window = 30;
  double annualization = 15.874507866387544;  // sqrt(252)
  bool log_volatility = false;

  int var_lag = 1;
  bool lag_search = false;
  int max_lag = 4;
  CovDenominator cov_denominator = CovDenominator::DegreesOfFreedom;
  int horizon = 10;
  DirectionalDivisor divisor = DirectionalDivisor::RowSum;
  int table_decimals = 2;

  int rolling_window = 200;
  int rolling_step = 1;
  int threads = 0;

  std::vector<int> hidden;  // empty: {4 N}
  double alpha = 0.5;
  double eig_floor = 1e-6;
  InputMode input_mode = InputMode::Correlation;
  TrainConfig train;
  int train_window = 0;  // 0: rolling_window
  int train_step = 0;    // 0: rolling_step

  ModeSelection mode = ModeSelection::Both;
  std::filesystem::path output_dir = "out";

  // Resolved config as written into every provenance sidecar.
  nlohmann::json to_json() const;
};

// Parses the JSON config; relative paths resolve against the config file's
// directory. Throws ConfigError on unknown keys or bad values.
RunConfig parse_run_config(const nlohmann::json& doc, const std::filesystem::path& base_dir = {});
RunConfig load_run_config(const std::filesystem::path& path);

// Rejects any value that would violate a downstream precondition. `n_assets`
// enables the checks that depend on the panel width.
void validate(const RunConfig& config, std::optional<int> n_assets = std::nullopt);

struct CommandReport {
  std::vector<std::filesystem::path> written;
  std::vector<std::string> warnings;
};

CommandReport cmd_ingest(const RunConfig& config);
CommandReport cmd_stats(const RunConfig& config, std::ostream& out);
CommandReport cmd_train(const RunConfig& config);
CommandReport cmd_static(const RunConfig& config);
CommandReport cmd_rolling(const RunConfig& config);

// `spillover <subcommand> --config <path> [--mode ...] [--out <dir>] [--seed <u64>]`.
// Returns the process exit code; diagnostics go to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace spillover::cli
