#pragma once
// Static and rolling-window spillover analyses, traditional or with the
// VAR residual covariance replaced by its denoised estimate.

#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "spillover/denoiser.hpp"
#include "spillover/fevd.hpp"
#include "spillover/ingest.hpp"
#include "spillover/var.hpp"

namespace spillover {

enum class SpilloverMode { Traditional, Denoised };
enum class Target { Returns, Volatility };

std::string to_string(SpilloverMode mode);
std::string to_string(Target target);

struct RollingConfig {
  int window_length = 200;
  int step = 1;
  int var_lag = 1;
  int horizon = 10;
  SpilloverMode mode = SpilloverMode::Traditional;
  Target target = Target::Returns;
  CovDenominator cov_denominator = CovDenominator::DegreesOfFreedom;
  DirectionalDivisor divisor = DirectionalDivisor::RowSum;
  // 0 picks std::thread::hardware_concurrency(); 1 runs serially.
  int threads = 0;

  // Throws ConfigError unless window_length > N p + p + 1, step >= 1, H >= 1.
  void validate(int n_assets) const;
};

// `model` is required in denoised mode and ignored otherwise.
SpilloverTable run_static(const SeriesPanel& panel, const RollingConfig& config,
                          const DenoiserModel* model = nullptr);

struct WindowDiagnostic {
  std::size_t window = 0;
  Date end_date{};
  std::string message;
};

struct RollingSeries {
  std::vector<Date> dates;  // window-end dates
  std::vector<std::string> assets;
  std::vector<double> total;  // NaN marks a failed window
  Eigen::MatrixXd net;        // windows x assets, NaN rows for failed windows
  std::vector<WindowDiagnostic> warnings;

  std::size_t size() const { return dates.size(); }
};

// floor((rows - window) / step) + 1, or 0 when rows < window.
std::size_t window_count(Eigen::Index rows, int window_length, int step);

// Windows that fail to fit are recorded as gaps with a diagnostic; throws
// EstimationError only when every window fails.
RollingSeries run_rolling(const SeriesPanel& panel, const RollingConfig& config,
                          const DenoiserModel* model = nullptr);

struct ModeComparison {
  RollingSeries traditional;
  RollingSeries denoised;
};

ModeComparison compare_modes(const SeriesPanel& panel, const RollingConfig& config,
                             const DenoiserModel& model);

// Long format `date,series,value`, series in {total, net:<asset>}; gaps are
// written as empty values.
std::string rolling_to_csv(const RollingSeries& series);

nlohmann::json to_json(const RollingConfig& config);

}  // namespace spillover
