#include "spillover/rolling.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <limits>
#include <optional>
#include <sstream>
#include <thread>

#include "spillover/error.hpp"

namespace spillover {
namespace {

constexpr double kGap = std::numeric_limits<double>::quiet_NaN();

SpilloverTable analyse(const Eigen::MatrixXd& data, const std::vector<std::string>& assets,
                       const RollingConfig& config, const DenoiserModel* model) {
  const VarModel var = fit_var(data, {config.var_lag, config.cov_denominator}, assets);
  CovMatrix sigma(var.residual_cov, var.assets);
  if (config.mode == SpilloverMode::Denoised) sigma = denoise(*model, sigma);
  return spillover_table(var, sigma, config.horizon, config.divisor);
}

void require_model(const RollingConfig& config, const DenoiserModel* model, Eigen::Index n) {
  if (config.mode != SpilloverMode::Denoised) return;
  if (model == nullptr) throw ConfigError("denoised mode needs a trained denoiser model");
  if (model->n_assets != n) {
    throw ConfigError("denoiser was built for " + std::to_string(model->n_assets) +
                      " assets but the panel has " + std::to_string(n));
  }
}

struct WindowResult {
  std::optional<SpilloverTable> table;
  std::string error;
};

}  // namespace

std::string to_string(SpilloverMode mode) {
  return mode == SpilloverMode::Traditional ? "traditional" : "denoised";
}

std::string to_string(Target target) { return target == Target::Returns ? "returns" : "volatility"; }

void RollingConfig::validate(int n_assets) const {
  if (var_lag < 1) throw ConfigError("VAR lag must be at least 1");
  if (horizon < 1) throw ConfigError("horizon must be at least 1");
  if (step < 1) throw ConfigError("rolling step must be at least 1");
  const int min_window = n_assets * var_lag + var_lag + 1;
  if (window_length <= min_window) {
    throw ConfigError("rolling window " + std::to_string(window_length) + " must exceed N p + p + 1 = " +
                      std::to_string(min_window));
  }
  if (threads < 0) throw ConfigError("threads must be non-negative");
}

SpilloverTable run_static(const SeriesPanel& panel, const RollingConfig& config,
                          const DenoiserModel* model) {
  panel.validate();
  require_model(config, model, panel.cols());
  if (config.var_lag < 1 || config.horizon < 1) throw ConfigError("VAR lag and horizon must be at least 1");
  return analyse(panel.values, panel.assets, config, model);
}

std::size_t window_count(Eigen::Index rows, int window_length, int step) {
  if (window_length < 1 || step < 1 || rows < window_length) return 0;
  return static_cast<std::size_t>((rows - window_length) / step) + 1;
}

RollingSeries run_rolling(const SeriesPanel& panel, const RollingConfig& config,
                          const DenoiserModel* model) {
  panel.validate();
  config.validate(static_cast<int>(panel.cols()));
  require_model(config, model, panel.cols());
  const std::size_t count = window_count(panel.rows(), config.window_length, config.step);
  if (count == 0) {
    throw ConfigError("panel has " + std::to_string(panel.rows()) + " rows, fewer than the window length " +
                      std::to_string(config.window_length));
  }

  std::vector<WindowResult> results(count);
  const auto work = [&](std::size_t w) {
    const Eigen::Index start = static_cast<Eigen::Index>(w) * config.step;
    try {
      results[w].table = analyse(panel.values.middleRows(start, config.window_length), panel.assets,
                                 config, model);
    } catch (const Error& e) {
      results[w].error = e.what();
    }
  };

  unsigned threads = config.threads > 0 ? static_cast<unsigned>(config.threads)
                                        : std::max(1u, std::thread::hardware_concurrency());
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, count));
  if (threads <= 1) {
    for (std::size_t w = 0; w < count; ++w) work(w);
  } else {
    // Each window writes only its own slot, so the assembled series does not
    // depend on scheduling.
    std::atomic<std::size_t> next{0};
    std::vector<std::jthread> pool;
    pool.reserve(threads);
    for (unsigned t = 0; t < threads; ++t) {
      pool.emplace_back([&] {
        for (std::size_t w = next.fetch_add(1); w < count; w = next.fetch_add(1)) work(w);
      });
    }
  }

  RollingSeries series;
  series.assets = panel.assets;
  series.net = Eigen::MatrixXd::Constant(static_cast<Eigen::Index>(count), panel.cols(), kGap);
  series.total.assign(count, kGap);
  std::size_t failed = 0;
  for (std::size_t w = 0; w < count; ++w) {
    const std::size_t end_row = w * static_cast<std::size_t>(config.step) +
                                static_cast<std::size_t>(config.window_length) - 1;
    series.dates.push_back(panel.dates[end_row]);
    if (results[w].table) {
      series.total[w] = results[w].table->total_index;
      series.net.row(static_cast<Eigen::Index>(w)) = results[w].table->net.transpose();
    } else {
      ++failed;
      series.warnings.push_back({w, panel.dates[end_row], results[w].error});
    }
  }
  if (failed == count) {
    throw EstimationError("all " + std::to_string(count) + " rolling windows failed; first error: " +
                          series.warnings.front().message);
  }
  return series;
}

ModeComparison compare_modes(const SeriesPanel& panel, const RollingConfig& config,
                             const DenoiserModel& model) {
  RollingConfig traditional = config;
  traditional.mode = SpilloverMode::Traditional;
  RollingConfig denoised = config;
  denoised.mode = SpilloverMode::Denoised;
  return {run_rolling(panel, traditional, nullptr), run_rolling(panel, denoised, &model)};
}

std::string rolling_to_csv(const RollingSeries& series) {
  std::ostringstream out;
  out << "date,series,value\n";
  const auto value = [](double v) {
    if (!std::isfinite(v)) return std::string();
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  for (std::size_t w = 0; w < series.size(); ++w) {
    const std::string date = format_iso_date(series.dates[w]);
    out << date << ",total," << value(series.total[w]) << '\n';
    for (std::size_t a = 0; a < series.assets.size(); ++a) {
      out << date << ",net:" << series.assets[a] << ','
          << value(series.net(static_cast<Eigen::Index>(w), static_cast<Eigen::Index>(a))) << '\n';
    }
  }
  return out.str();
}

nlohmann::json to_json(const RollingConfig& config) {
  return {{"window", config.window_length},
          {"step", config.step},
          {"var_lag", config.var_lag},
          {"horizon", config.horizon},
          {"mode", to_string(config.mode)},
          {"target", to_string(config.target)},
          {"cov_denominator",
           config.cov_denominator == CovDenominator::DegreesOfFreedom ? "dof" : "sample"},
          {"directional_divisor",
           config.divisor == DirectionalDivisor::AssetCount ? "asset_count" : "row_sum"}};
}

}  // namespace spillover
