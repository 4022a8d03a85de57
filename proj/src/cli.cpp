#include "spillover/cli.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include <CLI11.hpp>

#include "spillover/error.hpp"
#include "spillover/hash.hpp"
#include "spillover/simd/kernels.hpp"

namespace spillover::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr const char* kVersion = "0.1.0";

void reject_unknown_keys(const json& obj, const std::set<std::string>& allowed, const std::string& where) {
  if (!obj.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& [key, _] : obj.items()) {
    if (!allowed.count(key)) throw ConfigError("unknown key '" + key + "' in " + where);
  }
}

template <typename T>
T get_or(const json& obj, const char* key, const T& fallback, const std::string& where) {
  if (!obj.contains(key)) return fallback;
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("bad value for '" + std::string(key) + "' in " + where);
  }
}

fs::path resolve(const fs::path& base, const fs::path& p) {
  return p.is_absolute() || base.empty() ? p : base / p;
}

Target parse_target(const std::string& s) {
  if (s == "returns") return Target::Returns;
  if (s == "volatility") return Target::Volatility;
  throw ConfigError("target must be returns, volatility, or both; got '" + s + "'");
}

ModeSelection parse_mode(const std::string& s) {
  if (s == "traditional") return ModeSelection::Traditional;
  if (s == "denoised") return ModeSelection::Denoised;
  if (s == "both") return ModeSelection::Both;
  throw ConfigError("mode must be traditional, denoised, or both; got '" + s + "'");
}

std::string mode_name(ModeSelection m) {
  switch (m) {
    case ModeSelection::Traditional: return "traditional";
    case ModeSelection::Denoised: return "denoised";
    case ModeSelection::Both: return "both";
  }
  return "both";
}

std::vector<SpilloverMode> modes_of(ModeSelection m) {
  switch (m) {
    case ModeSelection::Traditional: return {SpilloverMode::Traditional};
    case ModeSelection::Denoised: return {SpilloverMode::Denoised};
    case ModeSelection::Both: return {SpilloverMode::Traditional, SpilloverMode::Denoised};
  }
  return {};
}

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void write_file(const fs::path& path, const std::string& content, CommandReport& report) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << content;
  if (!out) throw Error("write failed for " + path.string());
  report.written.push_back(path);
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_sidecar(const fs::path& artifact, const RunConfig& config, const std::string& command,
                   json extra, CommandReport& report) {
  json meta = std::move(extra);
  meta["artifact"] = artifact.filename().string();
  meta["command"] = command;
  meta["generated_at"] = utc_timestamp();
  meta["tool_version"] = kVersion;
  meta["simd_backend"] = std::string(simd::backend_name(simd::active_backend()));
  meta["config"] = config.to_json();
  write_file(fs::path(artifact.string() + ".meta.json"), meta.dump(2) + "\n", report);
}

// Exclusive lock on the output directory for the lifetime of a command.
class OutputLock {
 public:
  explicit OutputLock(const fs::path& dir) : path_(dir / ".spillover.lock") {
    fs::create_directories(dir);
    fd_ = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd_ < 0) {
      throw Error("output directory " + dir.string() + " is locked by another run (remove " +
                  path_.string() + " if stale)");
    }
    const std::string pid = std::to_string(::getpid()) + "\n";
    [[maybe_unused]] const auto n = ::write(fd_, pid.data(), pid.size());
  }
  ~OutputLock() {
    ::close(fd_);
    std::error_code ec;
    fs::remove(path_, ec);
  }
  OutputLock(const OutputLock&) = delete;
  OutputLock& operator=(const OutputLock&) = delete;

 private:
  fs::path path_;
  int fd_ = -1;
};

fs::path panel_path(const RunConfig& c, Target t) {
  return c.output_dir / (t == Target::Returns ? "panel_returns.csv" : "panel_volatility.csv");
}

SeriesPanel load_target_panel(const RunConfig& config, Target target) {
  const fs::path path = panel_path(config, target);
  if (!fs::exists(path)) {
    throw DataError("missing " + path.string() + "; run `spillover ingest` first");
  }
  SeriesPanel panel = load_csv(path);
  if (!panel.values.allFinite()) throw DataError(path.string() + " has missing cells");
  if (target == Target::Volatility && config.log_volatility) {
    if ((panel.values.array() <= 0.0).any()) {
      throw DataError("log volatility needs strictly positive volatility values");
    }
    panel.values = panel.values.array().log().matrix();
  }
  return panel;
}

RollingConfig rolling_config(const RunConfig& c, Target target, SpilloverMode mode, int lag) {
  RollingConfig r;
  r.window_length = c.rolling_window;
  r.step = c.rolling_step;
  r.var_lag = lag;
  r.horizon = c.horizon;
  r.mode = mode;
  r.target = target;
  r.cov_denominator = c.cov_denominator;
  r.divisor = c.divisor;
  r.threads = c.threads;
  return r;
}

fs::path model_path(const RunConfig& c, Target t) {
  return c.output_dir / ("denoiser_" + to_string(t) + ".json");
}

struct LoadedModel {
  DenoiserModel model;
  std::string hash;
};

std::optional<LoadedModel> load_model_if_needed(const RunConfig& c, Target t) {
  if (c.mode == ModeSelection::Traditional) return std::nullopt;
  const fs::path path = model_path(c, t);
  if (!fs::exists(path)) {
    throw DataError("missing " + path.string() + "; run `spillover train` first or use --mode traditional");
  }
  const std::string text = read_file(path);
  const json doc = json::parse(text, nullptr, false);
  if (doc.is_discarded()) throw DataError("malformed model file " + path.string());
  return LoadedModel{denoiser_from_json(doc), fnv1a_hex(text)};
}

int resolve_lag(const RunConfig& c, const SeriesPanel& panel) {
  return c.lag_search ? select_lag_aic(panel, c.max_lag) : c.var_lag;
}

int peek_asset_count(const RunConfig& c) {
  if (c.rest) return static_cast<int>(c.rest->symbols.size());
  if (!c.csv_schema.asset_columns.empty()) return static_cast<int>(c.csv_schema.asset_columns.size());
  std::ifstream in(*c.csv_path);
  std::string header;
  std::getline(in, header);
  int commas = 0;
  for (char ch : header) commas += ch == ',';
  return commas;  // every column but the date column
}

}  // namespace

json RunConfig::to_json() const {
  json j;
  if (csv_path) {
    j["source"] = {{"csv", csv_path->string()}, {"date_column", csv_schema.date_column}};
    if (!csv_schema.asset_columns.empty()) j["source"]["columns"] = csv_schema.asset_columns;
  } else if (rest) {
    j["source"] = {{"rest",
                    {{"endpoint", rest->endpoint},
                     {"symbols", rest->symbols},
                     {"from", rest->from},
                     {"to", rest->to},
                     {"cache_dir", rest->cache_dir.string()}}}};
  }
  if (!labels.empty()) j["labels"] = labels;
  std::vector<std::string> t;
  for (Target x : targets) t.push_back(spillover::to_string(x));
  j["targets"] = t;
  j["volatility"] = {{"window", volatility_window}, {"annualization", annualization}, {"log", log_volatility}};
  j["var"] = {{"lag", var_lag},
              {"lag_search", lag_search},
              {"max_lag", max_lag},
              {"cov_denominator", cov_denominator == CovDenominator::DegreesOfFreedom ? "dof" : "sample"}};
  j["horizon"] = horizon;
  j["directional_divisor"] = divisor == DirectionalDivisor::AssetCount ? "asset_count" : "row_sum";
  j["table_decimals"] = table_decimals;
  j["rolling"] = {{"window", rolling_window}, {"step", rolling_step}, {"threads", threads}};
  j["denoiser"] = {{"hidden", hidden},
                   {"alpha", alpha},
                   {"eps", eig_floor},
                   {"input", input_mode == InputMode::Correlation ? "correlation" : "covariance"},
                   {"lambda1", train.lambda1},
                   {"lambda2", train.lambda2},
                   {"batch_size", train.batch_size},
                   {"epochs", train.epochs},
                   {"learning_rate", train.learning_rate},
                   {"momentum", train.momentum},
                   {"patience", train.early_stop_patience},
                   {"holdout_fraction", train.holdout_fraction},
                   {"seed", train.seed},
                   {"window", train_window},
                   {"step", train_step}};
  j["mode"] = mode_name(mode);
  j["output_dir"] = output_dir.string();
  return j;
}

RunConfig parse_run_config(const json& doc, const fs::path& base_dir) {
  reject_unknown_keys(doc,
                      {"source", "labels", "target", "volatility", "var", "horizon", "directional_divisor",
                       "table_decimals", "rolling", "denoiser", "mode", "output_dir"},
                      "config");
  RunConfig c;

  if (!doc.contains("source")) throw ConfigError("config needs a 'source' section");
  const json& src = doc["source"];
  reject_unknown_keys(src, {"csv", "date_column", "columns", "rest"}, "source");
  if (src.contains("csv") == src.contains("rest")) {
    throw ConfigError("source needs exactly one of 'csv' or 'rest'");
  }
  if (src.contains("csv")) {
    c.csv_path = resolve(base_dir, get_or<std::string>(src, "csv", "", "source"));
    c.csv_schema.date_column = get_or<std::string>(src, "date_column", "date", "source");
    c.csv_schema.asset_columns = get_or<std::vector<std::string>>(src, "columns", {}, "source");
  } else {
    const json& r = src["rest"];
    reject_unknown_keys(r, {"endpoint", "symbols", "from", "to", "cache_dir"}, "source.rest");
    RestSource rest;
    rest.endpoint = get_or<std::string>(r, "endpoint", rest.endpoint, "source.rest");
    rest.symbols = get_or<std::vector<std::string>>(r, "symbols", {}, "source.rest");
    rest.from = get_or<std::string>(r, "from", "", "source.rest");
    rest.to = get_or<std::string>(r, "to", "", "source.rest");
    const auto cache = get_or<std::string>(r, "cache_dir", "", "source.rest");
    if (!cache.empty()) rest.cache_dir = resolve(base_dir, cache);
    c.rest = std::move(rest);
  }

  c.labels = get_or<std::vector<std::string>>(doc, "labels", {}, "config");
  const auto target = get_or<std::string>(doc, "target", "both", "config");
  c.targets = target == "both" ? std::vector<Target>{Target::Returns, Target::Volatility}
                               : std::vector<Target>{parse_target(target)};

  if (doc.contains("volatility")) {
    const json& v = doc["volatility"];
    reject_unknown_keys(v, {"window", "annualization", "log"}, "volatility");
    c.volatility_window = get_or(v, "window", c.volatility_window, "volatility");
    c.annualization = get_or(v, "annualization", c.annualization, "volatility");
    c.log_volatility = get_or(v, "log", c.log_volatility, "volatility");
  }
  if (doc.contains("var")) {
    const json& v = doc["var"];
    reject_unknown_keys(v, {"lag", "lag_search", "max_lag", "cov_denominator"}, "var");
    c.var_lag = get_or(v, "lag", c.var_lag, "var");
    c.lag_search = get_or(v, "lag_search", c.lag_search, "var");
    c.max_lag = get_or(v, "max_lag", c.max_lag, "var");
    const auto denom = get_or<std::string>(v, "cov_denominator", "dof", "var");
    if (denom == "dof") {
      c.cov_denominator = CovDenominator::DegreesOfFreedom;
    } else if (denom == "sample") {
      c.cov_denominator = CovDenominator::SampleSize;
    } else {
      throw ConfigError("var.cov_denominator must be 'dof' or 'sample'");
    }
  }
  c.horizon = get_or(doc, "horizon", c.horizon, "config");
  const auto divisor = get_or<std::string>(doc, "directional_divisor", "row_sum", "config");
  if (divisor == "asset_count") {
    c.divisor = DirectionalDivisor::AssetCount;
  } else if (divisor == "row_sum") {
    c.divisor = DirectionalDivisor::RowSum;
  } else {
    throw ConfigError("directional_divisor must be 'asset_count' or 'row_sum'");
  }
  c.table_decimals = get_or(doc, "table_decimals", c.table_decimals, "config");

  if (doc.contains("rolling")) {
    const json& r = doc["rolling"];
    reject_unknown_keys(r, {"window", "step", "threads"}, "rolling");
    c.rolling_window = get_or(r, "window", c.rolling_window, "rolling");
    c.rolling_step = get_or(r, "step", c.rolling_step, "rolling");
    c.threads = get_or(r, "threads", c.threads, "rolling");
  }
  if (doc.contains("denoiser")) {
    const json& d = doc["denoiser"];
    reject_unknown_keys(d,
                        {"hidden", "alpha", "eps", "input", "lambda1", "lambda2", "batch_size", "epochs",
                         "learning_rate", "momentum", "patience", "holdout_fraction", "seed", "window",
                         "step"},
                        "denoiser");
    c.hidden = get_or(d, "hidden", c.hidden, "denoiser");
    c.alpha = get_or(d, "alpha", c.alpha, "denoiser");
    c.eig_floor = get_or(d, "eps", c.eig_floor, "denoiser");
    const auto input = get_or<std::string>(d, "input", "correlation", "denoiser");
    if (input == "correlation") {
      c.input_mode = InputMode::Correlation;
    } else if (input == "covariance") {
      c.input_mode = InputMode::Covariance;
    } else {
      throw ConfigError("denoiser.input must be 'correlation' or 'covariance'");
    }
    c.train.lambda1 = get_or(d, "lambda1", c.train.lambda1, "denoiser");
    c.train.lambda2 = get_or(d, "lambda2", c.train.lambda2, "denoiser");
    c.train.batch_size = get_or(d, "batch_size", c.train.batch_size, "denoiser");
    c.train.epochs = get_or(d, "epochs", c.train.epochs, "denoiser");
    c.train.learning_rate = get_or(d, "learning_rate", c.train.learning_rate, "denoiser");
    c.train.momentum = get_or(d, "momentum", c.train.momentum, "denoiser");
    c.train.early_stop_patience = get_or(d, "patience", c.train.early_stop_patience, "denoiser");
    c.train.holdout_fraction = get_or(d, "holdout_fraction", c.train.holdout_fraction, "denoiser");
    c.train.seed = get_or(d, "seed", c.train.seed, "denoiser");
    c.train_window = get_or(d, "window", c.train_window, "denoiser");
    c.train_step = get_or(d, "step", c.train_step, "denoiser");
  }
  c.mode = parse_mode(get_or<std::string>(doc, "mode", "both", "config"));
  c.output_dir = resolve(base_dir, get_or<std::string>(doc, "output_dir", "out", "config"));
  return c;
}

RunConfig load_run_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  const json doc = json::parse(in, nullptr, false, true);
  if (doc.is_discarded()) throw ConfigError("config file is not valid JSON: " + path.string());
  RunConfig c = parse_run_config(doc, path.parent_path());
  c.config_path = path;
  return c;
}

void validate(const RunConfig& c, std::optional<int> n_assets) {
  if (c.csv_path) {
    if (!fs::exists(*c.csv_path)) throw ConfigError("source CSV not found: " + c.csv_path->string());
  } else if (c.rest) {
    if (c.rest->symbols.empty()) throw ConfigError("source.rest.symbols is empty");
    if (!parse_iso_date(c.rest->from) || !parse_iso_date(c.rest->to)) {
      throw ConfigError("source.rest.from / to must be YYYY-MM-DD dates");
    }
    if (*parse_iso_date(c.rest->to) < *parse_iso_date(c.rest->from)) {
      throw ConfigError("source.rest.to precedes source.rest.from");
    }
  } else {
    throw ConfigError("config has no data source");
  }
  if (!c.labels.empty() && n_assets && static_cast<int>(c.labels.size()) != *n_assets) {
    throw ConfigError("labels has " + std::to_string(c.labels.size()) + " entries for " +
                      std::to_string(*n_assets) + " assets");
  }
  if (c.volatility_window < 2) throw ConfigError("volatility.window must be at least 2");
  if (!(c.annualization > 0.0) || !std::isfinite(c.annualization)) {
    throw ConfigError("volatility.annualization must be positive");
  }
  if (c.var_lag < 1) throw ConfigError("var.lag must be at least 1");
  if (c.max_lag < 1) throw ConfigError("var.max_lag must be at least 1");
  if (c.horizon < 1) throw ConfigError("horizon must be at least 1");
  if (c.table_decimals < 0 || c.table_decimals > 10) throw ConfigError("table_decimals must be in [0, 10]");
  if (c.rolling_step < 1) throw ConfigError("rolling.step must be at least 1");
  if (c.threads < 0) throw ConfigError("rolling.threads must be non-negative");
  if (!(c.alpha > 0.0 && c.alpha <= 1.0)) throw ConfigError("denoiser.alpha must be in (0, 1]");
  if (!(c.eig_floor > 0.0)) throw ConfigError("denoiser.eps must be positive");
  for (int w : c.hidden) {
    if (w < 1) throw ConfigError("denoiser.hidden widths must be positive");
  }
  if (c.train_window != 0 && c.train_window < 2) throw ConfigError("denoiser.window must be at least 2");
  if (c.train_step < 0) throw ConfigError("denoiser.step must be non-negative");
  c.train.validate();
  if (n_assets) {
    const int lag = c.lag_search ? c.max_lag : c.var_lag;
    RollingConfig r;
    r.window_length = c.rolling_window;
    r.step = c.rolling_step;
    r.var_lag = lag;
    r.horizon = c.horizon;
    r.validate(*n_assets);
  }
}

CommandReport cmd_ingest(const RunConfig& config) {
  validate(config, peek_asset_count(config));
  OutputLock lock(config.output_dir);
  CommandReport report;

  PricePanel prices;
  if (config.csv_path) {
    CsvSchema schema = config.csv_schema;
    schema.labels = config.labels;
    prices = load_csv(*config.csv_path, schema);
  } else {
    EodRequest req;
    req.endpoint = config.rest->endpoint;
    req.symbols = config.rest->symbols;
    req.from = *parse_iso_date(config.rest->from);
    req.to = *parse_iso_date(config.rest->to);
    const char* key = std::getenv("EOD_API_KEY");
    req.api_key = key ? key : "";
    req.cache_dir = config.rest->cache_dir.empty() ? config.output_dir / "cache" : config.rest->cache_dir;
    EodFetchResult fetched = fetch_eod(req);
    prices = std::move(fetched.panel);
    report.warnings = std::move(fetched.warnings);
    if (!config.labels.empty()) {
      if (config.labels.size() != prices.assets.size()) {
        throw ConfigError("labels do not match the fetched symbols (some were skipped)");
      }
      prices.assets = config.labels;
    }
  }

  const PricePanel aligned = align(prices);
  const ReturnPanel returns = log_returns(aligned);
  const VolatilityPanel vol = rolling_volatility(returns, config.volatility_window, config.annualization);

  const json source_meta = {{"price_rows", prices.rows()}, {"aligned_rows", aligned.rows()},
                            {"assets", aligned.assets}};
  const auto emit = [&](const fs::path& path, const std::string& content) {
    write_file(path, content, report);
    write_sidecar(path, config, "ingest", source_meta, report);
  };
  emit(config.output_dir / "panel_returns.csv", panel_to_csv(returns));
  emit(config.output_dir / "panel_volatility.csv", panel_to_csv(vol));
  emit(config.output_dir / "stats_returns.csv", stats_to_csv(describe(returns)));
  emit(config.output_dir / "stats_volatility.csv", stats_to_csv(describe(vol)));
  return report;
}

CommandReport cmd_stats(const RunConfig& config, std::ostream& out) {
  OutputLock lock(config.output_dir);
  CommandReport report;
  for (Target t : {Target::Returns, Target::Volatility}) {
    const fs::path path = panel_path(config, t);
    if (!fs::exists(path)) throw DataError("missing " + path.string() + "; run `spillover ingest` first");
    const std::string csv = stats_to_csv(describe(load_csv(path)));
    const fs::path dest = config.output_dir / ("stats_" + to_string(t) + ".csv");
    write_file(dest, csv, report);
    write_sidecar(dest, config, "stats", json::object(), report);
    out << "# " << to_string(t) << '\n' << csv;
  }
  return report;
}

CommandReport cmd_train(const RunConfig& config) {
  OutputLock lock(config.output_dir);
  CommandReport report;
  for (Target t : config.targets) {
    const SeriesPanel panel = load_target_panel(config, t);
    validate(config, static_cast<int>(panel.cols()));
    const int window = config.train_window > 0 ? config.train_window : config.rolling_window;
    const int step = config.train_step > 0 ? config.train_step : config.rolling_step;
    CovWindowSet windows = rolling_cov_windows(panel, window, step);
    windows.source_id = panel_path(config, t).filename().string();

    DenoiserSpec spec;
    spec.n_assets = static_cast<int>(panel.cols());
    spec.hidden = config.hidden;
    spec.residual_weight = config.alpha;
    spec.eig_floor = config.eig_floor;
    spec.input_mode = config.input_mode;
    spec.seed = config.train.seed;
    const TrainResult result = train(windows, config.train, make_denoiser(spec));

    const fs::path model_file = model_path(config, t);
    const std::string model_text = to_json(result.model).dump(1) + "\n";
    write_file(model_file, model_text, report);
    const fs::path curve_file = config.output_dir / ("training_curve_" + to_string(t) + ".csv");
    write_file(curve_file, training_curve_csv(result.curve), report);
    const json meta = {{"target", to_string(t)},
                       {"windows", windows.matrices.size()},
                       {"window_length", window},
                       {"window_step", step},
                       {"best_epoch", result.best_epoch},
                       {"epochs_run", result.curve.size() - 1},
                       {"model_hash", fnv1a_hex(model_text)}};
    write_sidecar(model_file, config, "train", meta, report);
    write_sidecar(curve_file, config, "train", meta, report);
  }
  return report;
}

CommandReport cmd_static(const RunConfig& config) {
  OutputLock lock(config.output_dir);
  CommandReport report;
  for (Target t : config.targets) {
    const SeriesPanel panel = load_target_panel(config, t);
    validate(config, static_cast<int>(panel.cols()));
    const int lag = resolve_lag(config, panel);
    const auto loaded = load_model_if_needed(config, t);
    const VarModel var = fit_var(panel, {lag, config.cov_denominator});
    for (const std::string& w : var.warnings) report.warnings.push_back(to_string(t) + ": " + w);
    for (SpilloverMode m : modes_of(config.mode)) {
      const RollingConfig rc = rolling_config(config, t, m, lag);
      const SpilloverTable table = run_static(panel, rc, loaded ? &loaded->model : nullptr);
      const fs::path file = config.output_dir / ("static_" + to_string(t) + "_" + to_string(m) + ".csv");
      write_file(file, table_to_csv(table, config.table_decimals), report);
      json meta = {{"target", to_string(t)},
                   {"mode", to_string(m)},
                   {"var_lag", lag},
                   {"horizon", config.horizon},
                   {"total_index", table.total_index},
                   {"observations", panel.rows()},
                   {"var_model", to_json(var, utc_timestamp())},
                   {"stability", {{"stable", is_stable(var).stable},
                                  {"spectral_radius", is_stable(var).spectral_radius}}}};
      if (m == SpilloverMode::Denoised) meta["model_hash"] = loaded->hash;
      write_sidecar(file, config, "static", meta, report);
    }
  }
  return report;
}

CommandReport cmd_rolling(const RunConfig& config) {
  OutputLock lock(config.output_dir);
  CommandReport report;
  for (Target t : config.targets) {
    const SeriesPanel panel = load_target_panel(config, t);
    validate(config, static_cast<int>(panel.cols()));
    const int lag = resolve_lag(config, panel);
    const auto loaded = load_model_if_needed(config, t);
    for (SpilloverMode m : modes_of(config.mode)) {
      const RollingConfig rc = rolling_config(config, t, m, lag);
      const RollingSeries series = run_rolling(panel, rc, loaded ? &loaded->model : nullptr);
      const fs::path file = config.output_dir / ("rolling_" + to_string(t) + "_" + to_string(m) + ".csv");
      write_file(file, rolling_to_csv(series), report);
      json warnings = json::array();
      for (const auto& w : series.warnings) {
        warnings.push_back({{"window", w.window}, {"end_date", format_iso_date(w.end_date)}, {"message", w.message}});
        report.warnings.push_back(to_string(t) + "/" + to_string(m) + " window ending " +
                                  format_iso_date(w.end_date) + ": " + w.message);
      }
      json meta = {{"rolling", to_json(rc)},
                   {"windows", series.size()},
                   {"failed_windows", series.warnings.size()},
                   {"window_warnings", warnings},
                   {"seed", config.train.seed}};
      if (m == SpilloverMode::Denoised) meta["model_hash"] = loaded->hash;
      write_sidecar(file, config, "rolling", meta, report);
    }
  }
  return report;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Return and volatility spillover indices with an optional covariance denoiser", "spillover"};
  app.require_subcommand(1);
  std::string config_path;
  std::string mode;
  std::string out_dir;
  std::uint64_t seed = 0;

  const auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "Run configuration (JSON)")->required();
    sub->add_option("--mode", mode, "traditional | denoised | both")
        ->check(CLI::IsMember({"traditional", "denoised", "both"}));
    sub->add_option("--out", out_dir, "Output directory (overrides output_dir)");
    sub->add_option("--seed", seed, "Denoiser seed (overrides denoiser.seed)");
  };
  CLI::App* ingest = app.add_subcommand("ingest", "Load prices, write return/volatility panels and statistics");
  CLI::App* stats = app.add_subcommand("stats", "Descriptive statistics of the ingested panels");
  CLI::App* train_cmd = app.add_subcommand("train", "Train the covariance denoiser on rolling windows");
  CLI::App* static_cmd = app.add_subcommand("static", "Full-sample spillover tables");
  CLI::App* rolling = app.add_subcommand("rolling", "Rolling-window spillover series");
  for (CLI::App* sub : {ingest, stats, train_cmd, static_cmd, rolling}) add_common(sub);

  std::vector<std::string> argv_rev(args.rbegin(), args.rend());
  try {
    app.parse(argv_rev);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  try {
    RunConfig config = load_run_config(config_path);
    if (!mode.empty()) config.mode = parse_mode(mode);
    if (!out_dir.empty()) {
      config.output_dir = out_dir;
    }
    for (CLI::App* sub : {ingest, stats, train_cmd, static_cmd, rolling}) {
      if (sub->parsed() && sub->count("--seed") > 0) config.train.seed = seed;
    }
    validate(config);

    CommandReport report;
    if (app.got_subcommand(ingest)) {
      report = cmd_ingest(config);
    } else if (app.got_subcommand(stats)) {
      report = cmd_stats(config, out);
    } else if (app.got_subcommand(train_cmd)) {
      report = cmd_train(config);
    } else if (app.got_subcommand(static_cmd)) {
      report = cmd_static(config);
    } else {
      report = cmd_rolling(config);
    }
    for (const auto& w : report.warnings) err << "warning: " << w << '\n';
    for (const auto& p : report.written) out << "wrote " << p.string() << '\n';
    return 0;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace spillover::cli
