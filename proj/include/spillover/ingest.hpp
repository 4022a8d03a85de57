#pragma once
// Price ingestion, alignment, and return / volatility panel construction.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace spillover {

using Date = std::chrono::year_month_day;

// Parses YYYY-MM-DD (a trailing time component after 'T' or ' ' is ignored).
std::optional<Date> parse_iso_date(std::string_view text);
std::string format_iso_date(Date date);

// Date-indexed matrix of observations, one column per asset. Missing entries
// are quiet NaN.
struct SeriesPanel {
  std::vector<Date> dates;
  std::vector<std::string> assets;
  Eigen::MatrixXd values;

  Eigen::Index rows() const { return values.rows(); }
  Eigen::Index cols() const { return values.cols(); }
  bool empty() const { return values.rows() == 0; }

  // Throws DataError on shape mismatch, unordered / duplicate dates, or
  // duplicate asset identifiers.
  void validate() const;
};

// Adjusted closing prices; cells may be missing.
struct PricePanel : SeriesPanel {};
// Daily log returns; dense and finite.
struct ReturnPanel : SeriesPanel {};
// Rolling standard deviation of returns, annualized; dense, finite, >= 0.
struct VolatilityPanel : SeriesPanel {};

constexpr double kTradingDaysPerYear = 252.0;

struct CsvSchema {
  std::string date_column = "date";
  // Columns to keep, in output order. Empty keeps every non-date column.
  std::vector<std::string> asset_columns;
  // Optional display labels, same length as the selected asset columns.
  std::vector<std::string> labels;
};

// Reads `date,SYM1,SYM2,...`. Unparsable or empty cells become missing,
// rows are sorted ascending by date. Throws DataError on a missing file,
// malformed header, duplicate dates, or zero usable rows.
PricePanel load_csv(const std::filesystem::path& path, const CsvSchema& schema = {});

struct EodRequest {
  std::string endpoint;  // e.g. https://eodhd.com/api
  std::vector<std::string> symbols;
  Date from{};
  Date to{};
  std::string api_key;   // usually from EOD_API_KEY
  std::filesystem::path cache_dir;  // empty disables caching
  int max_attempts = 4;
  std::chrono::milliseconds initial_backoff{200};
  std::chrono::seconds timeout{30};
};

struct EodFetchResult {
  PricePanel panel;
  std::vector<std::string> warnings;
};

// GET <endpoint>/eod/<symbol>?from=..&to=..&api_token=..&fmt=json for each
// symbol (concurrently), merging on the union of dates in symbol order.
// Symbols answering 404 are skipped with a warning; other HTTP failures are
// retried with exponential backoff. Successful responses are cached as
// `<cache_dir>/<symbol>_<hash>.csv` and reused on later calls.
EodFetchResult fetch_eod(const EodRequest& request);

// Cache file a request for `symbol` reads from / writes to.
std::filesystem::path eod_cache_path(const EodRequest& request, const std::string& symbol);

// Drops rows missing for every asset, forward-fills partial gaps, then drops
// leading rows that still contain gaps. Throws DataError if fewer than two
// rows survive.
PricePanel align(const PricePanel& panel);

// value[t][j] = ln(price[t+1][j] / price[t][j]); dated by the later row.
ReturnPanel log_returns(const PricePanel& panel);

// Trailing-window sample standard deviation (n - 1 denominator) times
// `annualization_factor`; dated by the window's last row.
VolatilityPanel rolling_volatility(const ReturnPanel& returns, int window,
                                   double annualization_factor = 15.874507866387544);

struct StatsRow {
  std::string asset;
  std::int64_t count = 0;
  double mean = 0.0;
  double std = 0.0;
  double min = 0.0;
  double q25 = 0.0;
  double q50 = 0.0;
  double q75 = 0.0;
  double max = 0.0;
};

struct StatsTable {
  std::vector<StatsRow> rows;
};

// Linear-interpolation quantile of sorted data, q in [0, 1].
double quantile_sorted(const std::vector<double>& sorted, double q);

// Per-column descriptive statistics; missing cells are excluded.
StatsTable describe(const SeriesPanel& panel);

// CSV with header `,Count,Mean,Std,Min,25%,50%,75%,Max`.
std::string stats_to_csv(const StatsTable& table, int decimals = 5);

// `date,SYM1,...` with round-trip precision; missing cells left empty.
std::string panel_to_csv(const SeriesPanel& panel);

}  // namespace spillover
