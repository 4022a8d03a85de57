#include "spillover/ingest.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_map>

#include "spillover/error.hpp"

namespace spillover {
namespace {

constexpr double kMissing = std::numeric_limits<double>::quiet_NaN();

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '"')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '"' || s.back() == '\r')) {
    s.remove_suffix(1);
  }
  return s;
}

std::vector<std::string_view> split_csv_line(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      fields.push_back(trim(line.substr(start)));
      break;
    }
    fields.push_back(trim(line.substr(start, comma - start)));
    start = comma + 1;
  }
  return fields;
}

std::optional<double> parse_double(std::string_view text) {
  if (text.empty()) return std::nullopt;
  if (text.front() == '+') text.remove_prefix(1);
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size() || !std::isfinite(value)) {
    return std::nullopt;
  }
  return value;
}

std::string format_double(double value, const char* fmt) {
  char buf[64];
  const int n = std::snprintf(buf, sizeof buf, fmt, value);
  return std::string(buf, static_cast<std::size_t>(n));
}

}  // namespace

std::optional<Date> parse_iso_date(std::string_view text) {
  text = trim(text);
  if (const auto cut = text.find_first_of("T "); cut != std::string_view::npos) {
    text = text.substr(0, cut);
  }
  if (text.size() != 10 || text[4] != '-' || text[7] != '-') return std::nullopt;
  int y = 0;
  unsigned m = 0, d = 0;
  const auto parse_part = [&](std::size_t pos, std::size_t len, auto& out) {
    const auto [ptr, ec] = std::from_chars(text.data() + pos, text.data() + pos + len, out);
    return ec == std::errc() && ptr == text.data() + pos + len;
  };
  if (!parse_part(0, 4, y) || !parse_part(5, 2, m) || !parse_part(8, 2, d)) return std::nullopt;
  const Date date{std::chrono::year{y}, std::chrono::month{m}, std::chrono::day{d}};
  if (!date.ok()) return std::nullopt;
  return date;
}

std::string format_iso_date(Date date) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(date.year()),
                static_cast<unsigned>(date.month()), static_cast<unsigned>(date.day()));
  return buf;
}

void SeriesPanel::validate() const {
  if (static_cast<Eigen::Index>(dates.size()) != values.rows()) {
    throw DataError("panel has " + std::to_string(dates.size()) + " dates but " +
                    std::to_string(values.rows()) + " rows");
  }
  if (static_cast<Eigen::Index>(assets.size()) != values.cols()) {
    throw DataError("panel has " + std::to_string(assets.size()) + " asset names but " +
                    std::to_string(values.cols()) + " columns");
  }
  for (std::size_t i = 1; i < dates.size(); ++i) {
    if (!(dates[i - 1] < dates[i])) {
      throw DataError("panel dates not strictly increasing at " + format_iso_date(dates[i]));
    }
  }
  std::set<std::string> seen;
  for (const auto& a : assets) {
    if (!seen.insert(a).second) throw DataError("duplicate asset identifier: " + a);
  }
}

PricePanel load_csv(const std::filesystem::path& path, const CsvSchema& schema) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open CSV file: " + path.string());

  std::string header_line;
  if (!std::getline(in, header_line)) throw DataError("empty CSV file: " + path.string());
  if (header_line.size() >= 3 && header_line.compare(0, 3, "\xEF\xBB\xBF") == 0) {
    header_line.erase(0, 3);
  }
  const auto header = split_csv_line(header_line);

  std::ptrdiff_t date_col = -1;
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == schema.date_column) {
      if (date_col >= 0) throw DataError("malformed header: date column repeated");
      date_col = static_cast<std::ptrdiff_t>(i);
    }
  }
  if (date_col < 0) {
    throw DataError("malformed header: no '" + schema.date_column + "' column in " + path.string());
  }

  std::vector<std::size_t> picked;
  std::vector<std::string> names;
  if (schema.asset_columns.empty()) {
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (static_cast<std::ptrdiff_t>(i) == date_col) continue;
      if (header[i].empty()) throw DataError("malformed header: empty column name");
      picked.push_back(i);
      names.emplace_back(header[i]);
    }
  } else {
    for (const auto& want : schema.asset_columns) {
      const auto it = std::find(header.begin(), header.end(), want);
      if (it == header.end()) throw DataError("malformed header: missing column '" + want + "'");
      picked.push_back(static_cast<std::size_t>(it - header.begin()));
      names.push_back(want);
    }
  }
  if (picked.empty()) throw DataError("malformed header: no asset columns in " + path.string());
  if (!schema.labels.empty()) {
    if (schema.labels.size() != names.size()) {
      throw DataError("label count does not match selected asset columns");
    }
    names = schema.labels;
  }

  struct Row {
    Date date;
    std::vector<double> cells;
  };
  std::vector<Row> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    const auto fields = split_csv_line(line);
    const auto date = parse_iso_date(static_cast<std::size_t>(date_col) < fields.size()
                                         ? fields[static_cast<std::size_t>(date_col)]
                                         : std::string_view{});
    if (!date) continue;
    Row row{*date, std::vector<double>(picked.size(), kMissing)};
    for (std::size_t k = 0; k < picked.size(); ++k) {
      if (picked[k] < fields.size()) {
        if (auto v = parse_double(fields[picked[k]])) row.cells[k] = *v;
      }
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw DataError("no usable rows in " + path.string());

  std::stable_sort(rows.begin(), rows.end(),
                   [](const Row& a, const Row& b) { return a.date < b.date; });

  PricePanel panel;
  panel.assets = std::move(names);
  panel.values.resize(static_cast<Eigen::Index>(rows.size()),
                      static_cast<Eigen::Index>(picked.size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (r > 0 && rows[r].date == rows[r - 1].date) {
      throw DataError("duplicate date " + format_iso_date(rows[r].date) + " in " + path.string());
    }
    panel.dates.push_back(rows[r].date);
    for (std::size_t c = 0; c < picked.size(); ++c) {
      panel.values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r].cells[c];
    }
  }
  panel.validate();
  return panel;
}

PricePanel align(const PricePanel& panel) {
  panel.validate();
  const Eigen::Index n = panel.cols();

  std::vector<Eigen::Index> kept;
  for (Eigen::Index r = 0; r < panel.rows(); ++r) {
    if (panel.values.row(r).array().isFinite().any()) kept.push_back(r);
  }

  Eigen::MatrixXd filled(static_cast<Eigen::Index>(kept.size()), n);
  for (std::size_t k = 0; k < kept.size(); ++k) {
    const auto r = static_cast<Eigen::Index>(k);
    for (Eigen::Index c = 0; c < n; ++c) {
      const double v = panel.values(kept[k], c);
      filled(r, c) = std::isfinite(v) ? v : (r > 0 ? filled(r - 1, c) : kMissing);
    }
  }

  Eigen::Index first_dense = 0;
  while (first_dense < filled.rows() && !filled.row(first_dense).array().isFinite().all()) {
    ++first_dense;
  }

  PricePanel out;
  out.assets = panel.assets;
  out.values = filled.bottomRows(filled.rows() - first_dense);
  for (std::size_t k = static_cast<std::size_t>(first_dense); k < kept.size(); ++k) {
    out.dates.push_back(panel.dates[static_cast<std::size_t>(kept[k])]);
  }
  if (out.rows() < 2) {
    throw DataError("aligned panel has " + std::to_string(out.rows()) +
                    " rows; at least 2 are required");
  }
  return out;
}

ReturnPanel log_returns(const PricePanel& panel) {
  panel.validate();
  if (panel.rows() < 2) throw DataError("log_returns needs at least 2 price rows");
  if (!panel.values.array().isFinite().all()) {
    throw DataError("log_returns needs a dense panel; run align() first");
  }
  for (Eigen::Index r = 0; r < panel.rows(); ++r) {
    for (Eigen::Index c = 0; c < panel.cols(); ++c) {
      if (!(panel.values(r, c) > 0.0)) {
        throw DataError("non-positive price for " + panel.assets[static_cast<std::size_t>(c)] +
                        " on " + format_iso_date(panel.dates[static_cast<std::size_t>(r)]));
      }
    }
  }
  ReturnPanel out;
  out.assets = panel.assets;
  out.dates.assign(panel.dates.begin() + 1, panel.dates.end());
  const Eigen::Index t = panel.rows() - 1;
  out.values = (panel.values.bottomRows(t).array() / panel.values.topRows(t).array()).log().matrix();
  return out;
}

VolatilityPanel rolling_volatility(const ReturnPanel& returns, int window,
                                   double annualization_factor) {
  returns.validate();
  if (window < 2) throw DataError("volatility window must be at least 2");
  if (!(annualization_factor > 0.0) || !std::isfinite(annualization_factor)) {
    throw DataError("annualization factor must be positive");
  }
  if (returns.rows() < window) {
    throw DataError("volatility window " + std::to_string(window) + " exceeds series length " +
                    std::to_string(returns.rows()));
  }
  const Eigen::Index w = window;
  const Eigen::Index out_rows = returns.rows() - w + 1;
  VolatilityPanel out;
  out.assets = returns.assets;
  out.dates.assign(returns.dates.begin() + (w - 1), returns.dates.end());
  out.values.resize(out_rows, returns.cols());
  // Two-pass per window; windows are short and this keeps every output
  // independent of accumulated rounding from earlier rows.
  for (Eigen::Index c = 0; c < returns.cols(); ++c) {
    for (Eigen::Index r = 0; r < out_rows; ++r) {
      const auto seg = returns.values.col(c).segment(r, w);
      const double mean = seg.mean();
      const double ss = (seg.array() - mean).square().sum();
      out.values(r, c) = std::sqrt(ss / static_cast<double>(w - 1)) * annualization_factor;
    }
  }
  return out;
}

double quantile_sorted(const std::vector<double>& sorted, double q) {
  if (sorted.empty()) return kMissing;
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

StatsTable describe(const SeriesPanel& panel) {
  if (panel.cols() == 0) throw DataError("describe needs at least one column");
  StatsTable table;
  for (Eigen::Index c = 0; c < panel.cols(); ++c) {
    std::vector<double> xs;
    xs.reserve(static_cast<std::size_t>(panel.rows()));
    for (Eigen::Index r = 0; r < panel.rows(); ++r) {
      if (std::isfinite(panel.values(r, c))) xs.push_back(panel.values(r, c));
    }
    StatsRow row;
    row.asset = panel.assets[static_cast<std::size_t>(c)];
    row.count = static_cast<std::int64_t>(xs.size());
    if (xs.empty()) {
      row.mean = row.std = row.min = row.q25 = row.q50 = row.q75 = row.max = kMissing;
    } else {
      std::sort(xs.begin(), xs.end());
      const double n = static_cast<double>(xs.size());
      row.mean = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
      double ss = 0.0;
      for (double x : xs) ss += (x - row.mean) * (x - row.mean);
      row.std = xs.size() > 1 ? std::sqrt(ss / (n - 1.0)) : kMissing;
      row.min = xs.front();
      row.max = xs.back();
      row.q25 = quantile_sorted(xs, 0.25);
      row.q50 = quantile_sorted(xs, 0.50);
      row.q75 = quantile_sorted(xs, 0.75);
    }
    table.rows.push_back(std::move(row));
  }
  return table;
}

std::string stats_to_csv(const StatsTable& table, int decimals) {
  const std::string fmt = "%." + std::to_string(decimals) + "f";
  const auto cell = [&](double v) { return std::isfinite(v) ? format_double(v, fmt.c_str()) : std::string(); };
  std::ostringstream out;
  out << ",Count,Mean,Std,Min,25%,50%,75%,Max\n";
  for (const auto& r : table.rows) {
    out << r.asset << ',' << r.count << ',' << cell(r.mean) << ',' << cell(r.std) << ','
        << cell(r.min) << ',' << cell(r.q25) << ',' << cell(r.q50) << ',' << cell(r.q75) << ','
        << cell(r.max) << '\n';
  }
  return out.str();
}

std::string panel_to_csv(const SeriesPanel& panel) {
  panel.validate();
  std::ostringstream out;
  out << "date";
  for (const auto& a : panel.assets) out << ',' << a;
  out << '\n';
  for (Eigen::Index r = 0; r < panel.rows(); ++r) {
    out << format_iso_date(panel.dates[static_cast<std::size_t>(r)]);
    for (Eigen::Index c = 0; c < panel.cols(); ++c) {
      out << ',';
      const double v = panel.values(r, c);
      if (std::isfinite(v)) out << format_double(v, "%.17g");
    }
    out << '\n';
  }
  return out.str();
}

}  // namespace spillover
