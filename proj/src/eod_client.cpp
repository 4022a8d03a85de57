#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <future>
#include <limits>
#include <map>
#include <sstream>
#include <thread>

// Eigen before httplib: <resolv.h> defines a `_res` macro that collides with
// Eigen's product kernels.
#include "spillover/error.hpp"
#include "spillover/hash.hpp"
#include "spillover/ingest.hpp"

#include <httplib.h>
#include <json.hpp>

namespace spillover {
namespace {

struct SplitUrl {
  std::string origin;     // scheme://host[:port]
  std::string base_path;  // without trailing slash
};

SplitUrl split_endpoint(const std::string& endpoint) {
  const auto scheme_end = endpoint.find("://");
  if (scheme_end == std::string::npos) throw DataError("endpoint must include a scheme: " + endpoint);
  const auto path_start = endpoint.find('/', scheme_end + 3);
  SplitUrl out;
  out.origin = endpoint.substr(0, path_start);
  out.base_path = path_start == std::string::npos ? "" : endpoint.substr(path_start);
  while (!out.base_path.empty() && out.base_path.back() == '/') out.base_path.pop_back();
  return out;
}

using Series = std::map<Date, double>;

struct SymbolOutcome {
  enum class Status { Ok, NotFound } status = Status::Ok;
  Series series;
  std::string message;
};

Series read_cache(const std::filesystem::path& file) {
  std::ifstream in(file);
  Series series;
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    const auto comma = line.find(',');
    if (comma == std::string::npos) continue;
    const auto date = parse_iso_date(std::string_view(line).substr(0, comma));
    if (!date) continue;
    series[*date] = std::stod(line.substr(comma + 1));
  }
  return series;
}

void write_cache(const std::filesystem::path& file, const Series& series) {
  std::filesystem::create_directories(file.parent_path());
  const auto tmp = file.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    out << "date,adjusted_close\n";
    char buf[64];
    for (const auto& [date, value] : series) {
      std::snprintf(buf, sizeof buf, "%.17g", value);
      out << format_iso_date(date) << ',' << buf << '\n';
    }
  }
  std::filesystem::rename(tmp, file);
}

Series parse_response(const std::string& body, const std::string& symbol) {
  Series series;
  const auto doc = nlohmann::json::parse(body, nullptr, false);
  if (doc.is_discarded() || !doc.is_array()) {
    throw DataError("unexpected response body for symbol " + symbol);
  }
  for (const auto& item : doc) {
    if (!item.is_object() || !item.contains("date") || !item.contains("adjusted_close")) continue;
    const auto& close = item["adjusted_close"];
    if (!close.is_number()) continue;
    const auto date = parse_iso_date(item["date"].get<std::string>());
    if (!date) continue;
    series[*date] = close.get<double>();
  }
  return series;
}

SymbolOutcome fetch_symbol(const EodRequest& request, const SplitUrl& url, const std::string& symbol) {
  const auto cache_file = request.cache_dir.empty() ? std::filesystem::path{}
                                                    : eod_cache_path(request, symbol);
  if (!cache_file.empty() && std::filesystem::exists(cache_file)) {
    return {SymbolOutcome::Status::Ok, read_cache(cache_file), {}};
  }

  httplib::Client client(url.origin);
  client.set_connection_timeout(request.timeout);
  client.set_read_timeout(request.timeout);
  const std::string path = url.base_path + "/eod/" + symbol;
  const httplib::Params params{{"from", format_iso_date(request.from)},
                               {"to", format_iso_date(request.to)},
                               {"api_token", request.api_key},
                               {"fmt", "json"}};

  std::string last_error;
  auto backoff = request.initial_backoff;
  for (int attempt = 1; attempt <= std::max(1, request.max_attempts); ++attempt) {
    auto res = client.Get(path, params, httplib::Headers{});
    if (res && res->status == 404) {
      return {SymbolOutcome::Status::NotFound, {}, "symbol not found: " + symbol};
    }
    if (res && res->status == 200) {
      Series series = parse_response(res->body, symbol);
      if (!cache_file.empty()) write_cache(cache_file, series);
      return {SymbolOutcome::Status::Ok, std::move(series), {}};
    }
    last_error = res ? "HTTP " + std::to_string(res->status) : httplib::to_string(res.error());
    if (attempt < request.max_attempts) {
      std::this_thread::sleep_for(backoff);
      backoff *= 2;
    }
  }
  throw DataError("fetching " + symbol + " failed after " + std::to_string(request.max_attempts) +
                  " attempts: " + last_error);
}

}  // namespace

std::filesystem::path eod_cache_path(const EodRequest& request, const std::string& symbol) {
  const std::string key = request.endpoint + '|' + symbol + '|' + format_iso_date(request.from) +
                          '|' + format_iso_date(request.to);
  std::string safe = symbol;
  std::replace_if(safe.begin(), safe.end(), [](char c) { return c == '/' || c == '\\'; }, '_');
  return request.cache_dir / (safe + "_" + fnv1a_hex(key) + ".csv");
}

EodFetchResult fetch_eod(const EodRequest& request) {
  if (request.symbols.empty()) throw DataError("fetch_eod: symbol list is empty");
  if (request.api_key.empty()) throw DataError("fetch_eod: API key is empty (set EOD_API_KEY)");
  const SplitUrl url = split_endpoint(request.endpoint);

  std::vector<std::future<SymbolOutcome>> pending;
  pending.reserve(request.symbols.size());
  for (const auto& symbol : request.symbols) {
    pending.push_back(std::async(std::launch::async, [&request, &url, symbol] {
      return fetch_symbol(request, url, symbol);
    }));
  }

  // Collect in symbol order so the merged panel does not depend on which
  // request finished first.
  EodFetchResult result;
  std::vector<std::pair<std::string, Series>> found;
  for (std::size_t i = 0; i < pending.size(); ++i) {
    SymbolOutcome outcome = pending[i].get();
    if (outcome.status == SymbolOutcome::Status::NotFound) {
      result.warnings.push_back(outcome.message);
      continue;
    }
    found.emplace_back(request.symbols[i], std::move(outcome.series));
  }
  if (found.empty()) throw DataError("fetch_eod: none of the requested symbols were found");

  std::vector<Date> dates;
  for (const auto& [_, series] : found) {
    for (const auto& [date, __] : series) dates.push_back(date);
  }
  std::sort(dates.begin(), dates.end());
  dates.erase(std::unique(dates.begin(), dates.end()), dates.end());
  if (dates.empty()) throw DataError("fetch_eod: responses contained no usable rows");

  PricePanel& panel = result.panel;
  panel.dates = dates;
  panel.values = Eigen::MatrixXd::Constant(static_cast<Eigen::Index>(dates.size()),
                                           static_cast<Eigen::Index>(found.size()),
                                           std::numeric_limits<double>::quiet_NaN());
  for (std::size_t c = 0; c < found.size(); ++c) {
    panel.assets.push_back(found[c].first);
    for (const auto& [date, value] : found[c].second) {
      const auto r = std::lower_bound(dates.begin(), dates.end(), date) - dates.begin();
      panel.values(r, static_cast<Eigen::Index>(c)) = value;
    }
  }
  panel.validate();
  return result;
}

}  // namespace spillover
