#include <doctest.h>

#include <map>
#include <sstream>

#include "spillover/cli.hpp"
#include "spillover/error.hpp"
#include "spillover/hash.hpp"
#include "support/cli_fixture.hpp"

using namespace spillover;
using namespace spillover::cli;
using testing::TempDir;

namespace {

struct Outcome {
  int code;
  std::string out;
  std::string err;
};

Outcome run_cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run(args, out, err);
  return {code, out.str(), err.str()};
}

Outcome run_pipeline(const std::filesystem::path& config, const std::vector<std::string>& extra = {}) {
  for (const std::string cmd : {"ingest", "train", "static", "rolling"}) {
    std::vector<std::string> args{cmd, "--config", config.string()};
    args.insert(args.end(), extra.begin(), extra.end());
    auto o = run_cli(args);
    if (o.code != 0) return o;
  }
  return {0, "", ""};
}

// Every non-sidecar file under `dir`, keyed by relative path.
std::map<std::string, std::string> artifacts(const std::filesystem::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : std::filesystem::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const std::string name = std::filesystem::relative(e.path(), dir).string();
    if (name.ends_with(".meta.json")) continue;
    out[name] = testing::read_file(e.path());
  }
  return out;
}

}  // namespace

TEST_CASE("config parsing: defaults and overrides") {
  const auto c = parse_run_config(nlohmann::json{{"source", {{"csv", "p.csv"}}}}, "/base");
  CHECK(c.csv_path == std::filesystem::path("/base/p.csv"));
  CHECK(c.targets.size() == 2);
  CHECK(c.var_lag == 1);
  CHECK(c.horizon == 10);
  CHECK(c.divisor == DirectionalDivisor::RowSum);
  CHECK(c.annualization == doctest::Approx(std::sqrt(252.0)));
  CHECK(c.mode == ModeSelection::Both);
  CHECK(c.output_dir == std::filesystem::path("/base/out"));

  const auto d = parse_run_config(
      nlohmann::json{{"source", {{"rest", {{"symbols", {"A.US"}}, {"from", "2020-01-01"}, {"to", "2020-02-01"}}}}},
                     {"target", "volatility"},
                     {"volatility", {{"log", true}}},
                     {"var", {{"cov_denominator", "sample"}, {"lag_search", true}}},
                     {"directional_divisor", "asset_count"},
                     {"denoiser", {{"input", "covariance"}, {"alpha", 1.0}}}});
  REQUIRE(d.rest);
  CHECK(d.rest->endpoint == "https://eodhd.com/api");
  CHECK(d.targets == std::vector<Target>{Target::Volatility});
  CHECK(d.log_volatility);
  CHECK(d.cov_denominator == CovDenominator::SampleSize);
  CHECK(d.lag_search);
  CHECK(d.divisor == DirectionalDivisor::AssetCount);
  CHECK(d.input_mode == InputMode::Covariance);
  CHECK_NOTHROW(validate(d, 1));
}

TEST_CASE("config parsing: rejects unknown keys and malformed values") {
  using nlohmann::json;
  CHECK_THROWS_AS(parse_run_config(json{{"source", {{"csv", "p"}}}, {"horizn", 3}}), ConfigError);
  CHECK_THROWS_AS(parse_run_config(json{{"source", {{"csv", "p"}}}, {"rolling", {{"windw", 3}}}}), ConfigError);
  CHECK_THROWS_AS(parse_run_config(json::object()), ConfigError);
  CHECK_THROWS_AS(parse_run_config(json{{"source", {{"csv", "p"}, {"rest", json::object()}}}}), ConfigError);
  CHECK_THROWS_AS(parse_run_config(json{{"source", {{"csv", "p"}}}, {"horizon", "ten"}}), ConfigError);
  CHECK_THROWS_AS(parse_run_config(json{{"source", {{"csv", "p"}}}, {"mode", "fancy"}}), ConfigError);
  CHECK_THROWS_AS(parse_run_config(json{{"source", {{"csv", "p"}}}, {"target", "prices"}}), ConfigError);
  CHECK_THROWS_AS(parse_run_config(json{{"source", {{"csv", "p"}}}, {"directional_divisor", "n"}}), ConfigError);
}

TEST_CASE("validation rejects downstream precondition violations") {
  TempDir dir;
  testing::write_file(dir / "p.csv", "date,A\n");
  const auto base = parse_run_config(nlohmann::json{{"source", {{"csv", "p.csv"}}}}, dir.path());
  CHECK_NOTHROW(validate(base, 3));

  auto c = base;
  c.csv_path = dir / "absent.csv";
  CHECK_THROWS_AS(validate(c), ConfigError);
  const auto expect_reject = [&](auto mutate) {
    auto bad = base;
    mutate(bad);
    CHECK_THROWS_AS(validate(bad, 3), ConfigError);
  };
  expect_reject([](RunConfig& r) { r.horizon = 0; });
  expect_reject([](RunConfig& r) { r.var_lag = 0; });
  expect_reject([](RunConfig& r) { r.rolling_step = 0; });
  expect_reject([](RunConfig& r) { r.rolling_window = 5; });  // must exceed 3 + 1 + 1
  expect_reject([](RunConfig& r) { r.alpha = 0.0; });
  expect_reject([](RunConfig& r) { r.alpha = 1.5; });
  expect_reject([](RunConfig& r) { r.eig_floor = 0.0; });
  expect_reject([](RunConfig& r) { r.volatility_window = 1; });
  expect_reject([](RunConfig& r) { r.hidden = {4, 0}; });
  expect_reject([](RunConfig& r) { r.train.learning_rate = -1.0; });
  expect_reject([](RunConfig& r) { r.train.batch_size = 0; });
  expect_reject([](RunConfig& r) { r.train.momentum = 1.0; });
  expect_reject([](RunConfig& r) { r.labels = {"a", "b"}; });
  expect_reject([](RunConfig& r) { r.table_decimals = -1; });
  auto lagged = base;
  lagged.lag_search = true;
  lagged.max_lag = 60;  // 3 * 60 + 60 + 1 >= 200
  CHECK_THROWS_AS(validate(lagged, 3), ConfigError);

  RunConfig rest;
  rest.rest = RestSource{};
  rest.rest->from = "2020-01-01";
  rest.rest->to = "2020-02-01";
  CHECK_THROWS_AS(validate(rest), ConfigError);  // no symbols
  rest.rest->symbols = {"A"};
  CHECK_NOTHROW(validate(rest));
  rest.rest->to = "2019-12-31";
  CHECK_THROWS_AS(validate(rest), ConfigError);
}

TEST_CASE("ingest writes four outputs with matching asset sets and sidecars") {
  TempDir dir;
  const auto config = testing::write_fixture(dir, testing::base_config("prices.csv", "out"));
  const auto o = run_cli({"ingest", "--config", config.string()});
  REQUIRE_MESSAGE(o.code == 0, o.err);
  for (const char* name : {"panel_returns.csv", "panel_volatility.csv", "stats_returns.csv", "stats_volatility.csv"}) {
    CAPTURE(name);
    REQUIRE(std::filesystem::exists(dir / "out" / name));
    const auto meta = nlohmann::json::parse(testing::read_file(dir / "out" / (std::string(name) + ".meta.json")));
    CHECK(meta.at("command") == "ingest");
    CHECK(meta.at("config").at("labels") == nlohmann::json({"Alpha", "Beta", "Gamma"}));
    CHECK(meta.contains("generated_at"));
    CHECK(meta.contains("simd_backend"));
  }
  const auto returns = load_csv(dir / "out" / "panel_returns.csv");
  const auto vol = load_csv(dir / "out" / "panel_volatility.csv");
  CHECK(returns.assets == std::vector<std::string>{"Alpha", "Beta", "Gamma"});
  CHECK(vol.assets == returns.assets);
  CHECK(returns.rows() == 399);
  CHECK(vol.rows() == 399 - 19);
  const std::string stats = testing::read_file(dir / "out" / "stats_returns.csv");
  CHECK(stats.find("Alpha,399,") != std::string::npos);
  CHECK_FALSE(std::filesystem::exists(dir / "out" / ".spillover.lock"));

  std::ostringstream printed;
  cmd_stats(load_run_config(config), printed);
  CHECK(printed.str().find("# volatility") != std::string::npos);
}

TEST_CASE("full pipeline writes tables, series, models and provenance") {
  TempDir dir;
  const auto config = testing::write_fixture(dir, testing::base_config("prices.csv", "out"));
  const auto o = run_pipeline(config);
  REQUIRE_MESSAGE(o.code == 0, o.err);
  const auto out = dir / "out";
  for (const char* t : {"returns", "volatility"}) {
    CAPTURE(t);
    CHECK(std::filesystem::exists(out / ("denoiser_" + std::string(t) + ".json")));
    CHECK(std::filesystem::exists(out / ("training_curve_" + std::string(t) + ".csv")));
    for (const char* m : {"traditional", "denoised"}) {
      const auto table = out / ("static_" + std::string(t) + "_" + m + ".csv");
      const auto series = out / ("rolling_" + std::string(t) + "_" + m + ".csv");
      REQUIRE(std::filesystem::exists(table));
      REQUIRE(std::filesystem::exists(series));
      const std::string text = testing::read_file(table);
      CHECK(text.rfind(",Alpha,Beta,Gamma,FROM,NET\n", 0) == 0);
      CHECK(text.find("\nTO others,") != std::string::npos);
      const auto meta = nlohmann::json::parse(testing::read_file(table.string() + ".meta.json"));
      CHECK(meta.at("var_model").contains("fit_timestamp"));
      CHECK(meta.at("mode") == m);
      if (std::string(m) == "denoised") CHECK(meta.at("model_hash").get<std::string>().size() == 16);
      const auto rolling_meta = nlohmann::json::parse(testing::read_file(series.string() + ".meta.json"));
      CHECK(rolling_meta.at("windows") == (std::string(t) == "returns" ? 19 : 18));
    }
  }
  const auto model_meta = nlohmann::json::parse(testing::read_file(out / "denoiser_returns.json.meta.json"));
  CHECK(model_meta.at("model_hash") == fnv1a_hex(testing::read_file(out / "denoiser_returns.json")));
}

TEST_CASE("end-to-end runs are byte-identical apart from sidecars") {
  TempDir dir;
  auto cfg = testing::base_config("prices.csv", "run_a");
  const auto config = testing::write_fixture(dir, cfg);
  REQUIRE(run_pipeline(config).code == 0);
  REQUIRE(run_pipeline(config, {"--out", (dir / "run_b").string()}).code == 0);
  const auto a = artifacts(dir / "run_a");
  const auto b = artifacts(dir / "run_b");
  CHECK(a.size() == 16);  // 4 ingest + 4 train + 4 static + 4 rolling
  CHECK(a == b);

  REQUIRE(run_cli({"train", "--config", config.string(), "--out", (dir / "run_b").string(), "--seed", "7"}).code == 0);
  CHECK(testing::read_file(dir / "run_a" / "denoiser_returns.json") !=
        testing::read_file(dir / "run_b" / "denoiser_returns.json"));
}

TEST_CASE("train with zero epochs persists the initialized model") {
  TempDir dir;
  auto cfg = testing::base_config("prices.csv", "out");
  cfg["denoiser"]["epochs"] = 0;
  cfg["target"] = "returns";
  const auto config = testing::write_fixture(dir, cfg);
  REQUIRE(run_cli({"ingest", "--config", config.string()}).code == 0);
  REQUIRE(run_cli({"train", "--config", config.string()}).code == 0);
  const auto model = denoiser_from_json(nlohmann::json::parse(testing::read_file(dir / "out" / "denoiser_returns.json")));
  DenoiserSpec spec;
  spec.n_assets = 3;
  spec.hidden = {6};
  const auto fresh = make_denoiser(spec);
  for (std::size_t l = 0; l < fresh.layers.size(); ++l) CHECK(model.layers[l].weights == fresh.layers[l].weights);
  CHECK(testing::read_file(dir / "out" / "training_curve_returns.csv").find("\n0,") != std::string::npos);
}

TEST_CASE("train with too few windows reports an actionable error") {
  TempDir dir;
  auto cfg = testing::base_config("prices.csv", "out");
  cfg["denoiser"]["step"] = 20;
  const auto config = testing::write_fixture(dir, cfg);
  REQUIRE(run_cli({"ingest", "--config", config.string()}).code == 0);
  const auto o = run_cli({"train", "--config", config.string()});
  CHECK(o.code == 1);
  CHECK(o.err.find("batch_size") != std::string::npos);
}

TEST_CASE("exit codes and command-order errors") {
  TempDir dir;
  const auto config = testing::write_fixture(dir, testing::base_config("prices.csv", "out"));
  CHECK(run_cli({}).code == 2);
  CHECK(run_cli({"static"}).code == 2);
  CHECK(run_cli({"bogus", "--config", config.string()}).code == 2);
  CHECK(run_cli({"static", "--config", config.string(), "--mode", "sideways"}).code == 2);
  CHECK(run_cli({"static", "--config", (dir / "none.json").string()}).code == 1);
  const auto early = run_cli({"static", "--config", config.string()});
  CHECK(early.code == 1);
  CHECK(early.err.find("run `spillover ingest` first") != std::string::npos);
  REQUIRE(run_cli({"ingest", "--config", config.string()}).code == 0);
  const auto no_model = run_cli({"static", "--config", config.string(), "--mode", "denoised"});
  CHECK(no_model.code == 1);
  CHECK(no_model.err.find("spillover train") != std::string::npos);
  const auto trad = run_cli({"static", "--config", config.string(), "--mode", "traditional"});
  CHECK(trad.code == 0);
  CHECK(trad.out.find("static_returns_traditional.csv") != std::string::npos);
  CHECK(run_cli({"--help"}).code == 0);

  testing::write_file(dir / "bad.json", "{\"source\": {\"csv\": \"prices.csv\"}, \"extra\": 1}");
  const auto bad = run_cli({"ingest", "--config", (dir / "bad.json").string()});
  CHECK(bad.code == 1);
  CHECK(bad.err.find("unknown key 'extra'") != std::string::npos);
}

TEST_CASE("a held lock file blocks a second run") {
  TempDir dir;
  const auto config = testing::write_fixture(dir, testing::base_config("prices.csv", "out"));
  std::filesystem::create_directories(dir / "out");
  testing::write_file(dir / "out" / ".spillover.lock", "12345\n");
  const auto o = run_cli({"ingest", "--config", config.string()});
  CHECK(o.code == 1);
  CHECK(o.err.find("locked") != std::string::npos);
}
