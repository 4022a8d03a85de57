#include <doctest.h>

#include <cmath>
#include <random>

#include "oracles/activation_oracle.hpp"
#include "spillover/error.hpp"
#include "spillover/denoiser.hpp"
#include "support/gradient_check.hpp"
#include "support/synthetic.hpp"

using namespace spillover;

namespace {

double max_abs(const Eigen::MatrixXd& m) { return m.cwiseAbs().maxCoeff(); }

double min_eigenvalue(const Eigen::MatrixXd& m) {
  return Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(m, Eigen::EigenvaluesOnly).eigenvalues().minCoeff();
}

// Perturbs every parameter so tests do not depend on the zero-bias, unit-gain
// initialization.
void jitter(DenoiserModel& model, std::mt19937_64& rng, double scale) {
  std::normal_distribution<double> z(0.0, scale);
  for (auto& layer : model.layers) {
    for (double& w : layer.weights) w += z(rng);
    for (double& b : layer.bias) b += z(rng);
    for (double& g : layer.gain) g += z(rng);
    for (double& s : layer.shift) s += z(rng);
  }
}

std::vector<Eigen::MatrixXd> noisy_windows(std::mt19937_64& rng, const Eigen::MatrixXd& truth, int count,
                                           int rows) {
  const Eigen::MatrixXd chol = truth.llt().matrixL();
  std::vector<Eigen::MatrixXd> out;
  for (int k = 0; k < count; ++k) {
    out.push_back(synth::sample_covariance(synth::gaussian(rng, rows, truth.rows()) * chol.transpose()));
  }
  return out;
}

}  // namespace

TEST_CASE("GELU matches x Phi(x) from a 50-digit reference") {
  double worst = 0.0;
  double worst_derivative = 0.0;
  for (int k = 0; k < 1000; ++k) {
    const double x = -10.0 + 20.0 * k / 999.0;
    worst = std::max(worst, std::abs(gelu(x) - oracle::gelu(x)));
    worst_derivative = std::max(worst_derivative, std::abs(gelu_derivative(x) - oracle::gelu_derivative(x)));
  }
  CHECK(worst <= 1e-12);
  CHECK(worst_derivative <= 1e-12);
  CHECK(gelu(0.0) == 0.0);
  CHECK(gelu_derivative(0.0) == doctest::Approx(0.5));
}

TEST_CASE("LayerNorm pre-affine output has zero mean and unit variance") {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> offset(-50.0, 50.0);
  std::uniform_real_distribution<double> spread(0.1, 20.0);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t d = 2 + trial % 40;
    std::normal_distribution<double> z(offset(rng), spread(rng));
    std::vector<double> x(d), gain(d), shift(d), out(d), normalized(d);
    for (auto& v : x) v = z(rng);
    for (auto& g : gain) g = z(rng);
    for (auto& s : shift) s = z(rng);
    layer_norm(x, gain, shift, out, normalized);
    CHECK(std::abs(oracle::mean(normalized)) <= 1e-10);
    CHECK(std::abs(oracle::population_variance(normalized) - 1.0) <= 1e-10);
    for (std::size_t i = 0; i < d; ++i) CHECK(out[i] == doctest::Approx(gain[i] * normalized[i] + shift[i]));
  }
  std::vector<double> x(3), y(2);
  CHECK_THROWS_AS(layer_norm(x, x, x, y), DataError);
}

TEST_CASE("LayerNorm applies the variance floor to near-constant inputs") {
  const std::vector<double> gain{2.0, 2.0, 2.0}, shift{0.5, -1.0, 3.0};
  std::vector<double> out(3), z(3);

  const std::vector<double> flat{4.0, 4.0, 4.0};
  const double inv_flat = layer_norm(flat, gain, shift, out, z);
  CHECK(inv_flat == doctest::Approx(1.0 / std::sqrt(kLayerNormEpsilon)));
  for (std::size_t i = 0; i < 3; ++i) CHECK(out[i] == doctest::Approx(shift[i]));

  // Just above the floor the normalized values still have unit variance.
  const double s = 2e-6;
  const std::vector<double> small{1.0 - s, 1.0, 1.0 + s};
  layer_norm(small, gain, shift, out, z);
  const double var = (z[0] * z[0] + z[1] * z[1] + z[2] * z[2]) / 3.0;
  CHECK(std::abs(var - 1.0) < 1e-9);
}

TEST_CASE("vectorize is row-major and devectorize inverts it") {
  Eigen::MatrixXd m(2, 2);
  m << 1, 2, 3, 4;
  const Eigen::VectorXd v = vectorize(m);
  CHECK(v == (Eigen::VectorXd(4) << 1, 2, 3, 4).finished());
  CHECK(devectorize(v) == m);
  const Eigen::VectorXd id = vectorize(Eigen::MatrixXd::Identity(3, 3));
  for (Eigen::Index k = 0; k < 9; ++k) CHECK(id(k) == (k % 4 == 0 ? 1.0 : 0.0));
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const Eigen::MatrixXd r = synth::gaussian(rng, 5, 5);
    CHECK(devectorize(vectorize(r)) == r);
  }
  CHECK_THROWS_AS(devectorize(Eigen::VectorXd(5)), DataError);
}

TEST_CASE("psd_project examples") {
  std::mt19937_64 rng(4);
  const Eigen::MatrixXd spd = synth::random_spd(rng, 4);
  CHECK(max_abs(psd_project(spd, 1e-6) - spd) <= 1e-10);

  Eigen::MatrixXd d = Eigen::MatrixXd::Zero(2, 2);
  d.diagonal() << 1, -0.5;
  Eigen::MatrixXd expected = Eigen::MatrixXd::Zero(2, 2);
  expected.diagonal() << 1, 1e-6;
  CHECK(max_abs(psd_project(d, 1e-6) - expected) <= 1e-14);

  CHECK(max_abs(psd_project(Eigen::MatrixXd::Zero(3, 3), 1e-6) - 1e-6 * Eigen::MatrixXd::Identity(3, 3)) <= 1e-15);

  for (int trial = 0; trial < 100; ++trial) {
    const Eigen::MatrixXd g = synth::gaussian(rng, 5, 5);
    const Eigen::MatrixXd p = psd_project(g, 1e-3);
    CHECK(max_abs(p - p.transpose()) == 0.0);
    CHECK(min_eigenvalue(p) >= 1e-3 - 1e-12);
  }
}

TEST_CASE("forward: structural guarantees on random weights and inputs") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    DenoiserSpec spec;
    spec.n_assets = 2 + trial % 4;
    spec.hidden = trial % 2 ? std::vector<int>{7} : std::vector<int>{6, 5, 4};
    spec.residual_weight = 0.1 + 0.8 * (trial % 7) / 6.0;
    spec.eig_floor = 1e-4;
    spec.input_mode = InputMode::Covariance;
    spec.seed = static_cast<std::uint64_t>(trial);
    DenoiserModel model = make_denoiser(spec);
    jitter(model, rng, 0.5);
    const Eigen::MatrixXd s = synth::gaussian(rng, spec.n_assets, spec.n_assets) * 3.0;
    const Eigen::MatrixXd out = forward(model, s);
    CHECK(max_abs(out - out.transpose()) <= 1e-12);
    CHECK(min_eigenvalue(out) >= spec.eig_floor - 1e-12);
  }
}

TEST_CASE("forward: zero network contributes nothing") {
  DenoiserSpec spec;
  spec.n_assets = 3;
  spec.input_mode = InputMode::Covariance;
  DenoiserModel model = make_denoiser(spec);
  for (auto& layer : model.layers) std::fill(layer.weights.begin(), layer.weights.end(), 0.0);
  std::mt19937_64 rng(6);
  const Eigen::MatrixXd s = synth::random_spd(rng, 3);
  CHECK(max_abs(forward(model, s) - psd_project(0.5 * s, model.eig_floor)) <= 1e-14);
}

TEST_CASE("forward: pass-through returns symmetric PSD input unchanged") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    DenoiserSpec spec;
    spec.n_assets = 2 + trial % 4;
    spec.residual_weight = 1.0;
    spec.seed = static_cast<std::uint64_t>(100 + trial);
    DenoiserModel model = make_denoiser(spec);
    jitter(model, rng, 1.0);
    CHECK(model.pass_through());
    const Eigen::MatrixXd s = synth::random_spd(rng, spec.n_assets);
    CHECK(max_abs(forward(model, s) - s) <= 1e-12);
    const CovMatrix cov(s);
    CHECK(max_abs(denoise(model, cov).matrix() - s) <= 1e-12);
  }
}

TEST_CASE("forward: shape errors and non-finite activations") {
  DenoiserSpec spec;
  spec.n_assets = 2;
  DenoiserModel model = make_denoiser(spec);
  CHECK_THROWS_AS(forward(model, Eigen::MatrixXd::Identity(3, 3)), DataError);
  model.layers[0].weights[0] = std::numeric_limits<double>::infinity();
  try {
    forward(model, Eigen::MatrixXd::Identity(2, 2));
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("layer 1") != std::string::npos);
  }
}

TEST_CASE("make_denoiser: layer layout and seeded initialization") {
  DenoiserSpec spec;
  spec.n_assets = 3;
  spec.hidden = {8, 6, 5};
  const auto a = make_denoiser(spec);
  CHECK(a.layer_dims == std::vector<int>{9, 8, 6, 5, 9});
  REQUIRE(a.layers.size() == 4);
  CHECK(a.layers[0].activation == Activation::Gelu);
  CHECK(a.layers[1].activation == Activation::LayerNorm);
  CHECK(a.layers[2].activation == Activation::Gelu);
  CHECK(a.layers[3].activation == Activation::Identity);
  CHECK(a.layers[1].gain == std::vector<double>(6, 1.0));
  const double limit = std::sqrt(6.0 / (9 + 8));
  for (double w : a.layers[0].weights) CHECK(std::abs(w) <= limit);
  CHECK(make_denoiser(spec).layers[2].weights == a.layers[2].weights);
  spec.seed = 43;
  CHECK(make_denoiser(spec).layers[2].weights != a.layers[2].weights);

  DenoiserSpec dflt;
  dflt.n_assets = 4;
  CHECK(make_denoiser(dflt).layer_dims == std::vector<int>{16, 16, 16});
  dflt.residual_weight = 0.0;
  CHECK_THROWS_AS(make_denoiser(dflt), ConfigError);
  dflt.residual_weight = 0.5;
  dflt.eig_floor = 0.0;
  CHECK_THROWS_AS(make_denoiser(dflt), ConfigError);
}

TEST_CASE("structure loss examples") {
  Eigen::MatrixXd s(2, 2);
  s << 1, 0.2, 0.2, 1;
  CHECK(structure_loss(s, s, 1.0, 1.0) == 0.0);
  Eigen::MatrixXd e(2, 2);
  e << 0.1, -0.3, 0.2, 0.4;
  const double full = e.squaredNorm();
  const double off = 0.3 * 0.3 + 0.2 * 0.2;
  CHECK(structure_loss(s + e, s, 2.0, 3.0) == doctest::Approx(2.0 * full + 3.0 * off).epsilon(1e-14));
  Eigen::MatrixXd diag = Eigen::MatrixXd::Zero(2, 2);
  diag.diagonal() << 0.5, -0.25;
  CHECK(structure_loss(s + diag, s, 1.5, 7.0) == doctest::Approx(1.5 * diag.squaredNorm()).epsilon(1e-15));
}

TEST_CASE("loss is the batch mean of the structure loss on the unprojected output") {
  std::mt19937_64 rng(8);
  DenoiserSpec spec;
  spec.n_assets = 3;
  spec.input_mode = InputMode::Covariance;
  DenoiserModel model = make_denoiser(spec);
  jitter(model, rng, 0.2);
  std::vector<Eigen::MatrixXd> batch{synth::random_spd(rng, 3), synth::random_spd(rng, 3)};
  const double expected = 0.5 * (structure_loss(forward_unprojected(model, batch[0]), batch[0], 1.0, 2.0) +
                                 structure_loss(forward_unprojected(model, batch[1]), batch[1], 1.0, 2.0));
  CHECK(loss(model, batch, 1.0, 2.0) == doctest::Approx(expected).epsilon(1e-14));
  Gradients g;
  CHECK(loss_and_gradient(model, batch, 1.0, 2.0, g) == doctest::Approx(expected).epsilon(1e-14));
}

TEST_CASE("analytic gradients match central finite differences") {
  std::mt19937_64 rng(9);
  for (const auto& hidden : {std::vector<int>{5}, std::vector<int>{6, 4}, std::vector<int>{5, 6, 4}}) {
    DenoiserSpec spec;
    spec.n_assets = 3;
    spec.hidden = hidden;
    spec.input_mode = InputMode::Covariance;
    spec.residual_weight = 0.3;
    DenoiserModel model = make_denoiser(spec);
    jitter(model, rng, 0.3);
    std::vector<Eigen::MatrixXd> batch;
    for (int k = 0; k < 4; ++k) batch.push_back(synth::random_spd(rng, 3));
    const auto reports = gradcheck::run(model, batch, 1.0, 0.7);
    for (const auto& r : reports) {
      CAPTURE(r.group);
      CAPTURE(hidden.size());
      if (r.group == "gain" || r.group == "shift") {
        CHECK((r.checked > 0) == (hidden.size() >= 2));
      } else {
        CHECK(r.checked > 0);
      }
      CHECK(r.max_relative_error <= 1e-4);
    }
  }
}

TEST_CASE("rolling covariance windows") {
  std::mt19937_64 rng(10);
  const auto panel = synth::make_panel(synth::gaussian(rng, 100, 3) * 2.0 + Eigen::MatrixXd::Constant(100, 3, 5.0));
  const auto set = rolling_cov_windows(panel, 30, 7);
  CHECK(set.matrices.size() == 11);
  CHECK(set.window_length == 30);
  CHECK(set.step == 7);
  Eigen::MatrixXd z = panel.values;
  for (Eigen::Index c = 0; c < 3; ++c) {
    const double m = z.col(c).mean();
    const double sd = std::sqrt((z.col(c).array() - m).square().sum() / 99.0);
    z.col(c) = (z.col(c).array() - m) / sd;
  }
  CHECK(max_abs(set.matrices[3] - synth::sample_covariance(z.middleRows(21, 30))) <= 1e-12);
  CHECK_THROWS_AS(rolling_cov_windows(panel, 101, 1), ConfigError);
  auto flat = panel;
  flat.values.col(1).setConstant(2.0);
  CHECK_THROWS_AS(rolling_cov_windows(flat, 30, 1), DataError);
}

TEST_CASE("training: zero epochs returns the initial model") {
  std::mt19937_64 rng(11);
  DenoiserSpec spec;
  spec.n_assets = 3;
  const DenoiserModel initial = make_denoiser(spec);
  CovWindowSet windows;
  windows.matrices = noisy_windows(rng, synth::planted_covariance(3), 80, 40);
  TrainConfig cfg;
  cfg.epochs = 0;
  const auto result = train(windows, cfg, initial);
  CHECK(result.best_epoch == 0);
  REQUIRE(result.curve.size() == 1);
  CHECK(result.curve[0].epoch == 0);
  for (std::size_t l = 0; l < initial.layers.size(); ++l) {
    CHECK(result.model.layers[l].weights == initial.layers[l].weights);
    CHECK(result.model.layers[l].bias == initial.layers[l].bias);
  }
  REQUIRE(result.model.trained_with);
  CHECK(result.model.trained_with->epochs == 0);
}

TEST_CASE("training: too few windows is a precondition error") {
  std::mt19937_64 rng(12);
  DenoiserSpec spec;
  spec.n_assets = 2;
  CovWindowSet windows;
  windows.matrices = noisy_windows(rng, Eigen::MatrixXd::Identity(2, 2), 63, 30);
  try {
    train(windows, TrainConfig{}, make_denoiser(spec));
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("64") != std::string::npos);
  }
  TrainConfig bad;
  bad.learning_rate = 0.0;
  windows.matrices.push_back(windows.matrices.front());
  CHECK_THROWS_AS(train(windows, bad, make_denoiser(spec)), ConfigError);
}

TEST_CASE("training: divergence aborts with diagnostics") {
  std::mt19937_64 rng(13);
  DenoiserSpec spec;
  spec.n_assets = 3;
  spec.input_mode = InputMode::Covariance;
  CovWindowSet windows;
  windows.matrices = noisy_windows(rng, 1e3 * synth::planted_covariance(3), 80, 40);
  TrainConfig cfg;
  cfg.learning_rate = 10.0;
  cfg.epochs = 200;
  cfg.early_stop_patience = 200;
  try {
    train(windows, cfg, make_denoiser(spec));
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("diverged at epoch") != std::string::npos);
  }
}

TEST_CASE("training: fixed seed is deterministic") {
  std::mt19937_64 rng(14);
  DenoiserSpec spec;
  spec.n_assets = 3;
  spec.hidden = {4};
  CovWindowSet windows;
  windows.matrices = noisy_windows(rng, synth::planted_covariance(3), 100, 40);
  TrainConfig cfg;
  cfg.epochs = 15;
  const auto a = train(windows, cfg, make_denoiser(spec));
  const auto b = train(windows, cfg, make_denoiser(spec));
  CHECK(to_json(a.model).dump() == to_json(b.model).dump());
  CHECK(training_curve_csv(a.curve) == training_curve_csv(b.curve));
  cfg.seed = 7;
  const auto c = train(windows, cfg, make_denoiser(spec));
  CHECK(training_curve_csv(a.curve) != training_curve_csv(c.curve));
}

TEST_CASE("training: identical windows give a non-increasing holdout curve up to the best epoch") {
  std::mt19937_64 rng(15);
  const Eigen::MatrixXd s = synth::random_spd(rng, 3);
  CovWindowSet windows;
  windows.matrices.assign(80, s);
  DenoiserSpec spec;
  spec.n_assets = 3;
  spec.input_mode = InputMode::Covariance;
  TrainConfig cfg;
  cfg.epochs = 60;
  const auto result = train(windows, cfg, make_denoiser(spec));
  REQUIRE(result.best_epoch >= 1);
  for (int e = 2; e <= result.best_epoch; ++e) {
    CHECK(result.curve[static_cast<std::size_t>(e)].holdout_loss <=
          result.curve[static_cast<std::size_t>(e - 1)].holdout_loss);
  }
  CHECK(result.curve[static_cast<std::size_t>(result.best_epoch)].holdout_loss < result.curve[0].holdout_loss);
}

TEST_CASE("training: planted rank-one signal is recovered better than raw windows") {
  std::mt19937_64 rng(16);
  const Eigen::MatrixXd truth = synth::planted_covariance(5);
  CovWindowSet windows;
  windows.matrices = noisy_windows(rng, truth, 300, 40);
  DenoiserSpec spec;
  spec.n_assets = 5;
  spec.hidden = {4};
  spec.input_mode = InputMode::Covariance;
  const auto result = train(windows, TrainConfig{}, make_denoiser(spec));
  double raw = 0.0;
  double den = 0.0;
  for (const auto& s : windows.matrices) {
    raw += (s - truth).norm();
    den += (forward(result.model, s) - truth).norm();
  }
  MESSAGE("mean Frobenius distance raw=" << raw / 300 << " denoised=" << den / 300);
  CHECK(den < raw);
}

TEST_CASE("denoise in correlation mode keeps variances and labels") {
  std::mt19937_64 rng(17);
  DenoiserSpec spec;
  spec.n_assets = 4;
  DenoiserModel model = make_denoiser(spec);
  jitter(model, rng, 0.2);
  const CovMatrix sigma(synth::random_spd(rng, 4) * 1e-4, {"a", "b", "c", "d"});
  const CovMatrix out = denoise(model, sigma);
  CHECK(out.labels() == sigma.labels());
  CHECK(max_abs(out.matrix().diagonal() - sigma.matrix().diagonal()) == 0.0);
  CHECK(min_eigenvalue(out.matrix()) > 0.0);
}

TEST_CASE("denoiser JSON round trip") {
  std::mt19937_64 rng(18);
  DenoiserSpec spec;
  spec.n_assets = 3;
  spec.hidden = {5, 4};
  DenoiserModel model = make_denoiser(spec);
  jitter(model, rng, 0.3);
  model.trained_with = TrainConfig{};
  const auto back = denoiser_from_json(nlohmann::json::parse(to_json(model).dump()));
  CHECK(back.layer_dims == model.layer_dims);
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    CHECK(back.layers[l].weights == model.layers[l].weights);
    CHECK(back.layers[l].gain == model.layers[l].gain);
  }
  REQUIRE(back.trained_with);
  CHECK(back.trained_with->seed == 42);
  const Eigen::MatrixXd s = synth::random_spd(rng, 3);
  CHECK(forward(back, s) == forward(model, s));
  CHECK_THROWS_AS(denoiser_from_json(nlohmann::json{{"kind", "other"}}), DataError);
}
