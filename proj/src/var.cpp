#include "spillover/var.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

#include <Eigen/Eigenvalues>

#include "spillover/error.hpp"

namespace spillover {
namespace {

constexpr double kSingularRcond = 1e-12;
constexpr double kRidgeScale = 1e-8;
constexpr double kCollinearEigen = 1e-10;

// Rows t = p .. T-1 of [1, x_{t-1}, ..., x_{t-p}].
Eigen::MatrixXd lagged_design(const Eigen::MatrixXd& data, int lag) {
  const Eigen::Index t_eff = data.rows() - lag;
  const Eigen::Index n = data.cols();
  Eigen::MatrixXd x(t_eff, 1 + n * lag);
  x.col(0).setOnes();
  for (int j = 1; j <= lag; ++j) {
    x.middleCols(1 + (j - 1) * n, n) = data.middleRows(lag - j, t_eff);
  }
  return x;
}

void require_fit_preconditions(const Eigen::MatrixXd& data, int lag,
                               const std::vector<std::string>& assets) {
  const Eigen::Index n = data.cols();
  if (lag < 1) throw EstimationError("VAR lag order must be at least 1");
  if (n < 1) throw EstimationError("VAR needs at least one series");
  if (data.rows() <= n * lag + lag + 1) {
    throw EstimationError("too few observations for VAR(" + std::to_string(lag) + ") on " +
                          std::to_string(n) + " series: have " + std::to_string(data.rows()) +
                          ", need more than " + std::to_string(n * lag + lag + 1));
  }
  if (!data.array().isFinite().all()) throw EstimationError("VAR input contains non-finite values");
  for (Eigen::Index c = 0; c < n; ++c) {
    const double lo = data.col(c).minCoeff();
    const double hi = data.col(c).maxCoeff();
    if (hi - lo <= 1e-14 * std::max(1.0, std::abs(hi))) {
      const std::string name = static_cast<std::size_t>(c) < assets.size()
                                   ? assets[static_cast<std::size_t>(c)]
                                   : "column " + std::to_string(c);
      throw EstimationError("constant series (zero variance): " + name);
    }
  }
}

}  // namespace

VarModel fit_var(const SeriesPanel& panel, const VarOptions& options) {
  return fit_var(panel.values, options, panel.assets);
}

VarModel fit_var(const Eigen::MatrixXd& data, const VarOptions& options,
                 std::vector<std::string> assets) {
  const int p = options.lag;
  require_fit_preconditions(data, p, assets);
  const Eigen::Index n = data.cols();
  const Eigen::Index t_eff = data.rows() - p;

  const Eigen::MatrixXd x = lagged_design(data, p);
  const Eigen::MatrixXd y = data.bottomRows(t_eff);

  VarModel model;
  model.n_vars = static_cast<int>(n);
  model.lag_order = p;
  model.assets = assets.empty() ? std::vector<std::string>{} : std::move(assets);
  if (model.assets.empty()) {
    for (Eigen::Index c = 0; c < n; ++c) model.assets.push_back("x" + std::to_string(c + 1));
  }

  Eigen::MatrixXd gram = x.transpose() * x;
  const Eigen::VectorXd scale = gram.diagonal().cwiseSqrt().cwiseInverse();
  const Eigen::MatrixXd scaled = scale.asDiagonal() * gram * scale.asDiagonal();
  const Eigen::VectorXd ev = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(scaled, Eigen::EigenvaluesOnly).eigenvalues();
  const double rcond = ev.maxCoeff() > 0.0 ? ev.minCoeff() / ev.maxCoeff() : 0.0;

  Eigen::MatrixXd beta;  // (1 + N p) x N
  if (rcond > kSingularRcond) {
    beta = x.colPivHouseholderQr().solve(y);
  } else {
    const double delta = kRidgeScale * gram.trace() / static_cast<double>(n);
    gram.diagonal().array() += delta;
    beta = gram.ldlt().solve(x.transpose() * y);
    char msg[160];
    std::snprintf(msg, sizeof msg,
                  "regressor Gram matrix numerically singular (rcond %.3g); ridge %.3g added", rcond,
                  delta);
    model.warnings.emplace_back(msg);
  }

  model.intercept = beta.row(0).transpose();
  for (int j = 0; j < p; ++j) {
    model.coefficients.push_back(beta.middleRows(1 + j * n, n).transpose());
  }
  model.residuals = y - x * beta;

  const double denom = options.denominator == CovDenominator::DegreesOfFreedom
                           ? static_cast<double>(t_eff - n * p - 1)
                           : static_cast<double>(t_eff);
  Eigen::MatrixXd cov = model.residuals.transpose() * model.residuals / denom;
  model.residual_cov = 0.5 * (cov + cov.transpose());

  if (!model.residual_cov.allFinite()) throw NumericError("VAR residual covariance is not finite");
  const Eigen::VectorXd sd = model.residual_cov.diagonal().cwiseSqrt();
  if ((sd.array() <= 0.0).any()) {
    throw EstimationError("degenerate VAR: a residual variance is zero");
  }
  const Eigen::MatrixXd corr = sd.cwiseInverse().asDiagonal() * model.residual_cov * sd.cwiseInverse().asDiagonal();
  const double min_eig = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(corr, Eigen::EigenvaluesOnly).eigenvalues().minCoeff();
  if (min_eig < kCollinearEigen) {
    throw EstimationError("degenerate VAR: residual covariance is singular (collinear series)");
  }
  return model;
}

Stability is_stable(std::span<const Eigen::MatrixXd> coefficients) {
  if (coefficients.empty()) return {true, 0.0};
  const Eigen::Index n = coefficients.front().rows();
  const Eigen::Index p = static_cast<Eigen::Index>(coefficients.size());
  Eigen::MatrixXd companion = Eigen::MatrixXd::Zero(n * p, n * p);
  for (Eigen::Index j = 0; j < p; ++j) {
    companion.block(0, j * n, n, n) = coefficients[static_cast<std::size_t>(j)];
  }
  if (p > 1) companion.bottomLeftCorner(n * (p - 1), n * (p - 1)).setIdentity();
  const Eigen::VectorXcd ev = Eigen::EigenSolver<Eigen::MatrixXd>(companion, false).eigenvalues();
  const double radius = ev.cwiseAbs().maxCoeff();
  return {radius < 1.0 - 1e-10, radius};
}

int select_lag_aic(const SeriesPanel& panel, int max_lag) {
  if (max_lag < 1) throw EstimationError("max lag must be at least 1");
  const Eigen::Index n = panel.cols();
  int best = 1;
  double best_aic = std::numeric_limits<double>::infinity();
  for (int p = 1; p <= max_lag; ++p) {
    // Same effective sample for every candidate: drop max_lag - p leading rows.
    const Eigen::MatrixXd data = panel.values.bottomRows(panel.rows() - (max_lag - p));
    const VarModel m = fit_var(data, {p, CovDenominator::SampleSize}, panel.assets);
    const double t = static_cast<double>(m.residuals.rows());
    const double k = static_cast<double>(n * (n * p + 1));
    const double aic = std::log(m.residual_cov.determinant()) + 2.0 * k / t;
    if (aic < best_aic) {
      best_aic = aic;
      best = p;
    }
  }
  return best;
}

MaCoefficients ma_coefficients(std::span<const Eigen::MatrixXd> coefficients, int horizon) {
  if (horizon < 1) throw EstimationError("MA horizon must be at least 1");
  if (coefficients.empty()) throw EstimationError("MA recursion needs at least one lag matrix");
  const Eigen::Index n = coefficients.front().rows();
  const int p = static_cast<int>(coefficients.size());
  MaCoefficients ma;
  ma.horizon = horizon;
  ma.matrices.reserve(static_cast<std::size_t>(horizon));
  ma.matrices.push_back(Eigen::MatrixXd::Identity(n, n));
  for (int i = 1; i < horizon; ++i) {
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n, n);
    for (int j = 1; j <= std::min(i, p); ++j) {
      a.noalias() += ma.matrices[static_cast<std::size_t>(i - j)] * coefficients[static_cast<std::size_t>(j - 1)];
    }
    ma.matrices.push_back(std::move(a));
  }
  return ma;
}

namespace {

nlohmann::json matrix_json(const Eigen::MatrixXd& m) {
  std::vector<double> flat;
  flat.reserve(static_cast<std::size_t>(m.size()));
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) flat.push_back(m(r, c));
  }
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", flat}};
}

Eigen::MatrixXd matrix_from_json(const nlohmann::json& j) {
  const auto rows = j.at("rows").get<Eigen::Index>();
  const auto cols = j.at("cols").get<Eigen::Index>();
  const auto flat = j.at("data").get<std::vector<double>>();
  if (static_cast<Eigen::Index>(flat.size()) != rows * cols) {
    throw DataError("matrix JSON: data length does not match rows * cols");
  }
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = flat[static_cast<std::size_t>(r * cols + c)];
  }
  return m;
}

}  // namespace

nlohmann::json to_json(const VarModel& model, const std::optional<std::string>& fit_timestamp) {
  nlohmann::json doc;
  doc["kind"] = "var_model";
  doc["n_vars"] = model.n_vars;
  doc["lag_order"] = model.lag_order;
  doc["assets"] = model.assets;
  doc["intercept"] = std::vector<double>(model.intercept.data(), model.intercept.data() + model.intercept.size());
  doc["coefficients"] = nlohmann::json::array();
  for (const auto& phi : model.coefficients) doc["coefficients"].push_back(matrix_json(phi));
  doc["residual_cov"] = matrix_json(model.residual_cov);
  doc["n_residuals"] = model.residuals.rows();
  doc["warnings"] = model.warnings;
  if (fit_timestamp) doc["fit_timestamp"] = *fit_timestamp;
  return doc;
}

VarModel var_model_from_json(const nlohmann::json& doc) {
  VarModel model;
  model.n_vars = doc.at("n_vars").get<int>();
  model.lag_order = doc.at("lag_order").get<int>();
  model.assets = doc.at("assets").get<std::vector<std::string>>();
  const auto c = doc.at("intercept").get<std::vector<double>>();
  model.intercept = Eigen::Map<const Eigen::VectorXd>(c.data(), static_cast<Eigen::Index>(c.size()));
  for (const auto& phi : doc.at("coefficients")) model.coefficients.push_back(matrix_from_json(phi));
  model.residual_cov = matrix_from_json(doc.at("residual_cov"));
  if (doc.contains("warnings")) model.warnings = doc["warnings"].get<std::vector<std::string>>();
  if (static_cast<int>(model.coefficients.size()) != model.lag_order ||
      model.residual_cov.rows() != model.n_vars ||
      static_cast<int>(model.intercept.size()) != model.n_vars) {
    throw DataError("VAR model JSON is inconsistent with its declared shape");
  }
  return model;
}

}  // namespace spillover
