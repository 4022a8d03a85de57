#pragma once
// Vector autoregression by per-equation least squares, stability check, and
// moving-average coefficients.

#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "spillover/ingest.hpp"

namespace spillover {

enum class CovDenominator {
  DegreesOfFreedom,  // T_eff - N p - 1
  SampleSize,        // T_eff
};

struct VarOptions {
  int lag = 1;
  CovDenominator denominator = CovDenominator::DegreesOfFreedom;
};

struct VarModel {
  std::vector<std::string> assets;
  int n_vars = 0;
  int lag_order = 0;
  Eigen::VectorXd intercept;
  std::vector<Eigen::MatrixXd> coefficients;  // phi_1 .. phi_p, each N x N
  Eigen::MatrixXd residuals;                  // T_eff x N
  Eigen::MatrixXd residual_cov;               // N x N
  std::vector<std::string> warnings;
};

// Fits x_t = c + sum_i phi_i x_{t-i} + e_t with an intercept. Requires
// rows > N p + p + 1 and no constant column. A numerically singular Gram
// matrix gets a 1e-8 * trace / N ridge and a warning; collinear series
// (singular residual covariance) are rejected with EstimationError.
VarModel fit_var(const SeriesPanel& panel, const VarOptions& options = {});
VarModel fit_var(const Eigen::MatrixXd& data, const VarOptions& options = {},
                 std::vector<std::string> assets = {});

struct Stability {
  bool stable = false;
  double spectral_radius = 0.0;
};

// Eigenvalues of the Np x Np companion matrix; stable iff all moduli < 1 - 1e-10.
Stability is_stable(std::span<const Eigen::MatrixXd> coefficients);
inline Stability is_stable(const VarModel& model) { return is_stable(model.coefficients); }

// Lag in [1, max_lag] minimising AIC = ln det(Sigma_ml) + 2 k / T over a common
// estimation sample.
int select_lag_aic(const SeriesPanel& panel, int max_lag = 4);

struct MaCoefficients {
  int horizon = 0;
  std::vector<Eigen::MatrixXd> matrices;  // A_0 .. A_{H-1}
};

// A_0 = I, A_i = sum_{j=1..p} A_{i-j} phi_j with A_k = 0 for k < 0.
MaCoefficients ma_coefficients(std::span<const Eigen::MatrixXd> coefficients, int horizon);
inline MaCoefficients ma_coefficients(const VarModel& model, int horizon) {
  return ma_coefficients(model.coefficients, horizon);
}

// Persistence. Matrices are stored row-major; residuals are not persisted.
nlohmann::json to_json(const VarModel& model,
                       const std::optional<std::string>& fit_timestamp = std::nullopt);
VarModel var_model_from_json(const nlohmann::json& doc);

}  // namespace spillover
