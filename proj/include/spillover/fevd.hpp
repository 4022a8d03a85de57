#pragma once
// Generalized forecast-error variance decomposition and the spillover
// measures built from it (total, directional FROM / TO, net).

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "spillover/var.hpp"

namespace spillover {

// Symmetric (1e-10) covariance with strictly positive diagonal.
class CovMatrix {
 public:
  // Throws DataError if the invariants do not hold. Empty labels are
  // replaced by x1..xN.
  explicit CovMatrix(Eigen::MatrixXd matrix, std::vector<std::string> labels = {});

  const Eigen::MatrixXd& matrix() const { return matrix_; }
  const std::vector<std::string>& labels() const { return labels_; }
  Eigen::Index size() const { return matrix_.rows(); }

 private:
  Eigen::MatrixXd matrix_;
  std::vector<std::string> labels_;
};

struct RawFevd {
  Eigen::MatrixXd theta;  // theta(i, j): share of i's forecast error variance due to shocks in j
  int horizon = 0;
};

struct NormalizedFevd {
  Eigen::MatrixXd theta_bar;  // rows sum to 1
};

// theta_ij = sigma_jj^-1 sum_{h<H} (A_h Sigma)_ij^2 / sum_{h<H} (A_h Sigma A_h')_ii
RawFevd generalized_fevd(const MaCoefficients& ma, const CovMatrix& sigma, int horizon);

NormalizedFevd normalize(const RawFevd& raw);

// 100 * (sum of off-diagonal theta_bar) / N
double total_spillover(const NormalizedFevd& norm);

enum class DirectionalDivisor {
  AssetCount,  // off-diagonal sums / N * 100; sum(FROM) equals the total index
  RowSum,      // off-diagonal sums / (row sum = 1) * 100; mean(FROM) equals the total index
};

struct Directional {
  Eigen::VectorXd from_others;
  Eigen::VectorXd to_others;
};

Directional directional(const NormalizedFevd& norm,
                        DirectionalDivisor divisor = DirectionalDivisor::RowSum);

// to - from
Eigen::VectorXd net(const Eigen::VectorXd& from_others, const Eigen::VectorXd& to_others);

struct SpilloverTable {
  std::vector<std::string> labels;
  Eigen::MatrixXd pairwise;  // 100 * theta_bar, diagonal included
  Eigen::VectorXd from_others;
  Eigen::VectorXd to_others;
  Eigen::VectorXd net;
  double total_index = 0.0;
};

SpilloverTable build_table(const NormalizedFevd& norm, const std::vector<std::string>& labels,
                           DirectionalDivisor divisor = DirectionalDivisor::RowSum);

// Pairwise block, then FROM and NET columns; final "TO others" row whose FROM
// cell carries the column total of TO.
std::string table_to_csv(const SpilloverTable& table, int decimals = 2);

// VAR -> MA(H) -> GFEVD -> table, with `sigma` standing in for the residual
// covariance (pass the VAR's own covariance for the traditional index).
SpilloverTable spillover_table(const VarModel& model, const CovMatrix& sigma, int horizon,
                               DirectionalDivisor divisor = DirectionalDivisor::RowSum);

}  // namespace spillover
