#include "spillover/fevd.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include "spillover/error.hpp"

namespace spillover {

CovMatrix::CovMatrix(Eigen::MatrixXd matrix, std::vector<std::string> labels)
    : matrix_(std::move(matrix)), labels_(std::move(labels)) {
  if (matrix_.rows() != matrix_.cols() || matrix_.rows() == 0) {
    throw DataError("covariance matrix must be square and non-empty");
  }
  if (!matrix_.allFinite()) throw DataError("covariance matrix has non-finite entries");
  const double asym = (matrix_ - matrix_.transpose()).cwiseAbs().maxCoeff();
  if (asym > 1e-10) throw DataError("covariance matrix is not symmetric");
  if ((matrix_.diagonal().array() <= 0.0).any()) {
    throw DataError("covariance matrix has a non-positive diagonal entry");
  }
  if (labels_.empty()) {
    for (Eigen::Index i = 0; i < matrix_.rows(); ++i) labels_.push_back("x" + std::to_string(i + 1));
  }
  if (static_cast<Eigen::Index>(labels_.size()) != matrix_.rows()) {
    throw DataError("covariance labels do not match its dimension");
  }
}

RawFevd generalized_fevd(const MaCoefficients& ma, const CovMatrix& sigma, int horizon) {
  if (horizon < 1) throw EstimationError("FEVD horizon must be at least 1");
  if (ma.horizon < horizon || static_cast<int>(ma.matrices.size()) < horizon) {
    throw EstimationError("MA coefficients cover fewer steps than the FEVD horizon");
  }
  const Eigen::MatrixXd& s = sigma.matrix();
  const Eigen::Index n = s.rows();
  if (ma.matrices.front().rows() != n) throw EstimationError("MA and covariance dimensions differ");

  Eigen::MatrixXd numer = Eigen::MatrixXd::Zero(n, n);
  Eigen::VectorXd denom = Eigen::VectorXd::Zero(n);
  for (int h = 0; h < horizon; ++h) {
    const Eigen::MatrixXd& a = ma.matrices[static_cast<std::size_t>(h)];
    const Eigen::MatrixXd a_sigma = a * s;
    numer.array() += a_sigma.array().square();
    denom += (a_sigma * a.transpose()).diagonal();
  }
  if ((denom.array() <= 0.0).any() || !denom.allFinite()) {
    throw NumericError("degenerate process: zero forecast-error variance");
  }
  RawFevd raw;
  raw.horizon = horizon;
  raw.theta = denom.cwiseInverse().asDiagonal() * numer * s.diagonal().cwiseInverse().asDiagonal();
  return raw;
}

NormalizedFevd normalize(const RawFevd& raw) {
  if (!raw.theta.allFinite() || (raw.theta.array() < 0.0).any()) {
    throw NumericError("FEVD shares must be finite and non-negative");
  }
  const Eigen::VectorXd rows = raw.theta.rowwise().sum();
  if ((rows.array() <= 0.0).any()) throw NumericError("FEVD has a zero row");
  return {rows.cwiseInverse().asDiagonal() * raw.theta};
}

namespace {

double off_diagonal_sum(const Eigen::MatrixXd& m) { return m.sum() - m.diagonal().sum(); }

}  // namespace

double total_spillover(const NormalizedFevd& norm) {
  const auto n = static_cast<double>(norm.theta_bar.rows());
  return 100.0 * off_diagonal_sum(norm.theta_bar) / n;
}

Directional directional(const NormalizedFevd& norm, DirectionalDivisor divisor) {
  const Eigen::MatrixXd& t = norm.theta_bar;
  const Eigen::VectorXd diag = t.diagonal();
  const double scale = divisor == DirectionalDivisor::AssetCount
                           ? 100.0 / static_cast<double>(t.rows())
                           : 100.0;
  Directional d;
  if (divisor == DirectionalDivisor::AssetCount) {
    d.from_others = scale * (t.rowwise().sum() - diag);
    d.to_others = scale * (t.colwise().sum().transpose() - diag);
  } else {
    const Eigen::VectorXd row_sums = t.rowwise().sum();
    d.from_others = scale * (t.rowwise().sum() - diag).cwiseQuotient(row_sums);
    d.to_others = scale * (t.colwise().sum().transpose() - diag).cwiseQuotient(row_sums);
  }
  return d;
}

Eigen::VectorXd net(const Eigen::VectorXd& from_others, const Eigen::VectorXd& to_others) {
  if (from_others.size() != to_others.size()) throw DataError("net: vector lengths differ");
  return to_others - from_others;
}

SpilloverTable build_table(const NormalizedFevd& norm, const std::vector<std::string>& labels,
                           DirectionalDivisor divisor) {
  if (static_cast<Eigen::Index>(labels.size()) != norm.theta_bar.rows()) {
    throw DataError("table labels do not match FEVD dimension");
  }
  SpilloverTable table;
  table.labels = labels;
  table.pairwise = 100.0 * norm.theta_bar;
  auto d = directional(norm, divisor);
  table.net = net(d.from_others, d.to_others);
  table.from_others = std::move(d.from_others);
  table.to_others = std::move(d.to_others);
  table.total_index = total_spillover(norm);
  return table;
}

std::string table_to_csv(const SpilloverTable& table, int decimals) {
  const std::string fmt = "%." + std::to_string(decimals) + "f";
  const auto cell = [&](double v) {
    char buf[64];
    // Avoid printing "-0.00".
    const double rounded = std::abs(v) < 0.5 * std::pow(10.0, -decimals) ? 0.0 : v;
    std::snprintf(buf, sizeof buf, fmt.c_str(), rounded);
    return std::string(buf);
  };
  std::ostringstream out;
  for (const auto& l : table.labels) out << ',' << l;
  out << ",FROM,NET\n";
  const Eigen::Index n = table.pairwise.rows();
  for (Eigen::Index i = 0; i < n; ++i) {
    out << table.labels[static_cast<std::size_t>(i)];
    for (Eigen::Index j = 0; j < n; ++j) out << ',' << cell(table.pairwise(i, j));
    out << ',' << cell(table.from_others(i)) << ',' << cell(table.net(i)) << '\n';
  }
  out << "TO others";
  for (Eigen::Index j = 0; j < n; ++j) out << ',' << cell(table.to_others(j));
  out << ',' << cell(table.to_others.sum()) << ",\n";
  return out.str();
}

SpilloverTable spillover_table(const VarModel& model, const CovMatrix& sigma, int horizon,
                               DirectionalDivisor divisor) {
  const auto ma = ma_coefficients(model, horizon);
  return build_table(normalize(generalized_fevd(ma, sigma, horizon)), model.assets, divisor);
}

}  // namespace spillover
