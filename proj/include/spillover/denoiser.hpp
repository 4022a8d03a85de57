#pragma once
// Feed-forward covariance denoiser.
//
// A sample covariance S (N x N) is flattened row-major to s (N^2), passed
// through affine layers whose hidden activations alternate GELU, LayerNorm,
// GELU, ... and a final affine layer, reshaped, symmetrized, blended with the
// input as alpha S + (1 - alpha) Sym(Y), and finally projected onto the
// matrices with eigenvalues >= eps. Training minimises
//   mean_i  lambda1 ||C_i - S_i||_F^2 + lambda2 ||off(C_i) - off(S_i)||_F^2
// with C_i the blended output before projection.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "spillover/fevd.hpp"
#include "spillover/ingest.hpp"

namespace spillover {

enum class Activation { Gelu, LayerNorm, Identity };

// Exact GELU, x * Phi(x).
double gelu(double x);
double gelu_derivative(double x);

constexpr double kLayerNormEpsilon = 1e-12;

// out = gain * (x - mean) / sqrt(max(var, kLayerNormEpsilon)) + shift, with the
// population variance over the vector. `normalized` receives the pre-affine
// values when non-empty. Returns the inverse standard deviation applied.
double layer_norm(std::span<const double> x, std::span<const double> gain,
                  std::span<const double> shift, std::span<double> out,
                  std::span<double> normalized = {});

struct DenseLayer {
  int inputs = 0;
  int outputs = 0;
  std::vector<double> weights;  // outputs x inputs, row-major
  std::vector<double> bias;
  Activation activation = Activation::Identity;
  std::vector<double> gain;   // LayerNorm only
  std::vector<double> shift;  // LayerNorm only
};

enum class InputMode {
  Correlation,  // standardize to unit diagonal, rescale afterwards
  Covariance,   // feed the raw matrix
};

struct TrainConfig {
  double lambda1 = 1.0;
  double lambda2 = 1.0;
  int batch_size = 32;
  int epochs = 200;
  double learning_rate = 1e-3;
  double momentum = 0.9;
  std::uint64_t seed = 42;
  int early_stop_patience = 20;
  double holdout_fraction = 0.2;

  void validate() const;
};

struct DenoiserModel {
  int n_assets = 0;
  std::vector<int> layer_dims;  // [N^2, d_1, ..., N^2]
  std::vector<DenseLayer> layers;
  double residual_weight = 0.5;  // alpha
  double eig_floor = 1e-6;       // eps
  InputMode input_mode = InputMode::Correlation;
  std::optional<TrainConfig> trained_with;

  // alpha == 1 is the pass-through configuration.
  bool pass_through() const { return residual_weight == 1.0; }
  void validate() const;
};

struct DenoiserSpec {
  int n_assets = 0;
  // Hidden widths d_1 .. d_{L-1}; empty means the default {4 N}.
  std::vector<int> hidden;
  double residual_weight = 0.5;
  double eig_floor = 1e-6;
  InputMode input_mode = InputMode::Correlation;
  std::uint64_t seed = 42;
};

// Glorot-uniform weights from a seeded generator, zero biases, LayerNorm
// gain 1 / shift 0.
DenoiserModel make_denoiser(const DenoiserSpec& spec);

Eigen::VectorXd vectorize(const Eigen::MatrixXd& m);
// Throws DataError if the length is not a perfect square.
Eigen::MatrixXd devectorize(const Eigen::VectorXd& v);

// Eigenvalues clipped from below at eps. Matrices already satisfying the
// floor are returned symmetrized but otherwise untouched.
Eigen::MatrixXd psd_project(const Eigen::MatrixXd& m, double eps);

// Blended output before the PSD projection (the differentiated path).
Eigen::MatrixXd forward_unprojected(const DenoiserModel& model, const Eigen::MatrixXd& s);

// Full map: network, blend, projection. Throws NumericError naming the
// layer when an activation becomes non-finite.
Eigen::MatrixXd forward(const DenoiserModel& model, const Eigen::MatrixXd& s);

struct CovWindowSet {
  std::vector<Eigen::MatrixXd> matrices;
  int window_length = 0;
  int step = 1;
  std::string source_id;
};

// Sample covariances of column-standardized data over windows of
// `window_length` rows, advancing by `step`.
CovWindowSet rolling_cov_windows(const SeriesPanel& panel, int window_length, int step = 1);

// Converts the windows into the space the model consumes (correlation or
// covariance) per its input mode.
std::vector<Eigen::MatrixXd> to_model_space(const DenoiserModel& model,
                                            std::span<const Eigen::MatrixXd> matrices);

// lambda1 ||out - in||_F^2 + lambda2 ||off(out - in)||_F^2
double structure_loss(const Eigen::MatrixXd& output, const Eigen::MatrixXd& input, double lambda1,
                      double lambda2);

// Mean structure loss of forward_unprojected over the batch (already in model space).
double loss(const DenoiserModel& model, std::span<const Eigen::MatrixXd> batch, double lambda1,
            double lambda2);

// Gradient buffers shaped like the model parameters.
struct Gradients {
  std::vector<std::vector<double>> weights;
  std::vector<std::vector<double>> bias;
  std::vector<std::vector<double>> gain;
  std::vector<std::vector<double>> shift;

  static Gradients zeros_like(const DenoiserModel& model);
};

// Mean loss over the batch; `grad` is overwritten with its exact gradient.
double loss_and_gradient(const DenoiserModel& model, std::span<const Eigen::MatrixXd> batch,
                         double lambda1, double lambda2, Gradients& grad);

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double holdout_loss = 0.0;
};

struct TrainResult {
  DenoiserModel model;
  std::vector<EpochRecord> curve;  // epoch 0 is the initial model
  int best_epoch = 0;
};

// Momentum SGD over mini-batches with early stopping on a seeded holdout
// split; returns the parameters with the lowest holdout loss. Windows are
// given as raw covariances and converted with to_model_space(). Throws
// NumericError if the loss diverges.
TrainResult train(const CovWindowSet& windows, const TrainConfig& config, DenoiserModel initial);

// Denoised replacement for a residual covariance: forward() on the
// model-space input, mapped back to the covariance scale. In correlation mode
// the denoised correlation is renormalized to a unit diagonal, so the output
// keeps the input's variances.
CovMatrix denoise(const DenoiserModel& model, const CovMatrix& sigma_hat);

nlohmann::json to_json(const DenoiserModel& model);
DenoiserModel denoiser_from_json(const nlohmann::json& doc);

std::string training_curve_csv(const std::vector<EpochRecord>& curve);

}  // namespace spillover
