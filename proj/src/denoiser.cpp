#include "spillover/denoiser.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>
#include <sstream>

#include <Eigen/Eigenvalues>

#include "spillover/error.hpp"
#include "spillover/simd/kernels.hpp"

namespace spillover {
namespace {

// Uniform in [0, 1) from the top 53 bits; independent of the standard
// library's distribution implementations so seeds replay across toolchains.
double unit_uniform(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

void shuffle(std::vector<std::size_t>& v, std::mt19937_64& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(v[i - 1], v[j]);
  }
}

const char* activation_name(Activation a) {
  switch (a) {
    case Activation::Gelu: return "gelu";
    case Activation::LayerNorm: return "layernorm";
    case Activation::Identity: return "identity";
  }
  return "identity";
}

Activation activation_from_name(const std::string& s) {
  if (s == "gelu") return Activation::Gelu;
  if (s == "layernorm") return Activation::LayerNorm;
  if (s == "identity") return Activation::Identity;
  throw DataError("unknown activation in model file: " + s);
}

Eigen::MatrixXd to_correlation(const Eigen::MatrixXd& cov) {
  const Eigen::VectorXd inv_sd = cov.diagonal().cwiseSqrt().cwiseInverse();
  Eigen::MatrixXd corr = inv_sd.asDiagonal() * cov * inv_sd.asDiagonal();
  corr = 0.5 * (corr + corr.transpose());
  corr.diagonal().setOnes();
  return corr;
}

bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

// Activations of one forward pass, kept for backpropagation.
struct Trace {
  std::vector<std::vector<double>> inputs;      // h_{l-1} per layer
  std::vector<std::vector<double>> pre;         // W h + b per layer
  std::vector<std::vector<double>> normalized;  // LayerNorm x-hat (empty otherwise)
  std::vector<double> inv_std;                  // LayerNorm 1/sqrt(max(var, eps))
  std::vector<double> output;
};

void run_network(const DenoiserModel& model, std::span<const double> s, Trace* trace,
                 std::vector<double>& out) {
  std::vector<double> h(s.begin(), s.end());
  if (trace) {
    trace->inputs.clear();
    trace->pre.clear();
    trace->normalized.clear();
    trace->inv_std.clear();
  }
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    const DenseLayer& layer = model.layers[l];
    std::vector<double> a(static_cast<std::size_t>(layer.outputs));
    simd::affine(layer.weights, layer.bias, h, a);
    std::vector<double> next(a.size());
    std::vector<double> xhat;
    double inv_std = 0.0;
    switch (layer.activation) {
      case Activation::Gelu:
        std::transform(a.begin(), a.end(), next.begin(), gelu);
        break;
      case Activation::LayerNorm:
        xhat.resize(a.size());
        inv_std = layer_norm(a, layer.gain, layer.shift, next, xhat);
        break;
      case Activation::Identity:
        next = a;
        break;
    }
    if (!all_finite(next)) {
      throw NumericError("non-finite activation in denoiser layer " + std::to_string(l + 1));
    }
    if (trace) {
      trace->inputs.push_back(std::move(h));
      trace->pre.push_back(std::move(a));
      trace->normalized.push_back(std::move(xhat));
      trace->inv_std.push_back(inv_std);
    }
    h = std::move(next);
  }
  out = std::move(h);
}

Eigen::MatrixXd blend(const DenoiserModel& model, const Eigen::MatrixXd& s,
                      const std::vector<double>& net_out) {
  const Eigen::Index n = s.rows();
  const Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> y(
      net_out.data(), n, n);
  const double alpha = model.residual_weight;
  return alpha * s + (1.0 - alpha) * (0.5 * (y + y.transpose()));
}

void require_input_shape(const DenoiserModel& model, const Eigen::MatrixXd& s) {
  if (s.rows() != model.n_assets || s.cols() != model.n_assets) {
    throw DataError("denoiser expects " + std::to_string(model.n_assets) + "x" +
                    std::to_string(model.n_assets) + " input, got " + std::to_string(s.rows()) +
                    "x" + std::to_string(s.cols()));
  }
}

std::string format_g(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

double gelu(double x) { return 0.5 * x * std::erfc(-x * std::numbers::sqrt2 / 2.0); }

double gelu_derivative(double x) {
  const double cdf = 0.5 * std::erfc(-x * std::numbers::sqrt2 / 2.0);
  const double pdf = std::exp(-0.5 * x * x) * (std::numbers::inv_sqrtpi / std::numbers::sqrt2);
  return cdf + x * pdf;
}

double layer_norm(std::span<const double> x, std::span<const double> gain,
                  std::span<const double> shift, std::span<double> out,
                  std::span<double> normalized) {
  const std::size_t d = x.size();
  if (gain.size() != d || shift.size() != d || out.size() != d ||
      (!normalized.empty() && normalized.size() != d)) {
    throw DataError("layer_norm: size mismatch");
  }
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(d);
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  var /= static_cast<double>(d);
  // A floor rather than an additive epsilon: above it the normalized values
  // have exactly unit variance.
  const double inv_std = 1.0 / std::sqrt(std::max(var, kLayerNormEpsilon));
  for (std::size_t i = 0; i < d; ++i) {
    const double z = (x[i] - mean) * inv_std;
    if (!normalized.empty()) normalized[i] = z;
    out[i] = gain[i] * z + shift[i];
  }
  return inv_std;
}

void TrainConfig::validate() const {
  if (!(lambda1 > 0.0) || !(lambda2 > 0.0)) throw ConfigError("lambda1 and lambda2 must be positive");
  if (batch_size < 1) throw ConfigError("batch_size must be positive");
  if (epochs < 0) throw ConfigError("epochs must be non-negative");
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must be in [0, 1)");
  if (early_stop_patience < 1) throw ConfigError("early_stop_patience must be positive");
  if (!(holdout_fraction > 0.0 && holdout_fraction < 1.0)) {
    throw ConfigError("holdout_fraction must be in (0, 1)");
  }
}

void DenoiserModel::validate() const {
  const int n2 = n_assets * n_assets;
  if (n_assets < 1) throw ConfigError("denoiser needs at least one asset");
  if (layer_dims.size() < 2 || layer_dims.front() != n2 || layer_dims.back() != n2) {
    throw ConfigError("denoiser first and last widths must equal N^2");
  }
  if (layers.size() + 1 != layer_dims.size()) throw ConfigError("denoiser layer count mismatch");
  if (!(residual_weight > 0.0 && residual_weight <= 1.0)) {
    throw ConfigError("residual weight must be in (0, 1), or exactly 1 for pass-through");
  }
  if (!(eig_floor > 0.0)) throw ConfigError("eigenvalue floor must be positive");
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const DenseLayer& layer = layers[l];
    if (layer.inputs != layer_dims[l] || layer.outputs != layer_dims[l + 1] ||
        layer.weights.size() != static_cast<std::size_t>(layer.inputs) * static_cast<std::size_t>(layer.outputs) ||
        layer.bias.size() != static_cast<std::size_t>(layer.outputs)) {
      throw ConfigError("denoiser layer " + std::to_string(l + 1) + " has inconsistent shape");
    }
    if (layer.activation == Activation::LayerNorm &&
        (layer.gain.size() != layer.bias.size() || layer.shift.size() != layer.bias.size())) {
      throw ConfigError("denoiser layer " + std::to_string(l + 1) + " lacks LayerNorm parameters");
    }
  }
}

DenoiserModel make_denoiser(const DenoiserSpec& spec) {
  if (spec.n_assets < 1) throw ConfigError("denoiser needs at least one asset");
  const int n2 = spec.n_assets * spec.n_assets;
  DenoiserModel model;
  model.n_assets = spec.n_assets;
  model.residual_weight = spec.residual_weight;
  model.eig_floor = spec.eig_floor;
  model.input_mode = spec.input_mode;
  const std::vector<int> hidden = spec.hidden.empty() ? std::vector<int>{4 * spec.n_assets} : spec.hidden;
  model.layer_dims.push_back(n2);
  for (int w : hidden) {
    if (w < 1) throw ConfigError("hidden layer widths must be positive");
    model.layer_dims.push_back(w);
  }
  model.layer_dims.push_back(n2);

  std::mt19937_64 rng(spec.seed);
  const std::size_t n_layers = model.layer_dims.size() - 1;
  for (std::size_t l = 0; l < n_layers; ++l) {
    DenseLayer layer;
    layer.inputs = model.layer_dims[l];
    layer.outputs = model.layer_dims[l + 1];
    const double limit = std::sqrt(6.0 / static_cast<double>(layer.inputs + layer.outputs));
    layer.weights.resize(static_cast<std::size_t>(layer.inputs) * static_cast<std::size_t>(layer.outputs));
    for (double& w : layer.weights) w = (2.0 * unit_uniform(rng) - 1.0) * limit;
    layer.bias.assign(static_cast<std::size_t>(layer.outputs), 0.0);
    if (l + 1 == n_layers) {
      layer.activation = Activation::Identity;
    } else {
      // Hidden layers are numbered from 1: odd -> GELU, even -> LayerNorm.
      layer.activation = (l % 2 == 0) ? Activation::Gelu : Activation::LayerNorm;
    }
    if (layer.activation == Activation::LayerNorm) {
      layer.gain.assign(static_cast<std::size_t>(layer.outputs), 1.0);
      layer.shift.assign(static_cast<std::size_t>(layer.outputs), 0.0);
    }
    model.layers.push_back(std::move(layer));
  }
  model.validate();
  return model;
}

Eigen::VectorXd vectorize(const Eigen::MatrixXd& m) {
  Eigen::VectorXd v(m.size());
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) v(r * m.cols() + c) = m(r, c);
  }
  return v;
}

Eigen::MatrixXd devectorize(const Eigen::VectorXd& v) {
  const auto n = static_cast<Eigen::Index>(std::llround(std::sqrt(static_cast<double>(v.size()))));
  if (n * n != v.size()) {
    throw DataError("devectorize: length " + std::to_string(v.size()) + " is not a perfect square");
  }
  Eigen::MatrixXd m(n, n);
  for (Eigen::Index r = 0; r < n; ++r) {
    for (Eigen::Index c = 0; c < n; ++c) m(r, c) = v(r * n + c);
  }
  return m;
}

Eigen::MatrixXd psd_project(const Eigen::MatrixXd& m, double eps) {
  if (m.rows() != m.cols()) throw DataError("psd_project: matrix is not square");
  if (!m.allFinite()) throw NumericError("psd_project: non-finite input");
  const Eigen::MatrixXd sym = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(sym);
  if (eig.info() != Eigen::Success) throw NumericError("psd_project: eigendecomposition failed");
  const Eigen::VectorXd& lambda = eig.eigenvalues();
  if (lambda.minCoeff() >= eps) return sym;
  const Eigen::VectorXd clipped = lambda.cwiseMax(eps);
  const Eigen::MatrixXd& u = eig.eigenvectors();
  const Eigen::MatrixXd out = u * clipped.asDiagonal() * u.transpose();
  return 0.5 * (out + out.transpose());
}

Eigen::MatrixXd forward_unprojected(const DenoiserModel& model, const Eigen::MatrixXd& s) {
  require_input_shape(model, s);
  const Eigen::VectorXd v = vectorize(s);
  std::vector<double> out;
  run_network(model, std::span<const double>(v.data(), static_cast<std::size_t>(v.size())), nullptr, out);
  return blend(model, s, out);
}

Eigen::MatrixXd forward(const DenoiserModel& model, const Eigen::MatrixXd& s) {
  return psd_project(forward_unprojected(model, s), model.eig_floor);
}

CovWindowSet rolling_cov_windows(const SeriesPanel& panel, int window_length, int step) {
  if (window_length < 2) throw ConfigError("covariance window must be at least 2 rows");
  if (step < 1) throw ConfigError("covariance window step must be positive");
  if (panel.rows() < window_length) {
    throw ConfigError("panel has fewer rows than the covariance window");
  }
  if (!panel.values.allFinite()) throw DataError("covariance windows need a dense panel");
  const Eigen::RowVectorXd mean = panel.values.colwise().mean();
  const Eigen::MatrixXd centered = panel.values.rowwise() - mean;
  const Eigen::RowVectorXd sd =
      (centered.array().square().colwise().sum() / static_cast<double>(panel.rows() - 1)).sqrt();
  if ((sd.array() <= 0.0).any()) throw DataError("covariance windows: constant column");
  const Eigen::MatrixXd z = centered.array().rowwise() / sd.array();

  CovWindowSet set;
  set.window_length = window_length;
  set.step = step;
  for (Eigen::Index start = 0; start + window_length <= z.rows(); start += step) {
    const Eigen::MatrixXd w = z.middleRows(start, window_length);
    const Eigen::MatrixXd c = w.rowwise() - w.colwise().mean();
    Eigen::MatrixXd cov = c.transpose() * c / static_cast<double>(window_length - 1);
    set.matrices.push_back(0.5 * (cov + cov.transpose()));
  }
  return set;
}

std::vector<Eigen::MatrixXd> to_model_space(const DenoiserModel& model,
                                            std::span<const Eigen::MatrixXd> matrices) {
  std::vector<Eigen::MatrixXd> out;
  out.reserve(matrices.size());
  for (const auto& m : matrices) {
    require_input_shape(model, m);
    if (model.input_mode == InputMode::Correlation) {
      if ((m.diagonal().array() <= 0.0).any()) {
        throw DataError("correlation input mode needs a positive diagonal");
      }
      out.push_back(to_correlation(m));
    } else {
      out.push_back(m);
    }
  }
  return out;
}

double structure_loss(const Eigen::MatrixXd& output, const Eigen::MatrixXd& input, double lambda1,
                      double lambda2) {
  const Eigen::MatrixXd e = output - input;
  const double full = e.squaredNorm();
  const double off = full - e.diagonal().squaredNorm();
  return lambda1 * full + lambda2 * off;
}

double loss(const DenoiserModel& model, std::span<const Eigen::MatrixXd> batch, double lambda1,
            double lambda2) {
  if (batch.empty()) throw DataError("loss: empty batch");
  double sum = 0.0;
  for (const auto& s : batch) sum += structure_loss(forward_unprojected(model, s), s, lambda1, lambda2);
  return sum / static_cast<double>(batch.size());
}

Gradients Gradients::zeros_like(const DenoiserModel& model) {
  Gradients g;
  for (const auto& layer : model.layers) {
    g.weights.emplace_back(layer.weights.size(), 0.0);
    g.bias.emplace_back(layer.bias.size(), 0.0);
    g.gain.emplace_back(layer.gain.size(), 0.0);
    g.shift.emplace_back(layer.shift.size(), 0.0);
  }
  return g;
}

double loss_and_gradient(const DenoiserModel& model, std::span<const Eigen::MatrixXd> batch,
                         double lambda1, double lambda2, Gradients& grad) {
  if (batch.empty()) throw DataError("loss_and_gradient: empty batch");
  grad = Gradients::zeros_like(model);
  const double alpha = model.residual_weight;
  const Eigen::Index n = model.n_assets;
  Trace trace;
  std::vector<double> net_out;
  double total = 0.0;

  for (const auto& s : batch) {
    require_input_shape(model, s);
    const Eigen::VectorXd v = vectorize(s);
    run_network(model, std::span<const double>(v.data(), static_cast<std::size_t>(v.size())), &trace, net_out);
    const Eigen::MatrixXd c = blend(model, s, net_out);
    const Eigen::MatrixXd e = c - s;
    total += structure_loss(c, s, lambda1, lambda2);

    // dL/dC = 2 (lambda1 + lambda2 [i != j]) E; C depends on the network
    // output Y through (1 - alpha) (Y + Y^T) / 2.
    Eigen::MatrixXd g = 2.0 * (lambda1 + lambda2) * e;
    g.diagonal() = 2.0 * lambda1 * e.diagonal();
    const Eigen::MatrixXd dy = (1.0 - alpha) * 0.5 * (g + g.transpose());
    std::vector<double> delta(static_cast<std::size_t>(n * n));
    for (Eigen::Index r = 0; r < n; ++r) {
      for (Eigen::Index col = 0; col < n; ++col) delta[static_cast<std::size_t>(r * n + col)] = dy(r, col);
    }

    for (std::size_t l = model.layers.size(); l-- > 0;) {
      const DenseLayer& layer = model.layers[l];
      // delta currently holds dL/d(layer output after activation); map it to
      // dL/d(pre-activation).
      switch (layer.activation) {
        case Activation::Identity:
          break;
        case Activation::Gelu:
          for (std::size_t i = 0; i < delta.size(); ++i) delta[i] *= gelu_derivative(trace.pre[l][i]);
          break;
        case Activation::LayerNorm: {
          const std::vector<double>& xhat = trace.normalized[l];
          const auto d = static_cast<double>(delta.size());
          double mean_dx = 0.0, mean_dx_xhat = 0.0;
          std::vector<double> dxhat(delta.size());
          for (std::size_t i = 0; i < delta.size(); ++i) {
            grad.gain[l][i] += delta[i] * xhat[i];
            grad.shift[l][i] += delta[i];
            dxhat[i] = delta[i] * layer.gain[i];
            mean_dx += dxhat[i];
            mean_dx_xhat += dxhat[i] * xhat[i];
          }
          mean_dx /= d;
          mean_dx_xhat /= d;
          // With the variance at its floor the scale is constant and only
          // the centring contributes.
          if (trace.inv_std[l] == 1.0 / std::sqrt(kLayerNormEpsilon)) mean_dx_xhat = 0.0;
          for (std::size_t i = 0; i < delta.size(); ++i) {
            delta[i] = trace.inv_std[l] * (dxhat[i] - mean_dx - xhat[i] * mean_dx_xhat);
          }
          break;
        }
      }
      simd::outer_accumulate(delta, trace.inputs[l], grad.weights[l]);
      simd::axpy(1.0, delta, grad.bias[l]);
      if (l > 0) {
        std::vector<double> upstream(static_cast<std::size_t>(layer.inputs), 0.0);
        simd::affine_transpose_accumulate(layer.weights, delta, upstream);
        delta = std::move(upstream);
      }
    }
  }

  const double inv_b = 1.0 / static_cast<double>(batch.size());
  for (auto* group : {&grad.weights, &grad.bias, &grad.gain, &grad.shift}) {
    for (auto& v : *group) {
      for (double& x : v) x *= inv_b;
    }
  }
  return total * inv_b;
}

namespace {

void sgd_step(DenoiserModel& model, const Gradients& grad, Gradients& velocity, double lr,
              double momentum) {
  const auto update = [&](std::vector<double>& param, const std::vector<double>& g,
                          std::vector<double>& v) {
    for (std::size_t i = 0; i < param.size(); ++i) {
      v[i] = momentum * v[i] - lr * g[i];
      param[i] += v[i];
    }
  };
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    DenseLayer& layer = model.layers[l];
    update(layer.weights, grad.weights[l], velocity.weights[l]);
    update(layer.bias, grad.bias[l], velocity.bias[l]);
    update(layer.gain, grad.gain[l], velocity.gain[l]);
    update(layer.shift, grad.shift[l], velocity.shift[l]);
  }
}

double mean_loss(const DenoiserModel& model, const std::vector<Eigen::MatrixXd>& data,
                 const std::vector<std::size_t>& idx, const TrainConfig& cfg) {
  double sum = 0.0;
  for (std::size_t i : idx) {
    sum += structure_loss(forward_unprojected(model, data[i]), data[i], cfg.lambda1, cfg.lambda2);
  }
  return sum / static_cast<double>(idx.size());
}

}  // namespace

TrainResult train(const CovWindowSet& windows, const TrainConfig& config, DenoiserModel initial) {
  config.validate();
  initial.validate();
  const std::size_t count = windows.matrices.size();
  if (count < 2 * static_cast<std::size_t>(config.batch_size)) {
    throw ConfigError("training needs at least 2 x batch_size = " +
                      std::to_string(2 * config.batch_size) + " covariance windows, got " +
                      std::to_string(count) +
                      "; lengthen the sample, shorten the window, or reduce the step/batch size");
  }
  const std::vector<Eigen::MatrixXd> data = to_model_space(initial, windows.matrices);

  std::mt19937_64 rng(config.seed);
  std::vector<std::size_t> order(count);
  for (std::size_t i = 0; i < count; ++i) order[i] = i;
  shuffle(order, rng);
  const auto n_hold = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::llround(config.holdout_fraction * static_cast<double>(count))));
  const std::vector<std::size_t> holdout(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_hold));
  std::vector<std::size_t> train_idx(order.begin() + static_cast<std::ptrdiff_t>(n_hold), order.end());

  TrainResult result;
  result.model = initial;
  result.model.trained_with = config;
  DenoiserModel current = result.model;
  double best_holdout = mean_loss(current, data, holdout, config);
  result.curve.push_back({0, mean_loss(current, data, train_idx, config), best_holdout});
  if (!std::isfinite(best_holdout)) throw NumericError("initial holdout loss is not finite");

  Gradients velocity = Gradients::zeros_like(current);
  Gradients grad;
  std::vector<Eigen::MatrixXd> batch;
  int since_best = 0;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    shuffle(train_idx, rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < train_idx.size(); start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t stop = std::min(train_idx.size(), start + static_cast<std::size_t>(config.batch_size));
      batch.clear();
      for (std::size_t k = start; k < stop; ++k) batch.push_back(data[train_idx[k]]);
      const double batch_loss = loss_and_gradient(current, batch, config.lambda1, config.lambda2, grad);
      if (!std::isfinite(batch_loss)) {
        throw NumericError("training diverged at epoch " + std::to_string(epoch) + " (batch starting at " +
                           std::to_string(start) + "): loss is " + format_g(batch_loss) +
                           "; try a smaller learning_rate (currently " + format_g(config.learning_rate) + ")");
      }
      epoch_loss += batch_loss * static_cast<double>(stop - start);
      sgd_step(current, grad, velocity, config.learning_rate, config.momentum);
    }
    epoch_loss /= static_cast<double>(train_idx.size());
    double holdout_loss = 0.0;
    try {
      holdout_loss = mean_loss(current, data, holdout, config);
    } catch (const NumericError& e) {
      throw NumericError("training diverged at epoch " + std::to_string(epoch) + ": " + e.what());
    }
    if (!std::isfinite(holdout_loss)) {
      throw NumericError("training diverged at epoch " + std::to_string(epoch) + ": holdout loss is " +
                         format_g(holdout_loss));
    }
    result.curve.push_back({epoch, epoch_loss, holdout_loss});
    if (holdout_loss < best_holdout) {
      best_holdout = holdout_loss;
      result.best_epoch = epoch;
      result.model.layers = current.layers;
      since_best = 0;
    } else if (++since_best >= config.early_stop_patience) {
      break;
    }
  }
  return result;
}

CovMatrix denoise(const DenoiserModel& model, const CovMatrix& sigma_hat) {
  const Eigen::MatrixXd& sigma = sigma_hat.matrix();
  require_input_shape(model, sigma);
  if (model.input_mode == InputMode::Covariance) {
    return CovMatrix(forward(model, sigma), sigma_hat.labels());
  }
  const Eigen::VectorXd sd = sigma.diagonal().cwiseSqrt();
  const Eigen::MatrixXd corr_out = forward(model, to_correlation(sigma));
  // Renormalize to unit diagonal so the rescaled output keeps the input variances.
  const Eigen::VectorXd inv = corr_out.diagonal().cwiseSqrt().cwiseInverse();
  Eigen::MatrixXd corr = inv.asDiagonal() * corr_out * inv.asDiagonal();
  corr = 0.5 * (corr + corr.transpose());
  corr.diagonal().setOnes();
  Eigen::MatrixXd out = sd.asDiagonal() * corr * sd.asDiagonal();
  out.diagonal() = sigma.diagonal();
  return CovMatrix(0.5 * (out + out.transpose()), sigma_hat.labels());
}

nlohmann::json to_json(const DenoiserModel& model) {
  nlohmann::json doc;
  doc["kind"] = "covariance_denoiser";
  doc["n_assets"] = model.n_assets;
  doc["layer_dims"] = model.layer_dims;
  doc["residual_weight"] = model.residual_weight;
  doc["eig_floor"] = model.eig_floor;
  doc["input_mode"] = model.input_mode == InputMode::Correlation ? "correlation" : "covariance";
  doc["layers"] = nlohmann::json::array();
  for (const auto& layer : model.layers) {
    nlohmann::json j;
    j["inputs"] = layer.inputs;
    j["outputs"] = layer.outputs;
    j["activation"] = activation_name(layer.activation);
    j["weights"] = layer.weights;
    j["bias"] = layer.bias;
    if (layer.activation == Activation::LayerNorm) {
      j["gain"] = layer.gain;
      j["shift"] = layer.shift;
    }
    doc["layers"].push_back(std::move(j));
  }
  if (model.trained_with) {
    const TrainConfig& c = *model.trained_with;
    doc["train_config"] = {{"lambda1", c.lambda1},
                           {"lambda2", c.lambda2},
                           {"batch_size", c.batch_size},
                           {"epochs", c.epochs},
                           {"learning_rate", c.learning_rate},
                           {"momentum", c.momentum},
                           {"seed", c.seed},
                           {"early_stop_patience", c.early_stop_patience},
                           {"holdout_fraction", c.holdout_fraction}};
  }
  return doc;
}

DenoiserModel denoiser_from_json(const nlohmann::json& doc) {
  if (doc.value("kind", "") != "covariance_denoiser") throw DataError("not a denoiser model document");
  DenoiserModel model;
  model.n_assets = doc.at("n_assets").get<int>();
  model.layer_dims = doc.at("layer_dims").get<std::vector<int>>();
  model.residual_weight = doc.at("residual_weight").get<double>();
  model.eig_floor = doc.at("eig_floor").get<double>();
  const auto mode = doc.at("input_mode").get<std::string>();
  if (mode == "correlation") {
    model.input_mode = InputMode::Correlation;
  } else if (mode == "covariance") {
    model.input_mode = InputMode::Covariance;
  } else {
    throw DataError("unknown denoiser input mode: " + mode);
  }
  for (const auto& j : doc.at("layers")) {
    DenseLayer layer;
    layer.inputs = j.at("inputs").get<int>();
    layer.outputs = j.at("outputs").get<int>();
    layer.activation = activation_from_name(j.at("activation").get<std::string>());
    layer.weights = j.at("weights").get<std::vector<double>>();
    layer.bias = j.at("bias").get<std::vector<double>>();
    if (layer.activation == Activation::LayerNorm) {
      layer.gain = j.at("gain").get<std::vector<double>>();
      layer.shift = j.at("shift").get<std::vector<double>>();
    }
    model.layers.push_back(std::move(layer));
  }
  if (doc.contains("train_config")) {
    const auto& c = doc["train_config"];
    TrainConfig cfg;
    cfg.lambda1 = c.at("lambda1").get<double>();
    cfg.lambda2 = c.at("lambda2").get<double>();
    cfg.batch_size = c.at("batch_size").get<int>();
    cfg.epochs = c.at("epochs").get<int>();
    cfg.learning_rate = c.at("learning_rate").get<double>();
    cfg.momentum = c.at("momentum").get<double>();
    cfg.seed = c.at("seed").get<std::uint64_t>();
    cfg.early_stop_patience = c.at("early_stop_patience").get<int>();
    cfg.holdout_fraction = c.at("holdout_fraction").get<double>();
    model.trained_with = cfg;
  }
  model.validate();
  return model;
}

std::string training_curve_csv(const std::vector<EpochRecord>& curve) {
  std::ostringstream out;
  out << "epoch,train_loss,holdout_loss\n";
  for (const auto& r : curve) {
    out << r.epoch << ',' << format_g(r.train_loss) << ',' << format_g(r.holdout_loss) << '\n';
  }
  return out.str();
}

}  // namespace spillover
