#pragma once

// Multilayer perceptron with input batch normalization, hidden blocks of
// affine -> batch norm -> ReLU -> dropout, and a single linear output
// (the preactivation that the CANN adds to the log-linear predictor).
//
// Batches are row-major: one observation per row.

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "cann/error.hpp"
#include "cann/random.hpp"

namespace cann::nn {

using Eigen::MatrixXd;
using Eigen::RowVectorXd;
using Eigen::VectorXd;

struct MlpConfig {
  std::vector<int> layer_widths{128, 64, 32};
  double dropout_p = 0.0;
  double batchnorm_momentum = 0.1;
  double batchnorm_eps = 1e-5;
  std::uint64_t seed = 0;

  void validate() const {
    if (layer_widths.empty()) throw DataError("MLP needs at least one hidden layer");
    for (int w : layer_widths)
      if (w <= 0) throw DataError("MLP layer widths must be positive");
    if (!(dropout_p >= 0.0 && dropout_p < 1.0)) throw DataError("dropout_p must be in [0, 1)");
    if (!(batchnorm_momentum > 0.0 && batchnorm_momentum <= 1.0))
      throw DataError("batchnorm_momentum must be in (0, 1]");
    if (!(batchnorm_eps >= 0.0)) throw DataError("batchnorm_eps must be >= 0");
  }
};

struct BatchNorm {
  RowVectorXd scale;
  RowVectorXd shift;
  RowVectorXd running_mean;
  RowVectorXd running_var;

  static BatchNorm identity(int width) {
    return {RowVectorXd::Ones(width), RowVectorXd::Zero(width), RowVectorXd::Zero(width),
            RowVectorXd::Ones(width)};
  }
  Eigen::Index width() const { return scale.size(); }
};

struct Dense {
  MatrixXd weight;  // out x in
  VectorXd bias;    // out
};

struct MlpParams {
  BatchNorm input_norm;
  std::vector<Dense> hidden;
  std::vector<BatchNorm> hidden_norm;
  Dense output;  // 1 x last width
  double dropout_p = 0.0;
  double momentum = 0.1;
  double eps = 1e-5;

  Eigen::Index input_width() const { return input_norm.width(); }

  /// Visits every trainable tensor in a fixed order. `f(name, tensor)` gets
  /// an Eigen dense object (matrix, vector or row vector) by reference.
  template <class Self, class F>
  static void visit_trainable(Self& self, F&& f) {
    f("input_norm.scale", self.input_norm.scale);
    f("input_norm.shift", self.input_norm.shift);
    for (std::size_t l = 0; l < self.hidden.size(); ++l) {
      const std::string p = "hidden." + std::to_string(l);
      f(p + ".weight", self.hidden[l].weight);
      f(p + ".bias", self.hidden[l].bias);
      f(p + ".norm.scale", self.hidden_norm[l].scale);
      f(p + ".norm.shift", self.hidden_norm[l].shift);
    }
    f("output.weight", self.output.weight);
    f("output.bias", self.output.bias);
  }
  template <class F> void for_each_trainable(F&& f) { visit_trainable(*this, f); }
  template <class F> void for_each_trainable(F&& f) const { visit_trainable(*this, f); }

  std::size_t trainable_count() const {
    std::size_t n = 0;
    for_each_trainable([&](const std::string&, const auto& t) { n += static_cast<std::size_t>(t.size()); });
    return n;
  }

  /// Same shapes, all trainable entries zero (gradient accumulator).
  MlpParams zeros_like() const {
    MlpParams z = *this;
    z.for_each_trainable([](const std::string&, auto& t) { t.setZero(); });
    return z;
  }
};

/// He-uniform hidden layers, identity batch norms, zero output layer (so the
/// initial network output is exactly 0 for every input).
inline MlpParams init_mlp(int input_width, const MlpConfig& cfg) {
  cfg.validate();
  if (input_width <= 0) throw ShapeError("MLP input width must be positive");
  Rng rng(derive_seed(cfg.seed, {0x6d6c70}));
  MlpParams p;
  p.dropout_p = cfg.dropout_p;
  p.momentum = cfg.batchnorm_momentum;
  p.eps = cfg.batchnorm_eps;
  p.input_norm = BatchNorm::identity(input_width);
  int fan_in = input_width;
  for (int w : cfg.layer_widths) {
    const double bound = std::sqrt(6.0 / fan_in);
    std::uniform_real_distribution<double> u(-bound, bound);
    Dense d{MatrixXd(w, fan_in), VectorXd::Zero(w)};
    for (Eigen::Index c = 0; c < d.weight.cols(); ++c)
      for (Eigen::Index r = 0; r < d.weight.rows(); ++r) d.weight(r, c) = u(rng);
    p.hidden.push_back(std::move(d));
    p.hidden_norm.push_back(BatchNorm::identity(w));
    fan_in = w;
  }
  p.output = {MatrixXd::Zero(1, fan_in), VectorXd::Zero(1)};
  return p;
}

enum class Mode { train, eval };

struct BatchNormCache {
  MatrixXd xhat;
  RowVectorXd inv_std;
};

struct MlpCache {
  bool valid = false;
  MatrixXd input;
  BatchNormCache input_bn;
  std::vector<MatrixXd> layer_input;  // z^(l-1) fed to hidden layer l
  std::vector<BatchNormCache> bn;
  std::vector<MatrixXd> normalized;   // batch-norm output before ReLU
  std::vector<MatrixXd> mask;         // inverted-dropout multipliers (0 or 1/(1-p))
  MatrixXd last_hidden;               // input of the output layer
};

namespace detail {

inline MatrixXd bn_train(BatchNorm& bn, const MatrixXd& x, double momentum, double eps,
                         BatchNormCache& cache) {
  const auto n = static_cast<double>(x.rows());
  const RowVectorXd mean = x.colwise().mean();
  const MatrixXd centered = x.rowwise() - mean;
  const RowVectorXd var = centered.array().square().colwise().sum().matrix() / n;
  cache.inv_std = (var.array() + eps).sqrt().inverse().matrix();
  // Constant columns have zero spread; keep them at zero instead of 0/0.
  for (Eigen::Index j = 0; j < var.size(); ++j)
    if (!std::isfinite(cache.inv_std(j))) cache.inv_std(j) = 0.0;
  cache.xhat = centered.array().rowwise() * cache.inv_std.array();
  bn.running_mean = (1.0 - momentum) * bn.running_mean + momentum * mean;
  bn.running_var = (1.0 - momentum) * bn.running_var + momentum * (var * (n / (n - 1.0)));
  return (cache.xhat.array().rowwise() * bn.scale.array()).rowwise() + bn.shift.array();
}

inline MatrixXd bn_eval(const BatchNorm& bn, const MatrixXd& x, double eps) {
  RowVectorXd inv = (bn.running_var.array() + eps).sqrt().inverse().matrix();
  for (Eigen::Index j = 0; j < inv.size(); ++j)
    if (!std::isfinite(inv(j))) inv(j) = 0.0;
  const RowVectorXd a = inv.cwiseProduct(bn.scale);
  const RowVectorXd b = bn.shift - bn.running_mean.cwiseProduct(a);
  return (x.array().rowwise() * a.array()).rowwise() + b.array();
}

// Returns d loss / d input; accumulates scale/shift gradients into g.
inline MatrixXd bn_backward(const BatchNorm& bn, const BatchNormCache& cache, const MatrixXd& dy,
                            BatchNorm& g) {
  const auto n = static_cast<double>(dy.rows());
  g.scale += (dy.array() * cache.xhat.array()).colwise().sum().matrix();
  g.shift += dy.colwise().sum();
  const MatrixXd dxhat = dy.array().rowwise() * bn.scale.array();
  const RowVectorXd sum_dxhat = dxhat.colwise().sum();
  const RowVectorXd sum_dxhat_xhat = (dxhat.array() * cache.xhat.array()).colwise().sum().matrix();
  MatrixXd dx = (n * dxhat).rowwise() - sum_dxhat;
  dx -= (cache.xhat.array().rowwise() * sum_dxhat_xhat.array()).matrix();
  return dx.array().rowwise() * (cache.inv_std.array() / n);
}

inline VectorXd forward_eval(const MlpParams& params, const MatrixXd& batch) {
  MatrixXd z = bn_eval(params.input_norm, batch, params.eps);
  for (std::size_t l = 0; l < params.hidden.size(); ++l) {
    MatrixXd a = z * params.hidden[l].weight.transpose();
    a.rowwise() += params.hidden[l].bias.transpose();
    z = bn_eval(params.hidden_norm[l], a, params.eps).cwiseMax(0.0);
  }
  VectorXd out = z * params.output.weight.transpose();
  out.array() += params.output.bias(0);
  return out;
}

}  // namespace detail

/// Forward pass. Train mode uses batch statistics (and updates the running
/// ones in `params`), draws dropout masks from `rng` and fills `cache`.
/// Eval mode uses running statistics, no dropout, and leaves params alone.
inline VectorXd mlp_forward(MlpParams& params, const MatrixXd& batch, Mode mode, Rng& rng,
                            MlpCache* cache = nullptr) {
  if (batch.cols() != params.input_width()) {
    throw ShapeError("mlp_forward: batch has " + std::to_string(batch.cols()) +
                     " columns, network expects " + std::to_string(params.input_width()));
  }
  if (mode == Mode::eval) {
    if (cache) *cache = MlpCache{};
    return detail::forward_eval(params, batch);
  }
  if (batch.rows() < 2) throw ShapeError("mlp_forward: train-mode batch needs >= 2 rows");
  MlpCache local;
  MlpCache& c = cache ? *cache : local;
  c = MlpCache{};
  c.input = batch;

  MatrixXd z = detail::bn_train(params.input_norm, batch, params.momentum, params.eps, c.input_bn);
  const double keep = 1.0 - params.dropout_p;
  std::bernoulli_distribution coin(keep);
  for (std::size_t l = 0; l < params.hidden.size(); ++l) {
    const Dense& d = params.hidden[l];
    MatrixXd a = z * d.weight.transpose();
    a.rowwise() += d.bias.transpose();
    c.layer_input.push_back(std::move(z));
    c.bn.emplace_back();
    MatrixXd nrm = detail::bn_train(params.hidden_norm[l], a, params.momentum, params.eps, c.bn.back());
    z = nrm.cwiseMax(0.0);
    MatrixXd m(z.rows(), z.cols());
    if (params.dropout_p > 0.0) {
      for (Eigen::Index j = 0; j < m.cols(); ++j)
        for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = coin(rng) ? 1.0 / keep : 0.0;
      z = z.cwiseProduct(m);
    } else {
      m.setOnes();
    }
    c.normalized.push_back(std::move(nrm));
    c.mask.push_back(std::move(m));
  }
  VectorXd out = z * params.output.weight.transpose();
  out.array() += params.output.bias(0);
  c.last_hidden = std::move(z);
  c.valid = true;
  return out;
}

/// Eval-mode forward on a const snapshot.
inline VectorXd mlp_predict(const MlpParams& params, const MatrixXd& batch) {
  if (batch.cols() != params.input_width()) {
    throw ShapeError("mlp_predict: batch has " + std::to_string(batch.cols()) +
                     " columns, network expects " + std::to_string(params.input_width()));
  }
  return detail::forward_eval(params, batch);
}

struct MlpGradients {
  MlpParams params;  // same layout as the network, trainable entries hold gradients
  MatrixXd input;
};

/// Reverse pass through a train-mode cache. `dout(i)` is the derivative of
/// the batch-mean loss with respect to output row i.
inline MlpGradients mlp_backward(const MlpParams& params, const MlpCache& cache,
                                 const VectorXd& dout) {
  if (!cache.valid) throw DataError("mlp_backward needs a train-mode forward cache");
  if (dout.size() != cache.last_hidden.rows()) throw ShapeError("mlp_backward: dout length mismatch");
  MlpGradients g{params.zeros_like(), {}};
  g.params.output.weight = dout.transpose() * cache.last_hidden;
  g.params.output.bias(0) = dout.sum();
  MatrixXd dz = dout * params.output.weight;
  for (std::size_t k = params.hidden.size(); k-- > 0;) {
    const MatrixXd dr = dz.cwiseProduct(cache.mask[k]);
    const MatrixXd dn = (cache.normalized[k].array() > 0.0).select(dr.array(), 0.0).matrix();
    const MatrixXd da = detail::bn_backward(params.hidden_norm[k], cache.bn[k], dn, g.params.hidden_norm[k]);
    g.params.hidden[k].weight = da.transpose() * cache.layer_input[k];
    g.params.hidden[k].bias = da.colwise().sum().transpose();
    dz = da * params.hidden[k].weight;
  }
  g.input = detail::bn_backward(params.input_norm, cache.input_bn, dz, g.params.input_norm);
  return g;
}

/// Flattens trainable entries in visiting order (column-major within each tensor).
inline std::vector<double> flatten(const MlpParams& p) {
  std::vector<double> out;
  out.reserve(p.trainable_count());
  p.for_each_trainable([&](const std::string&, const auto& t) {
    for (Eigen::Index i = 0; i < t.size(); ++i) out.push_back(t.data()[i]);
  });
  return out;
}

/// Inverse of flatten; returns the number of values consumed.
inline std::size_t unflatten(MlpParams& p, const double* src) {
  std::size_t k = 0;
  p.for_each_trainable([&](const std::string&, auto& t) {
    for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = src[k++];
  });
  return k;
}

}  // namespace cann::nn
