#pragma once

// The combined actuarial neural network: a log-linear part over the
// traditional covariates plus the scalar output of an MLP over
// (traditional, telematics), passed through softplus.
//
//   mu = softplus(<[1, x_trad], beta> + mlp([x_trad, x_tele]))

#include <Eigen/Dense>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cann/count_distributions.hpp"
#include "cann/error.hpp"
#include "cann/features/preprocessing.hpp"
#include "cann/nn/mlp.hpp"
#include "cann/panel.hpp"
#include "cann/special_math.hpp"
#include "json.hpp"

namespace cann {

using Eigen::MatrixXd;
using Eigen::VectorXd;

struct CannParameters {
  Family head = Family::poisson;
  VectorXd beta;  // intercept first
  nn::MlpParams theta;
  std::optional<double> w_phi;  // phi = softplus(w_phi), absent for the Poisson head
  bool beta_trainable = true;

  double phi() const { return w_phi ? special::softplus(*w_phi) : 0.0; }

  void validate(Eigen::Index trad_width, Eigen::Index mlp_width) const {
    if (beta.size() != trad_width + 1) {
      throw ShapeError("beta has " + std::to_string(beta.size()) + " entries, expected " +
                       std::to_string(trad_width + 1));
    }
    if (theta.input_width() != mlp_width) {
      throw ShapeError("network input width " + std::to_string(theta.input_width()) + ", expected " +
                       std::to_string(mlp_width));
    }
    if (has_dispersion(head) != w_phi.has_value()) throw DataError("w_phi must be present iff the head has a dispersion");
  }
};

/// <X_i, beta> summed in column order, row by row.
inline VectorXd linear_predictor(const MatrixXd& X, const VectorXd& beta) {
  if (X.cols() != beta.size()) throw ShapeError("linear_predictor: width mismatch");
  VectorXd eta(X.rows());
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    double s = 0.0;
    for (Eigen::Index j = 0; j < X.cols(); ++j) s += X(i, j) * beta(j);
    eta(i) = s;
  }
  return eta;
}

inline VectorXd softplus(const VectorXd& eta) {
  VectorXd mu(eta.size());
  for (Eigen::Index i = 0; i < eta.size(); ++i) mu(i) = special::softplus(eta(i));
  return mu;
}

/// Eval-mode means for a block of rows. `design` carries the intercept.
inline VectorXd cann_predict_mu(const CannParameters& p, const MatrixXd& design, const MatrixXd& mlp_input) {
  if (design.rows() != mlp_input.rows()) throw ShapeError("cann_predict_mu: row count mismatch");
  p.validate(design.cols() - 1, mlp_input.cols());
  return softplus(linear_predictor(design, p.beta) + nn::mlp_predict(p.theta, mlp_input));
}

inline VectorXd cann_predict_mu(const CannParameters& p, const features::LearningSet& s) {
  return cann_predict_mu(p, s.design(features::CovariateMode::trad), s.mlp_input());
}

/// Single-contract forward pass (eval mode).
inline double cann_forward(const CannParameters& p, std::span<const double> x_trad, std::span<const double> x_tele) {
  const auto nt = static_cast<Eigen::Index>(x_trad.size());
  const auto nk = static_cast<Eigen::Index>(x_tele.size());
  MatrixXd design(1, nt + 1), in(1, nt + nk);
  design(0, 0) = 1.0;
  for (Eigen::Index j = 0; j < nt; ++j) design(0, j + 1) = in(0, j) = x_trad[static_cast<std::size_t>(j)];
  for (Eigen::Index j = 0; j < nk; ++j) in(0, nt + j) = x_tele[static_cast<std::size_t>(j)];
  return cann_predict_mu(p, design, in)(0);
}

/// History states of a split built from the model's own eval-mode means.
inline std::vector<HistoryState> cann_histories(const CannParameters& p, const features::LearningSet& s) {
  const VectorXd mu = cann_predict_mu(p, s);
  return build_history(s.panel, s.y, std::span<const double>(mu.data(), static_cast<std::size_t>(mu.size())));
}

/// Average head cross-entropy given means and (for mvnb) history states.
inline double average_head_loss(Family head, double phi, std::span<const Count> y, const VectorXd& mu,
                                std::span<const HistoryState> hist) {
  if (y.empty()) throw DataError("average_head_loss: empty data");
  double total = 0.0;
  const HistoryState none{};
  for (std::size_t i = 0; i < y.size(); ++i) {
    const HistoryState& h = head == Family::mvnb ? hist[i] : none;
    total -= family_log_pmf(head, y[i], mu(static_cast<Eigen::Index>(i)), phi, h);
  }
  return total / static_cast<double>(y.size());
}

/// Average head loss on a split, with mvnb histories rebuilt from the model.
inline double average_head_loss(const CannParameters& p, const features::LearningSet& s) {
  const VectorXd mu = cann_predict_mu(p, s);
  std::vector<HistoryState> hist;
  if (p.head == Family::mvnb) hist = build_history(s.panel, s.y, std::span<const double>(mu.data(), s.rows()));
  return average_head_loss(p.head, p.phi(), s.y, mu, hist);
}

namespace detail {

inline nlohmann::ordered_json row_json(const Eigen::Ref<const Eigen::MatrixXd>& m) {
  nlohmann::ordered_json a = nlohmann::ordered_json::array();
  for (Eigen::Index i = 0; i < m.size(); ++i) a.push_back(m.data()[i]);
  return a;
}

template <class T>
void fill_from_json(T& t, const nlohmann::ordered_json& a, const std::string& name) {
  if (static_cast<Eigen::Index>(a.size()) != t.size()) throw DataError("tensor " + name + " has the wrong size");
  for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = a[static_cast<std::size_t>(i)].get<double>();
}

}  // namespace detail

inline nlohmann::ordered_json to_json(const nn::MlpParams& p) {
  nlohmann::ordered_json j;
  j["input_width"] = p.input_width();
  std::vector<Eigen::Index> widths;
  for (const auto& d : p.hidden) widths.push_back(d.weight.rows());
  j["layer_widths"] = widths;
  j["dropout_p"] = p.dropout_p;
  j["batchnorm_momentum"] = p.momentum;
  j["batchnorm_eps"] = p.eps;
  nlohmann::ordered_json tensors = nlohmann::ordered_json::object();
  p.for_each_trainable([&](const std::string& name, const auto& t) { tensors[name] = detail::row_json(t); });
  tensors["input_norm.running_mean"] = detail::row_json(p.input_norm.running_mean);
  tensors["input_norm.running_var"] = detail::row_json(p.input_norm.running_var);
  for (std::size_t l = 0; l < p.hidden_norm.size(); ++l) {
    tensors["hidden." + std::to_string(l) + ".norm.running_mean"] = detail::row_json(p.hidden_norm[l].running_mean);
    tensors["hidden." + std::to_string(l) + ".norm.running_var"] = detail::row_json(p.hidden_norm[l].running_var);
  }
  j["tensors"] = tensors;
  return j;
}

inline nn::MlpParams mlp_from_json(const nlohmann::ordered_json& j) {
  nn::MlpConfig cfg;
  cfg.layer_widths = j.at("layer_widths").get<std::vector<int>>();
  cfg.dropout_p = j.at("dropout_p").get<double>();
  cfg.batchnorm_momentum = j.at("batchnorm_momentum").get<double>();
  cfg.batchnorm_eps = j.at("batchnorm_eps").get<double>();
  nn::MlpParams p = nn::init_mlp(j.at("input_width").get<int>(), cfg);
  const auto& t = j.at("tensors");
  p.for_each_trainable([&](const std::string& name, auto& x) { detail::fill_from_json(x, t.at(name), name); });
  detail::fill_from_json(p.input_norm.running_mean, t.at("input_norm.running_mean"), "input_norm.running_mean");
  detail::fill_from_json(p.input_norm.running_var, t.at("input_norm.running_var"), "input_norm.running_var");
  for (std::size_t l = 0; l < p.hidden_norm.size(); ++l) {
    const std::string pre = "hidden." + std::to_string(l) + ".norm.";
    detail::fill_from_json(p.hidden_norm[l].running_mean, t.at(pre + "running_mean"), pre + "running_mean");
    detail::fill_from_json(p.hidden_norm[l].running_var, t.at(pre + "running_var"), pre + "running_var");
  }
  return p;
}

inline nlohmann::ordered_json to_json(const CannParameters& p) {
  nlohmann::ordered_json j;
  j["head"] = std::string(to_string(p.head));
  j["beta"] = detail::row_json(p.beta);
  j["w_phi"] = p.w_phi ? nlohmann::ordered_json(*p.w_phi) : nlohmann::ordered_json(nullptr);
  j["phi"] = p.w_phi ? nlohmann::ordered_json(p.phi()) : nlohmann::ordered_json(nullptr);
  j["beta_trainable"] = p.beta_trainable;
  j["network"] = to_json(p.theta);
  return j;
}

inline CannParameters cann_parameters_from_json(const nlohmann::ordered_json& j) {
  CannParameters p;
  p.head = parse_family(j.at("head").get<std::string>());
  const auto& b = j.at("beta");
  p.beta.resize(static_cast<Eigen::Index>(b.size()));
  detail::fill_from_json(p.beta, b, "beta");
  if (!j.at("w_phi").is_null()) p.w_phi = j.at("w_phi").get<double>();
  p.beta_trainable = j.at("beta_trainable").get<bool>();
  p.theta = mlp_from_json(j.at("network"));
  return p;
}

}  // namespace cann
