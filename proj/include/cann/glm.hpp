#pragma once

// Log-linear count regression (mu = exp(<x, beta>)) for the Poisson,
// negative binomial and MVNB families. Used as a benchmark and as the
// initializer of the CANN log-linear component.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cann/count_distributions.hpp"
#include "cann/error.hpp"
#include "cann/panel.hpp"
#include "json.hpp"

namespace cann::glm {

using Eigen::MatrixXd;
using Eigen::VectorXd;

struct GlmOptions {
  int max_iters = 500;
  double grad_tol = 1e-8;
  double initial_phi = 1.0;
  // Starting coefficients; defaults to (ln mean(y), 0, ..., 0).
  std::optional<VectorXd> initial_beta;
  // MVNB only: outer refreshes of the past-mu sums.
  int max_history_updates = 100;
  double history_tol = 1e-8;
  // |beta|_inf beyond this is reported as divergence (separation).
  double divergence_bound = 1e3;
  // A fitted mean more than e^this below the sample mean means some rows are
  // being pushed towards mu = 0, i.e. (quasi-)separation.
  double separation_log_ratio = 12.0;
};

struct GlmFit {
  VectorXd beta;
  std::optional<double> phi;
  Family family = Family::poisson;
  bool converged = false;
  double final_loss = 0.0;
  int iterations = 0;
  std::vector<std::string> names;  // covariate names, intercept first
};

/// Checks the design-matrix contract: finite entries, an all-ones first column.
inline void validate_design(const MatrixXd& X) {
  if (X.cols() < 1) throw ShapeError("design matrix has no columns");
  if (!X.allFinite()) throw DataError("design matrix has non-finite entries");
  if ((X.col(0).array() != 1.0).any()) throw DataError("first design column must be all ones");
}

namespace detail {

using EvalFn = std::function<double(const VectorXd&, VectorXd&)>;

struct BfgsResult {
  VectorXd x;
  double f = 0.0;
  VectorXd g;
  int iterations = 0;
  bool converged = false;
};

inline double max_abs(const VectorXd& v) { return v.size() ? v.cwiseAbs().maxCoeff() : 0.0; }

// Quasi-Newton minimizer: BFGS inverse-Hessian updates with Armijo
// backtracking. `hess_inv` carries curvature between calls (empty = identity).
inline BfgsResult minimize_bfgs(const EvalFn& eval, VectorXd x, int max_iters, double grad_tol,
                                MatrixXd& hess_inv, std::size_t beta_dim, double divergence_bound) {
  const Eigen::Index n = x.size();
  if (hess_inv.rows() != n) hess_inv = MatrixXd::Identity(n, n);
  BfgsResult r;
  VectorXd g(n);
  double f = eval(x, g);
  if (!std::isfinite(f)) throw NumericalError("GLM objective is not finite at the starting point");
  bool fresh = true;
  int it = 0;
  for (; it < max_iters; ++it) {
    if (max_abs(g) < grad_tol) break;
    VectorXd d = -hess_inv * g;
    if (g.dot(d) >= 0.0) {
      hess_inv.setIdentity();
      d = -g;
    }
    double t = 1.0;
    if (fresh) t = std::min(1.0, 1.0 / std::max(max_abs(g), 1e-300));
    VectorXd xn(n), gn(n);
    double fn = 0.0;
    bool accepted = false;
    const double slope = g.dot(d);
    for (int k = 0; k < 60; ++k) {
      xn = x + t * d;
      fn = eval(xn, gn);
      if (std::isfinite(fn)) {
        if (fn <= f + 1e-4 * t * slope) {
          accepted = true;
          break;
        }
        // Within rounding of the optimum the loss cannot decrease measurably;
        // accept steps that still shrink the gradient.
        if (fn <= f + 1e-14 * std::fabs(f) && max_abs(gn) < max_abs(g)) {
          accepted = true;
          break;
        }
      }
      t *= 0.5;
    }
    if (!accepted) {
      if (!fresh || !hess_inv.isIdentity()) {
        hess_inv.setIdentity();
        fresh = true;
        continue;
      }
      break;
    }
    const VectorXd s = xn - x;
    const VectorXd yv = gn - g;
    const double sy = s.dot(yv);
    if (sy > 1e-12 * s.norm() * yv.norm()) {
      if (fresh) hess_inv *= sy / yv.squaredNorm();
      const double rho = 1.0 / sy;
      const VectorXd hy = hess_inv * yv;
      const double yhy = yv.dot(hy);
      hess_inv += (rho * rho * yhy + rho) * (s * s.transpose()) -
                  rho * (hy * s.transpose() + s * hy.transpose());
      fresh = false;
    }
    x = xn;
    f = fn;
    g = gn;
    if (max_abs(x.head(static_cast<Eigen::Index>(beta_dim))) > divergence_bound) {
      throw NumericalError("GLM coefficients diverge (|beta|_inf > " +
                           std::to_string(divergence_bound) +
                           "); the data are likely separated");
    }
  }
  r.x = std::move(x);
  r.f = f;
  r.g = std::move(g);
  r.iterations = it;
  r.converged = max_abs(r.g) < grad_tol;
  return r;
}

// Average family loss and its gradient in (beta, s) where phi = exp(s).
// History sums are held fixed.
inline double objective(const MatrixXd& X, std::span<const Count> y, Family family,
                        std::span<const HistoryState> hist, const VectorXd& theta,
                        VectorXd& grad) {
  const Eigen::Index p = X.cols();
  const bool disp = has_dispersion(family);
  const VectorXd beta = theta.head(p);
  const double phi = disp ? std::exp(theta(p)) : 1.0;
  if (disp && !(phi > 0.0 && std::isfinite(phi))) return std::numeric_limits<double>::infinity();
  const VectorXd eta = X * beta;
  const auto n = static_cast<Eigen::Index>(y.size());
  VectorXd g_eta(n);
  double loss = 0.0;
  double g_s = 0.0;
  static const HistoryState kNone{};
  for (Eigen::Index i = 0; i < n; ++i) {
    const double mu = std::exp(eta(i));
    if (!(mu > 0.0) || !std::isfinite(mu)) return std::numeric_limits<double>::infinity();
    const auto& h = family == Family::mvnb ? hist[static_cast<std::size_t>(i)] : kNone;
    const auto lg = family_loss_grad(family, y[static_cast<std::size_t>(i)], mu, phi, h);
    loss += lg.loss;
    g_eta(i) = lg.dloss_dmu * mu;
    g_s += lg.dloss_dphi * phi;
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  grad.resize(theta.size());
  grad.head(p) = (X.transpose() * g_eta) * inv_n;
  if (disp) grad(p) = g_s * inv_n;
  return loss * inv_n;
}

inline std::vector<HistoryState> histories(const MatrixXd& X, const VectorXd& beta,
                                           std::span<const Count> y, const Panel& panel) {
  const VectorXd eta = X * beta;
  std::vector<double> mu(static_cast<std::size_t>(eta.size()));
  for (Eigen::Index i = 0; i < eta.size(); ++i) mu[static_cast<std::size_t>(i)] = std::exp(eta(i));
  return build_history(panel, y, mu);
}

inline void check_separation(const MatrixXd& X, std::span<const Count> y, const VectorXd& beta, double log_ratio) {
  double ybar = 0.0;
  for (Count v : y) ybar += static_cast<double>(v);
  ybar /= static_cast<double>(y.size());
  if (ybar <= 0.0) return;
  const VectorXd eta = X * beta;
  Eigen::Index worst = 0;
  const double lowest = eta.minCoeff(&worst);
  if (lowest < std::log(ybar) - log_ratio) {
    Eigen::Index j = 0;
    if (beta.size() > 1) {
      beta.tail(beta.size() - 1).cwiseAbs().maxCoeff(&j);
      ++j;
    }
    throw NumericalError("GLM fit drives row " + std::to_string(worst) + " to mu = " + std::to_string(std::exp(lowest)) +
                         " (sample mean " + std::to_string(ybar) + "); the data look separated along coefficient " +
                         std::to_string(j) + " = " + std::to_string(beta(j)));
  }
}

}  // namespace detail

/// Average loss of `fit` on (X, y). For mvnb the history is rebuilt from the
/// fit's own means over `panel`.
inline double average_loss(const GlmFit& fit, const MatrixXd& X, std::span<const Count> y,
                           const Panel* panel = nullptr) {
  std::vector<HistoryState> hist;
  if (fit.family == Family::mvnb) {
    if (!panel) throw DataError("mvnb loss requires a vehicle panel");
    hist = detail::histories(X, fit.beta, y, *panel);
  }
  VectorXd theta(fit.beta.size() + (has_dispersion(fit.family) ? 1 : 0));
  theta.head(fit.beta.size()) = fit.beta;
  if (has_dispersion(fit.family)) theta(fit.beta.size()) = std::log(*fit.phi);
  VectorXd g;
  return detail::objective(X, y, fit.family, hist, theta, g);
}

/// Maximum-likelihood fit of a log-linear count model. `panel` is required
/// for (and only used by) the mvnb family.
inline GlmFit fit_log_linear(const MatrixXd& X, std::span<const Count> y, const Panel* panel,
                             Family family, const GlmOptions& opt = {}) {
  validate_design(X);
  if (static_cast<std::size_t>(X.rows()) != y.size() || y.empty()) {
    throw ShapeError("fit_log_linear: X has " + std::to_string(X.rows()) + " rows, y has " +
                     std::to_string(y.size()));
  }
  for (Count v : y)
    if (v < 0) throw DomainError("fit_log_linear: negative count");
  if (family == Family::mvnb) {
    if (!panel) throw DataError("mvnb fit requires a vehicle panel");
    panel->validate(y.size());
  }
  if (!(opt.initial_phi > 0.0)) throw DomainError("initial phi must be > 0");

  const Eigen::Index p = X.cols();
  const bool disp = has_dispersion(family);
  VectorXd theta = VectorXd::Zero(p + (disp ? 1 : 0));
  if (opt.initial_beta) {
    if (opt.initial_beta->size() != p) throw ShapeError("initial_beta has the wrong length");
    theta.head(p) = *opt.initial_beta;
  } else {
    double ybar = 0.0;
    for (Count v : y) ybar += static_cast<double>(v);
    ybar /= static_cast<double>(y.size());
    theta(0) = std::log(std::max(ybar, 1e-8));
  }
  if (disp) theta(p) = std::log(opt.initial_phi);

  MatrixXd hess_inv;
  GlmFit fit;
  fit.family = family;
  std::vector<HistoryState> hist;
  detail::BfgsResult res;
  auto run = [&](int budget) {
    detail::EvalFn fn = [&](const VectorXd& th, VectorXd& g) {
      return detail::objective(X, y, family, hist, th, g);
    };
    res = detail::minimize_bfgs(fn, theta, budget, opt.grad_tol, hess_inv,
                                static_cast<std::size_t>(p), opt.divergence_bound);
    theta = res.x;
    fit.iterations += res.iterations;
  };

  if (family != Family::mvnb) {
    run(opt.max_iters);
    fit.converged = res.converged;
  } else {
    // Alternate: freeze the past-mu sums at the current beta, optimize, and
    // refresh until the sums stop moving.
    hist = detail::histories(X, theta.head(p), y, *panel);
    double change = std::numeric_limits<double>::infinity();
    for (int outer = 0; outer < opt.max_history_updates; ++outer) {
      run(std::max(1, opt.max_iters - fit.iterations));
      auto fresh = detail::histories(X, theta.head(p), y, *panel);
      change = 0.0;
      for (std::size_t i = 0; i < fresh.size(); ++i) {
        change = std::max(change, std::fabs(fresh[i].sum_past_mu - hist[i].sum_past_mu));
      }
      hist = std::move(fresh);
      if (change < opt.history_tol && res.converged) break;
      if (fit.iterations >= opt.max_iters) break;
    }
    VectorXd g;
    detail::objective(X, y, family, hist, theta, g);
    fit.converged = change < opt.history_tol && detail::max_abs(g) < opt.grad_tol;
  }

  fit.beta = theta.head(p);
  if (disp) fit.phi = std::exp(theta(p));
  detail::check_separation(X, y, fit.beta, opt.separation_log_ratio);
  fit.final_loss = average_loss(fit, X, y, panel);
  return fit;
}

/// exp(X beta) row by row.
inline VectorXd glm_predict_mu(const GlmFit& fit, const MatrixXd& X) {
  if (X.cols() != fit.beta.size()) {
    throw ShapeError("glm_predict_mu: design has " + std::to_string(X.cols()) +
                     " columns, fit has " + std::to_string(fit.beta.size()));
  }
  return (X * fit.beta).array().exp().matrix();
}

/// Predictive mean; for mvnb fits with a panel, applies the history
/// correction mu (phi + past claims) / (phi + past mu).
inline VectorXd glm_predict_mean(const GlmFit& fit, const MatrixXd& X, std::span<const Count> y,
                                 const Panel* panel) {
  VectorXd mu = glm_predict_mu(fit, X);
  if (fit.family != Family::mvnb || !panel) return mu;
  std::vector<double> m(mu.data(), mu.data() + mu.size());
  const auto hist = build_history(*panel, y, m);
  for (Eigen::Index i = 0; i < mu.size(); ++i) {
    mu(i) = mvnb_predictive_mean(mu(i), *fit.phi, hist[static_cast<std::size_t>(i)]);
  }
  return mu;
}

inline nlohmann::ordered_json to_json(const GlmFit& fit) {
  nlohmann::ordered_json j;
  j["family"] = std::string(to_string(fit.family));
  nlohmann::ordered_json coefs = nlohmann::ordered_json::array();
  for (Eigen::Index i = 0; i < fit.beta.size(); ++i) {
    const auto k = static_cast<std::size_t>(i);
    coefs.push_back({{"name", k < fit.names.size() ? fit.names[k] : "x" + std::to_string(i)},
                     {"value", fit.beta(i)}});
  }
  j["coefficients"] = coefs;
  j["phi"] = fit.phi ? nlohmann::ordered_json(*fit.phi) : nlohmann::ordered_json(nullptr);
  j["converged"] = fit.converged;
  j["final_loss"] = fit.final_loss;
  j["iterations"] = fit.iterations;
  return j;
}

inline GlmFit glm_fit_from_json(const nlohmann::ordered_json& j) {
  GlmFit fit;
  fit.family = parse_family(j.at("family").get<std::string>());
  const auto& coefs = j.at("coefficients");
  fit.beta.resize(static_cast<Eigen::Index>(coefs.size()));
  for (std::size_t i = 0; i < coefs.size(); ++i) {
    fit.names.push_back(coefs[i].at("name").get<std::string>());
    fit.beta(static_cast<Eigen::Index>(i)) = coefs[i].at("value").get<double>();
  }
  if (!j.at("phi").is_null()) fit.phi = j.at("phi").get<double>();
  fit.converged = j.at("converged").get<bool>();
  fit.final_loss = j.at("final_loss").get<double>();
  fit.iterations = j.at("iterations").get<int>();
  return fit;
}

}  // namespace cann::glm
