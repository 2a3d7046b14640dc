#pragma once

// Log-PMFs, per-observation losses and analytic gradients for the Poisson,
// negative binomial and history-conditional MVNB count models. Losses are
// negative log-likelihoods of a single observation; averaging over a batch
// is the caller's job.

#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>

#include "cann/error.hpp"
#include "cann/special_math.hpp"

namespace cann {

using Count = std::int64_t;

enum class Family { poisson, negbin, mvnb };

inline std::string_view to_string(Family f) {
  switch (f) {
    case Family::poisson: return "poisson";
    case Family::negbin: return "negbin";
    case Family::mvnb: return "mvnb";
  }
  return "?";
}

inline Family parse_family(std::string_view s) {
  if (s == "poisson") return Family::poisson;
  if (s == "negbin" || s == "nb") return Family::negbin;
  if (s == "mvnb") return Family::mvnb;
  throw DataError("unknown family '" + std::string(s) + "' (expected poisson|negbin|mvnb)");
}

inline bool has_dispersion(Family f) { return f != Family::poisson; }

struct PoissonParams {
  double mu;
};

struct NegBinParams {
  double mu;
  double phi;
};

struct MvnbCondParams {
  double mu;
  double alpha;
  double gamma;
};

/// Claims history of one contract within its vehicle: the number of claims
/// and the sum of fitted means over strictly earlier contracts.
struct HistoryState {
  Count sum_past_claims = 0;
  double sum_past_mu = 0.0;
};

struct PoissonLossGrad {
  double loss;
  double dloss_dmu;
};

struct NegBinLossGrad {
  double loss;
  double dloss_dmu;
  double dloss_dphi;
};

namespace detail {

inline void check_count(Count y) {
  if (y < 0) throw DomainError("count must be >= 0, got " + std::to_string(y));
}

inline void check_positive(double v, const char* what) {
  if (!(v > 0.0) || !std::isfinite(v)) {
    throw DomainError(std::string(what) + " must be finite and > 0, got " + std::to_string(v));
  }
}

inline void check_history(const HistoryState& h) {
  if (h.sum_past_claims < 0 || !(h.sum_past_mu >= 0.0) || !std::isfinite(h.sum_past_mu)) {
    throw DomainError("history sums must be finite and >= 0");
  }
}

// Log-PMF of the (mu, alpha, gamma) negative binomial shared by the NB and
// MVNB models, together with its partials in mu, alpha and gamma.
struct GeneralNb {
  double log_pmf;
  double dlog_dmu;
  double dlog_dalpha;
  double dlog_dgamma;
};

inline GeneralNb general_nb(Count y, double mu, double alpha, double gamma) {
  const double yd = static_cast<double>(y);
  const double log_ratio = -std::log1p(mu / gamma);  // ln(gamma / (gamma + mu))
  GeneralNb r{};
  r.log_pmf = special::log_rising(alpha, y) - special::log_factorial(y) + alpha * log_ratio;
  if (y > 0) r.log_pmf += yd * std::log(mu / (mu + gamma));
  r.dlog_dmu = (y > 0 ? yd / mu : 0.0) - (alpha + yd) / (gamma + mu);
  r.dlog_dalpha = special::digamma_rising(alpha, y) + log_ratio;
  r.dlog_dgamma = (alpha * mu / gamma - yd) / (gamma + mu);
  return r;
}

}  // namespace detail

inline double poisson_log_pmf(Count y, PoissonParams p) {
  detail::check_count(y);
  detail::check_positive(p.mu, "poisson mu");
  const double yd = static_cast<double>(y);
  return (y > 0 ? yd * std::log(p.mu) : 0.0) - p.mu - special::log_factorial(y);
}

inline PoissonLossGrad poisson_loss_grad(Count y, PoissonParams p) {
  const double lp = poisson_log_pmf(y, p);
  return {-lp, 1.0 - static_cast<double>(y) / p.mu};
}

inline double negbin_log_pmf(Count y, NegBinParams p) {
  detail::check_count(y);
  detail::check_positive(p.mu, "negbin mu");
  detail::check_positive(p.phi, "negbin phi");
  return detail::general_nb(y, p.mu, p.phi, p.phi).log_pmf;
}

inline NegBinLossGrad negbin_loss_grad(Count y, NegBinParams p) {
  detail::check_count(y);
  detail::check_positive(p.mu, "negbin mu");
  detail::check_positive(p.phi, "negbin phi");
  const auto g = detail::general_nb(y, p.mu, p.phi, p.phi);
  return {-g.log_pmf, -g.dlog_dmu, -(g.dlog_dalpha + g.dlog_dgamma)};
}

inline double mvnb_cond_log_pmf(Count y, MvnbCondParams p) {
  detail::check_count(y);
  detail::check_positive(p.mu, "mvnb mu");
  detail::check_positive(p.alpha, "mvnb alpha");
  detail::check_positive(p.gamma, "mvnb gamma");
  return detail::general_nb(y, p.mu, p.alpha, p.gamma).log_pmf;
}

inline MvnbCondParams mvnb_params(double mu, double phi, const HistoryState& h) {
  detail::check_positive(phi, "mvnb phi");
  detail::check_history(h);
  return {mu, phi + static_cast<double>(h.sum_past_claims), phi + h.sum_past_mu};
}

/// Loss and gradients of the history-conditional MVNB. The history sums are
/// treated as constants, so d alpha / d phi = d gamma / d phi = 1.
inline NegBinLossGrad mvnb_loss_grad(Count y, double mu, double phi, const HistoryState& h) {
  detail::check_count(y);
  detail::check_positive(mu, "mvnb mu");
  const auto p = mvnb_params(mu, phi, h);
  const auto g = detail::general_nb(y, mu, p.alpha, p.gamma);
  return {-g.log_pmf, -g.dlog_dmu, -(g.dlog_dalpha + g.dlog_dgamma)};
}

/// E[Y_t | history] = mu (phi + sum past claims) / (phi + sum past mu).
inline double mvnb_predictive_mean(double mu, double phi, const HistoryState& h) {
  detail::check_positive(mu, "mvnb mu");
  const auto p = mvnb_params(mu, phi, h);
  return mu * (p.alpha / p.gamma);
}

// Family-generic dispatch used by the GLM and CANN heads. `phi` is ignored
// for the Poisson family and `h` is ignored unless the family is mvnb.

inline NegBinLossGrad family_loss_grad(Family f, Count y, double mu, double phi,
                                       const HistoryState& h) {
  switch (f) {
    case Family::poisson: {
      const auto r = poisson_loss_grad(y, {mu});
      return {r.loss, r.dloss_dmu, 0.0};
    }
    case Family::negbin: return negbin_loss_grad(y, {mu, phi});
    case Family::mvnb: return mvnb_loss_grad(y, mu, phi, h);
  }
  throw DomainError("unknown family");
}

inline double family_log_pmf(Family f, Count y, double mu, double phi, const HistoryState& h) {
  switch (f) {
    case Family::poisson: return poisson_log_pmf(y, {mu});
    case Family::negbin: return negbin_log_pmf(y, {mu, phi});
    case Family::mvnb: return mvnb_cond_log_pmf(y, mvnb_params(mu, phi, h));
  }
  throw DomainError("unknown family");
}

inline double family_predictive_mean(Family f, double mu, double phi, const HistoryState& h) {
  if (f == Family::mvnb) return mvnb_predictive_mean(mu, phi, h);
  detail::check_positive(mu, "mu");
  return mu;
}

}  // namespace cann
