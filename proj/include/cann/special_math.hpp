#pragma once

// Special functions and activation primitives used by the count losses.
// Everything here is a pure function of its arguments.

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>

#include "cann/error.hpp"

namespace cann::special {

inline constexpr double kHalfLog2Pi = 0.91893853320467274178;  // ln(sqrt(2 pi))

namespace detail {

// Godfrey's 15-term Lanczos coefficients for g = 607/128.
inline constexpr double kLanczosG = 607.0 / 128.0;
inline constexpr std::array<double, 15> kLanczosCoef = {
    0.99999999999999709182,     57.156235665862923517,
    -59.597960355475491248,     14.136097974741747174,
    -0.49191381609762019978,    0.33994649984811888699e-4,
    0.46523628927048575665e-4,  -0.98374475304879564677e-4,
    0.15808870322491248884e-3,  -0.21026444172410488319e-3,
    0.21743961811521264320e-3,  -0.16431810653676389022e-3,
    0.84418223983852743293e-4,  -0.26190838401581408670e-4,
    0.36899182659531622704e-5};

inline void require_positive(double x, const char* fn) {
  if (!(x > 0.0) || !std::isfinite(x)) {
    throw DomainError(std::string(fn) + ": argument must be finite and > 0, got " +
                      std::to_string(x));
  }
}

// ln Gamma(x) for x >= 0.5 via Lanczos.
inline double lanczos_log_gamma(double x) {
  const double z = x - 1.0;
  double series = kLanczosCoef[0];
  for (std::size_t k = 1; k < kLanczosCoef.size(); ++k) {
    series += kLanczosCoef[k] / (z + static_cast<double>(k));
  }
  const double t = z + kLanczosG + 0.5;
  return kHalfLog2Pi + (z + 0.5) * std::log(t) - t + std::log(series);
}

// Stirling series, used for large x where the Lanczos log terms cancel badly.
inline double stirling_log_gamma(double x) {
  const double inv = 1.0 / x;
  const double inv2 = inv * inv;
  const double corr =
      inv * (1.0 / 12.0 - inv2 * (1.0 / 360.0 - inv2 * (1.0 / 1260.0 - inv2 / 1680.0)));
  return (x - 0.5) * std::log(x) - x + kHalfLog2Pi + corr;
}

}  // namespace detail

/// ln Gamma(x) for x > 0.
inline double log_gamma(double x) {
  detail::require_positive(x, "log_gamma");
  if (x >= 1e4) return detail::stirling_log_gamma(x);
  if (x < 0.5) return detail::lanczos_log_gamma(x + 1.0) - std::log(x);
  return detail::lanczos_log_gamma(x);
}

/// psi(x) = d/dx ln Gamma(x) for x > 0. Shifts x above 6 with the
/// recurrence psi(x) = psi(x + 1) - 1/x, then applies the asymptotic series.
inline double digamma(double x) {
  detail::require_positive(x, "digamma");
  double shift = 0.0;
  while (x < 6.0) {
    shift -= 1.0 / x;
    x += 1.0;
  }
  const double inv = 1.0 / x;
  const double inv2 = inv * inv;
  // Bernoulli terms B_2k / (2k x^2k), k = 1..7.
  const double tail =
      inv2 * (1.0 / 12.0 -
              inv2 * (1.0 / 120.0 -
                      inv2 * (1.0 / 252.0 -
                              inv2 * (1.0 / 240.0 -
                                      inv2 * (1.0 / 132.0 -
                                              inv2 * (691.0 / 32760.0 - inv2 / 12.0))))));
  return shift + std::log(x) - 0.5 * inv - tail;
}

/// ln[Gamma(a + n) / Gamma(a)] for integer n >= 0. Small n uses the exact
/// product sum, which avoids cancelling two huge log-gammas when a is large.
inline double log_rising(double a, std::int64_t n) {
  detail::require_positive(a, "log_rising");
  if (n < 0) throw DomainError("log_rising: n must be >= 0");
  if (n <= 64) {
    double s = 0.0;
    for (std::int64_t k = 0; k < n; ++k) s += std::log(a + static_cast<double>(k));
    return s;
  }
  return log_gamma(a + static_cast<double>(n)) - log_gamma(a);
}

/// psi(a + n) - psi(a) for integer n >= 0.
inline double digamma_rising(double a, std::int64_t n) {
  detail::require_positive(a, "digamma_rising");
  if (n < 0) throw DomainError("digamma_rising: n must be >= 0");
  if (n <= 64) {
    double s = 0.0;
    for (std::int64_t k = 0; k < n; ++k) s += 1.0 / (a + static_cast<double>(k));
    return s;
  }
  return digamma(a + static_cast<double>(n)) - digamma(a);
}

/// ln(n!) for integer n >= 0.
inline double log_factorial(std::int64_t n) {
  if (n < 0) throw DomainError("log_factorial: n must be >= 0");
  if (n < 2) return 0.0;
  return log_gamma(static_cast<double>(n) + 1.0);
}

/// softplus(x) = ln(1 + e^x), evaluated as max(x, 0) + log1p(e^-|x|).
inline double softplus(double x) {
  return std::max(x, 0.0) + std::log1p(std::exp(-std::fabs(x)));
}

/// d softplus / dx, i.e. the logistic sigmoid.
inline double softplus_grad(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

/// Inverse of softplus on (0, inf): ln(e^y - 1).
inline double softplus_inverse(double y) {
  detail::require_positive(y, "softplus_inverse");
  if (y > 30.0) return y + std::log(-std::expm1(-y));
  return std::log(std::expm1(y));
}

}  // namespace cann::special
