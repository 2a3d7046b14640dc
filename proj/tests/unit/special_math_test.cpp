#include <gtest/gtest.h>

#include <boost/math/special_functions/digamma.hpp>
#include <boost/math/special_functions/gamma.hpp>
#include <cmath>
#include <limits>
#include <random>

#include "cann/special_math.hpp"

namespace sm = cann::special;

namespace {

// Independent oracle: shift x up by the recurrence, then a long Stirling
// series with Bernoulli coefficients through B_20.
long double stirling_oracle(long double x) {
  long double shift = 0.0L;
  while (x < 30.0L) {
    shift -= std::log(x);
    x += 1.0L;
  }
  static const long double b[] = {1.0L / 6, -1.0L / 30, 1.0L / 42, -1.0L / 30, 5.0L / 66,
                                  -691.0L / 2730, 7.0L / 6, -3617.0L / 510, 43867.0L / 798,
                                  -174611.0L / 330};
  long double s = (x - 0.5L) * std::log(x) - x + 0.5L * std::log(2.0L * 3.14159265358979323846264L);
  long double xp = x;
  for (int k = 1; k <= 10; ++k) {
    s += b[k - 1] / (2.0L * k * (2.0L * k - 1.0L) * xp);
    xp *= x * x;
  }
  return s + shift;
}

double rel_err(double got, double want) { return std::fabs(got - want) / std::max(1.0, std::fabs(want)); }

}  // namespace

TEST(LogGamma, KnownValues) {
  EXPECT_EQ(sm::log_gamma(1.0), 0.0);
  EXPECT_NEAR(sm::log_gamma(0.5), 0.5723649429247001, 1e-12);
  EXPECT_NEAR(sm::log_gamma(2.0), 0.0, 1e-14);
}

TEST(LogGamma, SevenPointThreeAgainstSeparateSeries) {
  const double oracle = static_cast<double>(stirling_oracle(7.3L));
  EXPECT_LT(rel_err(sm::log_gamma(7.3), oracle), 1e-12);
  // The library's own two routes agree as well.
  EXPECT_LT(rel_err(sm::detail::lanczos_log_gamma(7.3), oracle), 1e-12);
}

TEST(LogGamma, AccuracyAcrossRange) {
  // Relative error near the zeros at 1 and 2 is measured against max(1, |value|).
  for (double x = 1e-3; x <= 1e6; x *= 1.37) {
    const double want = boost::math::lgamma(static_cast<long double>(x));
    EXPECT_LT(rel_err(sm::log_gamma(x), want), 1e-12) << "x=" << x;
  }
}

TEST(LogGamma, StirlingAndLanczosAgreeAtSwitch) {
  EXPECT_LT(rel_err(sm::detail::lanczos_log_gamma(1e4), sm::detail::stirling_log_gamma(1e4)), 1e-12);
}

TEST(LogGamma, RecurrenceProperty) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(std::log(0.1), std::log(1e5));
  for (int i = 0; i < 2000; ++i) {
    const double x = std::exp(u(rng));
    const double lhs = sm::log_gamma(x + 1.0);
    const double rhs = sm::log_gamma(x) + std::log(x);
    EXPECT_LT(std::fabs(lhs - rhs) / std::max(1.0, std::fabs(lhs)), 1e-11) << "x=" << x;
  }
}

TEST(LogGamma, DomainErrors) {
  EXPECT_THROW(sm::log_gamma(0.0), cann::DomainError);
  EXPECT_THROW(sm::log_gamma(-1.5), cann::DomainError);
  EXPECT_THROW(sm::log_gamma(std::numeric_limits<double>::infinity()), cann::DomainError);
  EXPECT_THROW(sm::log_gamma(std::numeric_limits<double>::quiet_NaN()), cann::DomainError);
}

TEST(Digamma, KnownValues) {
  EXPECT_NEAR(sm::digamma(1.0), -0.5772156649015329, 1e-12);
  EXPECT_NEAR(sm::digamma(2.0), 0.4227843350984671, 1e-12);
}

TEST(Digamma, FiniteDifferenceOfLogGamma) {
  const double h = 1e-6;
  const double fd = (sm::log_gamma(3.7 + h) - sm::log_gamma(3.7 - h)) / (2 * h);
  EXPECT_NEAR(sm::digamma(3.7), fd, 1e-6);
}

TEST(Digamma, AccuracyAcrossRange) {
  for (double x = 1e-3; x <= 1e6; x *= 1.29) {
    const double want = boost::math::digamma(static_cast<long double>(x));
    EXPECT_LT(rel_err(sm::digamma(x), want), 1e-10) << "x=" << x;
  }
}

TEST(Digamma, RecurrenceProperty) {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> u(std::log(1e-3), std::log(1e5));
  for (int i = 0; i < 2000; ++i) {
    const double x = std::exp(u(rng));
    EXPECT_NEAR(sm::digamma(x + 1.0), sm::digamma(x) + 1.0 / x, 1e-9 * std::max(1.0, 1.0 / x)) << x;
  }
}

TEST(Digamma, DomainErrors) {
  EXPECT_THROW(sm::digamma(0.0), cann::DomainError);
  EXPECT_THROW(sm::digamma(-2.0), cann::DomainError);
}

TEST(Rising, MatchesLogGammaDifference) {
  for (double a : {0.3, 1.0, 2.5, 40.0}) {
    for (std::int64_t n : {0, 1, 5, 64, 65, 300}) {
      const double want = sm::log_gamma(a + n) - sm::log_gamma(a);
      EXPECT_NEAR(sm::log_rising(a, n), want, 1e-9 * std::max(1.0, std::fabs(want)));
      const double dwant = boost::math::digamma(a + n) - boost::math::digamma(a);
      EXPECT_NEAR(sm::digamma_rising(a, n), dwant, 1e-9 * std::max(1.0, std::fabs(dwant)));
    }
  }
}

TEST(LogFactorial, SmallValues) {
  EXPECT_EQ(sm::log_factorial(0), 0.0);
  EXPECT_EQ(sm::log_factorial(1), 0.0);
  EXPECT_NEAR(sm::log_factorial(5), std::log(120.0), 1e-13);
  EXPECT_THROW(sm::log_factorial(-1), cann::DomainError);
}

TEST(Softplus, KnownValues) {
  EXPECT_NEAR(sm::softplus(0.0), std::log(2.0), 1e-15);
  EXPECT_NEAR(sm::softplus(50.0), 50.0, 1e-12);
  EXPECT_NEAR(sm::softplus(-50.0), std::exp(-50.0), 1e-15 * std::exp(-50.0));
  EXPECT_NEAR(sm::softplus(1000.0), 1000.0, 1e-12);
  EXPECT_GT(sm::softplus(-1000.0), -1.0);
  EXPECT_TRUE(std::isfinite(sm::softplus(-1000.0)));
}

TEST(Softplus, MonotoneGradInUnitIntervalAndOddPart) {
  double prev = -1.0;
  for (double x = -40.0; x <= 40.0; x += 0.01) {
    const double s = sm::softplus(x);
    EXPECT_GT(s, prev);
    prev = s;
    // The logistic rounds to exactly 1.0 in double precision beyond x ~ 36.7.
    const double g = sm::softplus_grad(x);
    EXPECT_GT(g, 0.0);
    if (x < 36.0) {
      EXPECT_LT(g, 1.0);
    }
    EXPECT_NEAR(sm::softplus(x) - sm::softplus(-x), x, 1e-12);
  }
}

TEST(Softplus, GradientIsDerivative) {
  const double h = 1e-6;
  for (double x : {-7.0, -1.3, 0.0, 0.4, 5.5}) {
    const double fd = (sm::softplus(x + h) - sm::softplus(x - h)) / (2 * h);
    EXPECT_NEAR(sm::softplus_grad(x), fd, 1e-8);
  }
}

TEST(Softplus, InverseRoundTrip) {
  for (double y : {1e-6, 0.01, 0.5, 1.0, 7.0, 35.0, 400.0}) {
    EXPECT_NEAR(sm::softplus(sm::softplus_inverse(y)), y, 1e-12 * std::max(1.0, y));
  }
  EXPECT_THROW(sm::softplus_inverse(0.0), cann::DomainError);
}
