#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <vector>

#include "cann/nn/optim.hpp"

using namespace cann;
using namespace cann::nn;

TEST(Adam, ZeroGradientLeavesParameters) {
  AdamState s(3);
  std::vector<double> p{1.0, -2.0, 0.5};
  const auto before = p;
  const std::vector<double> g(3, 0.0);
  for (int k = 0; k < 5; ++k) adam_step(s, p, g, 0.1);
  EXPECT_EQ(p, before);
}

TEST(Adam, FirstStepHandComputed) {
  // m1 = 0.1, v1 = 0.001; bias-corrected mhat = 1, vhat = 1, so the step is
  // lr / (1 + eps).
  AdamState s(1);
  std::vector<double> p{0.0};
  const std::vector<double> g{1.0};
  adam_step(s, p, g, 0.1);
  EXPECT_NEAR(p[0], -0.1 / (1.0 + 1e-8), 1e-15);
  // Second step with the same gradient: m2 = 0.19, v2 = 0.001999.
  adam_step(s, p, g, 0.1);
  const double mhat = 0.19 / (1 - 0.81), vhat = 0.001999 / (1 - 0.998001);
  EXPECT_NEAR(p[0], -0.1 / (1.0 + 1e-8) - 0.1 * mhat / (std::sqrt(vhat) + 1e-8), 1e-14);
}

TEST(Adam, Deterministic) {
  auto run = [] {
    AdamState s(4);
    std::vector<double> p{0.3, -0.2, 1.0, 2.0};
    for (int k = 0; k < 100; ++k) {
      std::vector<double> g(4);
      for (std::size_t i = 0; i < 4; ++i) g[i] = std::sin(p[i] * (k + 1)) + 0.1 * p[i];
      adam_step(s, p, g, 0.01);
    }
    return p;
  };
  EXPECT_EQ(run(), run());
}

TEST(Adam, RejectsBadInput) {
  AdamState s(2);
  std::vector<double> p{0.0, 0.0};
  std::vector<double> bad{1.0, std::numeric_limits<double>::quiet_NaN()};
  EXPECT_THROW(adam_step(s, p, bad, 0.1), NumericalError);
  EXPECT_EQ(s.step, 0);
  std::vector<double> short_g{1.0};
  EXPECT_THROW(adam_step(s, p, short_g, 0.1), ShapeError);
}

namespace {

std::vector<double> lr_trace(const std::vector<double>& losses, double factor) {
  PlateauScheduler s(1.0, factor);
  std::vector<double> out;
  for (double l : losses) {
    s.step(l);
    out.push_back(s.current_lr);
  }
  return out;
}

}  // namespace

TEST(Plateau, ImprovingNeverReduces) {
  EXPECT_EQ(lr_trace({1.0, 0.9, 0.8}, 0.5), (std::vector<double>{1.0, 1.0, 1.0}));
}

TEST(Plateau, FlatReducesAtThirdEpoch) {
  EXPECT_EQ(lr_trace({1.0, 1.0, 1.0}, 0.3), (std::vector<double>{1.0, 1.0, 0.3}));
}

TEST(Plateau, HandTracedCounter) {
  // 0.95 and 0.93 are both worse than 0.9: the counter hits 2 at epoch 4 and
  // resets; 0.91 is still worse, counter 1.
  EXPECT_EQ(lr_trace({1.0, 0.9, 0.95, 0.93, 0.91}, 0.5), (std::vector<double>{1.0, 1.0, 1.0, 0.5, 0.5}));
}

TEST(Plateau, LrNonIncreasingAndValidated) {
  const auto t = lr_trace({3, 2, 2, 2, 2, 2, 1, 1, 1, 5, 5}, 0.7);
  for (std::size_t i = 1; i < t.size(); ++i) EXPECT_LE(t[i], t[i - 1]);
  EXPECT_THROW(PlateauScheduler(0.1, 1.0), DataError);
  EXPECT_THROW(PlateauScheduler(0.1, 0.0), DataError);
  EXPECT_THROW(PlateauScheduler(-1.0, 0.5), DataError);
}
