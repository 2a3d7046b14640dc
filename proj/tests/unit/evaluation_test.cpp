#include <gtest/gtest.h>

#include <boost/math/special_functions/gamma.hpp>
#include <cmath>
#include <sstream>

#include "cann/evaluation.hpp"
#include "cann/training.hpp"
#include "support/pipeline.hpp"

using namespace cann;
using namespace cann::eval;
using features::LearningSet;

namespace {

const support::Sets& sets() {
  static const support::Sets s = support::make_sets(support::small_config(200, 3));
  return s;
}

// Tiny learning set with one traditional column and given counts.
LearningSet toy(const std::vector<Count>& y) {
  LearningSet s;
  const auto n = static_cast<Eigen::Index>(y.size());
  s.trad = Eigen::MatrixXd::Zero(n, 1);
  for (Eigen::Index i = 0; i < n; ++i) s.trad(i, 0) = static_cast<double>(i) / static_cast<double>(n);
  s.hand = Eigen::MatrixXd::Zero(n, 0);
  s.tele = Eigen::MatrixXd::Zero(n, 0);
  s.trad_names = {"x"};
  s.y = y;
  s.panel = Panel::singletons(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) {
    s.vin.push_back("V" + std::to_string(i));
    s.contract_index.push_back(1);
  }
  return s;
}

// mu = exp(b0 + b1 * x) on the first traditional column.
class ExpModel : public CountModel {
 public:
  ExpModel(double b0, double b1) : b0_(b0), b1_(b1) {}
  std::string name() const override { return "exp"; }
  Family family() const override { return Family::poisson; }
  Eigen::VectorXd predict_mu(const LearningSet& s) const override {
    return (b0_ + b1_ * s.trad.col(0).array()).exp().matrix();
  }

 private:
  double b0_, b1_;
};

// Mean equals the observed count (clamped away from zero).
class OracleModel : public CountModel {
 public:
  std::string name() const override { return "oracle"; }
  Family family() const override { return Family::poisson; }
  Eigen::VectorXd predict_mu(const LearningSet& s) const override {
    Eigen::VectorXd mu(static_cast<Eigen::Index>(s.rows()));
    for (std::size_t i = 0; i < s.rows(); ++i) mu(static_cast<Eigen::Index>(i)) = static_cast<double>(s.y[i]);
    return mu;
  }
};

CannModel zero_network_cann(const support::Sets& s, Family head) {
  TrainConfig cfg;
  cfg.head = head;
  cfg.layer_widths = {6, 3};
  const auto init = fit_initializer(s.train, head);
  return CannModel(initial_parameters(s.train, cfg, init), "cann");
}

// A CANN whose network has a nonzero output layer but zero first-layer
// weights for `input`, so that input provably cannot move the prediction.
CannModel network_ignoring(const support::Sets& s, std::size_t input) {
  TrainConfig cfg;
  cfg.layer_widths = {6, 3};
  auto p = initial_parameters(s.train, cfg, fit_initializer(s.train, Family::poisson));
  p.theta.output.weight.setConstant(0.05);
  p.theta.hidden[0].weight.col(static_cast<Eigen::Index>(input)).setZero();
  return CannModel(p, "cann");
}

}  // namespace

TEST(Scores, DevianceVanishesAtTheObservation) {
  EXPECT_EQ(poisson_deviance(0, 1e-300), 2e-300);
  EXPECT_NEAR(poisson_deviance(3, 3.0), 0.0, 1e-15);
  const auto s = toy({1, 2, 3, 5, 1});
  EXPECT_NEAR(score(OracleModel{}, s).deviance, 0.0, 1e-15);
  EXPECT_THROW(poisson_deviance(1, 0.0), DomainError);
}

TEST(Scores, DevianceClosedForm) {
  // 2 [y ln(y / m) - (y - m)]
  EXPECT_NEAR(poisson_deviance(2, 0.5), 2.0 * (2.0 * std::log(4.0) - 1.5), 1e-14);
  EXPECT_NEAR(poisson_deviance(0, 0.3), 0.6, 1e-15);
}

TEST(Scores, BaselineIsTheLearningMean) {
  const auto b = BaselineModel::from_learning(std::vector<Count>{0, 1, 0, 2});
  EXPECT_EQ(b.mean(), 0.75);
  const auto mu = b.predict_mu(toy({5, 5, 5}));
  for (Eigen::Index i = 0; i < mu.size(); ++i) EXPECT_EQ(mu(i), 0.75);
  EXPECT_THROW(BaselineModel::from_learning(std::vector<Count>{}), DataError);
  EXPECT_THROW(BaselineModel::from_learning(std::vector<Count>{0, 0}), DomainError);
}

TEST(Scores, ImprovementDefinition) {
  EXPECT_NEAR(improvement(0.3, 0.4), 25.0, 1e-12);
  EXPECT_NEAR(improvement(0.4, 0.4), 0.0, 1e-15);
  const ScoreReport base{"baseline", 0.4, 0.2, 0.1};
  const ScoreReport m{"m", 0.2, 0.3, 0.1};
  const auto imp = improvement(m, base);
  EXPECT_NEAR(imp.deviance, 50.0, 1e-12);
  EXPECT_NEAR(imp.log_score, -50.0, 1e-12);
  EXPECT_NEAR(imp.squared_error, 0.0, 1e-12);
}

TEST(Scores, ReportFormatFixture) {
  const ScoreReport base{"baseline", 0.3682, 0.2470, 0.0697};
  const std::string table = format_score_table({base}, base);
  EXPECT_NE(table.find("0.3682"), std::string::npos);
  EXPECT_NE(table.find("0.2470"), std::string::npos);
  EXPECT_NE(table.find("0.0697"), std::string::npos);
  EXPECT_NE(table.find("0.00"), std::string::npos);

  std::ostringstream out;
  write_scores_csv(out, {base}, base);
  std::istringstream in(out.str());
  const auto back = read_scores_csv(io::CsvTable::read(in, "scores"));
  ASSERT_EQ(back.size(), 1u);
  EXPECT_EQ(back[0].model, "baseline");
  EXPECT_EQ(back[0].deviance, 0.3682);
  EXPECT_EQ(back[0].log_score, 0.2470);
  EXPECT_EQ(back[0].squared_error, 0.0697);
}

TEST(Scores, ConstantPredictorsAreBestAtTheMean) {
  const auto s = toy({0, 0, 1, 0, 3, 0, 1, 0, 0, 2});
  const double ybar = 0.7;
  const auto at = score(BaselineModel(ybar), s);
  for (double d : {-0.2, -0.01, 0.01, 0.2}) {
    const auto off = score(BaselineModel(ybar + d), s);
    EXPECT_LT(at.deviance, off.deviance) << d;
    EXPECT_LT(at.log_score, off.log_score) << d;
    EXPECT_LT(at.squared_error, off.squared_error) << d;
  }
}

TEST(Scores, PoissonLogScoreIsHalfDeviancePlusDataConstant) {
  const auto& s = sets();
  // -ln p(y; m) - d(y, m) / 2 = ln y! - y ln y + y, free of m.
  double constant = 0.0;
  for (Count y : s.test.y) {
    const double yd = static_cast<double>(y);
    constant += boost::math::lgamma(yd + 1.0) - (y > 0 ? yd * std::log(yd) : 0.0) + yd;
  }
  constant /= static_cast<double>(s.test.rows());
  const GlmModel glm_model(glm::fit_log_linear(s.train.design(features::CovariateMode::trad), s.train.y, nullptr,
                                               Family::poisson),
                           features::CovariateMode::trad, "glm");
  const auto base = BaselineModel::from_learning(s.train.y);
  for (const CountModel* m : {static_cast<const CountModel*>(&glm_model), static_cast<const CountModel*>(&base)}) {
    const auto r = score(*m, s.test);
    EXPECT_NEAR(r.log_score - r.deviance / 2.0, constant, 1e-12) << m->name();
  }
}

TEST(Scores, MvnbScoresUseHistoryAdjustedMean) {
  const auto& s = sets();
  const auto fit = glm::fit_log_linear(s.train.design(features::CovariateMode::trad), s.train.y, &s.train.panel,
                                       Family::mvnb);
  const GlmModel m(fit, features::CovariateMode::trad, "mvnb");
  const auto p = predict(m, s.test);
  const auto mu = glm::glm_predict_mu(fit, s.test.design(features::CovariateMode::trad));
  const auto hist = build_history(s.test.panel, s.test.y, std::span<const double>(mu.data(), s.test.rows()));
  for (std::size_t i = 0; i < s.test.rows(); ++i) {
    const auto k = static_cast<Eigen::Index>(i);
    EXPECT_NEAR(p.mean(k), mvnb_predictive_mean(mu(k), *fit.phi, hist[i]), 1e-12);
    EXPECT_NEAR(p.log_pmf(k), mvnb_cond_log_pmf(s.test.y[i], mvnb_params(mu(k), *fit.phi, hist[i])), 1e-12);
  }
}

TEST(Balance, PoissonGlmIsBalancedInSample) {
  const auto& s = sets();
  const GlmModel m(glm::fit_log_linear(s.train.design(features::CovariateMode::handcrafted), s.train.y, nullptr,
                                       Family::poisson),
                   features::CovariateMode::handcrafted, "glm");
  const auto r = balance(m, s.train, "train");
  EXPECT_NEAR(r.ratio(), 1.0, 1e-4);
}

TEST(Balance, ConstantModelOnItsOwnDataIsExact) {
  const auto s = toy({0, 1, 0, 2});
  const auto r = balance(BaselineModel::from_learning(s.y), s, "learn");
  EXPECT_EQ(r.ratio(), 1.0);
  EXPECT_THROW(balance(BaselineModel(1.0), toy({}), "empty"), DataError);
}

TEST(Balance, RowFormatFixture) {
  EXPECT_EQ(format_balance_row({"test", 6618.0, 6184.0}), "(6618, 6184, 107.0%)");
  std::ostringstream out;
  write_balance_csv(out, {{"glm", {"test", 6618.0, 6184.0}}});
  EXPECT_EQ(out.str().substr(0, out.str().find('\n')), "model,split,sum_predicted,sum_actual,ratio");
}

TEST(Importance, IgnoredInputScoresZero) {
  const auto& s = sets();
  const auto names = s.test.mlp_input_names();
  const std::size_t j = static_cast<std::size_t>(std::find(names.begin(), names.end(), "vma_16") - names.begin());
  const auto m = network_ignoring(s, j);
  const auto r = permutation_importance(m, s.test, {"vma_16", "h_3"}, 5, 1);
  for (double v : r.scores[0]) EXPECT_NEAR(v, 0.0, 1e-12);
  // The other input does matter for this network.
  double spread = 0.0;
  for (double v : r.scores[1]) spread = std::max(spread, std::abs(v));
  EXPECT_GT(spread, 1e-9);
}

TEST(Importance, InvisiblePermutationScoresExactlyZero) {
  // A constant column is unchanged by every permutation, and so is a single row.
  auto s = toy({0, 1, 0, 2, 1});
  s.trad.col(0).setConstant(0.4);
  const ExpModel m(-1.0, 2.0);
  const auto r = permutation_importance(m, s, {"x"}, 7, 3);
  for (double v : r.scores[0]) EXPECT_EQ(v, 0.0);
  const auto one = permutation_importance(m, toy({2}), {"x"}, 3, 3);
  for (double v : one.scores[0]) EXPECT_EQ(v, 0.0);
}

TEST(Importance, RepetitionCountAndReproducibility) {
  const auto& s = sets();
  const auto m = zero_network_cann(s, Family::negbin);
  const std::vector<std::string> inputs{s.test.trad_names[0], s.test.trad_names[1], "h_7"};
  const auto a = permutation_importance(m, s.test, inputs, 11, 42);
  const auto b = permutation_importance(m, s.test, inputs, 11, 42);
  ASSERT_EQ(a.scores.size(), 3u);
  for (const auto& v : a.scores) EXPECT_EQ(v.size(), 11u);
  EXPECT_EQ(a.scores, b.scores);
  EXPECT_NE(a.scores, permutation_importance(m, s.test, inputs, 11, 43).scores);
  EXPECT_THROW(permutation_importance(m, s.test, {"nope"}, 1, 0), DataError);
}

TEST(Importance, OriginalDataIsUntouched) {
  const auto& s = sets();
  const LearningSet copy = s.test;
  permutation_importance(zero_network_cann(s, Family::poisson), s.test, {s.test.trad_names[0]}, 3, 1);
  EXPECT_EQ(copy.trad, s.test.trad);
}

TEST(Importance, MatchesManualPermutation) {
  const auto s = toy({0, 1, 0, 2, 1, 0, 3});
  const ExpModel m(-0.5, 1.5);
  const auto r = permutation_importance(m, s, {"x"}, 2, 9);
  LearningSet work = s;
  const auto perm = permutation_for(s.rows(), 9, 0, 1);
  for (std::size_t i = 0; i < perm.size(); ++i) work.trad(static_cast<Eigen::Index>(i), 0) = s.trad(static_cast<Eigen::Index>(perm[i]), 0);
  EXPECT_EQ(r.scores[0][1], cross_entropy(m, work) - cross_entropy(m, s));
}

TEST(Pdp, IgnoredInputIsFlat) {
  const auto& s = sets();
  const auto m = zero_network_cann(s, Family::poisson);
  const auto r = partial_dependence(m, s.test, "vma_16");
  EXPECT_EQ(r.grid.size(), r.average.size());
  const auto [lo, hi] = std::minmax_element(r.average.begin(), r.average.end());
  EXPECT_LT(*hi - *lo, 1e-12);
}

TEST(Pdp, ExpModelHasLinearLogPdp) {
  const auto& s = sets();
  const auto fit = glm::fit_log_linear(s.train.design(features::CovariateMode::trad), s.train.y, nullptr,
                                       Family::poisson);
  const GlmModel m(fit, features::CovariateMode::trad, "glm");
  const auto r = partial_dependence(m, s.test, "annual_distance");
  ASSERT_GE(r.grid.size(), 3u);
  // Least-squares line through (v, ln average): R^2.
  const auto n = static_cast<double>(r.grid.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0, syy = 0;
  for (std::size_t k = 0; k < r.grid.size(); ++k) {
    const double x = r.grid[k], y = std::log(r.average[k]);
    sx += x, sy += y, sxx += x * x, sxy += x * y, syy += y * y;
  }
  const double cov = sxy - sx * sy / n, vx = sxx - sx * sx / n, vy = syy - sy * sy / n;
  EXPECT_GT(cov * cov / (vx * vy), 0.999);
  const auto j = std::find(s.test.trad_names.begin(), s.test.trad_names.end(), "annual_distance") - s.test.trad_names.begin();
  EXPECT_NEAR(cov / vx, fit.beta(j + 1), 1e-9);
}

TEST(Pdp, SinglePointGrid) {
  const auto& s = sets();
  const auto m = network_ignoring(s, 0);
  const std::string input = s.test.trad_names[2];
  const auto r = partial_dependence(m, s.test, input, {0.3});
  ASSERT_EQ(r.average.size(), 1u);
  LearningSet work = s.test;
  column(work, input).setConstant(0.3);
  EXPECT_EQ(r.average[0], predict(m, work).mean.mean());
}

TEST(Pdp, GridAndHistogram) {
  const auto& s = sets();
  const auto r = partial_dependence(zero_network_cann(s, Family::poisson), s.test, "years_licensed", {}, 10);
  EXPECT_EQ(r.grid.size(), 50u);
  EXPECT_EQ(r.hist_counts.size(), 10u);
  EXPECT_EQ(r.hist_edges.size(), 11u);
  std::size_t total = 0;
  for (auto c : r.hist_counts) total += c;
  EXPECT_EQ(total, s.test.rows());
  const auto col = s.test.trad.col(std::find(s.test.trad_names.begin(), s.test.trad_names.end(), "years_licensed") -
                                   s.test.trad_names.begin());
  EXPECT_NEAR(r.hist_edges.front(), col.minCoeff(), 1e-12);
  EXPECT_NEAR(r.hist_edges.back(), col.maxCoeff(), 1e-9);
  EXPECT_GE(r.grid.front(), col.minCoeff());
  EXPECT_LE(r.grid.back(), col.maxCoeff());
  for (double a : r.average) EXPECT_TRUE(std::isfinite(a));
  EXPECT_THROW(partial_dependence(zero_network_cann(s, Family::poisson), s.test, "nope"), DataError);
}

TEST(Pdp, QuantileInterpolates) {
  EXPECT_EQ(quantile({3.0, 1.0, 2.0}, 0.5), 2.0);
  EXPECT_EQ(quantile({1.0, 2.0}, 0.25), 1.25);
  EXPECT_THROW(quantile({}, 0.5), DataError);
}

TEST(Plots, SvgDocumentsAreEmitted) {
  const auto& s = sets();
  const auto m = zero_network_cann(s, Family::poisson);
  const auto pdp = partial_dependence(m, s.test, "vma_16", {}, 8);
  const std::string a = svg::pdp_plot(pdp);
  EXPECT_EQ(a.rfind("<svg", 0), 0u);
  EXPECT_NE(a.find("<polyline"), std::string::npos);
  EXPECT_NE(a.find("</svg>"), std::string::npos);
  const auto fi = permutation_importance(m, s.test, {s.test.trad_names[0], "vma_16"}, 4, 1);
  const std::string b = svg::importance_plot(fi);
  EXPECT_NE(b.find(s.test.trad_names[0]), std::string::npos);
  EXPECT_NE(b.find("</svg>"), std::string::npos);
}
