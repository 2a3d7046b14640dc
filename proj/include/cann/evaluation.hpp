#pragma once

// Out-of-sample scoring (Poisson deviance, logarithmic score, squared error),
// balance reports, permutation feature importance and partial dependence.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "cann/count_distributions.hpp"
#include "cann/error.hpp"
#include "cann/features/preprocessing.hpp"
#include "cann/glm.hpp"
#include "cann/io/csv.hpp"
#include "cann/model.hpp"
#include "cann/panel.hpp"
#include "cann/random.hpp"
#include "json.hpp"

namespace cann::eval {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using features::LearningSet;

/// A fitted count model seen through its per-contract mean before any
/// history correction. The predictive distribution is the family's.
class CountModel {
 public:
  virtual ~CountModel() = default;
  virtual std::string name() const = 0;
  virtual Family family() const = 0;
  virtual double phi() const { return 0.0; }
  virtual VectorXd predict_mu(const LearningSet& s) const = 0;
};

/// Constant mean: the average claim count of the learning data.
class BaselineModel : public CountModel {
 public:
  explicit BaselineModel(double mean) : mean_(mean) {
    if (!(mean > 0.0)) throw DomainError("baseline mean must be > 0");
  }
  static BaselineModel from_learning(std::span<const Count> y) {
    if (y.empty()) throw DataError("baseline needs learning data");
    double s = 0.0;
    for (Count v : y) s += static_cast<double>(v);
    return BaselineModel(s / static_cast<double>(y.size()));
  }
  std::string name() const override { return "baseline"; }
  Family family() const override { return Family::poisson; }
  VectorXd predict_mu(const LearningSet& s) const override {
    return VectorXd::Constant(static_cast<Eigen::Index>(s.rows()), mean_);
  }
  double mean() const { return mean_; }

 private:
  double mean_;
};

class GlmModel : public CountModel {
 public:
  GlmModel(glm::GlmFit fit, features::CovariateMode mode, std::string name)
      : fit_(std::move(fit)), mode_(mode), name_(std::move(name)) {}
  std::string name() const override { return name_; }
  Family family() const override { return fit_.family; }
  double phi() const override { return fit_.phi.value_or(0.0); }
  VectorXd predict_mu(const LearningSet& s) const override { return glm::glm_predict_mu(fit_, s.design(mode_)); }
  const glm::GlmFit& fit() const { return fit_; }

 private:
  glm::GlmFit fit_;
  features::CovariateMode mode_;
  std::string name_;
};

class CannModel : public CountModel {
 public:
  CannModel(CannParameters params, std::string name) : params_(std::move(params)), name_(std::move(name)) {}
  std::string name() const override { return name_; }
  Family family() const override { return params_.head; }
  double phi() const override { return params_.phi(); }
  VectorXd predict_mu(const LearningSet& s) const override { return cann_predict_mu(params_, s); }
  const CannParameters& params() const { return params_; }

 private:
  CannParameters params_;
  std::string name_;
};

/// Per-contract predictive mean and log-pmf. For mvnb the history of each
/// vehicle is built within the split from the model's own means.
struct Predictions {
  VectorXd mu;
  VectorXd mean;
  VectorXd log_pmf;
};

inline Predictions predict(const CountModel& m, const LearningSet& s) {
  Predictions p;
  p.mu = m.predict_mu(s);
  const auto n = static_cast<Eigen::Index>(s.rows());
  if (p.mu.size() != n) throw ShapeError("model returned the wrong number of predictions");
  std::vector<HistoryState> hist(s.rows());
  const Family f = m.family();
  if (f == Family::mvnb) hist = build_history(s.panel, s.y, std::span<const double>(p.mu.data(), s.rows()));
  p.mean.resize(n);
  p.log_pmf.resize(n);
  const double phi = m.phi();
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto k = static_cast<std::size_t>(i);
    if (!(p.mu(i) > 0.0)) throw DomainError(m.name() + ": non-positive prediction at row " + std::to_string(i));
    p.mean(i) = family_predictive_mean(f, p.mu(i), phi, hist[k]);
    p.log_pmf(i) = family_log_pmf(f, s.y[k], p.mu(i), phi, hist[k]);
  }
  return p;
}

inline double poisson_deviance(Count y, double mu_hat) {
  if (!(mu_hat > 0.0)) throw DomainError("poisson_deviance: prediction must be > 0");
  const double yd = static_cast<double>(y);
  const double t = y == 0 ? 0.0 : yd * std::log(yd / mu_hat);
  return 2.0 * (t - (yd - mu_hat));
}

struct ScoreReport {
  std::string model;
  double deviance = 0.0;
  double log_score = 0.0;
  double squared_error = 0.0;
};

inline ScoreReport score(const CountModel& m, const LearningSet& s) {
  if (s.rows() == 0) throw DataError("score: empty split");
  const Predictions p = predict(m, s);
  ScoreReport r;
  r.model = m.name();
  for (std::size_t i = 0; i < s.rows(); ++i) {
    const auto k = static_cast<Eigen::Index>(i);
    const double y = static_cast<double>(s.y[i]);
    r.deviance += poisson_deviance(s.y[i], p.mean(k));
    r.log_score -= p.log_pmf(k);
    r.squared_error += (y - p.mean(k)) * (y - p.mean(k));
  }
  const auto n = static_cast<double>(s.rows());
  r.deviance /= n;
  r.log_score /= n;
  r.squared_error /= n;
  return r;
}

/// Percentage improvement (1 - model / baseline) * 100 for one scoring rule.
inline double improvement(double model, double baseline) { return (1.0 - model / baseline) * 100.0; }

struct Improvement {
  double deviance;
  double log_score;
  double squared_error;
};

inline Improvement improvement(const ScoreReport& model, const ScoreReport& baseline) {
  return {improvement(model.deviance, baseline.deviance), improvement(model.log_score, baseline.log_score),
          improvement(model.squared_error, baseline.squared_error)};
}

inline void write_scores_csv(std::ostream& out, const std::vector<ScoreReport>& reports, const ScoreReport& baseline) {
  out << "model,deviance,log_score,squared_error,improvement_deviance,improvement_log_score,improvement_squared_error\n";
  io::RowWriter w(out);
  for (const auto& r : reports) {
    const auto imp = improvement(r, baseline);
    w.field(r.model).field(r.deviance).field(r.log_score).field(r.squared_error);
    w.field(imp.deviance).field(imp.log_score).field(imp.squared_error);
    w.end();
  }
}

/// Fixed-width text table with 4 decimals per score and 2 per improvement.
inline std::string format_score_table(const std::vector<ScoreReport>& reports, const ScoreReport& baseline) {
  std::ostringstream o;
  o << "model                      deviance  log_score  squared_error  imp_dev%  imp_log%  imp_se%\n";
  for (const auto& r : reports) {
    const auto imp = improvement(r, baseline);
    std::string name = r.model;
    name.resize(std::max<std::size_t>(name.size(), 25), ' ');
    o << name << "  " << io::format_fixed(r.deviance, 4) << "    " << io::format_fixed(r.log_score, 4) << "     "
      << io::format_fixed(r.squared_error, 4) << "         " << io::format_fixed(imp.deviance, 2) << "     "
      << io::format_fixed(imp.log_score, 2) << "     " << io::format_fixed(imp.squared_error, 2) << '\n';
  }
  return o.str();
}

inline std::vector<ScoreReport> read_scores_csv(const io::CsvTable& t) {
  std::vector<ScoreReport> out;
  const auto cm = t.column("model"), cd = t.column("deviance"), cl = t.column("log_score"),
             cs = t.column("squared_error");
  for (std::size_t r = 0; r < t.rows(); ++r) {
    out.push_back({t.at(r, cm), io::parse_double(t.at(r, cd), "deviance"), io::parse_double(t.at(r, cl), "log_score"),
                   io::parse_double(t.at(r, cs), "squared_error")});
  }
  return out;
}

struct BalanceRow {
  std::string split;
  double sum_predicted = 0.0;
  double sum_actual = 0.0;
  double ratio() const { return sum_predicted / sum_actual; }
};

inline BalanceRow balance(const CountModel& m, const LearningSet& s, std::string split) {
  if (s.rows() == 0) throw DataError("balance: empty split " + split);
  const Predictions p = predict(m, s);
  BalanceRow r{std::move(split), p.mean.sum(), 0.0};
  for (Count y : s.y) r.sum_actual += static_cast<double>(y);
  return r;
}

/// "(6618, 6184, 107.0%)": rounded sums and the ratio in percent.
inline std::string format_balance_row(const BalanceRow& r) {
  return "(" + io::format_fixed(r.sum_predicted, 0) + ", " + io::format_fixed(r.sum_actual, 0) + ", " +
         io::format_fixed(100.0 * r.ratio(), 1) + "%)";
}

inline void write_balance_csv(std::ostream& out, const std::vector<std::pair<std::string, BalanceRow>>& rows) {
  out << "model,split,sum_predicted,sum_actual,ratio\n";
  io::RowWriter w(out);
  for (const auto& [model, r] : rows) {
    w.field(model).field(r.split).field(r.sum_predicted).field(r.sum_actual).field(r.ratio());
    w.end();
  }
}

/// A named input column of a learning set (traditional, handcrafted or
/// telematics block).
template <class Set>
auto column(Set& s, std::string_view name) -> decltype(s.trad.col(0)) {
  auto find = [&](const std::vector<std::string>& names) -> Eigen::Index {
    auto it = std::find(names.begin(), names.end(), name);
    return it == names.end() ? -1 : static_cast<Eigen::Index>(it - names.begin());
  };
  if (auto j = find(s.trad_names); j >= 0) return s.trad.col(j);
  if (auto j = find(s.hand_names); j >= 0) return s.hand.col(j);
  if (auto j = find(s.tele_names); j >= 0) return s.tele.col(j);
  throw DataError("unknown input '" + std::string(name) + "'");
}

/// Average cross-entropy of the model's own predictive distribution.
inline double cross_entropy(const CountModel& m, const LearningSet& s) {
  return -predict(m, s).log_pmf.mean();
}

struct ImportanceResult {
  std::vector<std::string> inputs;
  std::vector<std::vector<double>> scores;  // [input][repetition]
  double original_loss = 0.0;

  double median(std::size_t j) const {
    std::vector<double> v = scores.at(j);
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
  }
};

/// Permutation of 0..n-1 from the sub-stream (seed, input, repetition).
inline std::vector<std::size_t> permutation_for(std::size_t n, std::uint64_t seed, std::size_t input, std::size_t rep) {
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  Rng rng = make_rng(seed, {0x6669, input, rep});
  for (std::size_t i = n; i > 1; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i - 1);
    std::swap(perm[i - 1], perm[pick(rng)]);
  }
  return perm;
}

/// FI_j = loss with column j permuted - original loss, per repetition. For
/// mvnb models the history is rebuilt from the permuted predictions.
inline ImportanceResult permutation_importance(const CountModel& m, const LearningSet& s,
                                               const std::vector<std::string>& inputs, std::size_t repetitions,
                                               std::uint64_t seed) {
  ImportanceResult r;
  r.inputs = inputs;
  r.original_loss = cross_entropy(m, s);
  LearningSet work = s;
  for (std::size_t j = 0; j < inputs.size(); ++j) {
    auto col = column(work, inputs[j]);
    const VectorXd original = col;
    std::vector<double> fi;
    for (std::size_t rep = 0; rep < repetitions; ++rep) {
      const auto perm = permutation_for(s.rows(), seed, j, rep);
      for (std::size_t i = 0; i < perm.size(); ++i) col(static_cast<Eigen::Index>(i)) = original(static_cast<Eigen::Index>(perm[i]));
      fi.push_back(cross_entropy(m, work) - r.original_loss);
    }
    col = original;
    r.scores.push_back(std::move(fi));
  }
  return r;
}

struct PdpResult {
  std::string input;
  std::vector<double> grid;
  std::vector<double> average;  // mean predictive mean per grid value
  std::vector<double> hist_edges;
  std::vector<std::size_t> hist_counts;
};

inline double quantile(std::vector<double> v, double q) {
  if (v.empty()) throw DataError("quantile of an empty sample");
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

/// Default grid: `points` equally spaced values between the 1st and 99th percentiles.
inline std::vector<double> default_grid(const VectorXd& values, std::size_t points = 50) {
  const std::vector<double> v(values.data(), values.data() + values.size());
  const double lo = quantile(v, 0.01), hi = quantile(v, 0.99);
  std::vector<double> g;
  if (points == 1 || hi == lo) return {lo};
  for (std::size_t k = 0; k < points; ++k) g.push_back(lo + (hi - lo) * static_cast<double>(k) / static_cast<double>(points - 1));
  return g;
}

inline PdpResult partial_dependence(const CountModel& m, const LearningSet& s, const std::string& input,
                                    std::vector<double> grid = {}, std::size_t hist_bins = 20) {
  LearningSet work = s;
  auto col = column(work, input);
  const VectorXd original = col;
  if (grid.empty()) grid = default_grid(original);
  if (grid.empty()) throw DataError("partial_dependence: empty grid");
  PdpResult r;
  r.input = input;
  r.grid = grid;
  for (double v : grid) {
    col.setConstant(v);
    r.average.push_back(predict(m, work).mean.mean());
  }
  const double lo = original.minCoeff(), hi = original.maxCoeff();
  const double width = hi > lo ? (hi - lo) / static_cast<double>(hist_bins) : 1.0;
  r.hist_counts.assign(hist_bins, 0);
  for (std::size_t b = 0; b <= hist_bins; ++b) r.hist_edges.push_back(lo + width * static_cast<double>(b));
  for (Eigen::Index i = 0; i < original.size(); ++i) {
    auto b = static_cast<std::size_t>((original(i) - lo) / width);
    ++r.hist_counts[std::min(b, hist_bins - 1)];
  }
  return r;
}

inline void write_importance_csv(std::ostream& out, const ImportanceResult& r) {
  out << "input,repetition,fi\n";
  io::RowWriter w(out);
  for (std::size_t j = 0; j < r.inputs.size(); ++j) {
    for (std::size_t k = 0; k < r.scores[j].size(); ++k) {
      w.field(r.inputs[j]).field(k).field(r.scores[j][k]);
      w.end();
    }
  }
}

/// `to_raw` maps a model-scale value back to the input's original units.
template <class ToRaw>
void write_pdp_csv(std::ostream& out, const PdpResult& r, ToRaw&& to_raw) {
  out << "input,value,value_raw,average_prediction\n";
  io::RowWriter w(out);
  for (std::size_t k = 0; k < r.grid.size(); ++k) {
    w.field(r.input).field(r.grid[k]).field(to_raw(r.grid[k])).field(r.average[k]);
    w.end();
  }
}

namespace svg {

inline std::string num(double v) { return io::format_fixed(v, 2); }

/// Line plot of the PDP over a histogram of the input.
inline std::string pdp_plot(const PdpResult& r) {
  const double W = 480, H = 320, L = 60, R = 20, T = 30, B = 40, HH = 60;
  const double xlo = std::min(r.grid.front(), r.hist_edges.front());
  const double xhi = std::max(r.grid.back(), r.hist_edges.back());
  const double ylo = *std::min_element(r.average.begin(), r.average.end());
  double yhi = *std::max_element(r.average.begin(), r.average.end());
  if (yhi == ylo) yhi = ylo + 1e-9 + std::fabs(ylo) * 1e-3;
  const auto X = [&](double x) { return L + (W - L - R) * (xhi > xlo ? (x - xlo) / (xhi - xlo) : 0.5); };
  const auto Y = [&](double y) { return T + (H - T - B - HH) * (1.0 - (y - ylo) / (yhi - ylo)); };
  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n";
  o << "<text x=\"" << L << "\" y=\"18\" font-size=\"13\">Partial dependence: " << r.input << "</text>\n";
  o << "<polyline fill=\"none\" stroke=\"#1f4e79\" stroke-width=\"2\" points=\"";
  for (std::size_t k = 0; k < r.grid.size(); ++k) o << num(X(r.grid[k])) << ',' << num(Y(r.average[k])) << ' ';
  o << "\"/>\n";
  const std::size_t max_count = *std::max_element(r.hist_counts.begin(), r.hist_counts.end());
  for (std::size_t b = 0; b < r.hist_counts.size(); ++b) {
    const double h = max_count ? HH * static_cast<double>(r.hist_counts[b]) / static_cast<double>(max_count) : 0.0;
    o << "<rect x=\"" << num(X(r.hist_edges[b])) << "\" y=\"" << num(H - B - h) << "\" width=\""
      << num(std::max(0.0, X(r.hist_edges[b + 1]) - X(r.hist_edges[b]) - 1)) << "\" height=\"" << num(h)
      << "\" fill=\"#9db4c8\"/>\n";
  }
  o << "<text x=\"" << L << "\" y=\"" << H - 10 << "\" font-size=\"11\">" << num(xlo) << "</text>\n";
  o << "<text x=\"" << W - R - 40 << "\" y=\"" << H - 10 << "\" font-size=\"11\">" << num(xhi) << "</text>\n";
  o << "<text x=\"4\" y=\"" << T + 10 << "\" font-size=\"11\">" << io::format_fixed(yhi, 4) << "</text>\n";
  o << "<text x=\"4\" y=\"" << H - B - HH << "\" font-size=\"11\">" << io::format_fixed(ylo, 4) << "</text>\n";
  o << "</svg>\n";
  return o.str();
}

/// Horizontal box plots of FI per input, sorted by median.
inline std::string importance_plot(const ImportanceResult& r) {
  std::vector<std::size_t> order(r.inputs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return r.median(a) > r.median(b); });
  double lo = 0.0, hi = 0.0;
  for (const auto& s : r.scores)
    for (double v : s) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  if (hi == lo) hi = lo + 1e-12;
  const double W = 560, L = 160, R = 20, row = 18, T = 30;
  const double H = T + row * static_cast<double>(order.size()) + 30;
  const auto X = [&](double x) { return L + (W - L - R) * (x - lo) / (hi - lo); };
  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << num(H) << "\">\n";
  o << "<text x=\"" << L << "\" y=\"18\" font-size=\"13\">Permutation feature importance</text>\n";
  for (std::size_t k = 0; k < order.size(); ++k) {
    std::vector<double> v = r.scores[order[k]];
    if (v.empty()) continue;
    std::sort(v.begin(), v.end());
    const double q1 = quantile(v, 0.25), q2 = quantile(v, 0.5), q3 = quantile(v, 0.75);
    const double y = T + row * static_cast<double>(k);
    o << "<text x=\"4\" y=\"" << num(y + 12) << "\" font-size=\"11\">" << r.inputs[order[k]] << "</text>\n";
    o << "<line x1=\"" << num(X(v.front())) << "\" x2=\"" << num(X(v.back())) << "\" y1=\"" << num(y + 8)
      << "\" y2=\"" << num(y + 8) << "\" stroke=\"#555\"/>\n";
    o << "<rect x=\"" << num(X(q1)) << "\" y=\"" << num(y + 2) << "\" width=\"" << num(std::max(1.0, X(q3) - X(q1)))
      << "\" height=\"12\" fill=\"#9db4c8\" stroke=\"#1f4e79\"/>\n";
    o << "<line x1=\"" << num(X(q2)) << "\" x2=\"" << num(X(q2)) << "\" y1=\"" << num(y + 2) << "\" y2=\""
      << num(y + 14) << "\" stroke=\"#1f4e79\" stroke-width=\"2\"/>\n";
  }
  o << "<line x1=\"" << num(X(0.0)) << "\" x2=\"" << num(X(0.0)) << "\" y1=\"" << T << "\" y2=\"" << num(H - 30)
    << "\" stroke=\"#c00\" stroke-dasharray=\"3,3\"/>\n";
  o << "</svg>\n";
  return o.str();
}

}  // namespace svg

inline nlohmann::ordered_json to_json(const ScoreReport& r) {
  return {{"model", r.model}, {"deviance", r.deviance}, {"log_score", r.log_score}, {"squared_error", r.squared_error}};
}

}  // namespace cann::eval
