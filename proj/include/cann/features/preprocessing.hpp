#pragma once

// Vehicle-level data partitioning, the training-split preprocessing recipe
// (rare-level pooling, dummy coding, median imputation, centering/scaling)
// and the model-ready learning matrices.

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "cann/error.hpp"
#include "cann/features/feature_table.hpp"
#include "cann/panel.hpp"
#include "cann/random.hpp"
#include "json.hpp"

namespace cann::features {

using Eigen::MatrixXd;

inline constexpr std::string_view kOthers = "others";

struct SplitFractions {
  double train = 0.6;
  double valid = 0.2;
  double test = 0.2;
};

/// Shuffles the distinct VINs (sorted first, so input order is irrelevant)
/// and cuts them into train/valid/test by the given fractions. Returns the
/// split label of every VIN.
inline std::map<std::string, std::string> split_by_vehicle(std::vector<std::string> vins, SplitFractions f,
                                                           std::uint64_t seed) {
  if (std::fabs(f.train + f.valid + f.test - 1.0) > 1e-9 || f.train < 0 || f.valid < 0 || f.test < 0) {
    throw DataError("split fractions must be nonnegative and sum to 1");
  }
  std::sort(vins.begin(), vins.end());
  vins.erase(std::unique(vins.begin(), vins.end()), vins.end());
  if (vins.size() < 3) throw DataError("need at least 3 vehicles to form train/valid/test splits");
  Rng rng = make_rng(seed, {0x73706c6974});
  for (std::size_t i = vins.size(); i > 1; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i - 1);
    std::swap(vins[i - 1], vins[pick(rng)]);
  }
  const auto n = static_cast<double>(vins.size());
  const auto n_train = static_cast<std::size_t>(std::llround(f.train * n));
  const auto n_valid = static_cast<std::size_t>(std::llround(f.valid * n));
  if (n_train == 0 || n_valid == 0 || n_train + n_valid >= vins.size()) {
    throw DataError("too few vehicles for the requested split fractions");
  }
  std::map<std::string, std::string> out;
  for (std::size_t i = 0; i < vins.size(); ++i) {
    out[vins[i]] = i < n_train ? "train" : (i < n_train + n_valid ? "valid" : "test");
  }
  return out;
}

inline void assign_splits(FeatureTable& t, SplitFractions f, std::uint64_t seed) {
  std::vector<std::string> vins;
  for (const auto& c : t.contracts) vins.push_back(c.vin);
  const auto label = split_by_vehicle(vins, f, seed);
  t.split.resize(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) t.split[i] = label.at(t.contracts[i].vin);
}

/// Affine standardization of a block of columns.
struct ColumnScaler {
  std::vector<std::string> names;
  std::vector<double> center;
  std::vector<double> scale;

  /// Population mean and standard deviation per column; constant columns get scale 1.
  static ColumnScaler fit(const MatrixXd& raw, std::vector<std::string> names) {
    ColumnScaler s;
    s.names = std::move(names);
    const auto n = static_cast<double>(raw.rows());
    for (Eigen::Index j = 0; j < raw.cols(); ++j) {
      const double m = raw.col(j).sum() / n;
      const double var = (raw.col(j).array() - m).square().sum() / n;
      s.center.push_back(m);
      s.scale.push_back(var > 0.0 ? std::sqrt(var) : 1.0);
    }
    return s;
  }

  MatrixXd apply(const MatrixXd& raw) const {
    if (static_cast<std::size_t>(raw.cols()) != center.size()) throw ShapeError("scaler width mismatch");
    MatrixXd out(raw.rows(), raw.cols());
    for (Eigen::Index j = 0; j < raw.cols(); ++j) {
      const auto k = static_cast<std::size_t>(j);
      out.col(j) = (raw.col(j).array() - center[k]) / scale[k];
    }
    return out;
  }
};

struct CategoricalEncoding {
  std::string factor;
  std::string reference;
  std::vector<std::string> levels;  // levels with their own dummy (may include "others"), sorted
  std::vector<std::string> pooled;  // training levels merged into "others"
  bool has_others = false;

  std::string group_of(const std::string& value) const {
    if (value == reference) return reference;
    if (std::find(levels.begin(), levels.end(), value) != levels.end() && value != kOthers) return value;
    return has_others ? std::string(kOthers) : reference;
  }
};

struct PreprocessingRecipe {
  double rare_share = 0.05;
  std::array<double, kNumericRiskFactors.size()> medians{};
  std::vector<CategoricalEncoding> categorical;
  ColumnScaler trad;
  ColumnScaler hand;
  ColumnScaler tele;
};

namespace detail {

inline CategoricalEncoding fit_categorical(const std::vector<ContractRecord>& rows, std::size_t j, double rare_share) {
  CategoricalEncoding e;
  e.factor = std::string(kCategoricalRiskFactors[j]);
  std::map<std::string, std::size_t> counts;
  for (const auto& c : rows) ++counts[categorical_value(c, j)];
  const auto n = static_cast<double>(rows.size());
  std::map<std::string, std::size_t> groups;
  for (const auto& [level, k] : counts) {
    if (static_cast<double>(k) <= rare_share * n) {
      e.pooled.push_back(level);
      groups[std::string(kOthers)] += k;
    } else {
      groups[level] += k;
    }
  }
  e.has_others = !e.pooled.empty();
  // reference: most frequent group, ties to the lexicographically first
  std::size_t best = 0;
  for (const auto& [g, k] : groups) {
    if (k > best) {
      best = k;
      e.reference = g;
    }
  }
  for (const auto& [g, k] : groups)
    if (g != e.reference) e.levels.push_back(g);
  return e;
}

inline MatrixXd raw_traditional(const PreprocessingRecipe& r, const std::vector<ContractRecord>& rows) {
  const std::size_t n_num = kNumericRiskFactors.size();
  std::size_t width = n_num;
  for (const auto& e : r.categorical) width += e.levels.size();
  MatrixXd X(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(width));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto ii = static_cast<Eigen::Index>(i);
    for (std::size_t j = 0; j < n_num; ++j) {
      const auto v = numeric_value(rows[i], j);
      X(ii, static_cast<Eigen::Index>(j)) = v ? *v : r.medians[j];
    }
    Eigen::Index col = static_cast<Eigen::Index>(n_num);
    for (std::size_t j = 0; j < r.categorical.size(); ++j) {
      const auto& e = r.categorical[j];
      const std::string g = e.group_of(categorical_value(rows[i], j));
      for (const auto& level : e.levels) X(ii, col++) = (g == level) ? 1.0 : 0.0;
    }
  }
  return X;
}

inline std::vector<std::string> traditional_names(const PreprocessingRecipe& r) {
  std::vector<std::string> names(kNumericRiskFactors.begin(), kNumericRiskFactors.end());
  for (const auto& e : r.categorical)
    for (const auto& level : e.levels) names.push_back(e.factor + "_" + level);
  return names;
}

inline MatrixXd raw_handcrafted(const FeatureTable& t) {
  MatrixXd X(static_cast<Eigen::Index>(t.size()), static_cast<Eigen::Index>(kHandcraftedNames.size()));
  for (std::size_t i = 0; i < t.size(); ++i)
    for (std::size_t j = 0; j < kHandcraftedNames.size(); ++j)
      X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = t.hand[i].values[j];
  return X;
}

inline MatrixXd raw_telematics(const FeatureTable& t) {
  MatrixXd X(static_cast<Eigen::Index>(t.size()), kTelematicsWidth);
  for (std::size_t i = 0; i < t.size(); ++i) {
    const auto v = t.tele[i].flat();
    for (int j = 0; j < kTelematicsWidth; ++j) X(static_cast<Eigen::Index>(i), j) = v[static_cast<std::size_t>(j)];
  }
  return X;
}

}  // namespace detail

/// Fits every statistic on `train` only.
inline PreprocessingRecipe fit_recipe(const FeatureTable& train, double rare_share = 0.05) {
  if (train.size() == 0) throw DataError("cannot fit a preprocessing recipe on an empty training split");
  PreprocessingRecipe r;
  r.rare_share = rare_share;
  for (std::size_t j = 0; j < kNumericRiskFactors.size(); ++j) {
    std::vector<double> present;
    for (const auto& c : train.contracts)
      if (auto v = numeric_value(c, j)) present.push_back(*v);
    if (present.empty()) throw DataError("numeric column " + std::string(kNumericRiskFactors[j]) + " is entirely missing");
    r.medians[j] = detail::median(present);
  }
  for (std::size_t j = 0; j < kCategoricalRiskFactors.size(); ++j)
    r.categorical.push_back(detail::fit_categorical(train.contracts, j, rare_share));
  r.trad = ColumnScaler::fit(detail::raw_traditional(r, train.contracts), detail::traditional_names(r));
  r.hand = ColumnScaler::fit(detail::raw_handcrafted(train),
                             std::vector<std::string>(kHandcraftedNames.begin(), kHandcraftedNames.end()));
  r.tele = ColumnScaler::fit(detail::raw_telematics(train), telematics_names());
  return r;
}

/// Covariate sets of the benchmark models. `cann` uses the traditional
/// design for its log-linear part and (traditional, telematics) for its network.
enum class CovariateMode { trad, handcrafted, televector, cann };

inline std::string to_string(CovariateMode m) {
  switch (m) {
    case CovariateMode::trad: return "trad";
    case CovariateMode::handcrafted: return "handcrafted";
    case CovariateMode::televector: return "televector";
    case CovariateMode::cann: return "cann";
  }
  return "?";
}

inline CovariateMode parse_covariate_mode(std::string_view s) {
  if (s == "trad") return CovariateMode::trad;
  if (s == "handcrafted") return CovariateMode::handcrafted;
  if (s == "televector") return CovariateMode::televector;
  if (s == "cann") return CovariateMode::cann;
  throw DataError("unknown covariate mode '" + std::string(s) + "'");
}

/// Standardized matrices of one data split (no intercept columns).
struct LearningSet {
  MatrixXd trad;
  MatrixXd hand;
  MatrixXd tele;
  std::vector<std::string> trad_names;
  std::vector<std::string> hand_names;
  std::vector<std::string> tele_names;
  std::vector<Count> y;
  Panel panel;
  std::vector<std::string> vin;
  std::vector<int> contract_index;

  std::size_t rows() const { return y.size(); }

  /// Intercept column followed by the mode's covariates.
  MatrixXd design(CovariateMode mode) const {
    const Eigen::Index n = trad.rows();
    Eigen::Index extra = 0;
    if (mode == CovariateMode::handcrafted) extra = hand.cols();
    if (mode == CovariateMode::televector) extra = tele.cols();
    MatrixXd X(n, 1 + trad.cols() + extra);
    X.col(0).setOnes();
    X.middleCols(1, trad.cols()) = trad;
    if (mode == CovariateMode::handcrafted) X.rightCols(extra) = hand;
    if (mode == CovariateMode::televector) X.rightCols(extra) = tele;
    return X;
  }

  std::vector<std::string> design_names(CovariateMode mode) const {
    std::vector<std::string> names{"intercept"};
    names.insert(names.end(), trad_names.begin(), trad_names.end());
    if (mode == CovariateMode::handcrafted) names.insert(names.end(), hand_names.begin(), hand_names.end());
    if (mode == CovariateMode::televector) names.insert(names.end(), tele_names.begin(), tele_names.end());
    return names;
  }

  /// Network input: traditional then telematics columns.
  MatrixXd mlp_input() const {
    MatrixXd X(trad.rows(), trad.cols() + tele.cols());
    X << trad, tele;
    return X;
  }

  std::vector<std::string> mlp_input_names() const {
    std::vector<std::string> names = trad_names;
    names.insert(names.end(), tele_names.begin(), tele_names.end());
    return names;
  }
};

/// Applies a fitted recipe to a table whose rows are sorted by (vin, start_date).
inline LearningSet apply_recipe(const PreprocessingRecipe& r, const FeatureTable& t) {
  if (r.trad.names.empty()) throw DataError("apply_recipe: recipe has not been fitted");
  LearningSet s;
  s.trad = r.trad.apply(detail::raw_traditional(r, t.contracts));
  s.hand = r.hand.apply(detail::raw_handcrafted(t));
  s.tele = r.tele.apply(detail::raw_telematics(t));
  s.trad_names = r.trad.names;
  s.hand_names = r.hand.names;
  s.tele_names = r.tele.names;
  s.panel = vehicle_panel(t.contracts);
  for (std::size_t i = 0; i < t.size(); ++i) {
    s.y.push_back(t.contracts[i].nb_claims);
    s.vin.push_back(t.contracts[i].vin);
    s.contract_index.push_back(t.contract_index[i]);
  }
  return s;
}

inline nlohmann::ordered_json to_json(const ColumnScaler& s) {
  return {{"names", s.names}, {"center", s.center}, {"scale", s.scale}};
}

inline ColumnScaler column_scaler_from_json(const nlohmann::ordered_json& j) {
  ColumnScaler s;
  s.names = j.at("names").get<std::vector<std::string>>();
  s.center = j.at("center").get<std::vector<double>>();
  s.scale = j.at("scale").get<std::vector<double>>();
  if (s.center.size() != s.names.size() || s.scale.size() != s.names.size()) throw DataError("malformed scaler");
  return s;
}

inline nlohmann::ordered_json to_json(const PreprocessingRecipe& r) {
  nlohmann::ordered_json j;
  j["rare_share"] = r.rare_share;
  nlohmann::ordered_json med = nlohmann::ordered_json::object();
  for (std::size_t k = 0; k < r.medians.size(); ++k) med[std::string(kNumericRiskFactors[k])] = r.medians[k];
  j["medians"] = med;
  nlohmann::ordered_json cats = nlohmann::ordered_json::array();
  for (const auto& e : r.categorical) {
    cats.push_back({{"factor", e.factor},
                    {"reference", e.reference},
                    {"levels", e.levels},
                    {"pooled", e.pooled},
                    {"has_others", e.has_others}});
  }
  j["categorical"] = cats;
  j["traditional"] = to_json(r.trad);
  j["handcrafted"] = to_json(r.hand);
  j["telematics"] = to_json(r.tele);
  return j;
}

inline PreprocessingRecipe recipe_from_json(const nlohmann::ordered_json& j) {
  PreprocessingRecipe r;
  r.rare_share = j.at("rare_share").get<double>();
  for (std::size_t k = 0; k < r.medians.size(); ++k) r.medians[k] = j.at("medians").at(std::string(kNumericRiskFactors[k])).get<double>();
  for (const auto& c : j.at("categorical")) {
    CategoricalEncoding e;
    e.factor = c.at("factor").get<std::string>();
    e.reference = c.at("reference").get<std::string>();
    e.levels = c.at("levels").get<std::vector<std::string>>();
    e.pooled = c.at("pooled").get<std::vector<std::string>>();
    e.has_others = c.at("has_others").get<bool>();
    r.categorical.push_back(std::move(e));
  }
  if (r.categorical.size() != kCategoricalRiskFactors.size()) throw DataError("recipe lists the wrong number of categorical factors");
  r.trad = column_scaler_from_json(j.at("traditional"));
  r.hand = column_scaler_from_json(j.at("handcrafted"));
  r.tele = column_scaler_from_json(j.at("telematics"));
  return r;
}

}  // namespace cann::features
