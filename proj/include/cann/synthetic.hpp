#pragma once

// Seeded synthetic portfolio with known ground truth.
//
// Per vehicle i: psi_i ~ Gamma(shape phi*, scale 1/phi*) (mean 1, variance
// 1/phi*). Per contract t of vehicle i:
//   lambda_it = exp(b0 + sum_j b_j x_itj + g(v_it)),  y_it ~ Poisson(lambda_it psi_i)
// where x are the raw traditional covariates (dummies relative to the base
// levels M / married / monthly / personal) and g is a saturating function of
// the share of trips whose maximum speed reaches 150 km/h:
//   g(v) = amplitude * (1 - exp(-v / scale)).

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <map>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "cann/error.hpp"
#include "cann/features/preprocessing.hpp"
#include "cann/features/records.hpp"
#include "cann/features/telematics.hpp"
#include "cann/random.hpp"
#include "json.hpp"

namespace cann::synth {

using features::ContractRecord;
using features::TripRecord;
using io::Date;
using io::DateTime;

struct LevelShare {
  std::string level;
  double share;
  double coef;  // effect on log frequency relative to the first level
};

struct TelematicsEffect {
  double amplitude = 0.0;  // 0 disables the effect
  double scale = 0.1;
};

struct GeneratorConfig {
  std::size_t n_vehicles = 1000;
  // P(vehicle has 1, 2, ..., 7 contracts)
  std::vector<double> contracts_per_vehicle{0.33, 0.28, 0.21, 0.10, 0.05, 0.02, 0.01};
  double phi_star = 1.0;
  double intercept = -3.7;
  double b_annual_distance = 2e-5;  // per km declared
  double b_commute_distance = 0.0;
  double b_conv_count = 0.15;
  double b_distance = 5e-4;  // per km driven
  double b_expo = 0.8;
  double b_veh_age = -0.02;
  double b_years_licensed = -0.01;
  std::vector<LevelShare> gender{{"M", 0.55, 0.0}, {"F", 0.43, -0.05}, {"U", 0.02, 0.0}};
  std::vector<LevelShare> marital_status{
      {"married", 0.50, 0.0}, {"single", 0.36, 0.1}, {"divorced", 0.10, 0.05}, {"widowed", 0.04, 0.0}};
  std::vector<LevelShare> pmt_plan{{"monthly", 0.6, 0.0}, {"annual", 0.3, -0.1}, {"biannual", 0.1, -0.05}};
  std::vector<LevelShare> veh_use{{"personal", 0.80, 0.0}, {"commute", 0.16, 0.1}, {"business", 0.04, 0.2}};
  double commute_missing_share = 0.1;
  TelematicsEffect effect{};
  double trips_per_year = 40.0;
  double speeder_share = 0.4;      // vehicles with a positive speeding propensity
  double max_speeding_rate = 0.3;  // propensity ~ U(0, max) for speeders
  // Every vehicle also speeds now and then, with propensity ~ U(0, max), so a
  // single fast trip says little about the share of fast trips.
  double max_background_speeding = 0.05;
  double max_mean_frequency = 0.3;
  std::uint64_t seed = 0;

  void validate() const {
    if (n_vehicles == 0) throw DataError("n_vehicles must be positive");
    if (!(phi_star > 0.0)) throw DataError("phi_star must be > 0");
    if (contracts_per_vehicle.empty()) throw DataError("contracts_per_vehicle must be nonempty");
    double s = 0.0;
    for (double p : contracts_per_vehicle) {
      if (!(p >= 0.0)) throw DataError("contracts_per_vehicle entries must be >= 0");
      s += p;
    }
    if (!(s > 0.0)) throw DataError("contracts_per_vehicle must have positive mass");
    if (!(effect.scale > 0.0)) throw DataError("telematics effect scale must be > 0");
    if (!(trips_per_year >= 0.0)) throw DataError("trips_per_year must be >= 0");
    if (!(speeder_share >= 0.0 && speeder_share <= 1.0)) throw DataError("speeder_share must be in [0, 1]");
    if (!(max_speeding_rate >= 0.0 && max_speeding_rate <= 1.0)) throw DataError("max_speeding_rate must be in [0, 1]");
    if (!(max_background_speeding >= 0.0 && max_speeding_rate + max_background_speeding <= 1.0))
      throw DataError("max_background_speeding must be >= 0 and leave max_speeding_rate + it <= 1");
    for (const auto* f : {&gender, &marital_status, &pmt_plan, &veh_use}) {
      if (f->empty()) throw DataError("every categorical factor needs at least one level");
      double mass = 0.0;
      for (const auto& l : *f) {
        if (!(l.share >= 0.0)) throw DataError("level share of '" + l.level + "' must be >= 0");
        mass += l.share;
      }
      if (!(mass > 0.0)) throw DataError("level shares of a factor must have positive mass");
    }
  }

  double telematics_effect(double share_over_150) const {
    return effect.amplitude * (1.0 - std::exp(-share_over_150 / effect.scale));
  }
};

struct TruthRow {
  std::string vin;
  int contract_index = 0;
  double lambda = 0.0;
  double psi = 0.0;
};

struct Portfolio {
  std::vector<ContractRecord> contracts;  // vehicle order, chronological within vehicle
  std::vector<TripRecord> trips;
  std::vector<TruthRow> truth;  // aligned with contracts
};

inline std::string vin_of(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "V%06zu", i);
  return buf;
}

namespace detail {

inline const LevelShare& draw_level(const std::vector<LevelShare>& levels, Rng& rng) {
  std::vector<double> w;
  for (const auto& l : levels) w.push_back(l.share);
  std::discrete_distribution<std::size_t> d(w.begin(), w.end());
  return levels[d(rng)];
}

inline std::array<double, 24> hour_profile(Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::array<double, 24> w{};
  const double commute = u(rng), night = 0.3 * u(rng) * u(rng), evening = u(rng);
  for (int h = 0; h < 24; ++h) {
    double v = (h >= 6 && h < 23) ? 1.0 : 0.15;
    if (h == 7 || h == 8 || h == 16 || h == 17 || h == 18) v += 3.0 * commute;
    if (h < 5) v += 4.0 * night;
    if (h >= 19 && h < 23) v += 1.5 * evening;
    w[static_cast<std::size_t>(h)] = v;
  }
  return w;
}

}  // namespace detail

/// Generates the portfolio. Vehicle i draws from its own sub-stream, so the
/// output for a vehicle does not depend on how many vehicles follow it.
inline Portfolio generate(const GeneratorConfig& cfg) {
  cfg.validate();
  using namespace std::chrono;
  Portfolio out;
  const Date epoch_day = io::parse_date("2016-01-01");
  double lambda_total = 0.0;
  for (std::size_t v = 0; v < cfg.n_vehicles; ++v) {
    Rng rng = make_rng(cfg.seed, {v});
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const std::string vin = vin_of(v);
    std::discrete_distribution<int> n_contracts(cfg.contracts_per_vehicle.begin(), cfg.contracts_per_vehicle.end());
    const int T = n_contracts(rng) + 1;
    std::gamma_distribution<double> gamma(cfg.phi_star, 1.0 / cfg.phi_star);
    const double psi = gamma(rng);

    const auto& gender = detail::draw_level(cfg.gender, rng);
    const auto& marital = detail::draw_level(cfg.marital_status, rng);
    const auto& pmt = detail::draw_level(cfg.pmt_plan, rng);
    const auto& use = detail::draw_level(cfg.veh_use, rng);
    std::lognormal_distribution<double> annual(std::log(15000.0), 0.4);
    const double declared = std::round(annual(rng) / 100.0) * 100.0;
    const bool commute_missing = u(rng) < cfg.commute_missing_share;
    const double commute = std::round(50.0 * u(rng) * 10.0) / 10.0;
    const double veh_age0 = std::floor(15.0 * u(rng));
    const double licensed0 = std::floor(1.0 + 50.0 * u(rng));
    const auto hour_weights = detail::hour_profile(rng);
    std::discrete_distribution<int> hour_draw(hour_weights.begin(), hour_weights.end());
    const bool weekday_driver = u(rng) < 0.5;
    double speeding = cfg.max_background_speeding * u(rng);
    if (u(rng) < cfg.speeder_share) speeding += cfg.max_speeding_rate * u(rng);
    std::poisson_distribution<int> conv(0.2);
    std::lognormal_distribution<double> trip_km(std::log(8.0), 0.9);
    std::exponential_distribution<double> over(1.0 / 12.0);

    Date start = epoch_day + days{static_cast<int>(730.0 * u(rng))};
    std::int64_t trip_id = 0;
    for (int t = 0; t < T; ++t) {
      ContractRecord c;
      c.vin = vin;
      const bool full = t < T - 1 || u(rng) < 0.8;
      const int length = full ? 365 : 30 + static_cast<int>(335.0 * u(rng));
      c.start_date = start;
      c.end_date = start + days{length - 1};
      c.expo = length / 365.0;
      start = c.end_date + days{1};
      c.annual_distance = declared;
      if (!commute_missing) c.commute_distance = commute;
      c.conv_count_3_yrs_minor = conv(rng);
      c.gender = gender.level;
      c.marital_status = marital.level;
      c.pmt_plan = pmt.level;
      c.veh_use = use.level;
      c.veh_age = veh_age0 + t;
      c.years_licensed = licensed0 + t;

      std::poisson_distribution<int> n_trips(cfg.trips_per_year * c.expo);
      const int k = n_trips(rng);
      std::vector<TripRecord> own;
      double km = 0.0;
      for (int j = 0; j < k; ++j) {
        TripRecord tr;
        tr.vin = vin;
        tr.trip_id = ++trip_id;
        int day = static_cast<int>(length * u(rng));
        Date d = c.start_date + days{std::min(day, length - 1)};
        if (weekday_driver && io::weekday_index(d) >= 5 && u(rng) < 0.6) {
          d = c.start_date + days{std::min(static_cast<int>(length * u(rng)), length - 1)};
        }
        const int hour = hour_draw(rng);
        const int sec = static_cast<int>(3600.0 * u(rng));
        tr.departure = DateTime{d} + hours{hour} + seconds{sec};
        tr.distance = std::round(std::min(trip_km(rng), 400.0) * 10.0) / 10.0;
        const double avg = (15.0 + 70.0 * (1.0 - std::exp(-tr.distance / 20.0))) * (0.8 + 0.4 * u(rng));
        tr.arrival = tr.departure + seconds{static_cast<long>(std::round(tr.distance / avg * 3600.0))};
        if (u(rng) < speeding) {
          tr.max_speed = std::round((150.0 + over(rng)) * 10.0) / 10.0;
        } else {
          tr.max_speed = std::round(std::min(149.0, avg * (1.2 + 0.5 * u(rng)) + 10.0 * u(rng)) * 10.0) / 10.0;
        }
        km += tr.distance;
        own.push_back(std::move(tr));
      }
      c.distance = std::round(km * 10.0) / 10.0;

      const auto tele = features::build_telematics_vector(own);
      double eta = cfg.intercept + cfg.b_annual_distance * c.annual_distance +
                   cfg.b_commute_distance * (c.commute_distance ? *c.commute_distance : 0.0) +
                   cfg.b_conv_count * c.conv_count_3_yrs_minor + cfg.b_distance * c.distance + cfg.b_expo * c.expo +
                   cfg.b_veh_age * c.veh_age + cfg.b_years_licensed * c.years_licensed + gender.coef + marital.coef +
                   pmt.coef + use.coef;
      eta += cfg.telematics_effect(tele.m[features::kMaxSpeedBins - 1]);
      const double lambda = std::exp(eta);
      std::poisson_distribution<Count> claims(lambda * psi);
      c.nb_claims = lambda * psi > 0.0 ? claims(rng) : 0;
      lambda_total += lambda;

      out.truth.push_back({vin, t + 1, lambda, psi});
      out.contracts.push_back(std::move(c));
      for (auto& tr : own) out.trips.push_back(std::move(tr));
    }
  }
  const double mean = lambda_total / static_cast<double>(out.contracts.size());
  if (mean > cfg.max_mean_frequency) {
    throw DataError("configured portfolio has mean claim frequency " + std::to_string(mean) + " > " +
                    std::to_string(cfg.max_mean_frequency));
  }
  return out;
}

inline void write_truth(std::ostream& out, const std::vector<TruthRow>& rows) {
  out << "vin,contract_index,lambda,psi\n";
  io::RowWriter w(out);
  for (const auto& r : rows) {
    w.field(r.vin).field(r.contract_index).field(r.lambda).field(r.psi);
    w.end();
  }
}

/// The true coefficients expressed in the coordinates of a fitted recipe's
/// traditional design (intercept first), so they can be compared with a GLM
/// fitted on that design. Requires every pooled level group to share one
/// true coefficient and the telematics effect to be off.
inline Eigen::VectorXd truth_in_recipe_coordinates(const GeneratorConfig& cfg, const features::PreprocessingRecipe& r) {
  const std::map<std::string, double> numeric{{"annual_distance", cfg.b_annual_distance},
                                              {"commute_distance", cfg.b_commute_distance},
                                              {"conv_count_3_yrs_minor", cfg.b_conv_count},
                                              {"distance", cfg.b_distance},
                                              {"expo", cfg.b_expo},
                                              {"veh_age", cfg.b_veh_age},
                                              {"years_licensed", cfg.b_years_licensed}};
  const std::map<std::string, const std::vector<LevelShare>*> factors{
      {"gender", &cfg.gender}, {"marital_status", &cfg.marital_status}, {"pmt_plan", &cfg.pmt_plan},
      {"veh_use", &cfg.veh_use}};
  double b0 = cfg.intercept;
  std::map<std::string, double> raw;  // recipe column name -> raw-scale coefficient
  for (const auto& [name, b] : numeric) raw[name] = b;
  for (const auto& e : r.categorical) {
    const auto& levels = *factors.at(e.factor);
    auto coef_of_group = [&](const std::string& group) {
      std::vector<std::string> members;
      if (group == features::kOthers) members = e.pooled;
      else members = {group};
      std::optional<double> c;
      for (const auto& m : members) {
        for (const auto& l : levels) {
          if (l.level != m) continue;
          if (c && *c != l.coef) throw DataError("pooled levels of " + e.factor + " have different true effects");
          c = l.coef;
        }
      }
      if (!c) throw DataError("level group " + group + " of " + e.factor + " is unknown to the generator");
      return *c;
    };
    const double ref = coef_of_group(e.reference);
    b0 += ref;
    for (const auto& level : e.levels) raw[e.factor + "_" + level] = coef_of_group(level) - ref;
  }
  Eigen::VectorXd beta(static_cast<Eigen::Index>(r.trad.names.size() + 1));
  for (std::size_t j = 0; j < r.trad.names.size(); ++j) {
    const double b = raw.at(r.trad.names[j]);
    beta(static_cast<Eigen::Index>(j + 1)) = b * r.trad.scale[j];
    b0 += b * r.trad.center[j];
  }
  beta(0) = b0;
  return beta;
}

inline GeneratorConfig generator_config_from_json(const nlohmann::json& j, GeneratorConfig c = {}) {
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
  };
  get("n_vehicles", c.n_vehicles);
  get("contracts_per_vehicle", c.contracts_per_vehicle);
  get("phi_star", c.phi_star);
  get("intercept", c.intercept);
  get("b_annual_distance", c.b_annual_distance);
  get("b_commute_distance", c.b_commute_distance);
  get("b_conv_count", c.b_conv_count);
  get("b_distance", c.b_distance);
  get("b_expo", c.b_expo);
  get("b_veh_age", c.b_veh_age);
  get("b_years_licensed", c.b_years_licensed);
  get("commute_missing_share", c.commute_missing_share);
  get("trips_per_year", c.trips_per_year);
  get("speeder_share", c.speeder_share);
  get("max_speeding_rate", c.max_speeding_rate);
  get("max_background_speeding", c.max_background_speeding);
  get("max_mean_frequency", c.max_mean_frequency);
  get("seed", c.seed);
  // Level tables: [{"level": "M", "share": 0.55, "coef": 0.0}, ...]
  auto levels = [&](const char* key, std::vector<LevelShare>& field) {
    if (!j.contains(key)) return;
    field.clear();
    for (const auto& l : j.at(key)) {
      field.push_back({l.at("level").get<std::string>(), l.at("share").get<double>(), l.value("coef", 0.0)});
    }
  };
  levels("gender", c.gender);
  levels("marital_status", c.marital_status);
  levels("pmt_plan", c.pmt_plan);
  levels("veh_use", c.veh_use);
  if (j.contains("effect")) {
    const auto& e = j.at("effect");
    if (e.contains("amplitude")) c.effect.amplitude = e.at("amplitude").get<double>();
    if (e.contains("scale")) c.effect.scale = e.at("scale").get<double>();
  }
  return c;
}

}  // namespace cann::synth
