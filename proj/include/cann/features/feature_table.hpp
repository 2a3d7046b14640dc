#pragma once

// One row per contract: the raw contract record plus its telematics vector
// and handcrafted features. Rows are ordered by (vin, start_date), so each
// vehicle's contracts are contiguous and chronological.

#include <algorithm>
#include <istream>
#include <numeric>
#include <ostream>
#include <string>
#include <vector>

#include "cann/features/records.hpp"
#include "cann/features/telematics.hpp"
#include "cann/panel.hpp"

namespace cann::features {

struct FeatureTable {
  std::vector<ContractRecord> contracts;
  std::vector<int> contract_index;  // 1-based position within the vehicle
  std::vector<std::int64_t> n_trips;
  std::vector<HandcraftedFeatures> hand;
  std::vector<TelematicsVector> tele;
  std::vector<std::string> split;  // "train" / "valid" / "test", or empty
  std::size_t discarded_trips = 0;

  std::size_t size() const { return contracts.size(); }

  /// Rows whose split label equals `label`, in table order.
  std::vector<std::size_t> rows_in(std::string_view label) const {
    std::vector<std::size_t> r;
    for (std::size_t i = 0; i < split.size(); ++i)
      if (split[i] == label) r.push_back(i);
    return r;
  }

  /// Sub-table of the given rows (kept in the given order).
  FeatureTable subset(const std::vector<std::size_t>& rows) const {
    FeatureTable t;
    t.discarded_trips = 0;
    for (std::size_t r : rows) {
      t.contracts.push_back(contracts[r]);
      t.contract_index.push_back(contract_index[r]);
      t.n_trips.push_back(n_trips[r]);
      t.hand.push_back(hand[r]);
      t.tele.push_back(tele[r]);
      if (!split.empty()) t.split.push_back(split[r]);
    }
    return t;
  }
};

/// Vehicle groups of a table whose rows are sorted by (vin, start_date).
inline Panel vehicle_panel(const std::vector<ContractRecord>& contracts) {
  Panel p;
  for (std::size_t i = 0; i < contracts.size(); ++i) {
    if (i == 0 || contracts[i].vin != contracts[i - 1].vin) p.groups.emplace_back();
    p.groups.back().push_back(i);
  }
  return p;
}

inline FeatureTable build_feature_table(std::vector<ContractRecord> contracts, const std::vector<TripRecord>& trips,
                                        TimeWeighting weighting = TimeWeighting::duration) {
  std::stable_sort(contracts.begin(), contracts.end(), [](const ContractRecord& a, const ContractRecord& b) {
    return a.vin != b.vin ? a.vin < b.vin : a.start_date < b.start_date;
  });
  const LinkResult link = link_trips(contracts, trips);
  FeatureTable t;
  t.discarded_trips = link.discarded;
  const std::size_t n = contracts.size();
  t.contract_index.resize(n);
  t.n_trips.resize(n);
  t.hand.resize(n);
  t.tele.resize(n);
  std::vector<TripRecord> own;
  for (std::size_t i = 0; i < n; ++i) {
    t.contract_index[i] = (i > 0 && contracts[i].vin == contracts[i - 1].vin) ? t.contract_index[i - 1] + 1 : 1;
    own.clear();
    for (std::size_t k : link.trips_of_contract[i]) own.push_back(trips[k]);
    t.n_trips[i] = static_cast<std::int64_t>(own.size());
    t.tele[i] = build_telematics_vector(own, weighting);
    t.hand[i] = build_handcrafted(own, contracts[i]);
  }
  t.contracts = std::move(contracts);
  return t;
}

inline void write_feature_table(std::ostream& out, const FeatureTable& t) {
  out << "vin,contract_index,split," << kContractHeader.substr(4) << ",n_trips,no_trips";
  for (auto name : kHandcraftedNames) out << ',' << name;
  for (const auto& name : telematics_names()) out << ',' << name;
  out << '\n';
  io::RowWriter w(out);
  for (std::size_t i = 0; i < t.size(); ++i) {
    const auto& c = t.contracts[i];
    w.field(c.vin).field(t.contract_index[i]).field(t.split.empty() ? std::string_view{} : std::string_view(t.split[i]));
    w.field(io::format_date(c.start_date)).field(io::format_date(c.end_date)).field(c.annual_distance);
    if (c.commute_distance) w.field(*c.commute_distance); else w.field(std::string_view{});
    w.field(c.conv_count_3_yrs_minor).field(c.distance).field(c.expo);
    w.field(c.gender).field(c.marital_status).field(c.pmt_plan).field(c.veh_age);
    w.field(c.veh_use).field(c.years_licensed).field(static_cast<std::int64_t>(c.nb_claims));
    w.field(t.n_trips[i]).field(t.hand[i].no_trips ? 1 : 0);
    for (double v : t.hand[i].values) w.field(v);
    for (double v : t.tele[i].flat()) w.field(v);
    w.end();
  }
}

inline FeatureTable read_feature_table(const io::CsvTable& csv) {
  FeatureTable t;
  const std::size_t c_idx = csv.column("contract_index"), c_split = csv.column("split"),
                    c_trips = csv.column("n_trips"), c_flag = csv.column("no_trips");
  std::vector<std::size_t> hand_cols, tele_cols;
  for (auto name : kHandcraftedNames) hand_cols.push_back(csv.column(name));
  for (const auto& name : telematics_names()) tele_cols.push_back(csv.column(name));
  bool any_split = false;
  for (std::size_t r = 0; r < csv.rows(); ++r) {
    t.contracts.push_back(parse_contract_row(csv, r));
    t.contract_index.push_back(static_cast<int>(io::parse_int(csv.at(r, c_idx), "contract_index")));
    t.split.push_back(csv.at(r, c_split));
    any_split = any_split || !t.split.back().empty();
    t.n_trips.push_back(io::parse_int(csv.at(r, c_trips), "n_trips"));
    HandcraftedFeatures h;
    h.no_trips = io::parse_int(csv.at(r, c_flag), "no_trips") != 0;
    for (std::size_t j = 0; j < hand_cols.size(); ++j) h.values[j] = io::parse_double(csv.at(r, hand_cols[j]), kHandcraftedNames[j]);
    t.hand.push_back(h);
    std::array<double, kTelematicsWidth> v{};
    for (std::size_t j = 0; j < tele_cols.size(); ++j) v[j] = io::parse_double(csv.at(r, tele_cols[j]), "telematics");
    t.tele.push_back(TelematicsVector::from_flat(v));
  }
  for (std::size_t i = 1; i < t.size(); ++i) {
    const auto& a = t.contracts[i - 1];
    const auto& b = t.contracts[i];
    if (a.vin > b.vin || (a.vin == b.vin && !(a.start_date < b.start_date))) {
      throw DataError(csv.source() + ": rows must be sorted by vin and start_date");
    }
  }
  if (!any_split) t.split.clear();
  return t;
}

}  // namespace cann::features
