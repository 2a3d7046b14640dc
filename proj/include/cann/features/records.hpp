#pragma once

// Contract and trip records and their delimited-text layouts.
//
// contracts: vin,start_date,end_date,annual_distance,commute_distance,
//            conv_count_3_yrs_minor,distance,expo,gender,marital_status,
//            pmt_plan,veh_age,veh_use,years_licensed,nb_claims
// trips:     vin,trip_id,departure,arrival,distance,max_speed
//
// Dates are YYYY-MM-DD, datetimes YYYY-MM-DDTHH:MM:SS, an empty field is a
// missing value (only commute_distance may be missing).

#include <array>
#include <cmath>
#include <istream>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "cann/count_distributions.hpp"
#include "cann/error.hpp"
#include "cann/io/csv.hpp"
#include "cann/io/datetime.hpp"

namespace cann::features {

using io::Date;
using io::DateTime;

struct TripRecord {
  std::string vin;
  std::int64_t trip_id = 0;
  DateTime departure;
  DateTime arrival;
  double distance = 0.0;   // km
  double max_speed = 0.0;  // km/h
};

struct ContractRecord {
  std::string vin;
  Date start_date;
  Date end_date;
  double annual_distance = 0.0;
  std::optional<double> commute_distance;
  double conv_count_3_yrs_minor = 0.0;
  double distance = 0.0;
  double expo = 1.0;
  std::string gender;
  std::string marital_status;
  std::string pmt_plan;
  double veh_age = 0.0;
  std::string veh_use;
  double years_licensed = 0.0;
  Count nb_claims = 0;
};

inline constexpr std::array<std::string_view, 7> kNumericRiskFactors = {
    "annual_distance", "commute_distance", "conv_count_3_yrs_minor", "distance",
    "expo",            "veh_age",          "years_licensed"};

inline constexpr std::array<std::string_view, 4> kCategoricalRiskFactors = {
    "gender", "marital_status", "pmt_plan", "veh_use"};

inline std::optional<double> numeric_value(const ContractRecord& c, std::size_t j) {
  switch (j) {
    case 0: return c.annual_distance;
    case 1: return c.commute_distance;
    case 2: return c.conv_count_3_yrs_minor;
    case 3: return c.distance;
    case 4: return c.expo;
    case 5: return c.veh_age;
    case 6: return c.years_licensed;
  }
  throw ShapeError("numeric risk factor index out of range");
}

inline const std::string& categorical_value(const ContractRecord& c, std::size_t j) {
  switch (j) {
    case 0: return c.gender;
    case 1: return c.marital_status;
    case 2: return c.pmt_plan;
    case 3: return c.veh_use;
  }
  throw ShapeError("categorical risk factor index out of range");
}

inline void validate(const ContractRecord& c) {
  const auto fail = [&](const std::string& m) {
    throw DataError("contract " + c.vin + " starting " + io::format_date(c.start_date) + ": " + m);
  };
  if (c.vin.empty()) fail("empty vin");
  if (c.end_date < c.start_date) fail("end_date precedes start_date");
  if (!(c.expo > 0.0) || !std::isfinite(c.expo)) fail("expo must be > 0");
  if (c.nb_claims < 0) fail("nb_claims must be >= 0");
  for (std::size_t j = 0; j < kNumericRiskFactors.size(); ++j) {
    const auto v = numeric_value(c, j);
    if (v && !std::isfinite(*v)) fail(std::string(kNumericRiskFactors[j]) + " is not finite");
  }
}

inline void validate(const TripRecord& t) {
  const auto fail = [&](const std::string& m) {
    throw DataError("trip " + t.vin + "/" + std::to_string(t.trip_id) + ": " + m);
  };
  if (t.arrival < t.departure) fail("arrival precedes departure");
  if (!(t.distance >= 0.0) || !std::isfinite(t.distance)) fail("distance must be finite and >= 0");
  if (!(t.max_speed >= 0.0) || !std::isfinite(t.max_speed)) fail("max_speed must be finite and >= 0");
}

inline constexpr std::string_view kContractHeader =
    "vin,start_date,end_date,annual_distance,commute_distance,conv_count_3_yrs_minor,distance,"
    "expo,gender,marital_status,pmt_plan,veh_age,veh_use,years_licensed,nb_claims";

inline constexpr std::string_view kTripHeader = "vin,trip_id,departure,arrival,distance,max_speed";

inline void write_contract_fields(io::RowWriter& w, const ContractRecord& c) {
  w.field(c.vin).field(io::format_date(c.start_date)).field(io::format_date(c.end_date));
  w.field(c.annual_distance);
  if (c.commute_distance) w.field(*c.commute_distance); else w.field(std::string_view{});
  w.field(c.conv_count_3_yrs_minor).field(c.distance).field(c.expo);
  w.field(c.gender).field(c.marital_status).field(c.pmt_plan).field(c.veh_age);
  w.field(c.veh_use).field(c.years_licensed).field(static_cast<std::int64_t>(c.nb_claims));
}

inline void write_contracts(std::ostream& out, const std::vector<ContractRecord>& cs) {
  out << kContractHeader << '\n';
  io::RowWriter w(out);
  for (const auto& c : cs) {
    write_contract_fields(w, c);
    w.end();
  }
}

inline ContractRecord parse_contract_row(const io::CsvTable& t, std::size_t r) {
  const auto f = [&](std::string_view col) -> const std::string& { return t.at(r, t.column(col)); };
  const auto num = [&](std::string_view col) {
    const auto& s = f(col);
    if (s.empty()) throw DataError(t.source() + ": missing value for " + std::string(col) + " in row " + std::to_string(r + 2));
    return io::parse_double(s, col);
  };
  ContractRecord c;
  c.vin = f("vin");
  c.start_date = io::parse_date(f("start_date"));
  c.end_date = io::parse_date(f("end_date"));
  c.annual_distance = num("annual_distance");
  if (!f("commute_distance").empty()) c.commute_distance = io::parse_double(f("commute_distance"), "commute_distance");
  c.conv_count_3_yrs_minor = num("conv_count_3_yrs_minor");
  c.distance = num("distance");
  c.expo = num("expo");
  c.gender = f("gender");
  c.marital_status = f("marital_status");
  c.pmt_plan = f("pmt_plan");
  c.veh_age = num("veh_age");
  c.veh_use = f("veh_use");
  c.years_licensed = num("years_licensed");
  c.nb_claims = io::parse_int(f("nb_claims"), "nb_claims");
  validate(c);
  return c;
}

inline std::vector<ContractRecord> read_contracts(const io::CsvTable& t) {
  std::vector<ContractRecord> out;
  out.reserve(t.rows());
  for (std::size_t r = 0; r < t.rows(); ++r) out.push_back(parse_contract_row(t, r));
  return out;
}

inline std::vector<ContractRecord> read_contracts(std::istream& in) {
  return read_contracts(io::CsvTable::read(in, "contracts"));
}

inline void write_trips(std::ostream& out, const std::vector<TripRecord>& ts) {
  out << kTripHeader << '\n';
  io::RowWriter w(out);
  for (const auto& t : ts) {
    w.field(t.vin).field(t.trip_id).field(io::format_datetime(t.departure));
    w.field(io::format_datetime(t.arrival)).field(t.distance).field(t.max_speed);
    w.end();
  }
}

inline std::vector<TripRecord> read_trips(const io::CsvTable& t) {
  const std::size_t c_vin = t.column("vin"), c_id = t.column("trip_id"), c_dep = t.column("departure"),
                    c_arr = t.column("arrival"), c_dist = t.column("distance"), c_max = t.column("max_speed");
  std::vector<TripRecord> out;
  out.reserve(t.rows());
  for (std::size_t r = 0; r < t.rows(); ++r) {
    TripRecord tr;
    tr.vin = t.at(r, c_vin);
    tr.trip_id = io::parse_int(t.at(r, c_id), "trip_id");
    tr.departure = io::parse_datetime(t.at(r, c_dep));
    tr.arrival = io::parse_datetime(t.at(r, c_arr));
    tr.distance = io::parse_double(t.at(r, c_dist), "distance");
    tr.max_speed = io::parse_double(t.at(r, c_max), "max_speed");
    validate(tr);
    out.push_back(std::move(tr));
  }
  return out;
}

inline std::vector<TripRecord> read_trips(std::istream& in) {
  return read_trips(io::CsvTable::read(in, "trips"));
}

}  // namespace cann::features
