#pragma once

// Small record builders shared by the feature-pipeline tests.

#include <string>

#include "cann/features/records.hpp"

namespace fixtures {

inline cann::features::TripRecord trip(const std::string& vin, const std::string& dep, const std::string& arr,
                                       double km, double vmax, std::int64_t id = 1) {
  cann::features::TripRecord t;
  t.vin = vin;
  t.trip_id = id;
  t.departure = cann::io::parse_datetime(dep);
  t.arrival = cann::io::parse_datetime(arr);
  t.distance = km;
  t.max_speed = vmax;
  return t;
}

inline cann::features::ContractRecord contract(const std::string& vin, const std::string& start, const std::string& end,
                                               cann::Count claims = 0) {
  cann::features::ContractRecord c;
  c.vin = vin;
  c.start_date = cann::io::parse_date(start);
  c.end_date = cann::io::parse_date(end);
  c.annual_distance = 12000;
  c.commute_distance = 15;
  c.conv_count_3_yrs_minor = 0;
  c.distance = 10000;
  c.expo = 1.0;
  c.gender = "M";
  c.marital_status = "married";
  c.pmt_plan = "monthly";
  c.veh_age = 4;
  c.veh_use = "personal";
  c.years_licensed = 20;
  c.nb_claims = claims;
  return c;
}

}  // namespace fixtures
