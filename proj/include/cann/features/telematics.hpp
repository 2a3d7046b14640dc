#pragma once

// Trip-to-contract linking, per-contract telematics descriptor vectors and
// handcrafted summary features.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "cann/error.hpp"
#include "cann/features/records.hpp"

namespace cann::features {

inline constexpr int kHourBins = 24;
inline constexpr int kDayBins = 7;
inline constexpr int kAvgSpeedBins = 14;  // 10 km/h wide, last bin >= 130
inline constexpr int kMaxSpeedBins = 16;  // 10 km/h wide, last bin >= 150
inline constexpr int kDistanceBins = 10;  // 5 km wide, last bin >= 45
inline constexpr int kTelematicsWidth = kHourBins + kDayBins + kAvgSpeedBins + kMaxSpeedBins + kDistanceBins;
inline constexpr double kMinTripSeconds = 60.0;

/// How the hour and weekday blocks weight each trip.
enum class TimeWeighting { duration, distance };

inline std::string to_string(TimeWeighting w) { return w == TimeWeighting::duration ? "duration" : "distance"; }

inline TimeWeighting parse_time_weighting(std::string_view s) {
  if (s == "duration") return TimeWeighting::duration;
  if (s == "distance") return TimeWeighting::distance;
  throw DataError("unknown time weighting '" + std::string(s) + "'");
}

struct TelematicsVector {
  std::array<double, kHourBins> h{};
  std::array<double, kDayBins> d{};
  std::array<double, kAvgSpeedBins> a{};
  std::array<double, kMaxSpeedBins> m{};
  std::array<double, kDistanceBins> k{};

  /// Concatenation h, d, a, m, k (the export column order).
  std::array<double, kTelematicsWidth> flat() const {
    std::array<double, kTelematicsWidth> out{};
    auto it = out.begin();
    it = std::copy(h.begin(), h.end(), it);
    it = std::copy(d.begin(), d.end(), it);
    it = std::copy(a.begin(), a.end(), it);
    it = std::copy(m.begin(), m.end(), it);
    std::copy(k.begin(), k.end(), it);
    return out;
  }

  static TelematicsVector from_flat(std::span<const double> v) {
    if (v.size() != kTelematicsWidth) throw ShapeError("telematics vector needs 71 entries");
    TelematicsVector t;
    auto it = v.begin();
    std::copy(it, it + kHourBins, t.h.begin());
    it += kHourBins;
    std::copy(it, it + kDayBins, t.d.begin());
    it += kDayBins;
    std::copy(it, it + kAvgSpeedBins, t.a.begin());
    it += kAvgSpeedBins;
    std::copy(it, it + kMaxSpeedBins, t.m.begin());
    it += kMaxSpeedBins;
    std::copy(it, it + kDistanceBins, t.k.begin());
    return t;
  }
};

inline std::vector<std::string> telematics_names() {
  std::vector<std::string> names;
  names.reserve(kTelematicsWidth);
  const auto block = [&](const char* prefix, int n) {
    for (int j = 1; j <= n; ++j) names.push_back(prefix + std::to_string(j));
  };
  block("h_", kHourBins);
  block("p_", kDayBins);
  block("vmo_", kAvgSpeedBins);
  block("vma_", kMaxSpeedBins);
  block("d_", kDistanceBins);
  return names;
}

inline constexpr std::array<std::string_view, 13> kHandcraftedNames = {
    "avg_daily_nb_trips",    "frac_expo_evening",     "frac_expo_fri_sat",
    "frac_expo_mon_to_thu",  "frac_expo_night",       "frac_expo_noon",
    "frac_expo_peak_evening", "frac_expo_peak_morning", "max_trip_max_speed",
    "med_trip_avg_speed",    "med_trip_distance",     "med_trip_max_speed",
    "prop_long_trip"};

struct HandcraftedFeatures {
  std::array<double, kHandcraftedNames.size()> values{};
  bool no_trips = false;

  double& operator[](std::string_view name) { return values[index_of(name)]; }
  double operator[](std::string_view name) const { return values[index_of(name)]; }

  static std::size_t index_of(std::string_view name) {
    for (std::size_t i = 0; i < kHandcraftedNames.size(); ++i) {
      if (kHandcraftedNames[i] == name) return i;
    }
    throw ShapeError("unknown handcrafted feature '" + std::string(name) + "'");
  }
};

/// Seconds of the trip counted for time allocation and average speed.
inline double effective_seconds(const TripRecord& t) {
  const double s = static_cast<double>((t.arrival - t.departure).count());
  return std::max(s, kMinTripSeconds);
}

inline double average_speed(const TripRecord& t) { return t.distance / (effective_seconds(t) / 3600.0); }

inline int bin_index(double value, double width, int n_bins) {
  if (!(value >= 0.0)) return 0;
  const double b = std::floor(value / width);
  return b >= n_bins - 1 ? n_bins - 1 : static_cast<int>(b);
}

/// Splits [departure, departure + effective_seconds) over (weekday, hour)
/// cells, calling visit(weekday, hour, seconds) for each overlapped cell.
template <class Visit>
void allocate_seconds(const TripRecord& t, Visit&& visit) {
  using namespace std::chrono;
  const double total = effective_seconds(t);
  const Date day0 = floor<days>(t.departure);
  double offset = static_cast<double>((t.departure - DateTime{day0}).count());  // seconds since day0 midnight
  double remaining = total;
  long day_shift = 0;
  while (remaining > 0.0) {
    if (offset >= 86400.0) {
      offset -= 86400.0;
      ++day_shift;
    }
    const int hour = static_cast<int>(offset / 3600.0);
    const double cell_end = (hour + 1) * 3600.0;
    const double take = std::min(remaining, cell_end - offset);
    visit(io::weekday_index(day0 + days{day_shift}), hour, take);
    remaining -= take;
    offset = cell_end;
  }
}

/// Weighted (weekday, hour) profile of one contract's trips.
using DrivingProfile = std::array<std::array<double, kHourBins>, kDayBins>;

inline DrivingProfile driving_profile(std::span<const TripRecord> trips,
                                      TimeWeighting weighting = TimeWeighting::duration) {
  DrivingProfile p{};
  for (const auto& t : trips) {
    const double rate = weighting == TimeWeighting::duration ? 1.0 : t.distance / effective_seconds(t);
    allocate_seconds(t, [&](int wd, int hour, double secs) { p[wd][hour] += rate * secs; });
  }
  return p;
}

inline TelematicsVector build_telematics_vector(std::span<const TripRecord> trips,
                                                TimeWeighting weighting = TimeWeighting::duration) {
  TelematicsVector v;
  if (trips.empty()) return v;
  const DrivingProfile p = driving_profile(trips, weighting);
  double total = 0.0;
  for (int wd = 0; wd < kDayBins; ++wd) {
    for (int h = 0; h < kHourBins; ++h) {
      v.h[h] += p[wd][h];
      v.d[wd] += p[wd][h];
      total += p[wd][h];
    }
  }
  if (total > 0.0) {
    for (auto& x : v.h) x /= total;
    for (auto& x : v.d) x /= total;
  }
  const double n = static_cast<double>(trips.size());
  for (const auto& t : trips) {
    v.a[bin_index(average_speed(t), 10.0, kAvgSpeedBins)] += 1.0 / n;
    v.m[bin_index(t.max_speed, 10.0, kMaxSpeedBins)] += 1.0 / n;
    v.k[bin_index(t.distance, 5.0, kDistanceBins)] += 1.0 / n;
  }
  return v;
}

namespace detail {

inline double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline double window_share(const DrivingProfile& p, double total, int day_lo, int day_hi, int hour_lo,
                           int hour_hi) {
  double s = 0.0;
  for (int wd = day_lo; wd < day_hi; ++wd) {
    for (int h = hour_lo; h < hour_hi; ++h) s += p[wd][h];
  }
  return total > 0.0 ? s / total : 0.0;
}

}  // namespace detail

inline HandcraftedFeatures build_handcrafted(std::span<const TripRecord> trips, const ContractRecord& contract) {
  HandcraftedFeatures f;
  if (trips.empty()) {
    f.no_trips = true;
    return f;
  }
  const DrivingProfile p = driving_profile(trips, TimeWeighting::duration);
  double total = 0.0;
  for (const auto& row : p) {
    for (double x : row) total += x;
  }
  std::vector<double> avg, dist, maxs;
  double long_trips = 0.0;
  for (const auto& t : trips) {
    avg.push_back(average_speed(t));
    dist.push_back(t.distance);
    maxs.push_back(t.max_speed);
    if (t.distance > 100.0) long_trips += 1.0;
  }
  const double n = static_cast<double>(trips.size());
  f["avg_daily_nb_trips"] = n / (contract.expo * 365.25);
  f["frac_expo_evening"] = detail::window_share(p, total, 0, 7, 20, 24);
  f["frac_expo_fri_sat"] = detail::window_share(p, total, 4, 6, 0, 24);
  f["frac_expo_mon_to_thu"] = detail::window_share(p, total, 0, 4, 0, 24);
  f["frac_expo_night"] = detail::window_share(p, total, 0, 7, 0, 6);
  f["frac_expo_noon"] = detail::window_share(p, total, 0, 7, 11, 14);
  f["frac_expo_peak_evening"] = detail::window_share(p, total, 0, 5, 17, 20);
  f["frac_expo_peak_morning"] = detail::window_share(p, total, 0, 5, 7, 9);
  f["max_trip_max_speed"] = *std::max_element(maxs.begin(), maxs.end());
  f["med_trip_avg_speed"] = detail::median(avg);
  f["med_trip_distance"] = detail::median(dist);
  f["med_trip_max_speed"] = detail::median(maxs);
  f["prop_long_trip"] = long_trips / n;
  return f;
}

struct LinkResult {
  std::vector<std::vector<std::size_t>> trips_of_contract;  // indices into the trips input, chronological
  std::size_t discarded = 0;
};

/// Assigns each trip to the contract of its vehicle whose inclusive
/// [start_date, end_date] contains the departure date. Two contracts may share
/// a boundary date (the later one wins there); any deeper overlap is an error.
inline LinkResult link_trips(const std::vector<ContractRecord>& contracts, const std::vector<TripRecord>& trips) {
  std::map<std::string, std::vector<std::size_t>> by_vin;
  for (std::size_t i = 0; i < contracts.size(); ++i) by_vin[contracts[i].vin].push_back(i);
  for (auto& [vin, idx] : by_vin) {
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
      return contracts[a].start_date < contracts[b].start_date;
    });
    for (std::size_t j = 1; j < idx.size(); ++j) {
      const auto& prev = contracts[idx[j - 1]];
      const auto& cur = contracts[idx[j]];
      if (cur.start_date < prev.end_date || cur.start_date == prev.start_date) {
        throw DataError("overlapping contracts for vehicle " + vin + ": [" + io::format_date(prev.start_date) +
                        ", " + io::format_date(prev.end_date) + "] and [" + io::format_date(cur.start_date) +
                        ", " + io::format_date(cur.end_date) + "]");
      }
    }
  }
  LinkResult r;
  r.trips_of_contract.resize(contracts.size());
  for (std::size_t t = 0; t < trips.size(); ++t) {
    const auto it = by_vin.find(trips[t].vin);
    if (it == by_vin.end()) {
      ++r.discarded;
      continue;
    }
    const Date dep = std::chrono::floor<std::chrono::days>(trips[t].departure);
    const auto& idx = it->second;
    // last contract starting on or before the departure date
    auto pos = std::upper_bound(idx.begin(), idx.end(), dep,
                                [&](Date d, std::size_t c) { return d < contracts[c].start_date; });
    if (pos == idx.begin() || contracts[*std::prev(pos)].end_date < dep) {
      ++r.discarded;
      continue;
    }
    r.trips_of_contract[*std::prev(pos)].push_back(t);
  }
  for (auto& list : r.trips_of_contract) {
    std::stable_sort(list.begin(), list.end(),
                     [&](std::size_t a, std::size_t b) { return trips[a].departure < trips[b].departure; });
  }
  return r;
}

}  // namespace cann::features
