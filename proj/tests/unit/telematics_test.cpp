#include <gtest/gtest.h>

#include <numeric>
#include <random>
#include <sstream>

#include "cann/features/feature_table.hpp"
#include "unit/fixtures.hpp"

using namespace cann;
using namespace cann::features;
using fixtures::contract;
using fixtures::trip;

namespace {

double sum(std::span<const double> v) { return std::accumulate(v.begin(), v.end(), 0.0); }

}  // namespace

TEST(Telematics, NamesFollowExportConvention) {
  const auto n = telematics_names();
  ASSERT_EQ(n.size(), 71u);
  EXPECT_EQ(n.front(), "h_1");
  EXPECT_EQ(n[23], "h_24");
  EXPECT_EQ(n[24], "p_1");
  EXPECT_EQ(n[31], "vmo_1");
  EXPECT_EQ(n[45], "vma_1");
  EXPECT_EQ(n[60], "vma_16");
  EXPECT_EQ(n[61], "d_1");
  EXPECT_EQ(n.back(), "d_10");
}

TEST(Telematics, MondayMorningTrip) {
  // 2024-01-01 is a Monday. 30 km in one hour is exactly 30 km/h.
  const std::vector<TripRecord> t{trip("A", "2024-01-01T10:00:00", "2024-01-01T11:00:00", 30, 80)};
  const auto v = build_telematics_vector(t);
  EXPECT_EQ(v.h[10], 1.0);  // h_11 covers 10:00-11:00
  EXPECT_EQ(v.d[0], 1.0);
  EXPECT_EQ(v.a[3], 1.0);   // vmo_4 = [30, 40)
  EXPECT_EQ(v.m[8], 1.0);   // vma_9 = [80, 90)
  EXPECT_EQ(v.k[6], 1.0);   // d_7 = [30, 35)
  EXPECT_EQ(sum(v.a), 1.0);
}

TEST(Telematics, SampleTripsFromTripLog) {
  const TripRecord t1 = trip("A", "2017-05-02T19:04:15", "2017-05-02T19:24:24", 25.0, 104);
  EXPECT_EQ(effective_seconds(t1), 1209.0);
  EXPECT_NEAR(average_speed(t1), 74.4417, 1e-4);
  const auto v1 = build_telematics_vector(std::vector<TripRecord>{t1});
  EXPECT_EQ(v1.a[7], 1.0);  // vmo_8
  EXPECT_EQ(v1.d[1], 1.0);  // a Tuesday
  EXPECT_EQ(v1.h[19], 1.0);
  EXPECT_EQ(v1.m[10], 1.0);

  const TripRecord t2 = trip("A", "2017-05-02T21:31:29", "2017-05-02T21:31:29", 6.4, 66);
  EXPECT_EQ(effective_seconds(t2), 60.0);
  EXPECT_NEAR(average_speed(t2), 384.0, 1e-9);
  const auto v2 = build_telematics_vector(std::vector<TripRecord>{t2});
  EXPECT_EQ(v2.a[13], 1.0);  // open top bin
  EXPECT_EQ(v2.h[21], 1.0);
}

TEST(Telematics, HalfOpenBins) {
  EXPECT_EQ(bin_index(0.0, 10, 14), 0);
  EXPECT_EQ(bin_index(9.999, 10, 14), 0);
  EXPECT_EQ(bin_index(10.0, 10, 14), 1);
  EXPECT_EQ(bin_index(129.99, 10, 14), 12);
  EXPECT_EQ(bin_index(130.0, 10, 14), 13);
  EXPECT_EQ(bin_index(1e6, 10, 14), 13);
  EXPECT_EQ(bin_index(150.0, 10, 16), 15);
  EXPECT_EQ(bin_index(45.0, 5, 10), 9);
  EXPECT_EQ(bin_index(44.9, 5, 10), 8);
}

TEST(Telematics, AllocationWrapsMidnightAndWeek) {
  // Sunday 23:30 to Monday 01:15.
  const TripRecord t = trip("A", "2024-01-07T23:30:00", "2024-01-08T01:15:00", 50, 90);
  double total = 0.0;
  std::map<std::pair<int, int>, double> cells;
  allocate_seconds(t, [&](int wd, int h, double s) {
    cells[{wd, h}] += s;
    total += s;
  });
  EXPECT_NEAR(total, 6300.0, 1e-6);
  EXPECT_EQ((cells[{6, 23}]), 1800.0);
  EXPECT_EQ((cells[{0, 0}]), 3600.0);
  EXPECT_EQ((cells[{0, 1}]), 900.0);
  const auto v = build_telematics_vector(std::vector<TripRecord>{t});
  EXPECT_NEAR(v.d[6], 1800.0 / 6300.0, 1e-15);
  EXPECT_NEAR(v.d[0], 4500.0 / 6300.0, 1e-15);
}

TEST(Telematics, BlocksSumToOneRandomised) {
  std::mt19937_64 rng(31);
  std::uniform_int_distribution<int> secs(0, 86400 * 30), dur(0, 4 * 3600);
  std::uniform_real_distribution<double> km(0, 120), vmax(0, 190);
  const auto base = io::parse_datetime("2024-03-01T00:00:00");
  for (int c = 0; c < 50; ++c) {
    std::vector<TripRecord> ts;
    const int n = 1 + c % 7;
    for (int i = 0; i < n; ++i) {
      TripRecord t;
      t.vin = "V";
      t.departure = base + std::chrono::seconds{secs(rng)};
      t.arrival = t.departure + std::chrono::seconds{dur(rng)};
      t.distance = km(rng);
      t.max_speed = vmax(rng);
      double alloc = 0.0;
      allocate_seconds(t, [&](int, int, double s) { alloc += s; });
      EXPECT_NEAR(alloc, effective_seconds(t), 1e-6);
      ts.push_back(t);
    }
    for (TimeWeighting w : {TimeWeighting::duration, TimeWeighting::distance}) {
      const auto v = build_telematics_vector(ts, w);
      EXPECT_NEAR(sum(v.h), 1.0, 1e-9);
      EXPECT_NEAR(sum(v.d), 1.0, 1e-9);
      EXPECT_NEAR(sum(v.a), 1.0, 1e-9);
      EXPECT_NEAR(sum(v.m), 1.0, 1e-9);
      EXPECT_NEAR(sum(v.k), 1.0, 1e-9);
      for (double x : v.flat()) {
        EXPECT_GE(x, 0.0);
        EXPECT_LE(x, 1.0 + 1e-12);
      }
    }
  }
}

TEST(Telematics, EmptyContractGivesZeroVector) {
  const auto v = build_telematics_vector(std::vector<TripRecord>{});
  for (double x : v.flat()) EXPECT_EQ(x, 0.0);
  const auto f = build_handcrafted(std::vector<TripRecord>{}, contract("A", "2024-01-01", "2024-12-31"));
  EXPECT_TRUE(f.no_trips);
  for (double x : f.values) EXPECT_EQ(x, 0.0);
}

TEST(Telematics, FlatRoundTrip) {
  TelematicsVector v;
  v.h[3] = 0.25;
  v.d[6] = 0.5;
  v.k[9] = 1.0;
  const auto f = v.flat();
  const auto w = TelematicsVector::from_flat(f);
  EXPECT_EQ(w.flat(), f);
  EXPECT_THROW(TelematicsVector::from_flat(std::vector<double>(70)), ShapeError);
}

TEST(Handcrafted, NightTrip) {
  const auto f = build_handcrafted(std::vector<TripRecord>{trip("A", "2024-01-03T02:00:00", "2024-01-03T03:00:00", 40, 70)},
                                   contract("A", "2024-01-01", "2024-12-31"));
  EXPECT_EQ(f["frac_expo_night"], 1.0);
  EXPECT_EQ(f["frac_expo_evening"], 0.0);
  EXPECT_EQ(f["frac_expo_mon_to_thu"], 1.0);
  EXPECT_FALSE(f.no_trips);
}

TEST(Handcrafted, DistanceStatistics) {
  const std::vector<TripRecord> ts{trip("A", "2024-01-03T08:00:00", "2024-01-03T08:10:00", 2, 50),
                                   trip("A", "2024-01-04T08:00:00", "2024-01-04T08:10:00", 5, 60),
                                   trip("A", "2024-01-05T08:00:00", "2024-01-05T10:00:00", 150, 140)};
  ContractRecord c = contract("A", "2024-01-01", "2024-06-30");
  c.expo = 0.5;
  const auto f = build_handcrafted(ts, c);
  EXPECT_NEAR(f["prop_long_trip"], 1.0 / 3.0, 1e-15);
  EXPECT_EQ(f["med_trip_distance"], 5.0);
  EXPECT_EQ(f["med_trip_max_speed"], 60.0);
  EXPECT_EQ(f["max_trip_max_speed"], 140.0);
  EXPECT_EQ(f["med_trip_avg_speed"], 30.0);  // 12, 30, 75 km/h
  EXPECT_NEAR(f["avg_daily_nb_trips"], 3.0 / (0.5 * 365.25), 1e-15);
}

TEST(Handcrafted, WindowOverlap) {
  // Wednesday 19:30-20:30: half in the weekday evening peak, half in the evening window.
  const auto f = build_handcrafted(std::vector<TripRecord>{trip("A", "2024-01-03T19:30:00", "2024-01-03T20:30:00", 20, 60)},
                                   contract("A", "2024-01-01", "2024-12-31"));
  EXPECT_DOUBLE_EQ(f["frac_expo_peak_evening"], 0.5);
  EXPECT_DOUBLE_EQ(f["frac_expo_evening"], 0.5);
  EXPECT_EQ(f["frac_expo_peak_morning"], 0.0);
  EXPECT_EQ(f["frac_expo_noon"], 0.0);
}

TEST(Handcrafted, WeekendPeakExcluded) {
  // Saturday morning rush hour does not count as a weekday peak.
  const auto f = build_handcrafted(std::vector<TripRecord>{trip("A", "2024-01-06T07:00:00", "2024-01-06T09:00:00", 20, 60)},
                                   contract("A", "2024-01-01", "2024-12-31"));
  EXPECT_EQ(f["frac_expo_peak_morning"], 0.0);
  EXPECT_EQ(f["frac_expo_fri_sat"], 1.0);
  EXPECT_THROW(f["nonexistent"], ShapeError);
}

TEST(Link, BoundaryOutsideAndFixture) {
  const std::vector<ContractRecord> cs{contract("A", "2024-01-01", "2024-06-30"), contract("A", "2024-06-30", "2024-12-31"),
                                       contract("B", "2024-03-01", "2025-02-28")};
  const std::vector<TripRecord> ts{
      trip("A", "2024-01-01T00:10:00", "2024-01-01T00:20:00", 5, 50, 1),   // start date -> contract 0
      trip("A", "2024-03-15T12:00:00", "2024-03-15T12:20:00", 5, 50, 2),   // contract 0
      trip("A", "2024-06-30T08:00:00", "2024-06-30T08:20:00", 5, 50, 3),   // shared boundary -> later contract 1
      trip("A", "2024-12-31T23:50:00", "2025-01-01T00:10:00", 5, 50, 4),   // end date inclusive -> contract 1
      trip("A", "2025-01-01T08:00:00", "2025-01-01T08:20:00", 5, 50, 5),   // after all -> discarded
      trip("A", "2023-12-31T08:00:00", "2023-12-31T08:20:00", 5, 50, 6),   // before all -> discarded
      trip("B", "2024-03-01T08:00:00", "2024-03-01T08:20:00", 5, 50, 7),   // contract 2
      trip("B", "2025-02-28T08:00:00", "2025-02-28T08:20:00", 5, 50, 8),   // contract 2
      trip("C", "2024-05-01T08:00:00", "2024-05-01T08:20:00", 5, 50, 9),   // unknown vehicle -> discarded
      trip("B", "2024-02-29T23:59:00", "2024-03-01T00:30:00", 5, 50, 10),  // departs the day before -> discarded
  };
  const LinkResult r = link_trips(cs, ts);
  EXPECT_EQ(r.discarded, 4u);
  EXPECT_EQ(r.trips_of_contract[0], (std::vector<std::size_t>{0, 1}));
  EXPECT_EQ(r.trips_of_contract[1], (std::vector<std::size_t>{2, 3}));
  EXPECT_EQ(r.trips_of_contract[2], (std::vector<std::size_t>{6, 7}));
}

TEST(Link, OverlapIsAnError) {
  const std::vector<ContractRecord> cs{contract("A", "2024-01-01", "2024-06-30"), contract("A", "2024-06-01", "2024-12-31")};
  EXPECT_THROW(link_trips(cs, {}), DataError);
  const std::vector<ContractRecord> same{contract("A", "2024-01-01", "2024-01-01"), contract("A", "2024-01-01", "2024-12-31")};
  EXPECT_THROW(link_trips(same, {}), DataError);
}

TEST(Records, CsvRoundTrip) {
  std::vector<ContractRecord> cs{contract("A", "2024-01-01", "2024-06-30", 2), contract("B", "2024-02-01", "2025-01-31")};
  cs[1].commute_distance.reset();
  cs[1].expo = 0.75;
  std::stringstream a;
  write_contracts(a, cs);
  const auto back = read_contracts(a);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].nb_claims, 2);
  EXPECT_FALSE(back[1].commute_distance.has_value());
  EXPECT_EQ(back[1].expo, 0.75);
  EXPECT_EQ(back[1].start_date, cs[1].start_date);

  const std::vector<TripRecord> ts{trip("A", "2024-01-03T02:00:00", "2024-01-03T03:00:00", 40.25, 70, 7)};
  std::stringstream b;
  write_trips(b, ts);
  const auto tb = read_trips(b);
  EXPECT_EQ(tb[0].trip_id, 7);
  EXPECT_EQ(tb[0].departure, ts[0].departure);
  EXPECT_EQ(tb[0].distance, 40.25);
}

TEST(Records, ValidationRejectsBadRows) {
  std::stringstream s;
  s << kTripHeader << "\nA,1,2024-01-01T10:00:00,2024-01-01T09:00:00,5,50\n";
  EXPECT_THROW(read_trips(s), DataError);
  ContractRecord c = contract("A", "2024-01-01", "2023-01-01");
  EXPECT_THROW(validate(c), DataError);
  c = contract("A", "2024-01-01", "2024-12-31");
  c.nb_claims = -1;
  EXPECT_THROW(validate(c), DataError);
}

TEST(FeatureTable, BuildSortsAndIndexes) {
  const std::vector<ContractRecord> cs{contract("B", "2024-01-01", "2024-12-31"), contract("A", "2025-01-01", "2025-12-31", 1),
                                       contract("A", "2024-01-01", "2024-12-31")};
  const std::vector<TripRecord> ts{trip("A", "2025-03-03T10:00:00", "2025-03-03T11:00:00", 30, 80),
                                   trip("Z", "2025-03-03T10:00:00", "2025-03-03T11:00:00", 30, 80)};
  const FeatureTable t = build_feature_table(cs, ts);
  ASSERT_EQ(t.size(), 3u);
  EXPECT_EQ(t.contracts[0].vin, "A");
  EXPECT_EQ(t.contract_index, (std::vector<int>{1, 2, 1}));
  EXPECT_EQ(t.n_trips, (std::vector<std::int64_t>{0, 1, 0}));
  EXPECT_EQ(t.discarded_trips, 1u);
  EXPECT_TRUE(t.hand[0].no_trips);
  EXPECT_EQ(t.tele[1].h[10], 1.0);
  const Panel p = vehicle_panel(t.contracts);
  EXPECT_EQ(p.groups, (std::vector<std::vector<std::size_t>>{{0, 1}, {2}}));

  std::stringstream s;
  write_feature_table(s, t);
  const FeatureTable back = read_feature_table(io::CsvTable::read(s, "features"));
  ASSERT_EQ(back.size(), 3u);
  EXPECT_EQ(back.tele[1].flat(), t.tele[1].flat());
  EXPECT_EQ(back.hand[1].values, t.hand[1].values);
  EXPECT_EQ(back.contract_index, t.contract_index);
  const std::string header = s.str().substr(0, s.str().find('\n'));
  EXPECT_NE(header.find(",frac_expo_peak_morning,"), std::string::npos);
  EXPECT_NE(header.find(",vma_16,"), std::string::npos);
}
