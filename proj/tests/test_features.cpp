#include <gtest/gtest.h>

#include <cstring>
#include <random>
#include <set>
#include <sstream>

#include "oracles.hpp"
#include "rsdetect/features.hpp"

using namespace rsdetect;

namespace {

constexpr std::int64_t kMonday = 1462147200;  // 2016-05-02 00:00 UTC

BinaryGrid single(int R, int C, int r, int c) {
  BinaryGrid g(R, C, 0);
  g(r, c) = 1;
  return g;
}

oracle::Mat to_mat(const BinaryGrid& g) {
  oracle::Mat m(g.rows, std::vector<int>(g.cols, 0));
  for (int r = 0; r < g.rows; ++r)
    for (int c = 0; c < g.cols; ++c) m[r][c] = g(r, c);
  return m;
}

BinaryGrid random_binary(std::mt19937_64& rng, int R, int C, double density) {
  std::bernoulli_distribution b(density);
  BinaryGrid g(R, C, 0);
  for (auto& v : g.data) v = b(rng) ? 1 : 0;
  return g;
}

DaySegment day_at(std::int64_t day_start, std::vector<std::pair<double, TracePoint>> pts) {
  DaySegment s;
  s.day_start = day_start;
  for (auto& [h, p] : pts) {
    p.time = day_start + static_cast<std::int64_t>(h * 3600);
    s.points.push_back(p);
  }
  return s;
}

GridSpec unit_grid() { return GridSpec{0.0, 1.0, 0.0, 1.0, 24, 24}; }

double cell_center(int i) { return (i + 0.5) / 24.0; }

}  // namespace

TEST(Coverage, CountsDistinctCellsInSlot) {
  const auto g = unit_grid();
  auto seg = day_at(kMonday, {{7.0, {cell_center(1), cell_center(1)}},
                              {8.0, {cell_center(2), cell_center(5)}},
                              {9.0, {cell_center(3), cell_center(7)}},
                              {9.5, {cell_center(3), cell_center(7)}},
                              {13.0, {cell_center(20), cell_center(20)}}});
  EXPECT_EQ(coverage_matrix(seg, g, TimeSlot::of(1)).data.sum<int>(), 3);
  EXPECT_EQ(coverage_matrix(seg, g, TimeSlot::of(2)).data.sum<int>(), 1);
  EXPECT_EQ(coverage_matrix(seg, g, TimeSlot::of(0)).data.sum<int>(), 4);
  EXPECT_EQ(coverage_matrix(seg, g, TimeSlot::of(3)).data.sum<int>(), 0);

  DaySegment empty;
  EXPECT_EQ(coverage_matrix(empty, g, TimeSlot::of(0)).data.sum<int>(), 0);
}

TEST(Coverage, BinaryNotCount) {
  const auto g = unit_grid();
  DaySegment s;
  s.day_start = kMonday;
  for (int i = 0; i < 100; ++i) s.points.push_back({0.5, 0.5, kMonday + 7 * 3600 + i});
  const auto m = coverage_matrix(s, g, TimeSlot::of(1));
  EXPECT_EQ(m.data.sum<int>(), 1);
  EXPECT_EQ(m.data(12, 12), 1);
}

TEST(Coverage, MeanAndVariance) {
  auto with = [](int n) {
    BinaryGrid g(24, 24, 0);
    for (int i = 0; i < n; ++i) g.data[static_cast<std::size_t>(i)] = 1;
    return g;
  };
  EXPECT_DOUBLE_EQ(mean_coverage({with(4), with(6)}), 5.0);
  EXPECT_DOUBLE_EQ(mean_coverage({with(3)}), 3.0);
  EXPECT_DOUBLE_EQ(mean_coverage({with(0), with(0)}), 0.0);
  EXPECT_DOUBLE_EQ(coverage_variance({with(4), with(6)}), 1.0);
  EXPECT_DOUBLE_EQ(coverage_variance({with(7)}), 0.0);
  EXPECT_DOUBLE_EQ(coverage_variance({with(0), with(0), with(0)}), 0.0);
  EXPECT_THROW(mean_coverage({}), Error);
  EXPECT_THROW(coverage_variance({}), Error);
}

TEST(Coverage, VarianceZeroIffCountsEqual) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<BinaryGrid> days;
    const int n = 1 + trial % 6;
    for (int k = 0; k < n; ++k) days.push_back(random_binary(rng, 6, 6, 0.3));
    const double v = coverage_variance(days);
    EXPECT_GE(v, 0.0);
    bool all_equal = true;
    for (const auto& d : days) all_equal = all_equal && d.sum<int>() == days[0].sum<int>();
    EXPECT_EQ(v == 0.0, all_equal);
  }
}

TEST(RobustSimilarity, NearbyBeatsFar) {
  const auto a = single(3, 3, 0, 0);
  EXPECT_DOUBLE_EQ(robust_similarity(a, single(3, 3, 0, 1)), 0.2);
  EXPECT_DOUBLE_EQ(robust_similarity(a, single(3, 3, 2, 2)), 0.0);
  EXPECT_GT(robust_similarity(a, single(3, 3, 0, 1)), robust_similarity(a, single(3, 3, 2, 2)));
}

TEST(RobustSimilarity, SelfSimilarityOfIsolatedCells) {
  BinaryGrid g(24, 24, 0);
  g(0, 0) = 1;
  g(8, 8) = 1;
  g(16, 4) = 1;
  EXPECT_DOUBLE_EQ(robust_similarity(g, g), 0.2);
  const BinaryGrid full(24, 24, 1);
  EXPECT_GT(robust_similarity(full, full), 0.2);
}

TEST(RobustSimilarity, EmptyConventionAndShapes) {
  const BinaryGrid z(24, 24, 0);
  EXPECT_DOUBLE_EQ(robust_similarity(z, z), 1.0);
  EXPECT_DOUBLE_EQ(robust_similarity(z, single(24, 24, 3, 3)), 0.0);
  EXPECT_THROW(robust_similarity(BinaryGrid(3, 3, 0), BinaryGrid(3, 4, 0)), Error);
}

TEST(RobustSimilarity, MatchesOracleAndIsBounded) {
  std::mt19937_64 rng(42);
  for (int trial = 0; trial < 300; ++trial) {
    const int R = trial % 2 ? 6 : 7, C = trial % 3 ? 6 : 5;
    const double dens = 0.05 + 0.1 * (trial % 5);
    const auto a = random_binary(rng, R, C, dens), b = random_binary(rng, R, C, dens);
    const double s = robust_similarity(a, b);
    EXPECT_EQ(s, oracle::robust_similarity(to_mat(a), to_mat(b)));
    EXPECT_GE(s, 0.0);
    EXPECT_LE(s, 1.0);
  }
}

TEST(RobustSimilarity, SelfSimilarityInvariantUnderTwoCellTranslation) {
  std::mt19937_64 rng(9);
  // keep raw and pooled patterns one cell clear of every edge so no shift drops mass
  std::uniform_int_distribution<int> pos(2, 19);
  for (int trial = 0; trial < 200; ++trial) {
    BinaryGrid a(24, 24, 0), moved(24, 24, 0);
    const int n = 1 + trial % 30;
    for (int i = 0; i < n; ++i) {
      const int r = pos(rng), c = pos(rng);
      a(r, c) = 1;
      moved(r + 2, c + 2) = 1;
    }
    EXPECT_EQ(robust_similarity(a, a), robust_similarity(moved, moved));
  }
}

TEST(RobustSimilarity, SingletonProximityOnSixBySix) {
  const auto origin = single(6, 6, 0, 0);
  for (int r = 0; r < 6; ++r) {
    for (int c = 0; c < 6; ++c) {
      const double s = robust_similarity(origin, single(6, 6, r, c));
      EXPECT_EQ(s, oracle::robust_similarity(to_mat(origin), to_mat(single(6, 6, r, c))));
      if (r > 3 || c > 3) EXPECT_EQ(s, 0.0) << r << "," << c;
      if ((r != 0 || c != 0) && r + 1 < 6) EXPECT_GE(s, robust_similarity(origin, single(6, 6, r + 1, c)));
      if ((r != 0 || c != 0) && c + 1 < 6) EXPECT_GE(s, robust_similarity(origin, single(6, 6, r, c + 1)));
    }
  }
}

TEST(DaySimilarity, IntraAndInter) {
  const auto one = single(24, 24, 5, 5);
  const double self = robust_similarity(one, one);
  DayCoverage d{one, one, one, one};
  EXPECT_DOUBLE_EQ(intraday_similarity({d, d, d}), self);
  EXPECT_DOUBLE_EQ(interday_similarity({d, d, d}, 2), self);

  const BinaryGrid z(24, 24, 0);
  DayCoverage e{z, z, z, z};
  EXPECT_DOUBLE_EQ(intraday_similarity({e, e}), 1.0);
  EXPECT_DOUBLE_EQ(interday_similarity({e, e, e}, 0), 1.0);

  std::mt19937_64 rng(2);
  DayCoverage r1, r2;
  for (int z2 = 0; z2 < 4; ++z2) {
    r1[z2] = random_binary(rng, 24, 24, 0.1);
    r2[z2] = random_binary(rng, 24, 24, 0.1);
  }
  const double expect_intra =
      (robust_similarity(r1[1], r1[2]) + robust_similarity(r1[1], r1[3]) + robust_similarity(r1[2], r1[3])) / 3.0;
  EXPECT_DOUBLE_EQ(intraday_similarity({r1}), expect_intra);
  EXPECT_DOUBLE_EQ(interday_similarity({r1, r2}, 3), robust_similarity(r1[3], r2[3]));

  EXPECT_THROW(interday_similarity({r1}, 0), Error);
  EXPECT_THROW(intraday_similarity({}), Error);
}

TEST(ExtractFeatures, StationaryCar) {
  const GridSpec g{31.0, 31.4, 121.2, 121.7, 24, 24};
  Trajectory t{"parked", {}};
  for (int day = 0; day < 3; ++day)
    for (int h = 7; h < 11; ++h) t.points.push_back({31.2, 121.45, kMonday + day * 86400 + h * 3600});
  const auto f = extract_features(t, g);
  EXPECT_EQ(f.to_array().size(), 15u);
  EXPECT_DOUBLE_EQ(f.dist_mean, 0.0);
  EXPECT_DOUBLE_EQ(f.dist_var, 0.0);
  EXPECT_DOUBLE_EQ(f.cov_mean[0], 1.0);
  EXPECT_DOUBLE_EQ(f.cov_mean[1], 1.0);
  EXPECT_DOUBLE_EQ(f.cov_mean[2], 0.0);
  EXPECT_DOUBLE_EQ(f.cov_var[1], 0.0);
  // one isolated cell against itself, and empty slots against each other
  const double self = robust_similarity(single(24, 24, 12, 12), single(24, 24, 12, 12));
  EXPECT_DOUBLE_EQ(f.interday_sim[1], self);
  EXPECT_DOUBLE_EQ(f.interday_sim[2], 1.0);
  EXPECT_DOUBLE_EQ(f.intraday_sim, (0.0 + 0.0 + 1.0) / 3.0);
  EXPECT_FALSE(f.interday_imputed);
}

TEST(ExtractFeatures, SingleDayImputesInterday) {
  const GridSpec g{31.0, 31.4, 121.2, 121.7, 24, 24};
  Trajectory t{"once", {{31.2, 121.45, kMonday + 8 * 3600}, {31.25, 121.5, kMonday + 8 * 3600 + 600}}};
  const auto f = extract_features(t, g);
  EXPECT_TRUE(f.interday_imputed);
  for (double v : f.interday_sim) EXPECT_EQ(v, 0.0);
  Trajectory night{"n", {{31.2, 121.45, kMonday + 3600}}};
  EXPECT_THROW(extract_features(night, g), Error);
}

TEST(ExtractFeatures, DeterministicAndBounded) {
  const GridSpec g{31.0, 31.4, 121.2, 121.7, 24, 24};
  std::mt19937_64 rng(77);
  std::normal_distribution<double> step(0.0, 0.004);
  Trajectory t{"rw", {}};
  double lat = 31.2, lon = 121.45;
  for (std::int64_t s = 0; s < 5 * 86400; s += 60) {
    lat = std::clamp(lat + step(rng), 31.0, 31.4);
    lon = std::clamp(lon + step(rng), 121.2, 121.7);
    t.points.push_back({lat, lon, kMonday + s});
  }
  const auto a = extract_features(t, g, {8.0, 1800});
  const auto b = extract_features(t, g, {8.0, 1800});
  const auto aa = a.to_array(), bb = b.to_array();
  EXPECT_EQ(std::memcmp(aa.data(), bb.data(), sizeof(aa)), 0);
  for (double v : aa) EXPECT_TRUE(std::isfinite(v));
  EXPECT_GE(a.intraday_sim, 0.0);
  EXPECT_LE(a.intraday_sim, 1.0);
  for (double v : a.interday_sim) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(BusTrips, KeepsOnlyRushHourTrips) {
  // A bus shuttling between two termini with 10 minute layovers, 06:00-23:00.
  Trajectory bus{"bus", {}};
  const TracePoint a{31.1, 121.3, 0}, b{31.3, 121.6, 0};
  for (int day = 0; day < 2; ++day) {
    std::int64_t now = kMonday + day * 86400 + 6 * 3600;
    bool forward_dir = true;
    while (now < kMonday + day * 86400 + 23 * 3600) {
      const auto& from = forward_dir ? a : b;
      const auto& to = forward_dir ? b : a;
      for (int i = 0; i <= 40; ++i, now += 60) {
        const double f = i / 40.0;
        bus.points.push_back({from.lat + f * (to.lat - from.lat), from.lon + f * (to.lon - from.lon), now});
      }
      for (int i = 0; i < 10; ++i, now += 60) bus.points.push_back({to.lat, to.lon, now});
      forward_dir = !forward_dir;
    }
  }
  const auto trips = bus_rush_hour_trips(bus);
  ASSERT_FALSE(trips.points.empty());
  std::set<int> hours;
  for (const auto& p : trips.points) {
    const double h = static_cast<double>(local_second_of_day(p.time, 0.0)) / 3600.0;
    EXPECT_TRUE((h >= 7 && h < 10) || (h >= 17 && h < 20)) << h;
  }
  // one trip each: roughly 40 minutes of driving per window per day
  EXPECT_LT(trips.points.size(), 2u * 2u * 60u);
  EXPECT_GT(trips.points.size(), 2u * 2u * 20u);

  Trajectory morning_only{"m", {}};
  for (const auto& p : bus.points)
    if (local_second_of_day(p.time, 0.0) < 12 * 3600) morning_only.points.push_back(p);
  const auto mo = bus_rush_hour_trips(morning_only);
  ASSERT_FALSE(mo.points.empty());
  for (const auto& p : mo.points) EXPECT_LT(local_second_of_day(p.time, 0.0), 10 * 3600);
}

TEST(FeatureFile, HeaderAndPrecision) {
  EXPECT_EQ(feature_file_header(),
            "vehicle_id,dist_mean,dist_var,cov_mean_0,cov_mean_1,cov_mean_2,cov_mean_3,cov_var_0,cov_var_1,cov_var_2,"
            "cov_var_3,intraday_sim,interday_sim_0,interday_sim_1,interday_sim_2,interday_sim_3,label");
  SharedFeatureVector v;
  v.dist_mean = 1.0 / 3.0;
  v.interday_sim[3] = 0.25;
  std::ostringstream out;
  write_features(out, {{"car7", v, VehicleLabel::Ridesourcing}});
  const std::string text = out.str();
  EXPECT_NE(text.find("car7,0.333333333,0,"), std::string::npos);
  EXPECT_NE(text.find(",0.25,ridesourcing\n"), std::string::npos);
  std::istringstream in(text);
  const auto back = read_features(in);
  ASSERT_EQ(back.size(), 1u);
  EXPECT_EQ(back[0].label, VehicleLabel::Ridesourcing);
  EXPECT_DOUBLE_EQ(back[0].features.dist_mean, 0.333333333);
}
