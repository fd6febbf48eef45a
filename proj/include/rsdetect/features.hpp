#pragma once

// The 15 shared trajectory features: daily distance statistics, coverage
// statistics per time slot and shift/pool tolerant coverage similarities.

#include <algorithm>
#include <array>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "rsdetect/core.hpp"
#include "rsdetect/trace_io.hpp"

namespace rsdetect {

using BinaryGrid = Grid<std::uint8_t>;

struct CoverageMatrix {
  BinaryGrid data;
  int day_index = 0;
  int slot = 0;
};

/// Marks every cell visited by a point of `seg` inside slot `z`.
inline CoverageMatrix coverage_matrix(const DaySegment& seg, const GridSpec& g, const TimeSlot& z) {
  CoverageMatrix m{BinaryGrid(g.rows, g.cols, 0), seg.day_index, z.index};
  for (const TracePoint& p : seg.points) {
    if (!seg.in_slot(p, z)) continue;
    if (auto c = cell_of(p, g)) m.data(c->row, c->col) = 1;
  }
  return m;
}

inline double coverage_count(const BinaryGrid& g) { return static_cast<double>(g.sum<long>()); }

/// Daily mean number of covered cells.
inline double mean_coverage(const std::vector<BinaryGrid>& per_day) {
  if (per_day.empty()) throw Error(ErrorKind::MissingData, "mean_coverage needs at least one day");
  double total = 0.0;
  for (const auto& m : per_day) total += coverage_count(m);
  return total / static_cast<double>(per_day.size());
}

/// Population variance of the per-day covered-cell counts.
inline double coverage_variance(const std::vector<BinaryGrid>& per_day) {
  if (per_day.empty()) throw Error(ErrorKind::MissingData, "coverage_variance needs at least one day");
  const double mean = mean_coverage(per_day);
  double acc = 0.0;
  for (const auto& m : per_day) {
    const double d = coverage_count(m) - mean;
    acc += d * d;
  }
  return acc / static_cast<double>(per_day.size());
}

/// 2x2 max pooling, stride 2; odd trailing rows/cols pool over what exists.
inline BinaryGrid max_pool2(const BinaryGrid& m) {
  BinaryGrid out((m.rows + 1) / 2, (m.cols + 1) / 2, 0);
  for (int r = 0; r < m.rows; ++r)
    for (int c = 0; c < m.cols; ++c)
      if (m(r, c)) out(r / 2, c / 2) = 1;
  return out;
}

namespace detail {

// Jaccard between `a` translated by (dr, dc) with zero fill and `b`,
// computed without materialising the shifted matrix.
inline double shifted_jaccard(const BinaryGrid& a, int dr, int dc, const BinaryGrid& b) {
  long inter = 0;
  long a_kept = 0;
  long b_count = 0;
  for (int r = 0; r < b.rows; ++r) {
    for (int c = 0; c < b.cols; ++c) {
      const bool bv = b(r, c) != 0;
      b_count += bv;
      const int sr = r - dr;
      const int sc = c - dc;
      if (sr < 0 || sr >= a.rows || sc < 0 || sc >= a.cols) continue;
      const bool av = a(sr, sc) != 0;
      a_kept += av;
      inter += av && bv;
    }
  }
  const long uni = a_kept + b_count - inter;
  if (uni == 0) return 1.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

// Mean Jaccard over {identity, left, right, up, down} shifts of `a`.
inline double shift_tolerant_jaccard(const BinaryGrid& a, const BinaryGrid& b) {
  const double j0 = shifted_jaccard(a, 0, 0, b);
  const double jl = shifted_jaccard(a, 0, -1, b);
  const double jr = shifted_jaccard(a, 0, 1, b);
  const double ju = shifted_jaccard(a, -1, 0, b);
  const double jd = shifted_jaccard(a, 1, 0, b);
  return (j0 + jl + jr + ju + jd) / 5.0;
}

}  // namespace detail

/// Robust coverage similarity. Shifts apply to the first argument only, so
/// the measure is not symmetric. Jaccard of two empty matrices is 1.
inline double robust_similarity(const BinaryGrid& c1, const BinaryGrid& c2) {
  if (!c1.same_shape(c2)) throw Error(ErrorKind::ShapeError, "robust_similarity: matrix shapes differ");
  const double raw = detail::shift_tolerant_jaccard(c1, c2);
  const double pooled = detail::shift_tolerant_jaccard(max_pool2(c1), max_pool2(c2));
  return (raw + pooled) / 2.0;
}

/// `slots[k][z]` is the coverage of day k in slot z (z = 0..3).
using DayCoverage = std::array<BinaryGrid, kNumSlots>;

inline double intraday_similarity(const std::vector<DayCoverage>& days) {
  if (days.empty()) throw Error(ErrorKind::MissingData, "intraday_similarity needs at least one day");
  double acc = 0.0;
  for (const auto& d : days) {
    acc += (robust_similarity(d[1], d[2]) + robust_similarity(d[1], d[3]) + robust_similarity(d[2], d[3])) / 3.0;
  }
  return acc / static_cast<double>(days.size());
}

/// Mean pairwise similarity between days for slot z; the earlier day is the
/// shifted argument. Throws MissingData with fewer than two days.
inline double interday_similarity(const std::vector<DayCoverage>& days, int z) {
  const std::size_t n = days.size();
  if (n < 2) throw Error(ErrorKind::MissingData, "interday_similarity needs at least two days");
  double acc = 0.0;
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = a + 1; b < n; ++b) acc += robust_similarity(days[a][z], days[b][z]);
  return 2.0 * acc / (static_cast<double>(n) * static_cast<double>(n - 1));
}

inline constexpr std::size_t kNumSharedFeatures = 15;

inline const std::array<std::string_view, kNumSharedFeatures>& shared_feature_names() {
  static const std::array<std::string_view, kNumSharedFeatures> names = {
      "dist_mean",   "dist_var",    "cov_mean_0",   "cov_mean_1",     "cov_mean_2",
      "cov_mean_3",  "cov_var_0",   "cov_var_1",    "cov_var_2",      "cov_var_3",
      "intraday_sim", "interday_sim_0", "interday_sim_1", "interday_sim_2", "interday_sim_3"};
  return names;
}

struct SharedFeatureVector {
  double dist_mean = 0.0;
  double dist_var = 0.0;
  std::array<double, kNumSlots> cov_mean{};
  std::array<double, kNumSlots> cov_var{};
  double intraday_sim = 0.0;
  std::array<double, kNumSlots> interday_sim{};
  // Set when fewer than two days were available and inter-day similarity was imputed as 0.
  bool interday_imputed = false;

  std::array<double, kNumSharedFeatures> to_array() const {
    return {dist_mean,  dist_var,   cov_mean[0], cov_mean[1], cov_mean[2],
            cov_mean[3], cov_var[0], cov_var[1], cov_var[2],  cov_var[3],
            intraday_sim, interday_sim[0], interday_sim[1], interday_sim[2], interday_sim[3]};
  }

  static SharedFeatureVector from_array(const std::array<double, kNumSharedFeatures>& a) {
    SharedFeatureVector v;
    v.dist_mean = a[0];
    v.dist_var = a[1];
    for (int z = 0; z < kNumSlots; ++z) {
      v.cov_mean[z] = a[2 + z];
      v.cov_var[z] = a[6 + z];
      v.interday_sim[z] = a[11 + z];
    }
    v.intraday_sim = a[10];
    return v;
  }

  std::vector<double> to_vector() const {
    const auto a = to_array();
    return {a.begin(), a.end()};
  }

  static SharedFeatureVector from_vector(const std::vector<double>& v) {
    if (v.size() != kNumSharedFeatures) throw Error(ErrorKind::ShapeError, "feature vector must have 15 entries");
    std::array<double, kNumSharedFeatures> a{};
    std::copy(v.begin(), v.end(), a.begin());
    return from_array(a);
  }
};

struct FeatureConfig {
  double tz_offset_hours = 0.0;
  double gap_cap = kDefaultGapCapSeconds;
};

inline std::vector<DayCoverage> day_coverages(const std::vector<DaySegment>& segs, const GridSpec& g) {
  std::vector<DayCoverage> out;
  out.reserve(segs.size());
  for (const auto& s : segs) {
    DayCoverage d;
    for (int z = 0; z < kNumSlots; ++z) d[z] = coverage_matrix(s, g, TimeSlot::of(z)).data;
    out.push_back(std::move(d));
  }
  return out;
}

inline SharedFeatureVector extract_features(const Trajectory& t, const GridSpec& g, const FeatureConfig& cfg = {}) {
  const auto segs = segment_days(t, cfg.tz_offset_hours);
  if (segs.empty()) throw Error(ErrorKind::MissingData, "vehicle " + t.vehicle_id + " has no in-window days");

  SharedFeatureVector v;
  const double n = static_cast<double>(segs.size());
  std::vector<double> dist;
  dist.reserve(segs.size());
  for (const auto& s : segs) dist.push_back(travel_distance(s, cfg.gap_cap));
  for (double d : dist) v.dist_mean += d;
  v.dist_mean /= n;
  for (double d : dist) v.dist_var += (d - v.dist_mean) * (d - v.dist_mean);
  v.dist_var /= n;

  const auto cov = day_coverages(segs, g);
  for (int z = 0; z < kNumSlots; ++z) {
    std::vector<BinaryGrid> per_day;
    per_day.reserve(cov.size());
    for (const auto& d : cov) per_day.push_back(d[z]);
    v.cov_mean[z] = mean_coverage(per_day);
    v.cov_var[z] = coverage_variance(per_day);
  }
  v.intraday_sim = intraday_similarity(cov);
  if (cov.size() >= 2) {
    for (int z = 0; z < kNumSlots; ++z) v.interday_sim[z] = interday_similarity(cov, z);
  } else {
    v.interday_imputed = true;
  }
  return v;
}

struct RushHourConfig {
  double tz_offset_hours = 0.0;
  double morning_start = 7.0;
  double morning_end = 10.0;
  double evening_start = 17.0;
  double evening_end = 20.0;
  double gap_cap = kDefaultGapCapSeconds;
  // A stop of at least this long within this radius ends a trip (terminus layover).
  double layover_seconds = 300.0;
  double layover_radius_m = 50.0;
};

namespace detail {

// First trip within [from_h, to_h) of one day segment, as a range of point indices.
inline std::vector<TracePoint> first_trip_in_window(const DaySegment& seg, double from_h, double to_h,
                                                    const RushHourConfig& cfg) {
  const auto& pts = seg.points;
  auto in_window = [&](const TracePoint& p) {
    const double h = seg.hour_of(p);
    return h >= from_h && h < to_h;
  };
  std::size_t a = 0;
  while (a < pts.size() && !in_window(pts[a])) ++a;
  if (a == pts.size()) return {};
  std::size_t b = a + 1;
  while (b < pts.size() && in_window(pts[b]) &&
         static_cast<double>(pts[b].time - pts[b - 1].time) <= cfg.gap_cap)
    ++b;

  const double radius_km = cfg.layover_radius_m / 1000.0;
  std::size_t s = a;
  while (s + 1 < b && haversine_km(pts[s], pts[s + 1]) < radius_km) ++s;
  std::size_t anchor = s;
  std::size_t end = b - 1;
  for (std::size_t j = s + 1; j < b; ++j) {
    if (haversine_km(pts[j], pts[anchor]) <= radius_km) {
      if (static_cast<double>(pts[j].time - pts[anchor].time) >= cfg.layover_seconds) {
        end = anchor;
        break;
      }
    } else {
      anchor = j;
    }
  }
  return {pts.begin() + static_cast<std::ptrdiff_t>(s), pts.begin() + static_cast<std::ptrdiff_t>(end) + 1};
}

}  // namespace detail

/// Keeps one morning and one evening rush-hour trip per day, mimicking a
/// commuter's two daily trips.
inline Trajectory bus_rush_hour_trips(const Trajectory& t, const RushHourConfig& cfg = {}) {
  Trajectory out{t.vehicle_id, {}};
  for (const auto& seg : segment_days(t, cfg.tz_offset_hours)) {
    for (const auto& p : detail::first_trip_in_window(seg, cfg.morning_start, cfg.morning_end, cfg))
      out.points.push_back(p);
    for (const auto& p : detail::first_trip_in_window(seg, cfg.evening_start, cfg.evening_end, cfg))
      out.points.push_back(p);
  }
  return out;
}

enum class VehicleLabel { Taxi, Bus, Ridesourcing, Other, Unknown };

inline std::string_view to_string(VehicleLabel l) {
  switch (l) {
    case VehicleLabel::Taxi: return "taxi";
    case VehicleLabel::Bus: return "bus";
    case VehicleLabel::Ridesourcing: return "ridesourcing";
    case VehicleLabel::Other: return "other";
    case VehicleLabel::Unknown: return "unknown";
  }
  return "unknown";
}

inline std::optional<VehicleLabel> parse_label(std::string_view s) {
  if (s == "taxi") return VehicleLabel::Taxi;
  if (s == "bus") return VehicleLabel::Bus;
  if (s == "ridesourcing") return VehicleLabel::Ridesourcing;
  if (s == "other") return VehicleLabel::Other;
  if (s == "unknown") return VehicleLabel::Unknown;
  return std::nullopt;
}

/// Taxi and ridesourcing are the positive class.
inline std::optional<int> binary_label(VehicleLabel l) {
  switch (l) {
    case VehicleLabel::Taxi:
    case VehicleLabel::Ridesourcing: return 1;
    case VehicleLabel::Bus:
    case VehicleLabel::Other: return 0;
    case VehicleLabel::Unknown: return std::nullopt;
  }
  return std::nullopt;
}

struct FeatureRecord {
  std::string vehicle_id;
  SharedFeatureVector features;
  VehicleLabel label = VehicleLabel::Unknown;
};

inline std::string feature_file_header() {
  std::string h = "vehicle_id";
  for (auto n : shared_feature_names()) {
    h += ',';
    h += n;
  }
  h += ",label";
  return h;
}

inline std::string format_sig9(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

inline void write_features(std::ostream& out, const std::vector<FeatureRecord>& recs) {
  out << feature_file_header() << '\n';
  for (const auto& r : recs) {
    out << r.vehicle_id;
    for (double v : r.features.to_array()) out << ',' << format_sig9(v);
    out << ',' << to_string(r.label) << '\n';
  }
}

inline std::vector<FeatureRecord> read_features(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || detail::trim_cr(line) != feature_file_header())
    throw Error(ErrorKind::DataError, "feature file header mismatch");
  std::vector<FeatureRecord> out;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    const auto row = detail::trim_cr(line);
    if (row.empty()) continue;
    const auto f = detail::split_csv(row);
    if (f.size() != kNumSharedFeatures + 2)
      throw Error(ErrorKind::DataError, "feature file line " + std::to_string(lineno) + ": wrong field count");
    FeatureRecord r;
    r.vehicle_id = std::string(f[0]);
    std::array<double, kNumSharedFeatures> a{};
    for (std::size_t i = 0; i < kNumSharedFeatures; ++i) {
      if (!detail::parse_number(f[i + 1], a[i]))
        throw Error(ErrorKind::DataError, "feature file line " + std::to_string(lineno) + ": bad number");
    }
    r.features = SharedFeatureVector::from_array(a);
    const auto lab = parse_label(f.back());
    if (!lab) throw Error(ErrorKind::DataError, "feature file line " + std::to_string(lineno) + ": bad label");
    r.label = *lab;
    out.push_back(std::move(r));
  }
  return out;
}

inline std::vector<FeatureRecord> read_features(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::DataError, "cannot open feature file " + path);
  return read_features(in);
}

}  // namespace rsdetect
