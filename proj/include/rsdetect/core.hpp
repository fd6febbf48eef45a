#pragma once

// Trace, grid and time-window primitives shared by every other module.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "rsdetect/error.hpp"

namespace rsdetect {

inline constexpr double kEarthRadiusKm = 6371.0;
inline constexpr double kPi = 3.14159265358979323846;
inline constexpr std::int64_t kSecondsPerDay = 86400;
inline constexpr std::int64_t kSecondsPerHour = 3600;

struct TracePoint {
  double lat = 0.0;  // degrees
  double lon = 0.0;  // degrees
  std::int64_t time = 0;  // epoch seconds

  bool operator==(const TracePoint&) const = default;
};

struct Trajectory {
  std::string vehicle_id;
  std::vector<TracePoint> points;  // nondecreasing in time, no duplicate timestamps
};

/// Sorts by time and collapses duplicate timestamps, keeping the first row seen.
inline void normalize_trajectory(Trajectory& t) {
  std::stable_sort(t.points.begin(), t.points.end(),
                   [](const TracePoint& a, const TracePoint& b) { return a.time < b.time; });
  auto last = std::unique(t.points.begin(), t.points.end(),
                          [](const TracePoint& a, const TracePoint& b) { return a.time == b.time; });
  t.points.erase(last, t.points.end());
}

/// Dense row-major matrix used for coverage, stay-time and image planes.
template <typename T>
struct Grid {
  int rows = 0;
  int cols = 0;
  std::vector<T> data;

  Grid() = default;
  Grid(int r, int c, T fill = T{}) : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, fill) {}

  T& operator()(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
  const T& operator()(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }

  bool same_shape(const Grid& o) const { return rows == o.rows && cols == o.cols; }

  template <typename U = T>
  U sum() const {
    U s{};
    for (const T& v : data) s += static_cast<U>(v);
    return s;
  }

  bool operator==(const Grid&) const = default;
};

struct GridSpec {
  double lat_min = 0.0;
  double lat_max = 1.0;
  double lon_min = 0.0;
  double lon_max = 1.0;
  int rows = 24;
  int cols = 24;

  void validate() const {
    if (!(lat_min < lat_max) || !(lon_min < lon_max))
      throw Error(ErrorKind::ConfigError, "grid bounds must satisfy min < max");
    if (rows < 1 || cols < 1) throw Error(ErrorKind::ConfigError, "grid needs at least one row and column");
  }

  bool contains(double lat, double lon) const {
    return lat >= lat_min && lat <= lat_max && lon >= lon_min && lon <= lon_max;
  }
};

struct Cell {
  int row = 0;
  int col = 0;
  bool operator==(const Cell&) const = default;
};

/// Uniform lat/lon binning. Cells are half-open except the last row/col,
/// which also take points on lat_max/lon_max. Returns nullopt out of bounds.
inline std::optional<Cell> cell_of(const TracePoint& p, const GridSpec& g) {
  if (!(p.lat >= g.lat_min && p.lat <= g.lat_max && p.lon >= g.lon_min && p.lon <= g.lon_max))
    return std::nullopt;
  const double dlat = (g.lat_max - g.lat_min) / g.rows;
  const double dlon = (g.lon_max - g.lon_min) / g.cols;
  int r = static_cast<int>(std::floor((p.lat - g.lat_min) / dlat));
  int c = static_cast<int>(std::floor((p.lon - g.lon_min) / dlon));
  r = std::clamp(r, 0, g.rows - 1);
  c = std::clamp(c, 0, g.cols - 1);
  return Cell{r, c};
}

// Time-of-day slots used by the coverage features. Slot 0 is the whole window.
struct TimeSlot {
  int index = 0;
  int start_hour = 6;
  int end_hour = 24;

  static TimeSlot of(int z) {
    switch (z) {
      case 0: return {0, 6, 24};
      case 1: return {1, 6, 12};
      case 2: return {2, 12, 18};
      case 3: return {3, 18, 24};
      default: throw Error(ErrorKind::ConfigError, "time slot index must be in 0..3");
    }
  }
};

inline constexpr int kNumSlots = 4;
inline constexpr int kWindowStartHour = 6;

inline std::int64_t floor_div(std::int64_t a, std::int64_t b) {
  std::int64_t q = a / b;
  if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
  return q;
}

/// Local calendar day number (days since epoch in local time).
inline std::int64_t local_day(std::int64_t time, double tz_offset_hours) {
  const auto off = static_cast<std::int64_t>(std::llround(tz_offset_hours * kSecondsPerHour));
  return floor_div(time + off, kSecondsPerDay);
}

/// Seconds since local midnight.
inline std::int64_t local_second_of_day(std::int64_t time, double tz_offset_hours) {
  const auto off = static_cast<std::int64_t>(std::llround(tz_offset_hours * kSecondsPerHour));
  const std::int64_t local = time + off;
  return local - floor_div(local, kSecondsPerDay) * kSecondsPerDay;
}

struct DaySegment {
  std::string vehicle_id;
  int day_index = 0;               // ordinal among this vehicle's segments
  std::int64_t calendar_day = 0;   // local day number
  std::int64_t day_start = 0;      // epoch seconds of local midnight
  std::vector<TracePoint> points;  // all within [06:00, 24:00) local

  double hour_of(const TracePoint& p) const {
    return static_cast<double>(p.time - day_start) / kSecondsPerHour;
  }

  bool in_slot(const TracePoint& p, const TimeSlot& z) const {
    const std::int64_t s = p.time - day_start;
    return s >= z.start_hour * kSecondsPerHour && s < z.end_hour * kSecondsPerHour;
  }
};

/// Splits a time-ordered trajectory into local calendar days, keeping only the
/// 06:00-24:00 window. Days without in-window points produce no segment.
inline std::vector<DaySegment> segment_days(const Trajectory& t, double tz_offset_hours) {
  std::vector<DaySegment> out;
  const auto off = static_cast<std::int64_t>(std::llround(tz_offset_hours * kSecondsPerHour));
  for (const TracePoint& p : t.points) {
    const std::int64_t sod = local_second_of_day(p.time, tz_offset_hours);
    if (sod < kWindowStartHour * kSecondsPerHour) continue;
    const std::int64_t day = local_day(p.time, tz_offset_hours);
    if (out.empty() || out.back().calendar_day != day) {
      DaySegment seg;
      seg.vehicle_id = t.vehicle_id;
      seg.day_index = static_cast<int>(out.size());
      seg.calendar_day = day;
      seg.day_start = day * kSecondsPerDay - off;
      out.push_back(std::move(seg));
    }
    out.back().points.push_back(p);
  }
  return out;
}

inline constexpr double kDefaultGapCapSeconds = 1800.0;

/// Seconds spent in each cell. Each consecutive interval, capped at gap_cap,
/// is credited to the cell of its earlier point.
inline Grid<double> stay_time_grid(const DaySegment& seg, const GridSpec& g,
                                   double gap_cap = kDefaultGapCapSeconds) {
  Grid<double> out(g.rows, g.cols, 0.0);
  for (std::size_t i = 0; i + 1 < seg.points.size(); ++i) {
    const auto cell = cell_of(seg.points[i], g);
    if (!cell) continue;
    const double dt = static_cast<double>(seg.points[i + 1].time - seg.points[i].time);
    out(cell->row, cell->col) += std::min(dt, gap_cap);
  }
  return out;
}

inline double deg2rad(double d) { return d * kPi / 180.0; }
inline double rad2deg(double r) { return r * 180.0 / kPi; }

inline double haversine_km(double lat1, double lon1, double lat2, double lon2) {
  const double p1 = deg2rad(lat1);
  const double p2 = deg2rad(lat2);
  const double dp = p2 - p1;
  const double dl = deg2rad(lon2 - lon1);
  const double a = std::sin(dp / 2) * std::sin(dp / 2) +
                   std::cos(p1) * std::cos(p2) * std::sin(dl / 2) * std::sin(dl / 2);
  return 2.0 * kEarthRadiusKm * std::asin(std::min(1.0, std::sqrt(a)));
}

inline double haversine_km(const TracePoint& a, const TracePoint& b) {
  return haversine_km(a.lat, a.lon, b.lat, b.lon);
}

/// Great-circle destination from (lat, lon) after distance_km along bearing (radians from north).
inline TracePoint destination_point(const TracePoint& from, double bearing, double distance_km) {
  const double d = distance_km / kEarthRadiusKm;
  const double p1 = deg2rad(from.lat);
  const double l1 = deg2rad(from.lon);
  const double p2 = std::asin(std::sin(p1) * std::cos(d) + std::cos(p1) * std::sin(d) * std::cos(bearing));
  const double l2 = l1 + std::atan2(std::sin(bearing) * std::sin(d) * std::cos(p1),
                                    std::cos(d) - std::sin(p1) * std::sin(p2));
  return TracePoint{rad2deg(p2), rad2deg(l2), from.time};
}

/// Driven kilometers; pairs separated by more than gap_cap are treated as
/// tracking dropouts and skipped.
inline double travel_distance(const DaySegment& seg, double gap_cap = kDefaultGapCapSeconds) {
  double km = 0.0;
  for (std::size_t i = 0; i + 1 < seg.points.size(); ++i) {
    const double dt = static_cast<double>(seg.points[i + 1].time - seg.points[i].time);
    if (dt > gap_cap) continue;
    km += haversine_km(seg.points[i], seg.points[i + 1]);
  }
  return km;
}

}  // namespace rsdetect
