#pragma once

// CSV ingestion and emission of raw traces: `vehicle_id,lat,lon,timestamp`.

#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "rsdetect/core.hpp"

namespace rsdetect {

inline constexpr std::string_view kTraceHeader = "vehicle_id,lat,lon,timestamp";

namespace detail {

inline std::vector<std::string_view> split_csv(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

inline std::string_view trim_cr(std::string_view s) {
  while (!s.empty() && (s.back() == '\r' || s.back() == ' ')) s.remove_suffix(1);
  return s;
}

template <typename T>
bool parse_number(std::string_view s, T& out) {
  if (s.empty()) return false;
  if (s.front() == '+') s.remove_prefix(1);
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

/// Shortest representation that parses back to the identical double.
inline std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

}  // namespace detail

struct TraceReadResult {
  std::vector<Trajectory> trajectories;  // ordered by vehicle_id
  std::size_t malformed_rows = 0;
  std::size_t rows = 0;
};

/// Reads a trace CSV. Rows may be unsorted; each vehicle's points are sorted
/// and duplicate timestamps collapsed. Malformed rows are counted and skipped.
inline TraceReadResult read_traces(std::istream& in) {
  TraceReadResult res;
  std::string line;
  if (!std::getline(in, line) || detail::trim_cr(line) != kTraceHeader)
    throw Error(ErrorKind::DataError, "trace file must start with header '" + std::string(kTraceHeader) + "'");

  std::map<std::string, Trajectory, std::less<>> by_id;
  while (std::getline(in, line)) {
    const auto row = detail::trim_cr(line);
    if (row.empty()) continue;
    ++res.rows;
    const auto f = detail::split_csv(row);
    TracePoint p;
    if (f.size() != 4 || f[0].empty() || !detail::parse_number(f[1], p.lat) ||
        !detail::parse_number(f[2], p.lon) || !detail::parse_number(f[3], p.time) ||
        !std::isfinite(p.lat) || !std::isfinite(p.lon) || p.lat < -90.0 || p.lat > 90.0 ||
        p.lon < -180.0 || p.lon > 180.0) {
      ++res.malformed_rows;
      continue;
    }
    auto it = by_id.find(f[0]);
    if (it == by_id.end()) {
      it = by_id.emplace(std::string(f[0]), Trajectory{std::string(f[0]), {}}).first;
    }
    it->second.points.push_back(p);
  }
  for (auto& [id, t] : by_id) {
    normalize_trajectory(t);
    res.trajectories.push_back(std::move(t));
  }
  return res;
}

inline TraceReadResult read_traces(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::DataError, "cannot open trace file " + path);
  return read_traces(in);
}

inline void write_trace_header(std::ostream& out) { out << kTraceHeader << '\n'; }

inline void write_trace_rows(std::ostream& out, const Trajectory& t) {
  for (const TracePoint& p : t.points) {
    out << t.vehicle_id << ',' << detail::format_double(p.lat) << ',' << detail::format_double(p.lon) << ','
        << p.time << '\n';
  }
}

inline void write_traces(std::ostream& out, const std::vector<Trajectory>& ts) {
  write_trace_header(out);
  for (const auto& t : ts) write_trace_rows(out, t);
}

}  // namespace rsdetect
