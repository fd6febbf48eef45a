#pragma once

// Synthetic fleet generator: five vehicle archetypes driving straight-line
// trips over a city with weighted hotspots.
//
// Behavioural contrasts encoded here:
//   taxi          round-the-clock hotspot trips with short waits
//   ridesourcing  the same kind of work but only in a daytime shift
//                 (part-time to full-time), parked at home overnight
//   bus           fixed polyline route shuttled on a timetable
//   commuter      home -> work -> home along a fixed route, occasional errands
//   occasional    zero to two short trips a day
// Private cars (ridesourcing, commuter, occasional) report only while the
// engine is on; taxis and buses report throughout service.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "rsdetect/core.hpp"
#include "rsdetect/forest.hpp"

namespace rsdetect {

enum class Archetype { Taxi, Bus, Ridesourcing, Commuter, Occasional };

inline const char* to_string(Archetype a) {
  switch (a) {
    case Archetype::Taxi: return "taxi";
    case Archetype::Bus: return "bus";
    case Archetype::Ridesourcing: return "ridesourcing";
    case Archetype::Commuter: return "commuter";
    case Archetype::Occasional: return "occasional";
  }
  return "unknown";
}

inline std::optional<Archetype> parse_archetype(std::string_view s) {
  if (s == "taxi") return Archetype::Taxi;
  if (s == "bus") return Archetype::Bus;
  if (s == "ridesourcing") return Archetype::Ridesourcing;
  if (s == "commuter") return Archetype::Commuter;
  if (s == "occasional") return Archetype::Occasional;
  return std::nullopt;
}

struct Hotspot {
  double lat = 0.0;
  double lon = 0.0;
  double weight = 1.0;

  bool operator==(const Hotspot&) const = default;
};

struct CityModel {
  GridSpec bounds{31.0, 31.4, 121.2, 121.7, 24, 24};
  std::vector<Hotspot> hotspots;  // weights sum to 1
  double road_noise_m = 10.0;
  double hotspot_spread_km = 1.0;
  std::uint64_t seed = 0;

  void validate() const {
    bounds.validate();
    if (hotspots.size() < 2) throw Error(ErrorKind::ConfigError, "city needs at least two hotspots");
    for (const auto& h : hotspots)
      if (!(h.weight > 0.0)) throw Error(ErrorKind::ConfigError, "hotspot weights must be positive");
  }
};

namespace detail {

inline constexpr double kKmPerDegLat = kEarthRadiusKm * kPi / 180.0;

inline double uniform(std::mt19937_64& rng, double a, double b) {
  return std::uniform_real_distribution<double>(a, b)(rng);
}

inline void normalize_weights(std::vector<Hotspot>& hs) {
  double s = 0.0;
  for (const auto& h : hs) s += h.weight;
  for (auto& h : hs) h.weight /= s;
}

inline TracePoint random_location(const GridSpec& b, std::mt19937_64& rng, double margin = 0.05) {
  const double dl = (b.lat_max - b.lat_min) * margin, dn = (b.lon_max - b.lon_min) * margin;
  return {uniform(rng, b.lat_min + dl, b.lat_max - dl), uniform(rng, b.lon_min + dn, b.lon_max - dn), 0};
}

inline TracePoint offset_km(const TracePoint& p, double north_km, double east_km) {
  return {p.lat + north_km / kKmPerDegLat, p.lon + east_km / (kKmPerDegLat * std::cos(deg2rad(p.lat))), p.time};
}

inline TracePoint clamp_to(const GridSpec& b, TracePoint p) {
  p.lat = std::clamp(p.lat, b.lat_min, b.lat_max);
  p.lon = std::clamp(p.lon, b.lon_min, b.lon_max);
  return p;
}

}  // namespace detail

inline CityModel default_city(std::uint64_t seed, int n_hotspots = 12) {
  CityModel c;
  c.seed = seed;
  std::mt19937_64 rng(mix_seed(seed, 0xC17));
  std::exponential_distribution<double> w(1.0);
  for (int i = 0; i < n_hotspots; ++i) {
    const auto p = detail::random_location(c.bounds, rng, 0.15);
    c.hotspots.push_back({p.lat, p.lon, 0.2 + w(rng)});
  }
  detail::normalize_weights(c.hotspots);
  return c;
}

/// Re-draws hotspot weights and relocates round(strength * H) hotspots.
/// Strength 0 returns the city unchanged; strength 1 relocates every hotspot.
inline CityModel domain_shift(const CityModel& city, double strength, std::uint64_t seed) {
  if (!(strength >= 0.0 && strength <= 1.0)) throw Error(ErrorKind::ConfigError, "shift strength must be in [0, 1]");
  if (strength == 0.0) return city;
  CityModel out = city;
  std::mt19937_64 rng(mix_seed(seed, 0x5817));
  std::exponential_distribution<double> w(1.0);
  for (auto& h : out.hotspots) h.weight = (1.0 - strength) * h.weight + strength * (0.2 + w(rng)) / out.hotspots.size();
  std::vector<std::size_t> idx(out.hotspots.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::shuffle(idx.begin(), idx.end(), rng);
  const auto n_move = static_cast<std::size_t>(std::llround(strength * static_cast<double>(idx.size())));
  for (std::size_t k = 0; k < n_move; ++k) {
    auto& h = out.hotspots[idx[k]];
    TracePoint p;
    // a relocated hotspot must actually move
    do {
      p = detail::random_location(out.bounds, rng, 0.15);
    } while (haversine_km(p.lat, p.lon, h.lat, h.lon) < 3.0);
    h.lat = p.lat;
    h.lon = p.lon;
  }
  detail::normalize_weights(out.hotspots);
  return out;
}

/// Tunable behaviour per archetype. Hours are local time.
struct ArchetypeParams {
  // taxi / ridesourcing
  double trip_speed_kmh_min = 18.0;
  double trip_speed_kmh_max = 30.0;
  double hotspot_destination_prob = 0.7;
  double taxi_wait_min_day = 2.0, taxi_wait_max_day = 12.0;      // minutes
  double taxi_wait_min_night = 15.0, taxi_wait_max_night = 45.0;  // minutes
  double ride_wait_min = 5.0, ride_wait_max = 25.0;               // minutes
  double ride_shift_hours_min = 4.0, ride_shift_hours_max = 13.0;  // per driver
  double ride_work_prob_min = 0.7, ride_work_prob_max = 1.0;        // routine drivers
  double ride_shift_start_min = 6.5, ride_shift_start_max = 11.0;
  double ride_last_hour = 23.5;
  // bus
  double bus_speed_kmh = 16.0;
  double bus_layover_min = 10.0;
  double bus_service_start = 6.0, bus_service_end = 22.0;
  int bus_route_legs = 6;
  // commuter
  double commute_km_min = 3.0, commute_km_max = 30.0;
  double commute_depart_min = 7.0, commute_depart_max = 9.0;
  double commute_return_min = 17.0, commute_return_max = 19.5;
  double commute_speed_min = 25.0, commute_speed_max = 40.0;
  double commute_errand_prob_max = 0.4;
  double commute_lunch_prob = 0.2;
  double commute_circuit_fraction = 0.2;   // fixed multi-stop daily rounds
  double commute_business_fraction = 0.35; // daytime trips to varying client sites
  int business_trips_min = 3, business_trips_max = 6;
  double business_km_min = 3.0, business_km_max = 25.0;
  int business_clients_min = 4, business_clients_max = 10;  // regular client sites per driver
  int circuit_stops_min = 4, circuit_stops_max = 7;
  double circuit_radius_km = 10.0;
  // occasional
  double occasional_trip_km_min = 2.0, occasional_trip_km_max = 8.0;
  double occasional_excursion_prob = 0.1;
  double excursion_km_min = 15.0, excursion_km_max = 35.0;
};

struct FleetSpec {
  int taxi = 0;
  int bus = 0;
  int ridesourcing = 0;
  int commuter = 0;
  int occasional = 0;
  int days = 7;
  std::int64_t sampling_period = 60;       // seconds
  std::int64_t first_day = 16923;          // local day number (2016-05-02)
  double tz_offset_hours = 8.0;
  std::string id_prefix = "car";           // ids of mixed fleets; pure archetype fleets use the archetype name
  bool shuffle_ids = true;                 // mixed fleets: ids do not reveal the archetype

  int count(Archetype a) const {
    switch (a) {
      case Archetype::Taxi: return taxi;
      case Archetype::Bus: return bus;
      case Archetype::Ridesourcing: return ridesourcing;
      case Archetype::Commuter: return commuter;
      case Archetype::Occasional: return occasional;
    }
    return 0;
  }
};

struct SimVehicle {
  Trajectory trajectory;
  Archetype archetype = Archetype::Taxi;
  std::string variant;  // behaviour within the archetype, for diagnostics
};

namespace detail {

// Moves a vehicle through time, emitting a noisy fix at every multiple of
// the sampling period while the engine is on.
class Timeline {
 public:
  Timeline(const CityModel& city, std::mt19937_64& rng, std::int64_t period, Trajectory& out)
      : city_(city), rng_(rng), period_(period), out_(out) {}

  void place(const TracePoint& p, double t) {
    pos_ = p;
    now_ = t;
  }
  double now() const { return now_; }
  const TracePoint& pos() const { return pos_; }

  // Engine off: the clock advances silently.
  void idle_until(double t) { now_ = std::max(now_, t); }

  void wait(double seconds, double limit) {
    const double end = std::min(now_ + seconds, limit);
    emit_range(now_, end, pos_, pos_);
    now_ = std::max(now_, end);
  }

  // Straight-line drive; truncated at `limit`.
  void drive_to(const TracePoint& dest, double speed_kmh, double limit) {
    const double km = haversine_km(pos_, dest);
    const double dur = km / speed_kmh * 3600.0;
    if (dur <= 0.0) return;
    const double end = now_ + dur;
    const double stop = std::min(end, limit);
    emit_range(now_, stop, pos_, dest, now_, end);
    if (stop < end) {
      const double f = (stop - now_) / dur;
      pos_ = {pos_.lat + f * (dest.lat - pos_.lat), pos_.lon + f * (dest.lon - pos_.lon), 0};
    } else {
      pos_ = dest;
    }
    now_ = stop;
  }

  void drive_via(const std::vector<TracePoint>& path, double speed_kmh, double limit) {
    for (const auto& p : path) {
      if (now_ >= limit) break;
      drive_to(p, speed_kmh, limit);
    }
  }

 private:
  void emit_range(double from, double to, const TracePoint& a, const TracePoint& b) { emit_range(from, to, a, b, from, to); }

  // Emits fixes at multiples of the period in [from, to), interpolating a->b over [t0, t1].
  void emit_range(double from, double to, const TracePoint& a, const TracePoint& b, double t0, double t1) {
    auto k = static_cast<std::int64_t>(std::ceil(from / static_cast<double>(period_)));
    std::normal_distribution<double> noise(0.0, city_.road_noise_m / 1000.0);
    for (;; ++k) {
      const std::int64_t ts = k * period_;
      if (static_cast<double>(ts) >= to) break;
      if (!out_.points.empty() && ts <= out_.points.back().time) continue;
      const double f = t1 > t0 ? (static_cast<double>(ts) - t0) / (t1 - t0) : 0.0;
      TracePoint p{a.lat + f * (b.lat - a.lat), a.lon + f * (b.lon - a.lon), ts};
      p = offset_km(p, noise(rng_), noise(rng_));
      p = clamp_to(city_.bounds, p);
      p.time = ts;
      out_.points.push_back(p);
    }
  }

  const CityModel& city_;
  std::mt19937_64& rng_;
  std::int64_t period_;
  Trajectory& out_;
  TracePoint pos_{};
  double now_ = 0.0;
};

class VehicleSim {
 public:
  VehicleSim(const CityModel& city, const ArchetypeParams& p, const FleetSpec& fleet, std::uint64_t seed,
             Trajectory& out)
      : city_(city), p_(p), fleet_(fleet), rng_(seed), tl_(city, rng_, fleet.sampling_period, out) {}

  std::string variant = "default";

  // UTC epoch seconds of local hour h on simulated day d.
  double at(int d, double h) const {
    const double off = fleet_.tz_offset_hours * 3600.0;
    return static_cast<double>((fleet_.first_day + d) * kSecondsPerDay) - off + h * 3600.0;
  }

  TracePoint hotspot_location() {
    std::vector<double> w;
    for (const auto& h : city_.hotspots) w.push_back(h.weight);
    std::discrete_distribution<std::size_t> pick(w.begin(), w.end());
    const auto& h = city_.hotspots[pick(rng_)];
    std::normal_distribution<double> spread(0.0, city_.hotspot_spread_km);
    return clamp_to(city_.bounds, offset_km({h.lat, h.lon, 0}, spread(rng_), spread(rng_)));
  }

  TracePoint near(const TracePoint& p, double min_km, double max_km) {
    const double r = uniform(rng_, min_km, max_km);
    const double theta = uniform(rng_, 0.0, 2.0 * kPi);
    auto q = clamp_to(city_.bounds, offset_km(p, r * std::cos(theta), r * std::sin(theta)));
    return q;
  }

  TracePoint destination(double hotspot_prob) {
    return std::bernoulli_distribution(hotspot_prob)(rng_) ? hotspot_location()
                                                            : random_location(city_.bounds, rng_);
  }

  void taxi() {
    tl_.place(hotspot_location(), at(0, 0.0));
    const double end = at(fleet_.days, 0.0);
    const double speed_scale = uniform(rng_, 0.9, 1.1);
    while (tl_.now() < end) {
      const double h = std::fmod((tl_.now() - at(0, 0.0)) / 3600.0, 24.0);
      const bool night = h < 6.0;
      const double wait = night ? uniform(rng_, p_.taxi_wait_min_night, p_.taxi_wait_max_night)
                                : uniform(rng_, p_.taxi_wait_min_day, p_.taxi_wait_max_day);
      tl_.wait(wait * 60.0, end);
      const double v = uniform(rng_, p_.trip_speed_kmh_min, p_.trip_speed_kmh_max) * speed_scale * (night ? 1.3 : 1.0);
      tl_.drive_to(near(tl_.pos(), 0.3, 1.5), v, end);  // cruise to pickup
      tl_.drive_to(destination(p_.hotspot_destination_prob), v, end);
    }
  }

  void ridesourcing() {
    const TracePoint home = random_location(city_.bounds, rng_);
    const double work_prob = uniform(rng_, p_.ride_work_prob_min, p_.ride_work_prob_max);
    const double start_mean = uniform(rng_, p_.ride_shift_start_min, p_.ride_shift_start_max);
    const double shift_hours = uniform(rng_, p_.ride_shift_hours_min, p_.ride_shift_hours_max);
    variant = shift_hours < 8.0 ? "part-time" : "full-time";
    std::normal_distribution<double> jitter(0.0, 0.4);
    tl_.place(home, at(0, 0.0));
    for (int d = 0; d < fleet_.days; ++d) {
      if (!std::bernoulli_distribution(work_prob)(rng_)) {
        private_errands(d, home, std::bernoulli_distribution(0.5)(rng_) ? 1 : 0);
        continue;
      }
      const double start = std::max(6.0, start_mean + jitter(rng_));
      const double stop = std::min(p_.ride_last_hour, start + shift_hours + jitter(rng_));
      tl_.idle_until(at(d, start));
      const double limit = at(d, stop);
      const bool lunch = shift_hours > 8.0;
      bool had_lunch = false;
      while (tl_.now() < limit) {
        const double v = uniform(rng_, p_.trip_speed_kmh_min, p_.trip_speed_kmh_max);
        tl_.drive_to(hotspot_location(), v, limit);  // reposition / pickup
        tl_.wait(uniform(rng_, p_.ride_wait_min, p_.ride_wait_max) * 60.0, limit);
        tl_.drive_to(destination(p_.hotspot_destination_prob + 0.1), v, limit);
        if (lunch && !had_lunch && tl_.now() >= at(d, 12.0)) {
          tl_.wait(uniform(rng_, 20.0, 40.0) * 60.0, limit);
          had_lunch = true;
        }
      }
      tl_.drive_to(home, 30.0, at(d, 23.99));
    }
  }

  void bus() {
    std::vector<TracePoint> route;
    TracePoint cur = random_location(city_.bounds, rng_, 0.15);
    route.push_back(cur);
    double heading = uniform(rng_, 0.0, 2.0 * kPi);
    for (int i = 0; i < p_.bus_route_legs; ++i) {
      heading += uniform(rng_, -0.7, 0.7);
      const double len = uniform(rng_, 2.0, 4.0);
      TracePoint next = offset_km(cur, len * std::cos(heading), len * std::sin(heading));
      if (!city_.bounds.contains(next.lat, next.lon)) {
        heading += kPi;
        next = clamp_to(city_.bounds, offset_km(cur, len * std::cos(heading), len * std::sin(heading)));
      }
      route.push_back(next);
      cur = next;
    }
    std::vector<TracePoint> back(route.rbegin(), route.rend());
    const double offset = uniform(rng_, 0.0, 0.5);
    std::normal_distribution<double> delay(0.0, 2.0);
    for (int d = 0; d < fleet_.days; ++d) {
      tl_.place(route.front(), at(d, p_.bus_service_start + offset));
      const double limit = at(d, p_.bus_service_end);
      bool outbound = true;
      while (tl_.now() < limit) {
        const auto& path = outbound ? route : back;
        tl_.drive_via(std::vector<TracePoint>(path.begin() + 1, path.end()), p_.bus_speed_kmh, limit);
        tl_.wait(std::max(3.0, p_.bus_layover_min + delay(rng_)) * 60.0, limit);
        outbound = !outbound;
      }
    }
  }

  // Same ordered stops every working day, engine off at each stop.
  void circuit() {
    variant = "circuit";
    const TracePoint base = random_location(city_.bounds, rng_, 0.15);
    const int n_stops = std::uniform_int_distribution<int>(p_.circuit_stops_min, p_.circuit_stops_max)(rng_);
    std::vector<TracePoint> stops;
    for (int i = 0; i < n_stops; ++i) stops.push_back(near(base, 2.0, p_.circuit_radius_km));
    stops.push_back(base);
    std::vector<double> dwell_min;
    for (int i = 0; i <= n_stops; ++i) dwell_min.push_back(uniform(rng_, 10.0, 40.0));
    const double depart = uniform(rng_, 7.5, 9.0);
    const double speed = uniform(rng_, p_.commute_speed_min, p_.commute_speed_max) * 0.8;
    const int rounds = std::uniform_int_distribution<int>(1, 3)(rng_);
    std::normal_distribution<double> jitter(0.0, 0.15);
    tl_.place(base, at(0, 0.0));
    for (int d = 0; d < fleet_.days; ++d) {
      tl_.idle_until(at(d, depart + jitter(rng_)));
      const double limit = at(d, 20.0);
      for (int r = 0; r < rounds && tl_.now() < limit; ++r) {
        for (std::size_t i = 0; i < stops.size() && tl_.now() < limit; ++i) {
          tl_.drive_to(stops[i], speed * uniform(rng_, 0.9, 1.1), limit);
          tl_.idle_until(tl_.now() + dwell_min[i] * 60.0 * uniform(rng_, 0.8, 1.2));
        }
      }
    }
  }

  void commuter() {
    const double kind = uniform(rng_, 0.0, 1.0);
    if (kind < p_.commute_circuit_fraction) {
      circuit();
      return;
    }
    const bool business = kind < p_.commute_circuit_fraction + p_.commute_business_fraction;
    variant = business ? "business" : "regular";
    const TracePoint home = random_location(city_.bounds, rng_);
    TracePoint work;
    for (int tries = 0; tries < 100; ++tries) {
      work = std::bernoulli_distribution(0.6)(rng_) ? hotspot_location() : random_location(city_.bounds, rng_);
      const double km = haversine_km(home, work);
      if (km >= p_.commute_km_min && km <= p_.commute_km_max) break;
    }
    // fixed via-point: the same route every day
    const double bend = uniform(rng_, -0.2, 0.2);
    const TracePoint mid{(home.lat + work.lat) / 2 + bend * (work.lon - home.lon),
                         (home.lon + work.lon) / 2 - bend * (work.lat - home.lat), 0};
    const TracePoint via = clamp_to(city_.bounds, mid);
    const double depart = uniform(rng_, p_.commute_depart_min, p_.commute_depart_max);
    const double ret = uniform(rng_, p_.commute_return_min, p_.commute_return_max);
    const double speed = uniform(rng_, p_.commute_speed_min, p_.commute_speed_max);
    const double errand_prob = uniform(rng_, 0.0, p_.commute_errand_prob_max);
    const TracePoint lunch = near(work, 1.0, 3.0);
    const std::array<TracePoint, 2> shops{near(home, 1.0, 5.0), near(home, 1.0, 5.0)};
    std::vector<TracePoint> clients;
    if (business) {
      const int n = std::uniform_int_distribution<int>(p_.business_clients_min, p_.business_clients_max)(rng_);
      for (int i = 0; i < n; ++i) clients.push_back(near(work, p_.business_km_min, p_.business_km_max));
    }
    std::normal_distribution<double> jitter(0.0, 0.15);
    tl_.place(home, at(0, 0.0));
    for (int d = 0; d < fleet_.days; ++d) {
      const double v = speed * uniform(rng_, 0.9, 1.1);
      tl_.idle_until(at(d, depart + jitter(rng_)));
      tl_.drive_via({via, work}, v, at(d, 23.99));
      tl_.wait(120.0, at(d, 23.99));
      if (business) {
        const int n = std::uniform_int_distribution<int>(p_.business_trips_min, p_.business_trips_max)(rng_);
        for (int i = 0; i < n && tl_.now() < at(d, ret - 1.0); ++i) {
          tl_.idle_until(tl_.now() + uniform(rng_, 10.0, 60.0) * 60.0);
          const auto pick = std::uniform_int_distribution<std::size_t>(0, clients.size() - 1)(rng_);
          tl_.drive_to(clients[pick], v, at(d, 23.99));
          tl_.idle_until(tl_.now() + uniform(rng_, 20.0, 60.0) * 60.0);
          tl_.drive_to(work, v, at(d, 23.99));
        }
      } else if (std::bernoulli_distribution(p_.commute_lunch_prob)(rng_)) {
        tl_.idle_until(at(d, 12.0 + jitter(rng_)));
        tl_.drive_to(lunch, 25.0, at(d, 23.99));
        tl_.idle_until(tl_.now() + uniform(rng_, 30.0, 60.0) * 60.0);
        tl_.drive_to(work, 25.0, at(d, 23.99));
      }
      tl_.idle_until(at(d, ret + jitter(rng_)));
      tl_.drive_via({via, home}, v, at(d, 23.99));
      tl_.wait(120.0, at(d, 23.99));
      if (std::bernoulli_distribution(errand_prob)(rng_)) {
        tl_.drive_to(shops[std::uniform_int_distribution<int>(0, 1)(rng_)], 25.0, at(d, 23.99));
        tl_.idle_until(tl_.now() + uniform(rng_, 30.0, 90.0) * 60.0);
        tl_.drive_to(home, 25.0, at(d, 23.99));
      }
    }
  }

  void private_errands(int d, const TracePoint& home, int trips) {
    for (int i = 0; i < trips; ++i) {
      const double start = uniform(rng_, 8.0, 20.0);
      if (at(d, start) <= tl_.now()) continue;
      tl_.place(home, tl_.now());
      tl_.idle_until(at(d, start));
      const TracePoint dest = near(home, p_.occasional_trip_km_min, p_.occasional_trip_km_max);
      const double v = uniform(rng_, 20.0, 35.0);
      tl_.drive_to(dest, v, at(d, 23.99));
      tl_.idle_until(tl_.now() + uniform(rng_, 30.0, 180.0) * 60.0);
      tl_.drive_to(home, v, at(d, 23.99));
    }
  }

  // A long out-and-back day trip.
  void excursion(int d, const TracePoint& home) {
    tl_.place(home, tl_.now());
    tl_.idle_until(at(d, uniform(rng_, 8.0, 11.0)));
    const TracePoint dest = near(home, p_.excursion_km_min, p_.excursion_km_max);
    const double v = uniform(rng_, 30.0, 45.0);
    tl_.drive_to(dest, v, at(d, 23.99));
    tl_.idle_until(tl_.now() + uniform(rng_, 2.0, 5.0) * 3600.0);
    tl_.drive_to(home, v, at(d, 23.99));
  }

  void occasional() {
    const TracePoint home = random_location(city_.bounds, rng_);
    tl_.place(home, at(0, 0.0));
    std::discrete_distribution<int> n_trips({0.35, 0.4, 0.25});
    for (int d = 0; d < fleet_.days; ++d) {
      if (std::bernoulli_distribution(p_.occasional_excursion_prob)(rng_)) {
        excursion(d, home);
        continue;
      }
      private_errands(d, home, n_trips(rng_));
    }
  }

 private:
  const CityModel& city_;
  const ArchetypeParams& p_;
  const FleetSpec& fleet_;
  std::mt19937_64 rng_;
  Timeline tl_;
};

}  // namespace detail

/// Deterministic per-vehicle seed; independent of generation order.
inline std::uint64_t vehicle_seed(std::uint64_t master_seed, std::string_view vehicle_id) {
  return mix_seed(master_seed, fnv1a(vehicle_id));
}

inline SimVehicle simulate_vehicle(const CityModel& city, Archetype a, const std::string& vehicle_id,
                                   const FleetSpec& fleet, std::uint64_t master_seed,
                                   const ArchetypeParams& params = {}) {
  SimVehicle v;
  v.archetype = a;
  v.trajectory.vehicle_id = vehicle_id;
  detail::VehicleSim sim(city, params, fleet, vehicle_seed(master_seed, vehicle_id), v.trajectory);
  switch (a) {
    case Archetype::Taxi: sim.taxi(); break;
    case Archetype::Bus: sim.bus(); break;
    case Archetype::Ridesourcing: sim.ridesourcing(); break;
    case Archetype::Commuter: sim.commuter(); break;
    case Archetype::Occasional: sim.occasional(); break;
  }
  v.variant = sim.variant;
  return v;
}

struct FleetEntry {
  std::string vehicle_id;
  Archetype archetype;
};

/// Vehicle ids and archetypes of a fleet, in id order. With shuffle_ids the
/// ids are `<prefix>-NNNN` assigned by a seeded permutation.
inline std::vector<FleetEntry> fleet_roster(const FleetSpec& fleet, std::uint64_t master_seed) {
  std::vector<Archetype> kinds;
  for (Archetype a : {Archetype::Taxi, Archetype::Bus, Archetype::Ridesourcing, Archetype::Commuter,
                      Archetype::Occasional}) {
    if (fleet.count(a) < 0) throw Error(ErrorKind::ConfigError, "archetype counts must be non-negative");
    for (int i = 0; i < fleet.count(a); ++i) kinds.push_back(a);
  }
  std::vector<FleetEntry> out;
  if (fleet.shuffle_ids) {
    std::mt19937_64 rng(mix_seed(master_seed, fnv1a(fleet.id_prefix)));
    std::shuffle(kinds.begin(), kinds.end(), rng);
    for (std::size_t i = 0; i < kinds.size(); ++i) {
      char buf[32];
      std::snprintf(buf, sizeof(buf), "%s-%05zu", fleet.id_prefix.c_str(), i);
      out.push_back({buf, kinds[i]});
    }
  } else {
    std::vector<int> counters(5, 0);
    for (Archetype a : kinds) {
      char buf[48];
      std::snprintf(buf, sizeof(buf), "%s-%05d", to_string(a), counters[static_cast<int>(a)]++);
      out.push_back({buf, a});
    }
  }
  return out;
}

inline std::vector<SimVehicle> simulate_fleet(const CityModel& city, const FleetSpec& fleet, std::uint64_t master_seed,
                                              const ArchetypeParams& params = {}) {
  city.validate();
  if (fleet.days < 1) throw Error(ErrorKind::ConfigError, "fleet needs at least one day");
  if (fleet.sampling_period < 1) throw Error(ErrorKind::ConfigError, "sampling period must be positive");
  std::vector<SimVehicle> out;
  for (const auto& e : fleet_roster(fleet, master_seed))
    out.push_back(simulate_vehicle(city, e.archetype, e.vehicle_id, fleet, master_seed, params));
  return out;
}

struct NoiseSpec {
  double interval_min = 5.0;
  double radius_m = 100.0;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(interval_min > 0.0)) throw Error(ErrorKind::ConfigError, "noise interval must be positive");
    if (!(radius_m >= 0.0)) throw Error(ErrorKind::ConfigError, "noise radius must be non-negative");
  }
};

/// Keeps the earliest fix of every interval window (aligned to the epoch) and
/// moves it uniformly at random within a disc of the given radius.
inline Trajectory perturb(const Trajectory& t, const NoiseSpec& spec) {
  spec.validate();
  Trajectory out{t.vehicle_id, {}};
  const double window = spec.interval_min * 60.0;
  std::mt19937_64 rng(vehicle_seed(spec.seed, t.vehicle_id));
  bool have = false;
  std::int64_t last_window = 0;
  for (const auto& p : t.points) {
    const auto w = static_cast<std::int64_t>(std::floor(static_cast<double>(p.time) / window));
    if (have && w == last_window) continue;
    have = true;
    last_window = w;
    if (spec.radius_m == 0.0) {
      out.points.push_back(p);
      continue;
    }
    const double r = spec.radius_m / 1000.0 * std::sqrt(detail::uniform(rng, 0.0, 1.0));
    const double bearing = detail::uniform(rng, 0.0, 2.0 * kPi);
    TracePoint q = destination_point(p, bearing, r);
    q.time = p.time;
    out.points.push_back(q);
  }
  return out;
}

}  // namespace rsdetect
