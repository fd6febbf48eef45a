#pragma once

// Scenario configuration: `key = value` lines, `#` comments. Every key has a
// default; unknown keys are rejected. Environment variables named
// RSDETECT_<KEY> (upper case, dots as underscores) override the file, e.g.
// RSDETECT_GRID_ROWS overrides grid.rows.

#include <cctype>
#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <istream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "rsdetect/error.hpp"
#include "rsdetect/forest.hpp"
#include "rsdetect/trace_io.hpp"

namespace rsdetect {

struct ConfigKey {
  std::string_view key;
  std::string_view default_value;
  std::string_view help;
};

// clang-format off
inline const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = {
    {"seed", "42", "master seed"},
    {"grid.rows", "24", "grid rows"},
    {"grid.cols", "24", "grid columns"},
    {"grid.lat_min", "31.0", "southern bound"},
    {"grid.lat_max", "31.4", "northern bound"},
    {"grid.lon_min", "121.2", "western bound"},
    {"grid.lon_max", "121.7", "eastern bound"},
    {"city.hotspots", "12", "number of hotspots"},
    {"city.road_noise_m", "10", "GPS noise standard deviation, metres"},
    {"city.hotspot_spread_km", "1.0", "spread of trip ends around a hotspot"},
    {"sim.days", "7", "simulated days"},
    {"sim.sampling_period", "60", "seconds between fixes"},
    {"sim.first_day", "16923", "first local day, days since 1970-01-01 (2016-05-02)"},
    {"sim.tz_offset_hours", "8", "local time offset from UTC"},
    {"source.taxi", "300", "source taxis"},
    {"source.bus", "200", "source buses"},
    {"source.shift_strength", "0.5", "domain shift of the source city, 0..1"},
    {"target.ridesourcing", "150", "target ridesourcing cars"},
    {"target.commuter", "200", "target commuter cars"},
    {"target.occasional", "150", "target occasional cars"},
    {"features.gap_cap", "1800", "seconds; longer gaps add no distance or stay time"},
    {"image.saturation_seconds", "3600", "stay time mapped to full intensity"},
    {"delta", "0.9", "confidence threshold"},
    {"cotrain.max_iterations", "50", "iteration cap"},
    {"forest.trees", "100", "trees per forest"},
    {"forest.max_depth", "12", "maximum tree depth"},
    {"forest.min_leaf", "2", "minimum samples per leaf"},
    {"cnn.conv1_filters", "8", "first convolution filters"},
    {"cnn.conv2_filters", "16", "second convolution filters"},
    {"cnn.hidden", "64", "dense layer width"},
    {"cnn.dropout", "0.5", "dropout rate"},
    {"cnn.learning_rate", "0.01", "SGD learning rate"},
    {"cnn.momentum", "0.9", "SGD momentum"},
    {"cnn.batch_size", "32", "mini-batch size"},
    {"cnn.epochs", "30", "maximum epochs"},
    {"cnn.patience", "4", "early-stopping patience"},
    {"eval.test_fraction", "0.4", "held-out share of target cars, stratified"},
    {"eval.top_k", "5,10", "top-k percentages reported"},
    {"eval.self_train", "false", "also run single-classifier self-training baselines"},
    {"eval.target_supervised", "false", "also train on the true labels of the co-training cars (upper reference)"},
    {"eval.ablation_repeats", "1", "forest seeds averaged per ablation row"},
    {"eval.noise_levels", "5:100,15:500", "noise sweep levels, minutes:metres"},
    {"output.traces", "true", "write simulated trace CSVs into the run directory"},
    {"output.checkpoints", "true", "write a checkpoint after every co-training iteration"},
  };
  return keys;
}
// clang-format on

inline std::string env_name(std::string_view key) {
  std::string out = "RSDETECT_";
  for (char c : key) out += c == '.' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return out;
}

class ScenarioConfig {
 public:
  ScenarioConfig() {
    for (const auto& k : config_keys()) values_[std::string(k.key)] = std::string(k.default_value);
  }

  static ScenarioConfig parse(std::istream& in) {
    ScenarioConfig c;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      const auto t = trim(line);
      if (t.empty()) continue;
      const auto eq = t.find('=');
      if (eq == std::string_view::npos)
        throw Error(ErrorKind::ConfigError, "config line " + std::to_string(lineno) + ": expected key = value");
      c.set(std::string(trim(t.substr(0, eq))), std::string(trim(t.substr(eq + 1))));
    }
    return c;
  }

  static ScenarioConfig load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw Error(ErrorKind::ConfigError, "cannot open config " + path);
    return parse(f);
  }

  void set(const std::string& key, const std::string& value) {
    auto it = values_.find(key);
    if (it == values_.end()) throw Error(ErrorKind::ConfigError, "unknown config key " + key);
    it->second = value;
  }

  /// Applies RSDETECT_* overrides from the environment.
  void apply_env() {
    for (auto& [k, v] : values_)
      if (const char* e = std::getenv(env_name(k).c_str())) v = e;
  }

  const std::string& str(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw Error(ErrorKind::ConfigError, "unknown config key " + key);
    return it->second;
  }

  double num(const std::string& key) const {
    double v = 0.0;
    if (!detail::parse_number(std::string_view(str(key)), v))
      throw Error(ErrorKind::ConfigError, "config key " + key + " is not a number: " + str(key));
    return v;
  }

  std::int64_t integer(const std::string& key) const {
    std::int64_t v = 0;
    if (!detail::parse_number(std::string_view(str(key)), v))
      throw Error(ErrorKind::ConfigError, "config key " + key + " is not an integer: " + str(key));
    return v;
  }

  std::uint64_t u64(const std::string& key) const {
    std::uint64_t v = 0;
    if (!detail::parse_number(std::string_view(str(key)), v))
      throw Error(ErrorKind::ConfigError, "config key " + key + " is not an unsigned integer: " + str(key));
    return v;
  }

  bool flag(const std::string& key) const {
    const auto& v = str(key);
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw Error(ErrorKind::ConfigError, "config key " + key + " is not a boolean: " + v);
  }

  std::vector<double> list(const std::string& key) const {
    std::vector<double> out;
    for (auto f : detail::split_csv(str(key))) {
      double v = 0.0;
      if (!detail::parse_number(trim(f), v)) throw Error(ErrorKind::ConfigError, "config key " + key + " has a bad entry");
      out.push_back(v);
    }
    return out;
  }

  const std::map<std::string, std::string>& values() const { return values_; }

  /// Canonical text: every key in sorted order.
  std::string canonical() const {
    std::string out;
    for (const auto& [k, v] : values_) out += k + "=" + v + "\n";
    return out;
  }

  std::uint64_t hash() const { return fnv1a(canonical()); }

  std::string hash_hex() const {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(hash()));
    return buf;
  }

 private:
  static std::string_view trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
  }

  std::map<std::string, std::string> values_;
};

}  // namespace rsdetect
