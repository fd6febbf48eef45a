#pragma once

// End-to-end experiment on simulated fleets: simulate, extract, seed, co-train,
// score the held-out target cars, and write a JSON report. Also the two
// Stage-1 studies: leave-one-feature-group-out and source noise sweeps.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "rsdetect/config.hpp"
#include "rsdetect/features.hpp"
#include "rsdetect/image.hpp"
#include "rsdetect/metrics.hpp"
#include "rsdetect/pipeline.hpp"
#include "rsdetect/sim.hpp"
#include "rsdetect/trace_io.hpp"

namespace rsdetect {

using Json = nlohmann::ordered_json;

inline constexpr std::string_view kReportSchema = "rsdetect.report/1";

// --- config mapping ------------------------------------------------------------

inline GridSpec grid_from(const ScenarioConfig& c) {
  GridSpec g{c.num("grid.lat_min"), c.num("grid.lat_max"), c.num("grid.lon_min"), c.num("grid.lon_max"),
             static_cast<int>(c.integer("grid.rows")), static_cast<int>(c.integer("grid.cols"))};
  g.validate();
  return g;
}

inline FeatureConfig feature_config(const ScenarioConfig& c) {
  return {c.num("sim.tz_offset_hours"), c.num("features.gap_cap")};
}

inline ImageConfig image_config(const ScenarioConfig& c) {
  return {c.num("sim.tz_offset_hours"), c.num("features.gap_cap"), c.num("image.saturation_seconds"),
          static_cast<int>(c.integer("sim.days"))};
}

inline ForestParams forest_params(const ScenarioConfig& c, std::uint64_t seed) {
  ForestParams p;
  p.trees = static_cast<int>(c.integer("forest.trees"));
  p.max_depth = static_cast<int>(c.integer("forest.max_depth"));
  p.min_leaf = static_cast<int>(c.integer("forest.min_leaf"));
  p.seed = seed;
  return p;
}

inline CotrainConfig cotrain_config(const ScenarioConfig& c) {
  CotrainConfig k;
  k.delta = c.num("delta");
  k.max_iterations = static_cast<int>(c.integer("cotrain.max_iterations"));
  k.forest = forest_params(c, 0);
  k.cnn.rows = static_cast<int>(c.integer("grid.rows"));
  k.cnn.cols = static_cast<int>(c.integer("grid.cols"));
  k.cnn.conv1_filters = static_cast<int>(c.integer("cnn.conv1_filters"));
  k.cnn.conv2_filters = static_cast<int>(c.integer("cnn.conv2_filters"));
  k.cnn.hidden = static_cast<int>(c.integer("cnn.hidden"));
  k.cnn.dropout = c.num("cnn.dropout");
  k.cnn_train.learning_rate = c.num("cnn.learning_rate");
  k.cnn_train.momentum = c.num("cnn.momentum");
  k.cnn_train.batch_size = static_cast<int>(c.integer("cnn.batch_size"));
  k.cnn_train.epochs = static_cast<int>(c.integer("cnn.epochs"));
  k.cnn_train.patience = static_cast<int>(c.integer("cnn.patience"));
  k.seed = mix_seed(c.u64("seed"), 0x5747E2);
  k.validate();
  return k;
}

inline FleetSpec fleet_spec(const ScenarioConfig& c, bool source) {
  FleetSpec f;
  if (source) {
    f.taxi = static_cast<int>(c.integer("source.taxi"));
    f.bus = static_cast<int>(c.integer("source.bus"));
    f.shuffle_ids = false;
  } else {
    f.ridesourcing = static_cast<int>(c.integer("target.ridesourcing"));
    f.commuter = static_cast<int>(c.integer("target.commuter"));
    f.occasional = static_cast<int>(c.integer("target.occasional"));
    f.id_prefix = "car";
  }
  f.days = static_cast<int>(c.integer("sim.days"));
  f.sampling_period = c.integer("sim.sampling_period");
  f.first_day = c.integer("sim.first_day");
  f.tz_offset_hours = c.num("sim.tz_offset_hours");
  return f;
}

inline CityModel city_from(const ScenarioConfig& c) {
  CityModel city = default_city(mix_seed(c.u64("seed"), 0xC177), static_cast<int>(c.integer("city.hotspots")));
  city.bounds = grid_from(c);
  city.road_noise_m = c.num("city.road_noise_m");
  city.hotspot_spread_km = c.num("city.hotspot_spread_km");
  // hotspots were drawn in the default bounds; redraw them inside the configured ones
  std::mt19937_64 rng(mix_seed(c.u64("seed"), 0xB0));
  for (auto& h : city.hotspots) {
    const auto p = detail::random_location(city.bounds, rng, 0.15);
    h.lat = p.lat;
    h.lon = p.lon;
  }
  city.validate();
  return city;
}

inline std::vector<std::pair<double, double>> noise_levels(const ScenarioConfig& c) {
  std::vector<std::pair<double, double>> out;
  for (auto f : detail::split_csv(c.str("eval.noise_levels"))) {
    const auto colon = f.find(':');
    double x = 0.0, y = 0.0;
    if (colon == std::string_view::npos || !detail::parse_number(f.substr(0, colon), x) ||
        !detail::parse_number(f.substr(colon + 1), y))
      throw Error(ErrorKind::ConfigError, "eval.noise_levels entries must be minutes:metres");
    out.push_back({x, y});
  }
  return out;
}

// --- data preparation ----------------------------------------------------------

struct PreparedData {
  ScenarioConfig cfg;
  GridSpec grid;
  CityModel target_city;
  CityModel source_city;
  std::vector<SimVehicle> source;
  std::vector<SimVehicle> target;
  std::vector<FeatureRecord> source_features;  // labeled taxi / bus
  std::vector<int> source_y;
  CandidateSet candidates;                    // usable target cars, id order
  std::vector<int> truth;                     // per candidate
  std::vector<std::string> archetype;         // per candidate
  std::vector<std::size_t> train_idx, test_idx;
  std::size_t dropped_source = 0, dropped_target = 0;
};

/// Source feature rows; taxis optionally perturbed, buses reduced to their
/// rush-hour trips. Vehicles without usable days are skipped.
inline std::vector<FeatureRecord> source_feature_records(const std::vector<SimVehicle>& fleet, const GridSpec& g,
                                                         const ScenarioConfig& c, const NoiseSpec* noise,
                                                         std::size_t* dropped = nullptr) {
  const FeatureConfig fc = feature_config(c);
  RushHourConfig rc;
  rc.tz_offset_hours = fc.tz_offset_hours;
  rc.gap_cap = fc.gap_cap;
  std::vector<FeatureRecord> out;
  for (const auto& v : fleet) {
    Trajectory t;
    VehicleLabel label;
    if (v.archetype == Archetype::Taxi) {
      t = noise ? perturb(v.trajectory, *noise) : v.trajectory;
      label = VehicleLabel::Taxi;
    } else if (v.archetype == Archetype::Bus) {
      t = bus_rush_hour_trips(v.trajectory, rc);
      label = VehicleLabel::Bus;
    } else {
      continue;
    }
    try {
      out.push_back({v.trajectory.vehicle_id, extract_features(t, g, fc), label});
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::MissingData) throw;
      if (dropped) ++*dropped;
    }
  }
  return out;
}

inline void source_matrix(const std::vector<FeatureRecord>& recs, std::vector<std::vector<double>>& X,
                          std::vector<int>& y) {
  X.clear();
  y.clear();
  for (const auto& r : recs) {
    X.push_back(r.features.to_vector());
    y.push_back(*binary_label(r.label));
  }
}

/// Stratified by truth; the shuffle runs over id-ordered indices so the split
/// depends only on the seed and the id set.
inline void stratified_split(const std::vector<int>& truth, double test_fraction, std::uint64_t seed,
                             std::vector<std::size_t>& train, std::vector<std::size_t>& test) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0))
    throw Error(ErrorKind::ConfigError, "eval.test_fraction must be in (0, 1)");
  train.clear();
  test.clear();
  std::mt19937_64 rng(mix_seed(seed, 0x5B117));
  for (int cls : {1, 0}) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < truth.size(); ++i)
      if (truth[i] == cls) idx.push_back(i);
    std::shuffle(idx.begin(), idx.end(), rng);
    const auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(idx.size())));
    test.insert(test.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_test));
    train.insert(train.end(), idx.begin() + static_cast<std::ptrdiff_t>(n_test), idx.end());
  }
  std::sort(train.begin(), train.end());
  std::sort(test.begin(), test.end());
}

inline CandidateSet subset(const CandidateSet& all, const std::vector<std::size_t>& idx) {
  CandidateSet s;
  for (auto i : idx) {
    s.ids.push_back(all.ids[i]);
    s.features.push_back(all.features[i]);
    s.images.push_back(all.images[i]);
  }
  return s;
}

using Logger = std::function<void(const std::string&)>;

inline PreparedData prepare(const ScenarioConfig& c, const Logger& log = {}) {
  auto say = [&](const std::string& s) {
    if (log) log(s);
  };
  PreparedData d;
  d.cfg = c;
  d.grid = grid_from(c);
  const std::uint64_t seed = c.u64("seed");
  d.target_city = city_from(c);
  d.source_city = domain_shift(d.target_city, c.num("source.shift_strength"), mix_seed(seed, 0x5F));
  say("simulating source fleet");
  d.source = simulate_fleet(d.source_city, fleet_spec(c, true), mix_seed(seed, 1));
  say("simulating target fleet");
  d.target = simulate_fleet(d.target_city, fleet_spec(c, false), mix_seed(seed, 2));

  say("extracting features");
  d.source_features = source_feature_records(d.source, d.grid, c, nullptr, &d.dropped_source);
  std::vector<std::vector<double>> X;
  source_matrix(d.source_features, X, d.source_y);

  const FeatureConfig fc = feature_config(c);
  const ImageConfig ic = image_config(c);
  std::vector<std::size_t> order(d.target.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return d.target[a].trajectory.vehicle_id < d.target[b].trajectory.vehicle_id;
  });
  for (auto i : order) {
    const auto& v = d.target[i];
    SharedFeatureVector f;
    try {
      f = extract_features(v.trajectory, d.grid, fc);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::MissingData) throw;
      ++d.dropped_target;
      continue;
    }
    d.candidates.ids.push_back(v.trajectory.vehicle_id);
    d.candidates.features.push_back(f.to_vector());
    d.candidates.images.push_back(build_image_stack(v.trajectory, d.grid, ic, c.integer("sim.first_day")));
    d.truth.push_back(v.archetype == Archetype::Ridesourcing ? 1 : 0);
    d.archetype.push_back(std::string(to_string(v.archetype)) + "/" + v.variant);
  }
  stratified_split(d.truth, c.num("eval.test_fraction"), seed, d.train_idx, d.test_idx);
  return d;
}

// --- metrics block -------------------------------------------------------------

struct ScoredSet {
  std::vector<std::string> ids;
  std::vector<double> scores;
  std::vector<int> labels;
};

inline std::string k_key(double k) {
  return detail::format_double(k);
}

inline Json metric_block(const ScoredSet& s, const std::vector<double>& ks, double boundary = kDecisionBoundary) {
  Json j;
  j["auc"] = auc(s.scores, s.labels);
  j["accuracy"] = accuracy(s.scores, s.labels, boundary);
  Json tk = Json::object();
  for (double k : ks) tk[k_key(k)] = top_k_precision(s.scores, s.labels, s.ids, k);
  j["top_k_precision"] = tk;
  const auto c = confusion(s.scores, s.labels, boundary);
  j["confusion"] = {{"tp", c.tp}, {"fp", c.fp}, {"tn", c.tn}, {"fn", c.fn}};
  return j;
}

// --- report schema ---------------------------------------------------------------

namespace detail {

inline void require(bool ok, const std::string& what) {
  if (!ok) throw Error(ErrorKind::DataError, "report schema: " + what);
}

inline void check_unit(const Json& j, const std::string& name) {
  require(j.is_number(), name + " must be a number");
  const double v = j.get<double>();
  require(v >= 0.0 && v <= 1.0, name + " must lie in [0, 1]");
}

inline void check_metric_block(const Json& m, const std::string& name, std::size_t n) {
  require(m.is_object(), name + " must be an object");
  for (const char* key : {"auc", "accuracy"}) {
    require(m.contains(key), name + "." + key + " missing");
    check_unit(m[key], name + "." + key);
  }
  require(m.contains("top_k_precision") && m["top_k_precision"].is_object(), name + ".top_k_precision missing");
  for (const auto& [k, v] : m["top_k_precision"].items()) check_unit(v, name + ".top_k_precision." + k);
  require(m.contains("confusion") && m["confusion"].is_object(), name + ".confusion missing");
  std::size_t total = 0;
  for (const char* key : {"tp", "fp", "tn", "fn"}) {
    require(m["confusion"].contains(key) && m["confusion"][key].is_number_unsigned(), name + ".confusion." + key);
    total += m["confusion"][key].get<std::size_t>();
  }
  require(total == n, name + ".confusion does not sum to the test-set size");
}

}  // namespace detail

/// Throws DataError when the report does not follow the schema.
inline void validate_report(const Json& r) {
  using detail::require;
  require(r.is_object(), "top level must be an object");
  require(r.value("schema", "") == kReportSchema, "schema tag");
  require(r.contains("config_hash") && r["config_hash"].is_string(), "config_hash");
  require(r.contains("seed") && r["seed"].is_number_unsigned(), "seed");
  require(r.contains("test_size") && r["test_size"].is_number_unsigned(), "test_size");
  const auto n = r["test_size"].get<std::size_t>();
  require(r.contains("metrics"), "metrics");
  detail::check_metric_block(r["metrics"], "metrics", n);
  require(r.contains("baselines") && r["baselines"].is_object(), "baselines");
  for (const auto& [name, m] : r["baselines"].items()) detail::check_metric_block(m, "baselines." + name, n);
  require(r.contains("cotrain") && r["cotrain"].is_object(), "cotrain");
  require(r["cotrain"].contains("iterations") && r["cotrain"]["iterations"].is_number_integer() &&
              r["cotrain"]["iterations"].get<long long>() >= 1,
          "cotrain.iterations");
}

inline void write_json(const std::filesystem::path& p, const Json& j) {
  std::ofstream f(p);
  if (!f) throw Error(ErrorKind::DataError, "cannot write " + p.string());
  f << j.dump(2) << '\n';
}

inline void write_report(const std::filesystem::path& p, const Json& report) {
  validate_report(report);
  write_json(p, report);
}

// --- artifacts -------------------------------------------------------------------

inline void write_ground_truth(std::ostream& out, const std::vector<SimVehicle>& fleet) {
  out << "vehicle_id,archetype\n";
  std::vector<const SimVehicle*> v;
  for (const auto& s : fleet) v.push_back(&s);
  std::sort(v.begin(), v.end(), [](auto a, auto b) { return a->trajectory.vehicle_id < b->trajectory.vehicle_id; });
  for (auto s : v) out << s->trajectory.vehicle_id << ',' << to_string(s->archetype) << '\n';
}

inline std::map<std::string, Archetype> read_ground_truth(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || detail::trim_cr(line) != "vehicle_id,archetype")
    throw Error(ErrorKind::DataError, "ground-truth header mismatch");
  std::map<std::string, Archetype> out;
  while (std::getline(in, line)) {
    const auto f = detail::split_csv(detail::trim_cr(line));
    if (f.size() == 1 && f[0].empty()) continue;
    if (f.size() != 2) throw Error(ErrorKind::DataError, "ground-truth row malformed");
    auto a = parse_archetype(f[1]);
    if (!a) throw Error(ErrorKind::DataError, "unknown archetype " + std::string(f[1]));
    out[std::string(f[0])] = *a;
  }
  return out;
}

namespace detail {

inline std::ofstream open_out(const std::filesystem::path& p, std::ios::openmode m = std::ios::out) {
  std::ofstream f(p, m);
  if (!f) throw Error(ErrorKind::DataError, "cannot write " + p.string());
  return f;
}

template <typename F>
auto stage(const std::string& name, F&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const Error& e) {
    throw Error(e.kind(), "stage " + name + " failed: " + e.message());
  }
}

}  // namespace detail

/// Writes the prepared inputs: config, traces, ground truth, features, images, split.
inline void write_prepared(const PreparedData& d, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  detail::open_out(dir / "config.txt") << d.cfg.canonical();
  if (d.cfg.flag("output.traces")) {
    auto dump = [&](const char* name, const std::vector<SimVehicle>& fleet) {
      auto f = detail::open_out(dir / name);
      write_trace_header(f);
      for (const auto& v : fleet) write_trace_rows(f, v.trajectory);
    };
    dump("source_traces.csv", d.source);
    dump("target_traces.csv", d.target);
  }
  {
    auto f = detail::open_out(dir / "ground_truth.csv");
    std::vector<SimVehicle> both;
    f << "vehicle_id,archetype\n";
    std::vector<std::pair<std::string, Archetype>> rows;
    for (const auto* fleet : {&d.source, &d.target})
      for (const auto& v : *fleet) rows.push_back({v.trajectory.vehicle_id, v.archetype});
    std::sort(rows.begin(), rows.end());
    for (const auto& [id, a] : rows) f << id << ',' << to_string(a) << '\n';
  }
  {
    auto f = detail::open_out(dir / "source_features.csv");
    write_features(f, d.source_features);
  }
  {
    std::vector<FeatureRecord> recs;
    for (std::size_t i = 0; i < d.candidates.size(); ++i)
      recs.push_back({d.candidates.ids[i], SharedFeatureVector::from_vector(d.candidates.features[i]),
                      VehicleLabel::Unknown});
    auto f = detail::open_out(dir / "target_features.csv");
    write_features(f, recs);
  }
  fs::create_directories(dir / "images");
  for (const auto& s : d.candidates.images) write_timg_file((dir / "images" / (s.vehicle_id + ".timg")).string(), s);
  {
    auto f = detail::open_out(dir / "split.csv");
    f << "vehicle_id,split\n";
    std::vector<std::string> split(d.candidates.size(), "train");
    for (auto i : d.test_idx) split[i] = "test";
    for (std::size_t i = 0; i < d.candidates.size(); ++i) f << d.candidates.ids[i] << ',' << split[i] << '\n';
  }
}

struct ExperimentResult {
  Json report;
  std::filesystem::path run_dir;
  Stage1Result stage1;
  CotrainResult cotrain;
  ScoredSet final_scores;
  ScoredSet stage1_scores;
};

inline std::filesystem::path run_directory(const std::filesystem::path& out, const ScenarioConfig& c) {
  return out / ("run-" + c.hash_hex());
}

/// simulate -> extract -> stage1 -> cotrain -> classify the held-out cars -> report.
inline ExperimentResult run_experiment(const PreparedData& d, const std::filesystem::path& out_dir,
                                       const Logger& log = {}) {
  namespace fs = std::filesystem;
  auto say = [&](const std::string& s) {
    if (log) log(s);
  };
  const ScenarioConfig& c = d.cfg;
  ExperimentResult r;
  r.run_dir = run_directory(out_dir, c);
  fs::create_directories(r.run_dir);
  detail::stage("extract", [&] { write_prepared(d, r.run_dir); });

  const auto ks = c.list("eval.top_k");
  const double delta = c.num("delta");
  const std::uint64_t seed = c.u64("seed");
  const CandidateSet train = subset(d.candidates, d.train_idx);
  const CandidateSet test = subset(d.candidates, d.test_idx);

  say("stage 1");
  r.stage1 = detail::stage("stage1", [&] {
    std::vector<std::vector<double>> X;
    std::vector<int> y;
    source_matrix(d.source_features, X, y);
    std::vector<std::string> names(shared_feature_names().begin(), shared_feature_names().end());
    return stage1_seed(X, y, train.ids, train.features, delta, forest_params(c, mix_seed(seed, 0x51)), names);
  });
  {
    auto f = detail::open_out(r.run_dir / "stage1_forest.rsf");
    write_forest(f, r.stage1.model);
    auto m = detail::open_out(r.run_dir / "stage1_manifest.csv");
    write_manifest(m, r.stage1.pool);
  }

  say("co-training");
  const CotrainConfig cc = cotrain_config(c);
  const bool checkpoints = c.flag("output.checkpoints");
  r.cotrain = detail::stage("cotrain", [&] {
    return cotrain(r.stage1.pool, train, cc, [&](const IterationStats& st, const LabeledPool& pool,
                                                 const EnsembleClassifier& model) {
      say("iteration " + std::to_string(st.iteration) + ": +" + std::to_string(st.added) + " (C_r " +
          std::to_string(st.ridesourcing) + ", C_n " + std::to_string(st.other) + ", C' " +
          std::to_string(st.unlabeled) + ")");
      if (checkpoints) save_checkpoint(r.run_dir / "checkpoints", st.iteration, pool, model);
    });
  });
  save_checkpoint(r.run_dir, r.cotrain.iterations, r.cotrain.pool, r.cotrain.model);
  if (fs::exists(r.run_dir / "final")) fs::remove_all(r.run_dir / "final");
  char last[32];
  std::snprintf(last, sizeof(last), "iter-%03d", r.cotrain.iterations);
  fs::rename(r.run_dir / last, r.run_dir / "final");
  {
    auto f = detail::open_out(r.run_dir / "training_log.csv");
    write_training_log(f, r.cotrain.model.day_cnn, "day_cnn", true);
    write_training_log(f, r.cotrain.model.car_cnn, "car_cnn", false);
  }

  say("scoring held-out cars");
  std::vector<double> p_rf, p_cnn;
  detail::stage("classify", [&] {
    for (std::size_t i = 0; i < test.size(); ++i) {
      const double a = r.cotrain.model.rf_probability(test.features[i]);
      const double b = r.cotrain.model.cnn_probability(test.images[i]);
      p_rf.push_back(a);
      p_cnn.push_back(b);
      r.final_scores.scores.push_back((a + b) / 2.0);
      r.stage1_scores.scores.push_back(predict_proba(r.stage1.model, test.features[i]));
    }
  });
  for (auto i : d.test_idx) {
    r.final_scores.ids.push_back(d.candidates.ids[i]);
    r.final_scores.labels.push_back(d.truth[i]);
  }
  r.stage1_scores.ids = r.final_scores.ids;
  r.stage1_scores.labels = r.final_scores.labels;
  {
    auto f = detail::open_out(r.run_dir / "scores.csv");
    f << "vehicle_id,truth,archetype,p_stage1,p_rf,p_cnn,p_final,label,confidence\n";
    for (std::size_t k = 0; k < test.size(); ++k) {
      const auto cl = classify_probability(r.final_scores.scores[k]);
      f << test.ids[k] << ',' << r.final_scores.labels[k] << ',' << d.archetype[d.test_idx[k]] << ','
        << detail::format_double(r.stage1_scores.scores[k]) << ',' << detail::format_double(p_rf[k]) << ','
        << detail::format_double(p_cnn[k]) << ',' << detail::format_double(r.final_scores.scores[k]) << ','
        << (cl.label ? "ridesourcing" : "other") << ',' << detail::format_double(cl.confidence) << '\n';
    }
  }

  Json rep;
  rep["schema"] = kReportSchema;
  rep["config_hash"] = c.hash_hex();
  rep["seed"] = seed;
  rep["test_size"] = test.size();
  rep["test_positives"] = static_cast<std::size_t>(std::count(r.final_scores.labels.begin(), r.final_scores.labels.end(), 1));
  rep["candidates"] = train.size();
  rep["dropped_vehicles"] = {{"source", d.dropped_source}, {"target", d.dropped_target}};
  rep["decision_boundary"] = kDecisionBoundary;
  rep["top_k_rule"] = "m = ceil(k * N / 100); ties by ascending vehicle_id";
  rep["metrics"] = metric_block(r.final_scores, ks);
  Json base;
  base["stage1_rf"] = metric_block(r.stage1_scores, ks);
  ScoredSet rf_only = r.final_scores, cnn_only = r.final_scores;
  rf_only.scores = p_rf;
  cnn_only.scores = p_cnn;
  base["final_rf_component"] = metric_block(rf_only, ks);
  base["final_cnn_component"] = metric_block(cnn_only, ks);
  if (c.flag("eval.self_train")) {
    for (ClassifierKind kind : {ClassifierKind::Rf, ClassifierKind::Cnn}) {
      say(std::string("self-training ") + std::string(to_string(kind)));
      const auto st = detail::stage("self-train", [&] { return self_train(r.stage1.pool, train, kind, cc); });
      ScoredSet s = r.final_scores;
      for (std::size_t i = 0; i < test.size(); ++i) s.scores[i] = st.probability(test.features[i], test.images[i]);
      Json m = metric_block(s, ks);
      m["iterations"] = st.iterations;
      base[std::string("self_") + std::string(to_string(kind))] = m;
    }
  }
  if (c.flag("eval.target_supervised")) {
    say("target-supervised reference");
    LabeledPool truth_pool(train.ids);
    for (std::size_t k = 0; k < d.train_idx.size(); ++k)
      truth_pool.add(train.ids[k], {d.truth[d.train_idx[k]], PoolSource::None, 0, 1.0});
    EnsembleClassifier sup;
    sup.forest = detail::train_pool_forest(truth_pool, train, cc, 0);
    std::tie(sup.day_cnn, sup.car_cnn) = detail::train_pool_cnns(truth_pool, train, cc, 0);
    ScoredSet a = r.final_scores, b = r.final_scores, e = r.final_scores;
    for (std::size_t i = 0; i < test.size(); ++i) {
      a.scores[i] = sup.rf_probability(test.features[i]);
      b.scores[i] = sup.cnn_probability(test.images[i]);
      e.scores[i] = (a.scores[i] + b.scores[i]) / 2.0;
    }
    base["target_rf"] = metric_block(a, ks);
    base["target_cnn"] = metric_block(b, ks);
    base["target_rf_cnn"] = metric_block(e, ks);
    if (log) {
      std::map<std::string, std::array<double, 4>> by;
      for (std::size_t i = 0; i < test.size(); ++i) {
        auto& v = by[d.archetype[d.test_idx[i]]];
        v[0] += a.scores[i];
        v[1] += b.scores[i];
        v[2] += e.scores[i];
        v[3] += 1;
      }
      for (const auto& [k, v] : by)
        say("  " + k + " rf " + detail::format_double(v[0] / v[3]) + " cnn " + detail::format_double(v[1] / v[3]));
    }
  }
  rep["baselines"] = base;
  Json hist = Json::array();
  for (const auto& h : r.cotrain.history)
    hist.push_back({{"iteration", h.iteration}, {"added", h.added}, {"conflicts", h.conflicts},
                    {"ridesourcing", h.ridesourcing}, {"other", h.other}, {"unlabeled", h.unlabeled}});
  rep["cotrain"] = {{"iterations", r.cotrain.iterations},
                    {"stalled", r.cotrain.stalled},
                    {"stage1_seeded", {{"ridesourcing", r.stage1.pool.ridesourcing().size()},
                                       {"other", r.stage1.pool.other().size()}}},
                    {"final_pool", {{"ridesourcing", r.cotrain.pool.ridesourcing().size()},
                                    {"other", r.cotrain.pool.other().size()},
                                    {"unlabeled", r.cotrain.pool.unlabeled().size()}}},
                    {"history", hist}};
  write_report(r.run_dir / "report.json", rep);
  r.report = std::move(rep);
  return r;
}

// --- Stage-1 studies -------------------------------------------------------------

struct FeatureGroup {
  std::string name;
  std::vector<std::size_t> columns;
};

/// The five shared-feature types.
inline std::vector<FeatureGroup> shared_feature_groups() {
  return {{"distance_mean", {0}},
          {"distance_variance", {1}},
          {"coverage_mean", {2, 3, 4, 5}},
          {"coverage_variance", {6, 7, 8, 9}},
          {"coverage_similarity", {10, 11, 12, 13, 14}}};
}

namespace detail {

inline std::vector<double> drop_columns(const std::vector<double>& x, const std::vector<std::size_t>& cols) {
  std::vector<double> out;
  for (std::size_t j = 0; j < x.size(); ++j)
    if (std::find(cols.begin(), cols.end(), j) == cols.end()) out.push_back(x[j]);
  return out;
}

inline std::vector<std::size_t> all_targets(const PreparedData& d) {
  std::vector<std::size_t> idx(d.candidates.ids.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return idx;
}

// Stage-1 forest(s) on source rows scored on every labeled target car; the
// source model never sees target labels. With repeats > 1 the probabilities of
// independently seeded forests are averaged.
inline ScoredSet stage1_scores(const PreparedData& d, const std::vector<FeatureRecord>& source,
                               const std::vector<std::size_t>& drop, int repeats, std::uint64_t seed) {
  const auto idx = all_targets(d);
  std::vector<std::vector<double>> X;
  std::vector<int> y;
  source_matrix(source, X, y);
  for (auto& x : X) x = drop_columns(x, drop);
  ScoredSet s;
  for (auto i : idx) {
    s.ids.push_back(d.candidates.ids[i]);
    s.labels.push_back(d.truth[i]);
  }
  s.scores.assign(idx.size(), 0.0);
  for (int r = 0; r < repeats; ++r) {
    const auto m = train_forest(X, y, forest_params(d.cfg, mix_seed(seed, static_cast<std::uint64_t>(r))));
    for (std::size_t k = 0; k < idx.size(); ++k)
      s.scores[k] += predict_proba(m, drop_columns(d.candidates.features[idx[k]], drop));
  }
  for (auto& v : s.scores) v /= repeats;
  return s;
}

}  // namespace detail

/// Baseline row (all features) followed by one row per removed group, with
/// top-k precision deltas (full minus reduced).
inline Json leave_one_feature_out(const PreparedData& d, const std::vector<FeatureGroup>& groups) {
  const auto ks = d.cfg.list("eval.top_k");
  const int repeats = static_cast<int>(d.cfg.integer("eval.ablation_repeats"));
  if (repeats < 1) throw Error(ErrorKind::ConfigError, "eval.ablation_repeats must be >= 1");
  const std::uint64_t seed = mix_seed(d.cfg.u64("seed"), 0x51);
  Json out;
  out["schema"] = "rsdetect.ablation/1";
  out["config_hash"] = d.cfg.hash_hex();
  out["eval_size"] = d.candidates.ids.size();
  out["repeats"] = repeats;
  const Json full = metric_block(detail::stage1_scores(d, d.source_features, {}, repeats, seed), ks);
  out["full"] = full;
  Json rows = Json::array();
  for (const auto& g : groups) {
    if (kNumSharedFeatures - g.columns.size() < 2) throw Error(ErrorKind::ConfigError, "group " + g.name + " leaves <2 features");
    Json m = metric_block(detail::stage1_scores(d, d.source_features, g.columns, repeats, seed), ks);
    Json delta = Json::object();
    for (double k : ks)
      delta[k_key(k)] = full["top_k_precision"][k_key(k)].get<double>() - m["top_k_precision"][k_key(k)].get<double>();
    rows.push_back({{"removed", g.name}, {"metrics", m}, {"top_k_drop", delta}});
  }
  out["rows"] = rows;
  return out;
}

/// Stage-1 precision with the source taxis perturbed at each noise level.
inline Json noise_sweep(const PreparedData& d, const std::vector<std::pair<double, double>>& levels) {
  const auto ks = d.cfg.list("eval.top_k");
  const std::uint64_t seed = mix_seed(d.cfg.u64("seed"), 0x51);
  Json out;
  out["schema"] = "rsdetect.noise/1";
  out["config_hash"] = d.cfg.hash_hex();
  out["eval_size"] = d.candidates.ids.size();
  out["clean"] = metric_block(detail::stage1_scores(d, d.source_features, {}, 1, seed), ks);
  Json rows = Json::array();
  for (const auto& [x, y] : levels) {
    NoiseSpec ns{x, y, mix_seed(d.cfg.u64("seed"), 0x4015E)};
    const auto recs = source_feature_records(d.source, d.grid, d.cfg, &ns);
    rows.push_back({{"interval_min", x}, {"radius_m", y},
                    {"metrics", metric_block(detail::stage1_scores(d, recs, {}, 1, seed), ks)}});
  }
  out["levels"] = rows;
  return out;
}

}  // namespace rsdetect
