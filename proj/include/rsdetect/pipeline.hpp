#pragma once

// Two-stage transfer: a source-trained forest seeds confident target labels,
// then a forest and a pair of CNNs pseudo-label each other's unlabeled cars
// until neither adds anything.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "rsdetect/cnn.hpp"
#include "rsdetect/error.hpp"
#include "rsdetect/forest.hpp"
#include "rsdetect/image.hpp"
#include "rsdetect/trace_io.hpp"

namespace rsdetect {

inline constexpr double kDefaultDelta = 0.9;
inline constexpr double kDecisionBoundary = 0.5;

enum class PoolSource { Stage1, CotrainRf, CotrainCnn, CotrainBoth, SelfRf, SelfCnn, None };

inline std::string_view to_string(PoolSource s) {
  switch (s) {
    case PoolSource::Stage1: return "stage1";
    case PoolSource::CotrainRf: return "cotrain-rf";
    case PoolSource::CotrainCnn: return "cotrain-cnn";
    case PoolSource::CotrainBoth: return "cotrain-both";
    case PoolSource::SelfRf: return "self-rf";
    case PoolSource::SelfCnn: return "self-cnn";
    case PoolSource::None: return "none";
  }
  return "none";
}

inline std::optional<PoolSource> parse_pool_source(std::string_view s) {
  for (auto v : {PoolSource::Stage1, PoolSource::CotrainRf, PoolSource::CotrainCnn, PoolSource::CotrainBoth,
                 PoolSource::SelfRf, PoolSource::SelfCnn, PoolSource::None})
    if (to_string(v) == s) return v;
  return std::nullopt;
}

struct Provenance {
  int label = 0;  // 1 ridesourcing, 0 other
  PoolSource source = PoolSource::Stage1;
  int iteration = 0;
  double confidence = 0.0;

  bool operator==(const Provenance&) const = default;
};

/// Candidate set split into ridesourcing (C_r), other (C_n) and unlabeled (C').
/// Labels are append-only.
class LabeledPool {
 public:
  LabeledPool() = default;
  explicit LabeledPool(const std::vector<std::string>& candidates) {
    for (const auto& id : candidates)
      if (!unlabeled_.insert(id).second) throw Error(ErrorKind::DataError, "duplicate candidate id " + id);
    all_ = unlabeled_;
  }

  void add(const std::string& id, const Provenance& p) {
    if (!unlabeled_.count(id)) {
      if (!all_.count(id)) throw Error(ErrorKind::DataError, "not a candidate: " + id);
      throw Error(ErrorKind::DataError, "already labeled: " + id);
    }
    unlabeled_.erase(id);
    (p.label ? positive_ : negative_).insert(id);
    provenance_[id] = p;
  }

  const std::set<std::string>& ridesourcing() const { return positive_; }
  const std::set<std::string>& other() const { return negative_; }
  const std::set<std::string>& unlabeled() const { return unlabeled_; }
  const std::set<std::string>& candidates() const { return all_; }
  const std::map<std::string, Provenance>& provenance() const { return provenance_; }

  std::size_t labeled_count() const { return positive_.size() + negative_.size(); }
  bool is_labeled(const std::string& id) const { return provenance_.count(id) > 0; }
  int label_of(const std::string& id) const { return provenance_.at(id).label; }

  /// Throws DataError when the three sets overlap or do not cover C*.
  void check_invariants() const {
    for (const auto& id : positive_)
      if (negative_.count(id) || unlabeled_.count(id)) throw Error(ErrorKind::DataError, "pool sets overlap at " + id);
    for (const auto& id : negative_)
      if (unlabeled_.count(id)) throw Error(ErrorKind::DataError, "pool sets overlap at " + id);
    if (positive_.size() + negative_.size() + unlabeled_.size() != all_.size())
      throw Error(ErrorKind::DataError, "pool sets do not cover the candidate set");
    for (const auto& [id, p] : provenance_)
      if ((p.label ? positive_ : negative_).count(id) == 0) throw Error(ErrorKind::DataError, "provenance mismatch at " + id);
  }

  bool operator==(const LabeledPool& o) const {
    return positive_ == o.positive_ && negative_ == o.negative_ && unlabeled_ == o.unlabeled_ &&
           provenance_ == o.provenance_;
  }

 private:
  std::set<std::string> all_, positive_, negative_, unlabeled_;
  std::map<std::string, Provenance> provenance_;
};

/// Confident label for probability p at threshold delta, if any. A unanimous
/// vote counts as confident even when delta = 1.
inline std::optional<int> confident_label(double p, double delta) {
  if (p > delta || p >= 1.0) return 1;
  if (p < 1.0 - delta || p <= 0.0) return 0;
  return std::nullopt;
}

inline void validate_delta(double delta) {
  if (!(delta > 0.5 && delta <= 1.0)) throw Error(ErrorKind::ConfigError, "delta must be in (0.5, 1]");
}

/// Target-domain inputs indexed by vehicle id.
struct CandidateSet {
  std::vector<std::string> ids;
  std::vector<std::vector<double>> features;
  std::vector<ImageStack> images;

  std::size_t size() const { return ids.size(); }

  std::size_t index_of(const std::string& id) const {
    if (index_.size() != ids.size()) rebuild_index();
    auto it = index_.find(id);
    if (it == index_.end()) throw Error(ErrorKind::MissingData, "unknown candidate " + id);
    return it->second;
  }

  void validate() const {
    if (features.size() != ids.size() || images.size() != ids.size())
      throw Error(ErrorKind::ShapeError, "candidate set columns differ in length");
    std::set<std::string> seen(ids.begin(), ids.end());
    if (seen.size() != ids.size()) throw Error(ErrorKind::DataError, "duplicate candidate ids");
  }

 private:
  void rebuild_index() const {
    index_.clear();
    for (std::size_t i = 0; i < ids.size(); ++i) index_[ids[i]] = i;
  }
  mutable std::map<std::string, std::size_t> index_;
};

// --- Stage 1 -------------------------------------------------------------------

struct Stage1Result {
  ForestModel model;
  LabeledPool pool;
  std::vector<double> scores;  // per candidate, in CandidateSet order
};

/// Trains on source features (taxi = 1, bus = 0) and seeds the pool with the
/// confident target predictions.
inline Stage1Result stage1_seed(const std::vector<std::vector<double>>& source_X, const std::vector<int>& source_y,
                                const std::vector<std::string>& target_ids,
                                const std::vector<std::vector<double>>& target_X, double delta = kDefaultDelta,
                                const ForestParams& params = {}, const std::vector<std::string>& feature_names = {}) {
  validate_delta(delta);
  if (target_ids.size() != target_X.size()) throw Error(ErrorKind::ShapeError, "target ids and features differ");
  Stage1Result r{train_forest(source_X, source_y, params, feature_names), LabeledPool(target_ids), {}};
  r.scores.reserve(target_X.size());
  for (std::size_t i = 0; i < target_X.size(); ++i) {
    const double p = predict_proba(r.model, target_X[i]);
    r.scores.push_back(p);
    if (auto l = confident_label(p, delta)) r.pool.add(target_ids[i], {*l, PoolSource::Stage1, 0, confidence_of(p)});
  }
  return r;
}

// --- ensemble ----------------------------------------------------------------

struct Classification {
  int label = 0;
  double confidence = 0.0;
  double probability = 0.0;
};

inline Classification classify_probability(double p, double boundary = kDecisionBoundary) {
  return {p >= boundary ? 1 : 0, confidence_of(p), p};
}

/// Average of the forest and the CNN pair (day-level and car-level).
struct EnsembleClassifier {
  ForestModel forest;
  CnnModel<float> day_cnn;
  CnnModel<float> car_cnn;
  double boundary = kDecisionBoundary;

  double rf_probability(std::span<const double> features) const {
    if (features.empty()) throw Error(ErrorKind::MissingData, "no features for car");
    return predict_proba(forest, features);
  }
  double cnn_probability(const ImageStack& s) const { return predict_cnn_ensemble(day_cnn, car_cnn, s); }
  double probability(std::span<const double> features, const ImageStack& s) const {
    return (rf_probability(features) + cnn_probability(s)) / 2.0;
  }
  Classification classify(std::span<const double> features, const ImageStack& s) const {
    return classify_probability(probability(features, s), boundary);
  }
};

// --- Stage 2 -------------------------------------------------------------------

struct CotrainConfig {
  double delta = kDefaultDelta;
  int max_iterations = 50;
  ForestParams forest;
  CnnSpec cnn;           // input_channels is set per model
  TrainConfig cnn_train;
  std::uint64_t seed = 1;

  void validate() const {
    validate_delta(delta);
    if (max_iterations < 1) throw Error(ErrorKind::ConfigError, "max_iterations must be >= 1");
    cnn.validate();
    cnn_train.validate();
  }
};

struct IterationStats {
  int iteration = 0;
  std::size_t ridesourcing = 0;
  std::size_t other = 0;
  std::size_t unlabeled = 0;
  std::size_t added = 0;
  std::size_t conflicts = 0;
};

struct CotrainResult {
  EnsembleClassifier model;
  LabeledPool pool;
  int iterations = 0;
  bool stalled = false;
  std::vector<IterationStats> history;
};

enum class ClassifierKind { Rf, Cnn };

inline std::string_view to_string(ClassifierKind k) { return k == ClassifierKind::Rf ? "rf" : "cnn"; }

namespace detail {

inline std::uint64_t iteration_seed(std::uint64_t seed, int iteration, std::uint64_t role) {
  return mix_seed(mix_seed(seed, static_cast<std::uint64_t>(iteration)), role);
}

inline ForestModel train_pool_forest(const LabeledPool& pool, const CandidateSet& data, const CotrainConfig& cfg,
                                     int iteration) {
  std::vector<std::vector<double>> X;
  std::vector<int> y;
  for (const auto& [id, p] : pool.provenance()) {
    X.push_back(data.features[data.index_of(id)]);
    y.push_back(p.label);
  }
  ForestParams fp = cfg.forest;
  fp.seed = iteration_seed(cfg.seed, iteration, 0xF0);
  return train_forest(X, y, fp);
}

inline std::pair<CnnModel<float>, CnnModel<float>> train_pool_cnns(const LabeledPool& pool, const CandidateSet& data,
                                                                   const CotrainConfig& cfg, int iteration) {
  std::vector<CnnSample<float>> day, car;
  int K = 0;
  for (const auto& [id, p] : pool.provenance()) {
    const ImageStack& s = data.images[data.index_of(id)];
    K = s.days();
    for (int k = 0; k < s.days(); ++k)
      if (!s.missing[static_cast<std::size_t>(k)]) day.push_back({s.channel_tensor<float>(k), p.label});
    car.push_back({s.tensor<float>(), p.label});
  }
  CnnSpec day_spec = cfg.cnn, car_spec = cfg.cnn;
  day_spec.input_channels = 1;
  car_spec.input_channels = K;
  TrainConfig tc = cfg.cnn_train;
  tc.seed = iteration_seed(cfg.seed, iteration, 0xDA);
  auto d = train_cnn<float>(day, day_spec, tc);
  tc.seed = iteration_seed(cfg.seed, iteration, 0xCA);
  auto c = train_cnn<float>(car, car_spec, tc);
  return {std::move(d), std::move(c)};
}

}  // namespace detail

using IterationCallback = std::function<void(const IterationStats&, const LabeledPool&, const EnsembleClassifier&)>;

/// Iterates from `first_iteration` (1 for a fresh run, k + 1 to resume after
/// a checkpoint of iteration k). Each pass retrains every model from scratch
/// on the current pool; cars whose confident labels conflict stay unlabeled.
inline CotrainResult cotrain(LabeledPool pool, const CandidateSet& data, const CotrainConfig& cfg,
                             const IterationCallback& on_iteration = {}, int first_iteration = 1) {
  cfg.validate();
  data.validate();
  if (pool.ridesourcing().empty() || pool.other().empty())
    throw Error(ErrorKind::DegenerateLabels, "co-training needs both classes in the seed pool");
  CotrainResult r;
  for (int it = first_iteration;; ++it) {
    r.model.forest = detail::train_pool_forest(pool, data, cfg, it);
    std::tie(r.model.day_cnn, r.model.car_cnn) = detail::train_pool_cnns(pool, data, cfg, it);
    r.iterations = it;
    IterationStats st{it, 0, 0, 0, 0, 0};
    const bool over_cap = it > cfg.max_iterations;
    if (!pool.unlabeled().empty() && !over_cap) {
      std::vector<std::pair<std::string, Provenance>> adds;
      for (const auto& id : pool.unlabeled()) {
        const std::size_t i = data.index_of(id);
        const double p_rf = r.model.rf_probability(data.features[i]);
        const double p_cnn = r.model.cnn_probability(data.images[i]);
        const auto l_rf = confident_label(p_rf, cfg.delta);
        const auto l_cnn = confident_label(p_cnn, cfg.delta);
        if (l_rf && l_cnn) {
          if (*l_rf != *l_cnn) {
            ++st.conflicts;
            continue;
          }
          adds.push_back({id, {*l_rf, PoolSource::CotrainBoth, it, std::max(confidence_of(p_rf), confidence_of(p_cnn))}});
        } else if (l_rf) {
          adds.push_back({id, {*l_rf, PoolSource::CotrainRf, it, confidence_of(p_rf)}});
        } else if (l_cnn) {
          adds.push_back({id, {*l_cnn, PoolSource::CotrainCnn, it, confidence_of(p_cnn)}});
        }
      }
      for (const auto& [id, p] : adds) pool.add(id, p);
      st.added = adds.size();
    }
    pool.check_invariants();
    st.ridesourcing = pool.ridesourcing().size();
    st.other = pool.other().size();
    st.unlabeled = pool.unlabeled().size();
    r.history.push_back(st);
    if (on_iteration) on_iteration(st, pool, r.model);
    if (st.added == 0) {
      r.stalled = over_cap && !pool.unlabeled().empty();
      if (r.stalled)
        std::cerr << "warning: CotrainStalled: iteration cap " << cfg.max_iterations << " reached with "
                  << pool.unlabeled().size() << " cars unlabeled\n";
      break;
    }
  }
  r.pool = std::move(pool);
  return r;
}

struct SelfTrainResult {
  ClassifierKind kind = ClassifierKind::Rf;
  ForestModel forest;
  CnnModel<float> day_cnn;
  CnnModel<float> car_cnn;
  LabeledPool pool;
  int iterations = 0;
  bool stalled = false;

  double probability(std::span<const double> features, const ImageStack& s) const {
    return kind == ClassifierKind::Rf ? predict_proba(forest, features) : predict_cnn_ensemble(day_cnn, car_cnn, s);
  }
};

/// Single-classifier variant: the classifier adds only its own confident labels.
inline SelfTrainResult self_train(LabeledPool pool, const CandidateSet& data, ClassifierKind kind,
                                  const CotrainConfig& cfg) {
  cfg.validate();
  data.validate();
  if (pool.ridesourcing().empty() || pool.other().empty())
    throw Error(ErrorKind::DegenerateLabels, "self-training needs both classes in the seed pool");
  SelfTrainResult r;
  r.kind = kind;
  const PoolSource tag = kind == ClassifierKind::Rf ? PoolSource::SelfRf : PoolSource::SelfCnn;
  for (int it = 1;; ++it) {
    if (kind == ClassifierKind::Rf)
      r.forest = detail::train_pool_forest(pool, data, cfg, it);
    else
      std::tie(r.day_cnn, r.car_cnn) = detail::train_pool_cnns(pool, data, cfg, it);
    r.iterations = it;
    const bool over_cap = it > cfg.max_iterations;
    std::vector<std::pair<std::string, Provenance>> adds;
    if (!over_cap) {
      for (const auto& id : pool.unlabeled()) {
        const std::size_t i = data.index_of(id);
        const double p = r.probability(data.features[i], data.images[i]);
        if (auto l = confident_label(p, cfg.delta)) adds.push_back({id, {*l, tag, it, confidence_of(p)}});
      }
    }
    for (const auto& [id, p] : adds) pool.add(id, p);
    pool.check_invariants();
    if (adds.empty()) {
      r.stalled = over_cap && !pool.unlabeled().empty();
      break;
    }
  }
  r.pool = std::move(pool);
  return r;
}

// --- checkpoint manifest --------------------------------------------------------
// CSV `vehicle_id,label,source,iteration,confidence`; unlabeled cars are
// listed with label `unlabeled`, source `none` and iteration -1.

inline constexpr std::string_view kManifestHeader = "vehicle_id,label,source,iteration,confidence";

inline void write_manifest(std::ostream& out, const LabeledPool& pool) {
  out << kManifestHeader << '\n';
  for (const auto& id : pool.candidates()) {
    auto it = pool.provenance().find(id);
    if (it == pool.provenance().end()) {
      out << id << ",unlabeled,none,-1,0\n";
      continue;
    }
    const auto& p = it->second;
    out << id << ',' << (p.label ? "ridesourcing" : "other") << ',' << to_string(p.source) << ',' << p.iteration
        << ',' << detail::format_double(p.confidence) << '\n';
  }
}

inline LabeledPool read_manifest(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || detail::trim_cr(line) != kManifestHeader)
    throw Error(ErrorKind::DataError, "manifest header mismatch");
  std::vector<std::string> ids;
  std::vector<std::pair<std::string, Provenance>> labeled;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    const auto f = detail::split_csv(detail::trim_cr(line));
    if (f.size() == 1 && f[0].empty()) continue;
    if (f.size() != 5) throw Error(ErrorKind::DataError, "manifest row " + std::to_string(row) + " malformed");
    const std::string id(f[0]);
    ids.push_back(id);
    if (f[1] == "unlabeled") continue;
    Provenance p;
    if (f[1] == "ridesourcing") p.label = 1;
    else if (f[1] == "other") p.label = 0;
    else throw Error(ErrorKind::DataError, "manifest row " + std::to_string(row) + " has unknown label");
    auto src = parse_pool_source(f[2]);
    if (!src || !detail::parse_number(f[3], p.iteration) || !detail::parse_number(f[4], p.confidence))
      throw Error(ErrorKind::DataError, "manifest row " + std::to_string(row) + " malformed");
    p.source = *src;
    labeled.push_back({id, p});
  }
  LabeledPool pool(ids);
  for (const auto& [id, p] : labeled) pool.add(id, p);
  return pool;
}

inline int last_iteration(const LabeledPool& pool) {
  int it = 0;
  for (const auto& [id, p] : pool.provenance()) it = std::max(it, p.iteration);
  return it;
}

/// Writes `<dir>/iter-NNN/{manifest.csv,forest.rsf,day_cnn.rcnn,car_cnn.rcnn}`.
inline std::filesystem::path save_checkpoint(const std::filesystem::path& dir, int iteration, const LabeledPool& pool,
                                             const EnsembleClassifier& model) {
  char name[32];
  std::snprintf(name, sizeof(name), "iter-%03d", iteration);
  const auto d = dir / name;
  std::filesystem::create_directories(d);
  auto open = [](const std::filesystem::path& p, std::ios::openmode mode) {
    std::ofstream f(p, mode);
    if (!f) throw Error(ErrorKind::DataError, "cannot write " + p.string());
    return f;
  };
  {
    auto f = open(d / "manifest.csv", std::ios::out);
    write_manifest(f, pool);
  }
  {
    auto f = open(d / "forest.rsf", std::ios::out);
    write_forest(f, model.forest);
  }
  {
    auto f = open(d / "day_cnn.rcnn", std::ios::binary);
    write_cnn(f, model.day_cnn);
  }
  {
    auto f = open(d / "car_cnn.rcnn", std::ios::binary);
    write_cnn(f, model.car_cnn);
  }
  return d;
}

inline EnsembleClassifier load_ensemble(const std::filesystem::path& d) {
  auto open = [](const std::filesystem::path& p, std::ios::openmode mode) {
    std::ifstream f(p, mode);
    if (!f) throw Error(ErrorKind::MissingData, "cannot read " + p.string());
    return f;
  };
  EnsembleClassifier e;
  {
    auto f = open(d / "forest.rsf", std::ios::in);
    e.forest = read_forest(f);
  }
  {
    auto f = open(d / "day_cnn.rcnn", std::ios::binary);
    e.day_cnn = read_cnn<float>(f);
  }
  {
    auto f = open(d / "car_cnn.rcnn", std::ios::binary);
    e.car_cnn = read_cnn<float>(f);
  }
  return e;
}

/// Latest `iter-NNN` checkpoint under dir, if any.
inline std::optional<std::filesystem::path> latest_checkpoint(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) return std::nullopt;
  std::optional<std::filesystem::path> best;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    const auto name = e.path().filename().string();
    if (!e.is_directory() || name.rfind("iter-", 0) != 0) continue;
    if (!std::filesystem::exists(e.path() / "manifest.csv")) continue;
    if (!best || name > best->filename().string()) best = e.path();
  }
  return best;
}

inline LabeledPool load_manifest_file(const std::filesystem::path& p) {
  std::ifstream f(p);
  if (!f) throw Error(ErrorKind::MissingData, "cannot read " + p.string());
  return read_manifest(f);
}

}  // namespace rsdetect
