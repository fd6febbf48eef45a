#pragma once

// Random forest of Gini-split binary trees with soft (leaf-fraction) votes.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <istream>
#include <numeric>
#include <ostream>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "rsdetect/error.hpp"
#include "rsdetect/trace_io.hpp"

namespace rsdetect {

/// splitmix64 finaliser; used to derive independent per-tree / per-vehicle seeds.
inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b = 0) {
  std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::uint64_t fnv1a(std::string_view s, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  double positive_fraction = 0.0;

  bool is_leaf() const { return feature < 0; }
  bool operator==(const TreeNode&) const = default;
};

struct DecisionTree {
  std::vector<TreeNode> nodes;  // nodes[0] is the root
  int max_depth = 0;

  double predict(std::span<const double> x) const {
    int i = 0;
    while (!nodes[static_cast<std::size_t>(i)].is_leaf()) {
      const auto& n = nodes[static_cast<std::size_t>(i)];
      i = x[static_cast<std::size_t>(n.feature)] <= n.threshold ? n.left : n.right;
    }
    return nodes[static_cast<std::size_t>(i)].positive_fraction;
  }

  bool operator==(const DecisionTree&) const = default;
};

struct ForestParams {
  int trees = 100;
  int max_depth = 12;
  int min_leaf = 2;
  int features_per_split = 0;  // 0 -> ceil(sqrt(d))
  bool balance_classes = true;
  std::uint64_t seed = 1;
};

struct ForestModel {
  std::vector<DecisionTree> trees;
  std::vector<std::string> feature_names;
  std::size_t num_features = 0;
  std::uint64_t seed = 0;
  double oob_error = 0.0;
  std::vector<double> importance;  // mean Gini decrease, sums to 1

  bool operator==(const ForestModel&) const = default;
};

namespace detail {

struct TreeBuilder {
  const std::vector<std::vector<double>>& X;
  const std::vector<int>& y;
  const ForestParams& params;
  std::size_t mtry;
  std::mt19937_64 rng;
  DecisionTree tree;
  std::vector<double> gini_gain;
  std::vector<std::pair<double, int>> scratch;

  static double gini(double pos, double n) {
    if (n <= 0) return 0.0;
    const double p = pos / n;
    return 1.0 - p * p - (1.0 - p) * (1.0 - p);
  }

  int build(std::vector<std::size_t>& idx, std::size_t lo, std::size_t hi, int depth) {
    const std::size_t n = hi - lo;
    double pos = 0;
    for (std::size_t i = lo; i < hi; ++i) pos += y[idx[i]];
    const int node_id = static_cast<int>(tree.nodes.size());
    tree.nodes.push_back(TreeNode{});
    tree.nodes.back().positive_fraction = pos / static_cast<double>(n);

    const auto min_leaf = static_cast<std::size_t>(std::max(1, params.min_leaf));
    if (depth >= params.max_depth || n < 2 * min_leaf || pos == 0 || pos == static_cast<double>(n)) return node_id;

    const std::size_t d = X[idx[lo]].size();
    std::vector<std::size_t> order(d);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);

    const double parent = gini(pos, static_cast<double>(n)) * static_cast<double>(n);
    double best = parent;
    int best_f = -1;
    double best_thr = 0.0;
    for (std::size_t k = 0; k < d; ++k) {
      if (k >= mtry && best_f >= 0) break;
      const std::size_t f = order[k];
      scratch.clear();
      for (std::size_t i = lo; i < hi; ++i) scratch.emplace_back(X[idx[i]][f], y[idx[i]]);
      std::sort(scratch.begin(), scratch.end());
      double lpos = 0;
      for (std::size_t i = 0; i + 1 < n; ++i) {
        lpos += scratch[i].second;
        const std::size_t nl = i + 1;
        if (nl < min_leaf || n - nl < min_leaf) continue;
        if (scratch[i].first == scratch[i + 1].first) continue;
        const double imp = gini(lpos, static_cast<double>(nl)) * static_cast<double>(nl) +
                           gini(pos - lpos, static_cast<double>(n - nl)) * static_cast<double>(n - nl);
        if (imp < best - 1e-12) {
          best = imp;
          best_f = static_cast<int>(f);
          double thr = 0.5 * (scratch[i].first + scratch[i + 1].first);
          if (!(thr < scratch[i + 1].first)) thr = scratch[i].first;
          best_thr = thr;
        }
      }
    }
    if (best_f < 0) return node_id;

    gini_gain[static_cast<std::size_t>(best_f)] += parent - best;
    auto mid_it = std::partition(idx.begin() + static_cast<std::ptrdiff_t>(lo), idx.begin() + static_cast<std::ptrdiff_t>(hi),
                                 [&](std::size_t s) { return X[s][static_cast<std::size_t>(best_f)] <= best_thr; });
    const auto mid = static_cast<std::size_t>(mid_it - idx.begin());
    tree.nodes[static_cast<std::size_t>(node_id)].feature = best_f;
    tree.nodes[static_cast<std::size_t>(node_id)].threshold = best_thr;
    const int l = build(idx, lo, mid, depth + 1);
    const int r = build(idx, mid, hi, depth + 1);
    tree.nodes[static_cast<std::size_t>(node_id)].left = l;
    tree.nodes[static_cast<std::size_t>(node_id)].right = r;
    return node_id;
  }
};

}  // namespace detail

inline ForestModel train_forest(const std::vector<std::vector<double>>& X, const std::vector<int>& y,
                                const ForestParams& params = {}, std::vector<std::string> feature_names = {}) {
  if (X.size() != y.size()) throw Error(ErrorKind::ShapeError, "train_forest: |X| != |y|");
  if (X.size() < 2) throw Error(ErrorKind::MissingData, "train_forest needs at least two samples");
  if (params.trees < 1) throw Error(ErrorKind::ConfigError, "forest needs at least one tree");
  const std::size_t d = X.front().size();
  if (d == 0) throw Error(ErrorKind::ShapeError, "train_forest: zero features");
  std::vector<std::size_t> pos_idx, neg_idx;
  for (std::size_t i = 0; i < X.size(); ++i) {
    if (X[i].size() != d) throw Error(ErrorKind::ShapeError, "train_forest: ragged feature rows");
    (y[i] ? pos_idx : neg_idx).push_back(i);
  }
  if (pos_idx.empty() || neg_idx.empty()) throw Error(ErrorKind::DegenerateLabels, "train_forest needs both classes");

  ForestModel m;
  m.num_features = d;
  m.seed = params.seed;
  m.feature_names = std::move(feature_names);
  const std::size_t mtry = params.features_per_split > 0
                               ? std::min<std::size_t>(static_cast<std::size_t>(params.features_per_split), d)
                               : static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(d))));

  const std::size_t n = X.size();
  std::vector<double> oob_sum(n, 0.0);
  std::vector<int> oob_cnt(n, 0);
  std::vector<double> importance(d, 0.0);
  const bool stratify = params.balance_classes && pos_idx.size() != neg_idx.size();

  for (int t = 0; t < params.trees; ++t) {
    detail::TreeBuilder b{X, y, params, mtry, std::mt19937_64(mix_seed(params.seed, static_cast<std::uint64_t>(t))), {}, {}, {}};
    b.gini_gain.assign(d, 0.0);
    b.tree.max_depth = params.max_depth;
    std::vector<std::size_t> sample;
    sample.reserve(n);
    if (stratify) {
      std::uniform_int_distribution<std::size_t> dp(0, pos_idx.size() - 1), dn(0, neg_idx.size() - 1);
      for (std::size_t i = 0; i < n / 2; ++i) sample.push_back(pos_idx[dp(b.rng)]);
      for (std::size_t i = n / 2; i < n; ++i) sample.push_back(neg_idx[dn(b.rng)]);
    } else {
      std::uniform_int_distribution<std::size_t> du(0, n - 1);
      for (std::size_t i = 0; i < n; ++i) sample.push_back(du(b.rng));
    }
    std::vector<std::uint8_t> in_bag(n, 0);
    for (auto s : sample) in_bag[s] = 1;
    b.build(sample, 0, sample.size(), 0);

    const double total = std::accumulate(b.gini_gain.begin(), b.gini_gain.end(), 0.0);
    if (total > 0)
      for (std::size_t f = 0; f < d; ++f) importance[f] += b.gini_gain[f] / total;
    for (std::size_t i = 0; i < n; ++i) {
      if (in_bag[i]) continue;
      oob_sum[i] += b.tree.predict(X[i]);
      ++oob_cnt[i];
    }
    m.trees.push_back(std::move(b.tree));
  }

  const double imp_total = std::accumulate(importance.begin(), importance.end(), 0.0);
  m.importance.assign(d, 0.0);
  if (imp_total > 0)
    for (std::size_t f = 0; f < d; ++f) m.importance[f] = importance[f] / imp_total;

  std::size_t wrong = 0, counted = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!oob_cnt[i]) continue;
    ++counted;
    const int pred = oob_sum[i] / oob_cnt[i] >= 0.5 ? 1 : 0;
    wrong += pred != y[i];
  }
  m.oob_error = counted ? static_cast<double>(wrong) / static_cast<double>(counted) : 0.0;
  return m;
}

/// Mean leaf positive fraction over trees.
inline double predict_proba(const ForestModel& m, std::span<const double> x) {
  if (x.size() != m.num_features)
    throw Error(ErrorKind::ShapeError, "predict_proba: expected " + std::to_string(m.num_features) + " features, got " +
                                           std::to_string(x.size()));
  double s = 0.0;
  for (const auto& t : m.trees) s += t.predict(x);
  return s / static_cast<double>(m.trees.size());
}

inline double confidence_of(double p) { return std::max(p, 1.0 - p); }

// --- model file ---------------------------------------------------------------
// Text layout, one record per line:
//   RSDFOREST 1
//   features <d> <name_0> ... <name_{d-1}>     (names may be "-" when absent)
//   seed <u64>
//   oob <double>
//   importance <d doubles>
//   trees <T>
//   tree <node_count> <max_depth>
//   <feature> <threshold> <left> <right> <positive_fraction>   (per node)
// Doubles use the shortest round-trip decimal form, so dumps round-trip bitwise.

inline void write_forest(std::ostream& out, const ForestModel& m) {
  using detail::format_double;
  out << "RSDFOREST 1\n";
  out << "features " << m.num_features;
  for (std::size_t f = 0; f < m.num_features; ++f)
    out << ' ' << (f < m.feature_names.size() && !m.feature_names[f].empty() ? m.feature_names[f] : "-");
  out << '\n';
  out << "seed " << m.seed << '\n';
  out << "oob " << format_double(m.oob_error) << '\n';
  out << "importance";
  for (double v : m.importance) out << ' ' << format_double(v);
  out << '\n';
  out << "trees " << m.trees.size() << '\n';
  for (const auto& t : m.trees) {
    out << "tree " << t.nodes.size() << ' ' << t.max_depth << '\n';
    for (const auto& n : t.nodes)
      out << n.feature << ' ' << format_double(n.threshold) << ' ' << n.left << ' ' << n.right << ' '
          << format_double(n.positive_fraction) << '\n';
  }
}

inline ForestModel read_forest(std::istream& in) {
  auto fail = [](const std::string& what) { return Error(ErrorKind::DataError, "forest file: " + what); };
  std::string tok;
  int version = 0;
  if (!(in >> tok >> version) || tok != "RSDFOREST" || version != 1) throw fail("bad magic/version");
  ForestModel m;
  if (!(in >> tok >> m.num_features) || tok != "features") throw fail("expected features");
  bool any_name = false;
  std::vector<std::string> names(m.num_features);
  for (auto& nm : names) {
    if (!(in >> nm)) throw fail("truncated names");
    if (nm == "-") nm.clear();
    else any_name = true;
  }
  if (any_name) m.feature_names = std::move(names);
  auto read_double = [&](double& v) {
    std::string s;
    if (!(in >> s) || !detail::parse_number(s, v)) throw fail("bad number");
  };
  if (!(in >> tok >> m.seed) || tok != "seed") throw fail("expected seed");
  if (!(in >> tok) || tok != "oob") throw fail("expected oob");
  read_double(m.oob_error);
  if (!(in >> tok) || tok != "importance") throw fail("expected importance");
  m.importance.resize(m.num_features);
  for (auto& v : m.importance) read_double(v);
  std::size_t ntrees = 0;
  if (!(in >> tok >> ntrees) || tok != "trees" || ntrees == 0) throw fail("expected trees");
  for (std::size_t t = 0; t < ntrees; ++t) {
    std::size_t nn = 0;
    DecisionTree tree;
    if (!(in >> tok >> nn >> tree.max_depth) || tok != "tree" || nn == 0) throw fail("expected tree");
    tree.nodes.resize(nn);
    for (auto& n : tree.nodes) {
      if (!(in >> n.feature)) throw fail("truncated node");
      read_double(n.threshold);
      if (!(in >> n.left >> n.right)) throw fail("truncated node");
      read_double(n.positive_fraction);
      if (n.feature >= static_cast<int>(m.num_features)) throw fail("feature index out of range");
      if (!n.is_leaf() && (n.left < 0 || n.right < 0 || n.left >= static_cast<int>(nn) || n.right >= static_cast<int>(nn)))
        throw fail("child index out of range");
    }
    m.trees.push_back(std::move(tree));
  }
  return m;
}

inline std::uint64_t model_hash(const ForestModel& m) {
  std::ostringstream os;
  write_forest(os, m);
  return fnv1a(os.str());
}

}  // namespace rsdetect
