#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "rsdetect/error.hpp"

namespace rsdetect {

namespace detail {

inline void check_scored(std::size_t scores, std::size_t labels) {
  if (scores != labels) throw Error(ErrorKind::ShapeError, "scores and labels differ in length");
  if (scores == 0) throw Error(ErrorKind::MissingData, "no scored items");
}

}  // namespace detail

/// Mann-Whitney AUC from average ranks; tied scores share their rank.
inline double auc(std::span<const double> scores, std::span<const int> labels) {
  detail::check_scored(scores.size(), labels.size());
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // ranks doubled so tie averages stay integral
  std::int64_t rank_sum2 = 0, pos = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const auto twice_avg = static_cast<std::int64_t>(i + 1 + j);  // 2 * mean of ranks i+1..j
    for (std::size_t k = i; k < j; ++k)
      if (labels[order[k]]) {
        rank_sum2 += twice_avg;
        ++pos;
      }
    i = j;
  }
  const std::int64_t neg = static_cast<std::int64_t>(n) - pos;
  if (pos == 0 || neg == 0) throw Error(ErrorKind::DegenerateLabels, "AUC needs both classes");
  const std::int64_t u2 = rank_sum2 - pos * (pos + 1);
  return static_cast<double>(u2) / (2.0 * static_cast<double>(pos) * static_cast<double>(neg));
}

inline double accuracy(std::span<const double> scores, std::span<const int> labels, double boundary = 0.5) {
  detail::check_scored(scores.size(), labels.size());
  std::size_t ok = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) ok += ((scores[i] >= boundary) == (labels[i] != 0));
  return static_cast<double>(ok) / static_cast<double>(scores.size());
}

/// Number of items in the top k percent of n: ceil(k * n / 100), at least 1.
inline std::size_t top_k_count(double k_percent, std::size_t n) {
  const auto m = static_cast<std::size_t>(std::ceil(k_percent * static_cast<double>(n) / 100.0));
  return std::clamp<std::size_t>(m, 1, n);
}

/// Indices ordered by descending score, ties by ascending id.
inline std::vector<std::size_t> rank_by_score(std::span<const double> scores, std::span<const std::string> ids) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return ids[a] < ids[b];
  });
  return order;
}

inline double top_k_precision(std::span<const double> scores, std::span<const int> labels,
                              std::span<const std::string> ids, double k_percent) {
  detail::check_scored(scores.size(), labels.size());
  if (ids.size() != scores.size()) throw Error(ErrorKind::ShapeError, "ids and scores differ in length");
  if (!(k_percent > 0.0 && k_percent <= 100.0)) throw Error(ErrorKind::ConfigError, "k must be in (0, 100]");
  const auto order = rank_by_score(scores, ids);
  const std::size_t m = top_k_count(k_percent, scores.size());
  std::size_t hits = 0;
  for (std::size_t i = 0; i < m; ++i) hits += labels[order[i]] != 0;
  return static_cast<double>(hits) / static_cast<double>(m);
}

struct Confusion {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;

  std::size_t total() const { return tp + fp + tn + fn; }
};

inline Confusion confusion(std::span<const double> scores, std::span<const int> labels, double boundary = 0.5) {
  detail::check_scored(scores.size(), labels.size());
  Confusion c;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool pred = scores[i] >= boundary, truth = labels[i] != 0;
    if (pred && truth) ++c.tp;
    else if (pred) ++c.fp;
    else if (truth) ++c.fn;
    else ++c.tn;
  }
  return c;
}

}  // namespace rsdetect
