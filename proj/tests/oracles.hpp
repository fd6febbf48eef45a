#pragma once

// Straightforward reference implementations used only by tests. They share no
// code with the library.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

namespace oracle {

using Mat = std::vector<std::vector<int>>;

inline Mat shift(const Mat& m, int dr, int dc) {
  const int R = static_cast<int>(m.size()), C = static_cast<int>(m[0].size());
  Mat out(R, std::vector<int>(C, 0));
  for (int r = 0; r < R; ++r)
    for (int c = 0; c < C; ++c) {
      const int nr = r + dr, nc = c + dc;
      if (nr >= 0 && nr < R && nc >= 0 && nc < C) out[nr][nc] = m[r][c];
    }
  return out;
}

inline Mat pool(const Mat& m) {
  const int R = static_cast<int>(m.size()), C = static_cast<int>(m[0].size());
  Mat out((R + 1) / 2, std::vector<int>((C + 1) / 2, 0));
  for (int r = 0; r < R; ++r)
    for (int c = 0; c < C; ++c) out[r / 2][c / 2] = std::max(out[r / 2][c / 2], m[r][c]);
  return out;
}

inline double jaccard(const Mat& a, const Mat& b) {
  int inter = 0, uni = 0;
  for (std::size_t r = 0; r < a.size(); ++r)
    for (std::size_t c = 0; c < a[r].size(); ++c) {
      inter += (a[r][c] && b[r][c]);
      uni += (a[r][c] || b[r][c]);
    }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

inline double shifted_mean(const Mat& c1, const Mat& c2) {
  const Mat l = shift(c1, 0, -1), r = shift(c1, 0, 1), u = shift(c1, -1, 0), d = shift(c1, 1, 0);
  return (jaccard(c1, c2) + jaccard(l, c2) + jaccard(r, c2) + jaccard(u, c2) + jaccard(d, c2)) / 5.0;
}

inline double robust_similarity(const Mat& c1, const Mat& c2) {
  const double sim1 = shifted_mean(c1, c2);
  const double sim2 = shifted_mean(pool(c1), pool(c2));
  return (sim1 + sim2) / 2.0;
}

/// Pairwise AUC: (concordant + ties/2) / (P * N).
inline double auc(const std::vector<double>& s, const std::vector<int>& y) {
  double num = 0.0;
  long P = 0, N = 0;
  for (int v : y) (v ? P : N)++;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (!y[i] || y[j]) continue;
      if (s[i] > s[j]) num += 1.0;
      else if (s[i] == s[j]) num += 0.5;
    }
  return num / (static_cast<double>(P) * static_cast<double>(N));
}

inline double accuracy(const std::vector<double>& s, const std::vector<int>& y, double boundary) {
  long ok = 0;
  for (std::size_t i = 0; i < s.size(); ++i) ok += ((s[i] >= boundary ? 1 : 0) == y[i]);
  return static_cast<double>(ok) / static_cast<double>(s.size());
}

/// Selection by repeated arg-max with the id tie-break.
inline double top_k_precision(const std::vector<double>& s, const std::vector<int>& y,
                              const std::vector<std::string>& ids, double k_percent) {
  const std::size_t n = s.size();
  const auto m = static_cast<std::size_t>(std::ceil(k_percent * static_cast<double>(n) / 100.0));
  std::vector<bool> taken(n, false);
  long pos = 0;
  for (std::size_t pick = 0; pick < std::max<std::size_t>(1, std::min(m, n)); ++pick) {
    std::size_t best = n;
    for (std::size_t i = 0; i < n; ++i) {
      if (taken[i]) continue;
      if (best == n || s[i] > s[best] || (s[i] == s[best] && ids[i] < ids[best])) best = i;
    }
    taken[best] = true;
    pos += y[best];
  }
  return static_cast<double>(pos) / static_cast<double>(std::max<std::size_t>(1, std::min(m, n)));
}

}  // namespace oracle
