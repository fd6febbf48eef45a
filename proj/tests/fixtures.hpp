#pragma once

// Small synthetic candidate sets for pipeline tests: features and stay-time
// images whose class signal can be turned down to nothing.

#include <algorithm>
#include <cstdio>
#include <random>
#include <string>
#include <vector>

#include "rsdetect/features.hpp"
#include "rsdetect/pipeline.hpp"

namespace fixture {

struct Synthetic {
  rsdetect::CandidateSet data;
  std::vector<int> truth;
};

/// `signal` in [0, 1] scales the class separation of both views; 0 makes
/// features and images independent of the label.
inline Synthetic synthetic_candidates(int n, double positive_rate, double signal, std::uint64_t seed, int days = 3,
                                      int side = 8) {
  using namespace rsdetect;
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution pos(positive_rate);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Synthetic s;
  for (int i = 0; i < n; ++i) {
    char id[16];
    std::snprintf(id, sizeof(id), "c%03d", i);
    const int y = pos(rng) ? 1 : 0;
    s.truth.push_back(y);
    s.data.ids.push_back(id);
    std::vector<double> x(kNumSharedFeatures);
    for (auto& v : x) v = noise(rng) + (y ? signal * 2.0 : 0.0);
    s.data.features.push_back(x);
    std::vector<TrajectoryImage> imgs;
    for (int k = 0; k < days; ++k) {
      TrajectoryImage img{Grid<double>(side, side, 0.0), k};
      for (int r = 0; r < side; ++r)
        for (int c = 0; c < side; ++c) {
          const bool lit = y ? c < side / 2 : c >= side / 2;
          const double base = 0.5 + (lit ? 0.4 : -0.4) * signal;
          img.pixels(r, c) = std::clamp(base + 0.25 * (u(rng) - 0.5), 0.0, 1.0) * 255.0;
        }
      imgs.push_back(img);
    }
    s.data.images.push_back(stack(imgs, days, side, side, id));
  }
  return s;
}

/// Quick-to-train models for 8x8 images.
inline rsdetect::CotrainConfig small_config(std::uint64_t seed, double delta = 0.9) {
  rsdetect::CotrainConfig c;
  c.delta = delta;
  c.seed = seed;
  c.forest.trees = 15;
  c.forest.max_depth = 4;
  c.cnn.rows = c.cnn.cols = 8;
  c.cnn.conv1_filters = 2;
  c.cnn.conv2_filters = 3;
  c.cnn.hidden = 6;
  c.cnn.dropout = 0.0;
  c.cnn_train.epochs = 4;
  c.cnn_train.patience = 2;
  c.cnn_train.batch_size = 8;
  c.cnn_train.learning_rate = 0.05;
  return c;
}

/// Seeds `per_class` labeled cars of each class from the ground truth.
inline rsdetect::LabeledPool seeded_pool(const Synthetic& s, int per_class) {
  using namespace rsdetect;
  LabeledPool pool(s.data.ids);
  int have[2] = {0, 0};
  for (std::size_t i = 0; i < s.truth.size(); ++i) {
    const int y = s.truth[i];
    if (have[y] >= per_class) continue;
    ++have[y];
    pool.add(s.data.ids[i], {y, PoolSource::Stage1, 0, 1.0});
  }
  return pool;
}

}  // namespace fixture
