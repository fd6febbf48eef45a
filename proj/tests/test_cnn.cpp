#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "rsdetect/cnn.hpp"

using namespace rsdetect;

namespace {

CnnSpec mini_spec(int channels = 1) {
  CnnSpec s;
  s.input_channels = channels;
  s.rows = 6;
  s.cols = 6;
  s.conv1_filters = 2;
  s.conv2_filters = 2;
  s.hidden = 4;
  return s;
}

std::vector<double> random_input(std::mt19937_64& rng, std::size_t n) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> x(n);
  for (auto& v : x) v = u(rng);
  return x;
}

double loss_at(const CnnModel<double>& m, const std::vector<double>& x, double y) {
  return bce_loss(forward(m, std::span<const double>(x), false), y);
}

// Bright left half vs bright right half, with noise.
std::vector<CnnSample<float>> halves_dataset(int n, std::uint64_t seed, int rows = 24, int cols = 24) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> noise(0.0f, 0.3f);
  std::vector<CnnSample<float>> out;
  for (int i = 0; i < n; ++i) {
    CnnSample<float> s;
    s.y = i % 2;
    s.x.resize(static_cast<std::size_t>(rows) * cols);
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c) {
        const bool bright = s.y ? c < cols / 2 : c >= cols / 2;
        s.x[static_cast<std::size_t>(r) * cols + c] = std::min(1.0f, (bright ? 0.7f : 0.0f) + noise(rng));
      }
    out.push_back(std::move(s));
  }
  return out;
}

ImageStack stack_from(const std::vector<std::vector<float>>& channels, int rows, int cols) {
  std::vector<TrajectoryImage> imgs;
  for (std::size_t k = 0; k < channels.size(); ++k) {
    TrajectoryImage img{Grid<double>(rows, cols, 0.0), static_cast<int>(k)};
    for (std::size_t i = 0; i < channels[k].size(); ++i) img.pixels.data[i] = channels[k][i] * 255.0;
    imgs.push_back(img);
  }
  return stack(imgs, static_cast<int>(channels.size()), rows, cols);
}

}  // namespace

TEST(CnnForward, ZeroOutputLayerGivesHalf) {
  auto m = init_cnn<double>(CnnSpec{}, 1);
  const CnnLayout L(m.spec);
  for (std::size_t i = L.w4; i < L.total; ++i) m.params[i] = 0.0;
  std::mt19937_64 rng(1);
  const auto x = random_input(rng, m.spec.input_size());
  EXPECT_EQ(forward(m, std::span<const double>(x), false), 0.5);
  EXPECT_EQ(forward(m, std::span<const double>(x), true, &rng), 0.5);
}

TEST(CnnForward, EvalModeIsDeterministicAndZeroImageGivesHalf) {
  const auto m = init_cnn<float>(CnnSpec{}, 2);
  std::mt19937_64 rng(2);
  std::vector<float> x(m.spec.input_size());
  for (auto& v : x) v = static_cast<float>(std::uniform_real_distribution<double>(0, 1)(rng));
  const float a = forward(m, std::span<const float>(x), false);
  const float b = forward(m, std::span<const float>(x), false);
  EXPECT_EQ(a, b);
  const std::vector<float> zeros(m.spec.input_size(), 0.0f);
  EXPECT_EQ(forward(m, std::span<const float>(zeros), false), 0.5f);
  const std::vector<float> wrong(10, 0.0f);
  EXPECT_THROW(forward(m, std::span<const float>(wrong), false), Error);
}

TEST(CnnBackward, MatchesCentralDifferences) {
  const double eps = 1e-5;
  double max_rel = 0.0;
  int checked = 0;
  std::mt19937_64 rng(12345);
  for (int channels : {1, 3}) {
    for (int draw = 0; draw < 2; ++draw) {
      auto m = init_cnn<double>(mini_spec(channels), 100 + draw + 10 * channels);
      // nonzero biases so no unit sits exactly at a relu kink
      std::uniform_real_distribution<double> small(-0.1, 0.1);
      for (auto& p : m.params) p += small(rng) * 0.01;
      const auto x = random_input(rng, m.spec.input_size());
      const double y = draw % 2;
      const auto g = gradient(m, std::span<const double>(x), y);
      for (std::size_t i = 0; i < m.params.size(); ++i) {
        auto plus = m, minus = m;
        plus.params[i] += eps;
        minus.params[i] -= eps;
        const double num = (loss_at(plus, x, y) - loss_at(minus, x, y)) / (2 * eps);
        const double rel = std::abs(num - g[i]) / std::max({std::abs(num), std::abs(g[i]), 1e-6});
        max_rel = std::max(max_rel, rel);
        ++checked;
      }
    }
  }
  EXPECT_GE(checked, 200);
  EXPECT_LT(max_rel, 1e-4);
}

TEST(CnnBackward, OutputBiasGradientVanishesAtTarget) {
  const auto m = init_cnn<double>(mini_spec(), 5);
  std::mt19937_64 rng(5);
  const auto x = random_input(rng, m.spec.input_size());
  const double p = forward(m, std::span<const double>(x), false);
  const auto g = gradient(m, std::span<const double>(x), p);
  EXPECT_EQ(g[CnnLayout(m.spec).b4], 0.0);
}

TEST(CnnBackward, DuplicatedSampleDoublesGradient) {
  const auto m = init_cnn<double>(mini_spec(), 6);
  std::mt19937_64 rng(6);
  const auto x = random_input(rng, m.spec.input_size());
  const auto single = gradient(m, std::span<const double>(x), 1.0);
  CnnTrace<double> t;
  forward(m, std::span<const double>(x), false, nullptr, &t);
  std::vector<double> batch(m.params.size(), 0.0);
  backward(m, std::span<const double>(x), 1.0, t, std::span<double>(batch));
  backward(m, std::span<const double>(x), 1.0, t, std::span<double>(batch));
  for (std::size_t i = 0; i < batch.size(); ++i) EXPECT_EQ(batch[i], 2.0 * single[i]);
}

TEST(CnnBackward, MaxPoolRoutesGradientToArgmax) {
  std::mt19937_64 rng(8);
  std::uniform_int_distribution<int> q(-64, 64);
  for (int trial = 0; trial < 50; ++trial) {
    const int R = 5 + trial % 4, C = 4 + trial % 5, ch = 2;
    std::vector<double> in(static_cast<std::size_t>(ch) * R * C);
    for (auto& v : in) v = q(rng) / 8.0;
    const int R2 = (R + 1) / 2, C2 = (C + 1) / 2;
    std::vector<double> out(static_cast<std::size_t>(ch) * R2 * C2);
    std::vector<int> arg(out.size());
    detail::maxpool2_forward(in.data(), ch, R, C, out.data(), arg.data());
    std::vector<double> dout(out.size());
    for (auto& v : dout) v = q(rng) / 8.0;
    std::vector<double> din(in.size(), 0.0);
    maxpool2_backward<double>(dout, arg, din);
    double s_in = 0, s_out = 0;
    for (double v : din) s_in += v;
    for (double v : dout) s_out += v;
    EXPECT_EQ(s_in, s_out);
    for (std::size_t o = 0; o < out.size(); ++o) EXPECT_EQ(in[static_cast<std::size_t>(arg[o])], out[o]);
    for (std::size_t i = 0; i < din.size(); ++i)
      if (din[i] != 0.0) EXPECT_NE(std::find(arg.begin(), arg.end(), static_cast<int>(i)), arg.end());
  }
}

TEST(CnnForward, InvertedDropoutExpectation) {
  const auto m = init_cnn<double>(CnnSpec{}, 9);
  std::mt19937_64 rng(9);
  const auto x = random_input(rng, m.spec.input_size());
  CnnTrace<double> ref;
  forward(m, std::span<const double>(x), false, nullptr, &ref);
  std::vector<double> mean(ref.h.size(), 0.0);
  double logit_mean = 0.0;
  const int draws = 10000;
  CnnTrace<double> t;
  for (int i = 0; i < draws; ++i) {
    forward(m, std::span<const double>(x), true, &rng, &t);
    for (std::size_t u = 0; u < mean.size(); ++u) mean[u] += t.h[u] / draws;
    logit_mean += t.logit / draws;
  }
  double num = 0, den = 0;
  for (std::size_t u = 0; u < mean.size(); ++u) {
    num += (mean[u] - ref.h[u]) * (mean[u] - ref.h[u]);
    den += ref.h[u] * ref.h[u];
  }
  ASSERT_GT(den, 0.0);
  EXPECT_LT(std::sqrt(num / den), 0.02);
  EXPECT_NEAR(logit_mean, ref.logit, 0.02 * std::max(1.0, std::abs(ref.logit)));
}

TEST(CnnTrain, LearnsSeparableHalves) {
  const auto data = halves_dataset(100, 3);
  TrainConfig cfg;
  cfg.epochs = 30;
  cfg.seed = 17;
  const auto m = train_cnn(data, CnnSpec{}, cfg);
  const auto holdout = halves_dataset(100, 4);
  int correct = 0;
  for (const auto& s : holdout) correct += (forward(m, std::span<const float>(s.x), false) >= 0.5f) == (s.y == 1);
  EXPECT_GE(correct, 95);

  int nonincreasing = 0;
  for (std::size_t e = 1; e < m.train_losses.size(); ++e) nonincreasing += m.train_losses[e] <= m.train_losses[e - 1];
  ASSERT_GT(m.train_losses.size(), 1u);
  EXPECT_GE(nonincreasing, static_cast<int>(0.8 * static_cast<double>(m.train_losses.size() - 1)));

  const auto again = train_cnn(data, CnnSpec{}, cfg);
  EXPECT_EQ(again.train_losses, m.train_losses);
  EXPECT_EQ(again.params, m.params);
}

TEST(CnnTrain, RejectsSingleClassAndBadConfig) {
  auto data = halves_dataset(10, 1);
  for (auto& s : data) s.y = 1;
  try {
    train_cnn(data, CnnSpec{}, TrainConfig{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::DegenerateLabels);
  }
  TrainConfig bad;
  bad.learning_rate = 0;
  EXPECT_THROW(train_cnn(halves_dataset(10, 1), CnnSpec{}, bad), Error);
}

TEST(CnnTrain, DivergenceIsReported) {
  TrainConfig cfg;
  cfg.learning_rate = 1e30;
  cfg.epochs = 5;
  try {
    train_cnn(halves_dataset(40, 2), CnnSpec{}, cfg);
    FAIL() << "expected TrainingDiverged";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::TrainingDiverged);
  }
}

TEST(CnnPredict, DayLevelAveragesPresentDays) {
  const auto m = init_cnn<float>(CnnSpec{}, 21);
  const auto data = halves_dataset(3, 5);
  auto s = stack_from({data[0].x, data[1].x, data[2].x}, 24, 24);
  const double p0 = forward(m, std::span<const float>(s.channel_tensor<float>(0)), false);
  const double p1 = forward(m, std::span<const float>(s.channel_tensor<float>(1)), false);
  const double p2 = forward(m, std::span<const float>(s.channel_tensor<float>(2)), false);
  EXPECT_NEAR(predict_day_level(m, s), (p0 + p1 + p2) / 3.0, 1e-12);
  s.missing[1] = 1;
  EXPECT_NEAR(predict_day_level(m, s), (p0 + p2) / 2.0, 1e-12);

  auto one = stack_from({data[0].x}, 24, 24);
  EXPECT_DOUBLE_EQ(predict_day_level(m, one), p0);

  auto none = stack({}, 3, 24, 24, "ghost");
  EXPECT_THROW(predict_day_level(m, none), Error);
}

TEST(CnnPredict, CarLevelShapesAndEnsemble) {
  CnnSpec car;
  car.input_channels = 3;
  auto cm = init_cnn<float>(car, 22);
  const auto dm = init_cnn<float>(CnnSpec{}, 23);
  const auto data = halves_dataset(3, 6);
  const auto s = stack_from({data[0].x, data[1].x, data[2].x}, 24, 24);
  EXPECT_EQ(predict_car_level(cm, s), predict_car_level(cm, s));
  EXPECT_THROW(predict_car_level(dm, s), Error);

  const auto zero = stack_from({std::vector<float>(576, 0.0f), std::vector<float>(576, 0.0f),
                                std::vector<float>(576, 0.0f)},
                               24, 24);
  EXPECT_EQ(predict_car_level(cm, zero), 0.5);

  const double d = predict_day_level(dm, s), c = predict_car_level(cm, s);
  const double e = predict_cnn_ensemble(dm, cm, s);
  EXPECT_DOUBLE_EQ(e, (d + c) / 2.0);
  EXPECT_GE(e, std::min(d, c));
  EXPECT_LE(e, std::max(d, c));
}

TEST(CnnPredict, CarLevelDayOrderMatters) {
  // Positive cars are bright on day 0, negatives on day 2.
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<float> noise(0.0f, 0.2f);
  CnnSpec spec;
  spec.input_channels = 3;
  spec.rows = spec.cols = 8;
  std::vector<CnnSample<float>> data;
  for (int i = 0; i < 80; ++i) {
    CnnSample<float> s;
    s.y = i % 2;
    s.x.resize(spec.input_size());
    for (auto& v : s.x) v = noise(rng);
    const int bright = s.y ? 0 : 2;
    for (int p = 0; p < 64; ++p) s.x[static_cast<std::size_t>(bright) * 64 + p] += 0.7f;
    data.push_back(std::move(s));
  }
  TrainConfig cfg;
  cfg.epochs = 30;
  const auto m = train_cnn(data, spec, cfg);
  std::vector<float> ch0(64, 0.8f), ch1(64, 0.1f), ch2(64, 0.1f);
  const auto s = stack_from({ch0, ch1, ch2}, 8, 8);
  const auto permuted = stack_from({ch2, ch1, ch0}, 8, 8);
  EXPECT_GT(predict_car_level(m, s), 0.5);
  EXPECT_LT(predict_car_level(m, permuted), 0.5);
}

TEST(CnnModelFile, RoundTrip) {
  auto m = init_cnn<float>(CnnSpec{}, 77);
  m.seed = 0x1234567890ULL;
  std::ostringstream out;
  write_cnn(out, m);
  std::istringstream in(out.str());
  const auto back = read_cnn<float>(in);
  EXPECT_EQ(back.spec, m.spec);
  EXPECT_EQ(back.params, m.params);
  EXPECT_EQ(back.seed, m.seed);
  std::istringstream junk("NOPE");
  EXPECT_THROW(read_cnn<float>(junk), Error);
}
