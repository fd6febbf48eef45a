#pragma once

// Small convolutional network over trajectory images:
//   conv3x3(c1, same) -> relu -> maxpool2 -> conv3x3(c2, same) -> relu -> maxpool2
//   -> dense(h) -> relu -> dropout -> dense(1) -> sigmoid
// Forward, analytic backward (binary cross-entropy) and a momentum-SGD trainer.
// Scalar is a template parameter so the gradient check can run in double.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "rsdetect/error.hpp"
#include "rsdetect/forest.hpp"
#include "rsdetect/image.hpp"

namespace rsdetect {

struct CnnSpec {
  int input_channels = 1;
  int rows = 24;
  int cols = 24;
  int conv1_filters = 8;
  int conv2_filters = 16;
  int hidden = 64;
  double dropout = 0.5;

  int pool1_rows() const { return (rows + 1) / 2; }
  int pool1_cols() const { return (cols + 1) / 2; }
  int pool2_rows() const { return (pool1_rows() + 1) / 2; }
  int pool2_cols() const { return (pool1_cols() + 1) / 2; }
  int flat_size() const { return conv2_filters * pool2_rows() * pool2_cols(); }
  std::size_t input_size() const { return static_cast<std::size_t>(input_channels) * rows * cols; }

  void validate() const {
    if (input_channels < 1 || rows < 1 || cols < 1 || conv1_filters < 1 || conv2_filters < 1 || hidden < 1)
      throw Error(ErrorKind::ConfigError, "CNN dimensions must be positive");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw Error(ErrorKind::ConfigError, "dropout must be in [0, 1)");
  }

  bool operator==(const CnnSpec&) const = default;
};

/// Offsets of each parameter tensor inside the flat parameter vector.
struct CnnLayout {
  std::size_t w1 = 0, b1 = 0, w2 = 0, b2 = 0, w3 = 0, b3 = 0, w4 = 0, b4 = 0, total = 0;

  explicit CnnLayout(const CnnSpec& s) {
    std::size_t o = 0;
    w1 = o; o += static_cast<std::size_t>(s.conv1_filters) * s.input_channels * 9;
    b1 = o; o += static_cast<std::size_t>(s.conv1_filters);
    w2 = o; o += static_cast<std::size_t>(s.conv2_filters) * s.conv1_filters * 9;
    b2 = o; o += static_cast<std::size_t>(s.conv2_filters);
    w3 = o; o += static_cast<std::size_t>(s.hidden) * s.flat_size();
    b3 = o; o += static_cast<std::size_t>(s.hidden);
    w4 = o; o += static_cast<std::size_t>(s.hidden);
    b4 = o; o += 1;
    total = o;
  }
};

template <typename T>
struct CnnModel {
  CnnSpec spec;
  std::vector<T> params;  // layout per CnnLayout
  // training metadata
  std::uint64_t seed = 0;
  int epochs_run = 0;
  std::vector<double> train_losses;
  std::vector<double> val_losses;

  CnnModel() = default;
  explicit CnnModel(const CnnSpec& s) : spec(s), params(CnnLayout(s).total, T(0)) { s.validate(); }

  CnnLayout layout() const { return CnnLayout(spec); }
};

/// Fan-in scaled uniform initialisation; biases start at zero.
template <typename T>
CnnModel<T> init_cnn(const CnnSpec& spec, std::uint64_t seed) {
  CnnModel<T> m(spec);
  m.seed = seed;
  const CnnLayout L(spec);
  std::mt19937_64 rng(mix_seed(seed, 0xC0FFEE));
  auto fill = [&](std::size_t from, std::size_t to, double fan_in) {
    const double bound = std::sqrt(6.0 / fan_in);
    std::uniform_real_distribution<double> u(-bound, bound);
    for (std::size_t i = from; i < to; ++i) m.params[i] = static_cast<T>(u(rng));
  };
  fill(L.w1, L.b1, spec.input_channels * 9.0);
  fill(L.w2, L.b2, spec.conv1_filters * 9.0);
  fill(L.w3, L.b3, static_cast<double>(spec.flat_size()));
  fill(L.w4, L.b4, static_cast<double>(spec.hidden));
  return m;
}

/// Intermediate values kept for backward.
template <typename T>
struct CnnTrace {
  std::vector<T> a1;        // conv1 output after relu, c1 x R x C
  std::vector<T> p1;        // pool1, c1 x R1 x C1
  std::vector<int> arg1;    // index into a1 per p1 element
  std::vector<T> a2;        // conv2 output after relu, c2 x R1 x C1
  std::vector<T> p2;        // pool2 (flattened), c2 x R2 x C2
  std::vector<int> arg2;
  std::vector<T> h_pre;     // dense pre-activation
  std::vector<T> h;         // after relu and dropout
  std::vector<T> keep;      // dropout scale per hidden unit (1 in eval mode)
  T logit = T(0);
  T prob = T(0);
};

namespace detail {

// Same-padded 3x3 convolution, accumulating into `out` (already holding biases).
template <typename T>
void conv3x3_forward(const T* in, int in_ch, int R, int C, const T* w, int out_ch, T* out) {
  for (int o = 0; o < out_ch; ++o) {
    T* dst = out + static_cast<std::size_t>(o) * R * C;
    for (int c = 0; c < in_ch; ++c) {
      const T* src = in + static_cast<std::size_t>(c) * R * C;
      const T* k = w + (static_cast<std::size_t>(o) * in_ch + c) * 9;
      for (int ki = 0; ki < 3; ++ki) {
        const int di = ki - 1;
        const int i0 = std::max(0, -di), i1 = std::min(R, R - di);
        for (int kj = 0; kj < 3; ++kj) {
          const int dj = kj - 1;
          const int j0 = std::max(0, -dj), j1 = std::min(C, C - dj);
          const T wv = k[ki * 3 + kj];
          if (wv == T(0)) continue;
          for (int i = i0; i < i1; ++i) {
            T* drow = dst + static_cast<std::size_t>(i) * C;
            const T* srow = src + static_cast<std::size_t>(i + di) * C + dj;
            for (int j = j0; j < j1; ++j) drow[j] += wv * srow[j];
          }
        }
      }
    }
  }
}

// Gradients of a same-padded 3x3 convolution. d_in may be null.
template <typename T>
void conv3x3_backward(const T* in, int in_ch, int R, int C, const T* w, int out_ch, const T* d_out, T* d_w, T* d_b,
                      T* d_in) {
  for (int o = 0; o < out_ch; ++o) {
    const T* g = d_out + static_cast<std::size_t>(o) * R * C;
    T bsum = T(0);
    for (int i = 0; i < R * C; ++i) bsum += g[i];
    d_b[o] += bsum;
    for (int c = 0; c < in_ch; ++c) {
      const T* src = in + static_cast<std::size_t>(c) * R * C;
      T* dsrc = d_in ? d_in + static_cast<std::size_t>(c) * R * C : nullptr;
      const std::size_t kbase = (static_cast<std::size_t>(o) * in_ch + c) * 9;
      for (int ki = 0; ki < 3; ++ki) {
        const int di = ki - 1;
        const int i0 = std::max(0, -di), i1 = std::min(R, R - di);
        for (int kj = 0; kj < 3; ++kj) {
          const int dj = kj - 1;
          const int j0 = std::max(0, -dj), j1 = std::min(C, C - dj);
          T acc = T(0);
          const T wv = w[kbase + ki * 3 + kj];
          for (int i = i0; i < i1; ++i) {
            const T* grow = g + static_cast<std::size_t>(i) * C;
            const T* srow = src + static_cast<std::size_t>(i + di) * C + dj;
            for (int j = j0; j < j1; ++j) acc += grow[j] * srow[j];
            if (dsrc) {
              T* drow = dsrc + static_cast<std::size_t>(i + di) * C + dj;
              for (int j = j0; j < j1; ++j) drow[j] += wv * grow[j];
            }
          }
          d_w[kbase + ki * 3 + kj] += acc;
        }
      }
    }
  }
}

// 2x2 max pooling with ceil sizing; records the flat argmax index.
template <typename T>
void maxpool2_forward(const T* in, int ch, int R, int C, T* out, int* arg) {
  const int R2 = (R + 1) / 2, C2 = (C + 1) / 2;
  for (int c = 0; c < ch; ++c) {
    const std::size_t base = static_cast<std::size_t>(c) * R * C;
    for (int i = 0; i < R2; ++i) {
      for (int j = 0; j < C2; ++j) {
        int best = static_cast<int>(base) + (2 * i) * C + 2 * j;
        for (int a = 2 * i; a < std::min(R, 2 * i + 2); ++a)
          for (int b = 2 * j; b < std::min(C, 2 * j + 2); ++b) {
            const int idx = static_cast<int>(base) + a * C + b;
            if (in[idx] > in[best]) best = idx;
          }
        const std::size_t o = (static_cast<std::size_t>(c) * R2 + i) * C2 + j;
        out[o] = in[best];
        arg[o] = best;
      }
    }
  }
}

template <typename T>
T sigmoid(T z) {
  if (z >= T(0)) return T(1) / (T(1) + std::exp(-z));
  const T e = std::exp(z);
  return e / (T(1) + e);
}

}  // namespace detail

/// Routes each pooled gradient to its argmax position.
template <typename T>
void maxpool2_backward(std::span<const T> d_out, std::span<const int> arg, std::span<T> d_in) {
  for (std::size_t o = 0; o < d_out.size(); ++o) d_in[static_cast<std::size_t>(arg[o])] += d_out[o];
}

/// Full forward pass. With `train_mode` the hidden layer uses inverted dropout
/// drawn from `rng` (or the explicit `keep` scales when provided).
template <typename T>
T forward(const CnnModel<T>& m, std::span<const T> x, bool train_mode, std::mt19937_64* rng = nullptr,
          CnnTrace<T>* trace = nullptr, const std::vector<T>* fixed_keep = nullptr) {
  const CnnSpec& s = m.spec;
  if (x.size() != s.input_size())
    throw Error(ErrorKind::ShapeError, "CNN input has " + std::to_string(x.size()) + " values, expected " +
                                           std::to_string(s.input_size()));
  CnnTrace<T> local;
  CnnTrace<T>& t = trace ? *trace : local;
  const CnnLayout L(s);
  const T* P = m.params.data();
  const int R = s.rows, C = s.cols, R1 = s.pool1_rows(), C1 = s.pool1_cols();

  t.a1.assign(static_cast<std::size_t>(s.conv1_filters) * R * C, T(0));
  for (int o = 0; o < s.conv1_filters; ++o)
    std::fill_n(t.a1.begin() + static_cast<std::ptrdiff_t>(o) * R * C, R * C, P[L.b1 + o]);
  detail::conv3x3_forward(x.data(), s.input_channels, R, C, P + L.w1, s.conv1_filters, t.a1.data());
  for (auto& v : t.a1) v = v > T(0) ? v : T(0);

  t.p1.assign(static_cast<std::size_t>(s.conv1_filters) * R1 * C1, T(0));
  t.arg1.assign(t.p1.size(), 0);
  detail::maxpool2_forward(t.a1.data(), s.conv1_filters, R, C, t.p1.data(), t.arg1.data());

  t.a2.assign(static_cast<std::size_t>(s.conv2_filters) * R1 * C1, T(0));
  for (int o = 0; o < s.conv2_filters; ++o)
    std::fill_n(t.a2.begin() + static_cast<std::ptrdiff_t>(o) * R1 * C1, R1 * C1, P[L.b2 + o]);
  detail::conv3x3_forward(t.p1.data(), s.conv1_filters, R1, C1, P + L.w2, s.conv2_filters, t.a2.data());
  for (auto& v : t.a2) v = v > T(0) ? v : T(0);

  t.p2.assign(static_cast<std::size_t>(s.flat_size()), T(0));
  t.arg2.assign(t.p2.size(), 0);
  detail::maxpool2_forward(t.a2.data(), s.conv2_filters, R1, C1, t.p2.data(), t.arg2.data());

  const std::size_t F = t.p2.size();
  t.h_pre.assign(static_cast<std::size_t>(s.hidden), T(0));
  t.h.assign(static_cast<std::size_t>(s.hidden), T(0));
  t.keep.assign(static_cast<std::size_t>(s.hidden), T(1));
  if (train_mode && s.dropout > 0.0) {
    if (fixed_keep) {
      t.keep = *fixed_keep;
    } else {
      if (!rng) throw Error(ErrorKind::ConfigError, "train-mode forward needs a random generator");
      std::bernoulli_distribution drop(s.dropout);
      const T scale = static_cast<T>(1.0 / (1.0 - s.dropout));
      for (auto& k : t.keep) k = drop(*rng) ? T(0) : scale;
    }
  }
  T logit = P[L.b4];
  for (int u = 0; u < s.hidden; ++u) {
    const T* w = P + L.w3 + static_cast<std::size_t>(u) * F;
    T acc = P[L.b3 + u];
    for (std::size_t f = 0; f < F; ++f) acc += w[f] * t.p2[f];
    t.h_pre[u] = acc;
    t.h[u] = (acc > T(0) ? acc : T(0)) * t.keep[u];
    logit += P[L.w4 + u] * t.h[u];
  }
  t.logit = logit;
  t.prob = detail::sigmoid(logit);
  return t.prob;
}

/// Binary cross-entropy, clamped away from log(0).
template <typename T>
double bce_loss(T p, double target) {
  const double q = std::clamp(static_cast<double>(p), 1e-12, 1.0 - 1e-12);
  return -(target * std::log(q) + (1.0 - target) * std::log(1.0 - q));
}

/// Accumulates weight * d(BCE)/d(params) into `grad` using the trace of a
/// preceding forward pass on the same input. `target` may be a soft label.
template <typename T>
void backward(const CnnModel<T>& m, std::span<const T> x, T target, const CnnTrace<T>& t, std::span<T> grad,
              T weight = T(1)) {
  const CnnSpec& s = m.spec;
  const CnnLayout L(s);
  if (grad.size() != L.total) throw Error(ErrorKind::ShapeError, "gradient buffer size mismatch");
  const T* P = m.params.data();
  T* G = grad.data();
  const int R = s.rows, C = s.cols, R1 = s.pool1_rows(), C1 = s.pool1_cols();
  const std::size_t F = t.p2.size();

  const T dlogit = (t.prob - target) * weight;
  G[L.b4] += dlogit;
  std::vector<T> dp2(F, T(0));
  for (int u = 0; u < s.hidden; ++u) {
    G[L.w4 + u] += dlogit * t.h[u];
    const T dh = dlogit * P[L.w4 + u] * t.keep[u];
    const T dpre = t.h_pre[u] > T(0) ? dh : T(0);
    if (dpre == T(0)) continue;
    G[L.b3 + u] += dpre;
    T* gw = G + L.w3 + static_cast<std::size_t>(u) * F;
    const T* w = P + L.w3 + static_cast<std::size_t>(u) * F;
    for (std::size_t f = 0; f < F; ++f) {
      gw[f] += dpre * t.p2[f];
      dp2[f] += dpre * w[f];
    }
  }

  std::vector<T> da2(t.a2.size(), T(0));
  maxpool2_backward<T>(dp2, t.arg2, da2);
  for (std::size_t i = 0; i < da2.size(); ++i)
    if (!(t.a2[i] > T(0))) da2[i] = T(0);
  std::vector<T> dp1(t.p1.size(), T(0));
  detail::conv3x3_backward(t.p1.data(), s.conv1_filters, R1, C1, P + L.w2, s.conv2_filters, da2.data(), G + L.w2,
                           G + L.b2, dp1.data());

  std::vector<T> da1(t.a1.size(), T(0));
  maxpool2_backward<T>(dp1, t.arg1, da1);
  for (std::size_t i = 0; i < da1.size(); ++i)
    if (!(t.a1[i] > T(0))) da1[i] = T(0);
  detail::conv3x3_backward(x.data(), s.input_channels, R, C, P + L.w1, s.conv1_filters, da1.data(), G + L.w1, G + L.b1,
                           static_cast<T*>(nullptr));
}

/// Convenience: gradient of the loss for one sample (eval-mode forward, no dropout).
template <typename T>
std::vector<T> gradient(const CnnModel<T>& m, std::span<const T> x, T target) {
  CnnTrace<T> t;
  forward(m, x, false, nullptr, &t);
  std::vector<T> g(m.params.size(), T(0));
  backward(m, x, target, t, std::span<T>(g));
  return g;
}

struct TrainConfig {
  double learning_rate = 0.01;
  double momentum = 0.9;
  int batch_size = 32;
  int epochs = 50;
  int patience = 5;
  double holdout_fraction = 0.1;
  double min_delta = 1e-4;  // smaller improvements still keep the model but count toward patience
  bool balance_classes = true;
  std::uint64_t seed = 1;

  void validate() const {
    if (!(learning_rate > 0.0)) throw Error(ErrorKind::ConfigError, "learning_rate must be positive");
    if (batch_size < 1) throw Error(ErrorKind::ConfigError, "batch_size must be >= 1");
    if (epochs < 1) throw Error(ErrorKind::ConfigError, "epochs must be >= 1");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw Error(ErrorKind::ConfigError, "momentum must be in [0, 1)");
  }
};

template <typename T>
struct CnnSample {
  std::vector<T> x;
  int y = 0;
};

/// Mini-batch SGD with momentum. Returns the parameters with the best
/// validation loss (training loss when the holdout is empty).
template <typename T>
CnnModel<T> train_cnn(const std::vector<CnnSample<T>>& data, const CnnSpec& spec, const TrainConfig& cfg) {
  cfg.validate();
  spec.validate();
  std::size_t npos = 0;
  for (const auto& s : data) {
    if (s.x.size() != spec.input_size()) throw Error(ErrorKind::ShapeError, "training sample shape mismatch");
    npos += s.y != 0;
  }
  if (npos == 0 || npos == data.size()) throw Error(ErrorKind::DegenerateLabels, "train_cnn needs both classes");

  std::mt19937_64 rng(mix_seed(cfg.seed, 0x7EA1));
  CnnModel<T> model = init_cnn<T>(spec, cfg.seed);

  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::size_t n_val = static_cast<std::size_t>(std::floor(cfg.holdout_fraction * static_cast<double>(data.size())));
  if (data.size() - n_val < 2) n_val = 0;
  std::vector<std::size_t> val(order.end() - static_cast<std::ptrdiff_t>(n_val), order.end());
  std::vector<std::size_t> train(order.begin(), order.end() - static_cast<std::ptrdiff_t>(n_val));

  double w_pos = 1.0, w_neg = 1.0;
  if (cfg.balance_classes) {
    std::size_t tp = 0;
    for (auto i : train) tp += data[i].y != 0;
    const std::size_t tn = train.size() - tp;
    if (tp > 0 && tn > 0) {
      w_pos = static_cast<double>(train.size()) / (2.0 * static_cast<double>(tp));
      w_neg = static_cast<double>(train.size()) / (2.0 * static_cast<double>(tn));
    }
  }

  std::vector<T> velocity(model.params.size(), T(0));
  std::vector<T> grad(model.params.size(), T(0));
  CnnTrace<T> trace;
  CnnModel<T> best = model;
  double best_loss = std::numeric_limits<double>::infinity();
  int since_best = 0;
  const T lr = static_cast<T>(cfg.learning_rate);
  const T mu = static_cast<T>(cfg.momentum);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(train.begin(), train.end(), rng);
    double epoch_loss = 0.0;  // running loss with dropout, divergence check only
    for (std::size_t b0 = 0; b0 < train.size(); b0 += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t b1 = std::min(train.size(), b0 + static_cast<std::size_t>(cfg.batch_size));
      std::fill(grad.begin(), grad.end(), T(0));
      for (std::size_t k = b0; k < b1; ++k) {
        const auto& smp = data[train[k]];
        const double w = smp.y ? w_pos : w_neg;
        const T p = forward(model, std::span<const T>(smp.x), true, &rng, &trace);
        epoch_loss += w * bce_loss(p, smp.y);
        backward(model, std::span<const T>(smp.x), static_cast<T>(smp.y), trace, std::span<T>(grad), static_cast<T>(w));
      }
      const T inv = T(1) / static_cast<T>(b1 - b0);
      for (std::size_t i = 0; i < grad.size(); ++i) {
        velocity[i] = mu * velocity[i] - lr * grad[i] * inv;
        model.params[i] += velocity[i];
      }
    }
    if (!std::isfinite(epoch_loss)) throw Error(ErrorKind::TrainingDiverged, "CNN training loss is not finite");
    // Recorded loss is the dropout-free loss at the end of the epoch.
    double train_loss = 0.0;
    for (auto i : train) {
      const double w = data[i].y ? w_pos : w_neg;
      train_loss += w * bce_loss(forward(model, std::span<const T>(data[i].x), false), data[i].y);
    }
    train_loss /= static_cast<double>(train.size());
    if (!std::isfinite(train_loss)) throw Error(ErrorKind::TrainingDiverged, "CNN training loss is not finite");
    model.train_losses.push_back(train_loss);

    double monitor = train_loss;
    if (!val.empty()) {
      double vl = 0.0, wsum = 0.0;
      for (auto i : val) {
        const double w = data[i].y ? w_pos : w_neg;
        vl += w * bce_loss(forward(model, std::span<const T>(data[i].x), false), data[i].y);
        wsum += w;
      }
      monitor = vl / wsum;
      model.val_losses.push_back(monitor);
    }
    model.epochs_run = epoch + 1;
    if (monitor < best_loss - cfg.min_delta) {
      best_loss = monitor;
      best = model;
      since_best = 0;
    } else {
      if (monitor < best_loss) {
        best_loss = monitor;
        best = model;
      }
      if (++since_best >= cfg.patience) break;
    }
  }
  best.train_losses = model.train_losses;
  best.val_losses = model.val_losses;
  best.epochs_run = model.epochs_run;
  return best;
}

/// Mean over present days, each day scored as its own 1-channel image.
template <typename T>
double predict_day_level(const CnnModel<T>& m, const ImageStack& s) {
  if (m.spec.input_channels != 1) throw Error(ErrorKind::ShapeError, "day-level model must take one channel");
  double acc = 0.0;
  int n = 0;
  for (int k = 0; k < s.days(); ++k) {
    if (s.missing[static_cast<std::size_t>(k)]) continue;
    const auto x = s.channel_tensor<T>(k);
    acc += static_cast<double>(forward(m, std::span<const T>(x), false));
    ++n;
  }
  if (n == 0) throw Error(ErrorKind::MissingData, "no present days in image stack of " + s.vehicle_id);
  return acc / n;
}

template <typename T>
double predict_car_level(const CnnModel<T>& m, const ImageStack& s) {
  if (m.spec.input_channels != s.days() || m.spec.rows != s.rows || m.spec.cols != s.cols)
    throw Error(ErrorKind::ShapeError, "car-level model shape does not match image stack");
  const auto x = s.tensor<T>();
  return static_cast<double>(forward(m, std::span<const T>(x), false));
}

template <typename T>
double predict_cnn_ensemble(const CnnModel<T>& day_model, const CnnModel<T>& car_model, const ImageStack& s) {
  return (predict_day_level(day_model, s) + predict_car_level(car_model, s)) / 2.0;
}

// --- model file ---------------------------------------------------------------
// 'RCNN', u32 version=1, u32 input_channels, rows, cols, conv1_filters,
// conv2_filters, hidden, f32 dropout, u64 seed, u32 parameter count, then the
// little-endian f32 parameters in CnnLayout order.

template <typename T>
void write_cnn(std::ostream& out, const CnnModel<T>& m) {
  out.write("RCNN", 4);
  detail::put_u32(out, 1);
  for (int v : {m.spec.input_channels, m.spec.rows, m.spec.cols, m.spec.conv1_filters, m.spec.conv2_filters,
                m.spec.hidden})
    detail::put_u32(out, static_cast<std::uint32_t>(v));
  detail::put_f32(out, static_cast<float>(m.spec.dropout));
  detail::put_u32(out, static_cast<std::uint32_t>(m.seed));
  detail::put_u32(out, static_cast<std::uint32_t>(m.seed >> 32));
  detail::put_u32(out, static_cast<std::uint32_t>(m.params.size()));
  for (T v : m.params) detail::put_f32(out, static_cast<float>(v));
}

template <typename T>
CnnModel<T> read_cnn(std::istream& in) {
  char magic[4];
  if (!in.read(magic, 4) || std::string(magic, 4) != "RCNN") throw Error(ErrorKind::DataError, "not a CNN model file");
  if (detail::get_u32(in) != 1) throw Error(ErrorKind::DataError, "unsupported CNN model version");
  CnnSpec s;
  s.input_channels = static_cast<int>(detail::get_u32(in));
  s.rows = static_cast<int>(detail::get_u32(in));
  s.cols = static_cast<int>(detail::get_u32(in));
  s.conv1_filters = static_cast<int>(detail::get_u32(in));
  s.conv2_filters = static_cast<int>(detail::get_u32(in));
  s.hidden = static_cast<int>(detail::get_u32(in));
  s.dropout = static_cast<double>(detail::get_f32(in));
  CnnModel<T> m(s);
  const std::uint64_t lo = detail::get_u32(in);
  const std::uint64_t hi = detail::get_u32(in);
  m.seed = lo | (hi << 32);
  const auto n = detail::get_u32(in);
  if (n != m.params.size()) throw Error(ErrorKind::DataError, "CNN parameter count does not match header");
  for (auto& v : m.params) v = static_cast<T>(detail::get_f32(in));
  return m;
}

template <typename T>
void write_training_log(std::ostream& out, const CnnModel<T>& m, const std::string& tag, bool header) {
  if (header) out << "model,epoch,train_loss,val_loss\n";
  for (std::size_t e = 0; e < m.train_losses.size(); ++e) {
    out << tag << ',' << e + 1 << ',' << detail::format_double(m.train_losses[e]) << ',';
    if (e < m.val_losses.size()) out << detail::format_double(m.val_losses[e]);
    out << '\n';
  }
}

}  // namespace rsdetect
