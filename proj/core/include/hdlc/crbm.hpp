#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hdlc/network.hpp"
#include "hdlc/ops.hpp"
#include "hdlc/tensor.hpp"

namespace hdlc {

// Convolutional restricted Boltzmann machine. One bias per hidden
// feature map (shared across positions) and a single shared visible
// bias, matching the translation-invariant weight sharing of the
// filters themselves.
template <class T>
struct CrbmStateT {
  TensorT<T> filters;         // (K, in_channels, kh, kw)
  std::vector<T> hidden_bias; // one per filter map
  T visible_bias = 0;
  int pool_block = 2;

  int filter_count() const { return filters.dim(0); }
  int in_channels() const { return filters.dim(1); }
  int kernel_h() const { return filters.dim(2); }
  int kernel_w() const { return filters.dim(3); }
};

using CrbmState = CrbmStateT<float>;

struct CrbmGeometry {
  int filters = 8;
  int in_channels = 1;
  int kernel_h = 5;
  int kernel_w = 5;
  int pool_block = 2;
};

template <class T>
CrbmStateT<T> init_crbm(const CrbmGeometry& g, uint64_t seed) {
  if (g.filters < 1 || g.in_channels < 1 || g.kernel_h < 1 || g.kernel_w < 1 ||
      g.pool_block < 1)
    throw ConfigError("crbm geometry values must be >= 1");
  CrbmStateT<T> s;
  s.filters = TensorT<T>({g.filters, g.in_channels, g.kernel_h, g.kernel_w});
  Rng rng(seed);
  for (T& v : s.filters.data) v = static_cast<T>(0.01 * rng.gaussian());
  s.hidden_bias.assign(static_cast<size_t>(g.filters), T{0});
  s.visible_bias = T{0};
  s.pool_block = g.pool_block;
  return s;
}

template <class T>
TensorT<T> hidden_preact(const TensorT<T>& v, const CrbmStateT<T>& s) {
  if (v.rank() != 4) throw ShapeError("hidden_prob expects rank-4 input");
  if (v.dim(1) != s.in_channels())
    throw ShapeError(strf("hidden_prob: input has %d channels, filters %d",
                          v.dim(1), s.in_channels()));
  TensorT<T> bias({s.filter_count()});
  for (int k = 0; k < s.filter_count(); ++k)
    bias.at(k) = s.hidden_bias[static_cast<size_t>(k)];
  return conv_forward(v, s.filters, bias, /*stride=*/1, /*pad=*/0);
}

// P(h_k,ij = 1 | v) = sigmoid((valid cross-correlation of v with filter
// k)_ij + b_k). Batched: (n,c,h,w) -> (n,K,h-kh+1,w-kw+1).
template <class T>
TensorT<T> hidden_prob(const TensorT<T>& v, const CrbmStateT<T>& s) {
  TensorT<T> pre = hidden_preact(v, s);
  for (T& x : pre.data) x = T{1} / (T{1} + std::exp(-x));
  return pre;
}

template <class T>
TensorT<T> visible_preact(const TensorT<T>& h, const CrbmStateT<T>& s) {
  if (h.rank() != 4) throw ShapeError("visible_prob expects rank-4 input");
  if (h.dim(1) != s.filter_count())
    throw ShapeError(strf("visible_prob: input has %d maps, state has %d "
                          "filters",
                          h.dim(1), s.filter_count()));
  const int n = h.dim(0), hh = h.dim(2), hw = h.dim(3);
  const int vh = hh + s.kernel_h() - 1, vw = hw + s.kernel_w() - 1;
  TensorT<T> pre({n, s.in_channels(), vh, vw});
  pre.fill(s.visible_bias);
  for (int in = 0; in < n; ++in)
    for (int k = 0; k < s.filter_count(); ++k)
      for (int i = 0; i < hh; ++i)
        for (int j = 0; j < hw; ++j) {
          const T hv = h.at(in, k, i, j);
          if (hv == T{0}) continue;
          for (int c = 0; c < s.in_channels(); ++c)
            for (int u = 0; u < s.kernel_h(); ++u)
              for (int w = 0; w < s.kernel_w(); ++w)
                pre.at(in, c, i + u, j + w) += hv * s.filters.at(k, c, u, w);
        }
  return pre;
}

// P(v_ij = 1 | h) = sigmoid(sum_k (full convolution of h_k with filter
// k)_ij + c): the exact adjoint of the hidden cross-correlation.
template <class T>
TensorT<T> visible_prob(const TensorT<T>& h, const CrbmStateT<T>& s) {
  TensorT<T> pre = visible_preact(h, s);
  for (T& x : pre.data) x = T{1} / (T{1} + std::exp(-x));
  return pre;
}

template <class T>
struct ProbMaxPoolResult {
  TensorT<T> pooled_prob;    // 1 - P(all off) per block
  TensorT<T> pooled_sample;  // 1 if any unit in the block sampled on
  TensorT<T> hidden_sample;  // at most one unit on per block
};

// Softmax-with-off-state pooling over non-overlapping block x block
// regions of each feature map: P(unit a on) = exp(pre_a) / (1 +
// sum_B exp(pre_a')), P(all off) = 1 / (1 + sum_B exp). Maps whose
// extents are not divisible by the block are treated as padded with
// -inf pre-activations (the padding cells can never switch on).
template <class T>
ProbMaxPoolResult<T> prob_maxpool(const TensorT<T>& preact, int pool_block,
                                  uint64_t seed) {
  if (preact.rank() != 4) throw ShapeError("prob_maxpool expects rank-4");
  if (pool_block < 1) throw ConfigError("pool_block must be >= 1");
  const int n = preact.dim(0), k = preact.dim(1), h = preact.dim(2),
            w = preact.dim(3);
  const int ph = (h + pool_block - 1) / pool_block;
  const int pw = (w + pool_block - 1) / pool_block;
  ProbMaxPoolResult<T> r{TensorT<T>({n, k, ph, pw}),
                         TensorT<T>({n, k, ph, pw}), TensorT<T>(preact.shape)};
  std::vector<double> expo;
  for (int in = 0; in < n; ++in) {
    Rng rng(Rng::mix(seed, static_cast<uint64_t>(in)));
    for (int map = 0; map < k; ++map)
      for (int bi = 0; bi < ph; ++bi)
        for (int bj = 0; bj < pw; ++bj) {
          const int y0 = bi * pool_block, y1 = std::min(h, y0 + pool_block);
          const int x0 = bj * pool_block, x1 = std::min(w, x0 + pool_block);
          // Stabilize against the off-state's implicit pre-activation 0.
          double mx = 0;
          for (int y = y0; y < y1; ++y)
            for (int x = x0; x < x1; ++x)
              mx = std::max(mx,
                            static_cast<double>(preact.at(in, map, y, x)));
          expo.clear();
          double total = std::exp(0.0 - mx);  // off state
          for (int y = y0; y < y1; ++y)
            for (int x = x0; x < x1; ++x) {
              const double e =
                  std::exp(static_cast<double>(preact.at(in, map, y, x)) - mx);
              expo.push_back(e);
              total += e;
            }
          const double p_off = std::exp(0.0 - mx) / total;
          r.pooled_prob.at(in, map, bi, bj) = static_cast<T>(1.0 - p_off);
          // Sample one of {off, cells...}.
          double u = rng.uniform() * total;
          int pick = -1;  // off
          u -= std::exp(0.0 - mx);
          if (u >= 0) {
            for (size_t t = 0; t < expo.size(); ++t) {
              u -= expo[t];
              if (u < 0) {
                pick = static_cast<int>(t);
                break;
              }
            }
            if (pick < 0) pick = static_cast<int>(expo.size()) - 1;
          }
          if (pick >= 0) {
            const int cy = y0 + pick / (x1 - x0);
            const int cx = x0 + pick % (x1 - x0);
            r.hidden_sample.at(in, map, cy, cx) = T{1};
            r.pooled_sample.at(in, map, bi, bj) = T{1};
          }
        }
  }
  return r;
}

struct ReconStats {
  double recon_mse = 0;  // mean squared error data vs reconstruction
  double var_ratio = 0;  // var(reconstruction) / var(data)
};

template <class T>
struct CrbmVelocityT {
  TensorT<T> filters;
  std::vector<T> hidden_bias;
  T visible_bias = 0;
};

using CrbmVelocity = CrbmVelocityT<float>;

template <class T>
CrbmVelocityT<T> zero_velocity(const CrbmStateT<T>& s) {
  CrbmVelocityT<T> v;
  v.filters = TensorT<T>(s.filters.shape);
  v.hidden_bias.assign(s.hidden_bias.size(), T{0});
  v.visible_bias = T{0};
  return v;
}

namespace detail {
// d/dW_k of sum_ij h_k,ij * (W_k (*) v)_ij: correlation of the visible
// with each hidden map, accumulated into acc with the given sign.
template <class T>
void accumulate_corr(const TensorT<T>& v, const TensorT<T>& h, T sign,
                     TensorT<T>& acc) {
  const int n = v.dim(0), c = v.dim(1);
  const int k = h.dim(1), hh = h.dim(2), hw = h.dim(3);
  const int kh = acc.dim(2), kw = acc.dim(3);
  for (int in = 0; in < n; ++in)
    for (int map = 0; map < k; ++map)
      for (int ch = 0; ch < c; ++ch)
        for (int u = 0; u < kh; ++u)
          for (int w = 0; w < kw; ++w) {
            T s = 0;
            for (int i = 0; i < hh; ++i)
              for (int j = 0; j < hw; ++j)
                s += v.at(in, ch, i + u, j + w) * h.at(in, map, i, j);
            acc.at(map, ch, u, w) += sign * s;
          }
}

template <class T>
double tensor_variance(const TensorT<T>& t) {
  double mean = 0;
  for (T v : t.data) mean += static_cast<double>(v);
  mean /= static_cast<double>(t.numel());
  double var = 0;
  for (T v : t.data) {
    const double d = static_cast<double>(v) - mean;
    var += d * d;
  }
  return var / static_cast<double>(t.numel());
}
}  // namespace detail

// One CD-1 update on a mini-batch. Positive-phase hidden units are
// sampled; the negative phase uses mean-field probabilities for both
// the reconstruction and its hidden response. Gradients are batch
// means, applied through momentum velocities (ascent direction).
template <class T>
ReconStats cd1_update(const TensorT<T>& batch, CrbmStateT<T>& s, double lr,
                      double momentum, CrbmVelocityT<T>& vel, uint64_t seed) {
  const int n = batch.dim(0);
  for (T x : batch.data)
    if (x < T{0} || x > T{1})
      throw ConfigError("cd1_update: visible values must lie in [0,1]");

  // Positive phase.
  TensorT<T> h_prob = hidden_prob(batch, s);
  TensorT<T> h_pos(h_prob.shape);
  {
    const int per = static_cast<int>(h_prob.numel() / n);
    for (int in = 0; in < n; ++in) {
      Rng rng(Rng::mix(seed, static_cast<uint64_t>(in)));
      for (int i = 0; i < per; ++i) {
        const size_t idx = static_cast<size_t>(in) * per + i;
        h_pos.data[idx] =
            rng.bernoulli(static_cast<double>(h_prob.data[idx])) ? T{1} : T{0};
      }
    }
  }

  // Negative phase (mean field).
  TensorT<T> v_neg = visible_prob(h_pos, s);
  TensorT<T> h_neg = hidden_prob(v_neg, s);

  // Gradients, averaged over the batch.
  TensorT<T> dw(s.filters.shape);
  detail::accumulate_corr(batch, h_pos, T{1}, dw);
  detail::accumulate_corr(v_neg, h_neg, T{-1}, dw);
  for (T& x : dw.data) x /= static_cast<T>(n);

  const int k = s.filter_count();
  std::vector<T> db(static_cast<size_t>(k), T{0});
  {
    const int64_t map_sz = h_pos.numel() / (static_cast<int64_t>(n) * k);
    for (int in = 0; in < n; ++in)
      for (int map = 0; map < k; ++map) {
        const int64_t base = (static_cast<int64_t>(in) * k + map) * map_sz;
        T acc = 0;
        for (int64_t i = 0; i < map_sz; ++i)
          acc += h_pos.data[static_cast<size_t>(base + i)] -
                 h_neg.data[static_cast<size_t>(base + i)];
        db[static_cast<size_t>(map)] += acc / static_cast<T>(map_sz);
      }
    for (T& x : db) x /= static_cast<T>(n);
  }
  T dc = 0;
  for (size_t i = 0; i < batch.data.size(); ++i)
    dc += batch.data[i] - v_neg.data[i];
  dc /= static_cast<T>(batch.numel());

  // Momentum update (ascent on the CD objective).
  for (size_t i = 0; i < vel.filters.data.size(); ++i) {
    vel.filters.data[i] = static_cast<T>(momentum * vel.filters.data[i] +
                                         lr * dw.data[i]);
    s.filters.data[i] += vel.filters.data[i];
  }
  for (size_t i = 0; i < vel.hidden_bias.size(); ++i) {
    vel.hidden_bias[i] =
        static_cast<T>(momentum * vel.hidden_bias[i] + lr * db[i]);
    s.hidden_bias[i] += vel.hidden_bias[i];
  }
  vel.visible_bias =
      static_cast<T>(momentum * vel.visible_bias + lr * dc);
  s.visible_bias += vel.visible_bias;

  if (!s.filters.all_finite())
    throw Error("cd1_update produced non-finite filters");

  ReconStats stats;
  double mse = 0;
  for (size_t i = 0; i < batch.data.size(); ++i) {
    const double d = static_cast<double>(batch.data[i]) -
                     static_cast<double>(v_neg.data[i]);
    mse += d * d;
  }
  stats.recon_mse = mse / static_cast<double>(batch.numel());
  const double var_data = detail::tensor_variance(batch);
  const double var_recon = detail::tensor_variance(v_neg);
  stats.var_ratio = var_data > 1e-12 ? var_recon / var_data : 0.0;
  return stats;
}

struct Cd1Config {
  double lr = 0.1;
  double momentum_initial = 0.5;
  double momentum_final = 0.9;
  int momentum_switch_epoch = 5;  // first epoch (1-based) using final momentum
  int batch_size = 10;
  int epochs = 30;
  double variance_ratio_limit = 2.0;
  double lr_decay = 0.9;
  uint64_t seed = 1;
};

struct CrbmEpochLog {
  int epoch = 0;
  double recon_mse = 0;
  double var_ratio_mean = 0;
  double lr = 0;
};

std::string format_crbm_log(const std::vector<CrbmEpochLog>& log);

// Stateful CD-1 trainer exposing per-batch stepping so the variance
// rule is observable: whenever var(recon)/var(data) exceeds the limit,
// the learning rate decays by lr_decay and the filter and hidden-bias
// velocities are reset to zero (the visible-bias velocity is kept).
class CrbmTrainer {
 public:
  CrbmTrainer(CrbmState init, const Cd1Config& cfg)
      : state_(std::move(init)),
        cfg_(cfg),
        lr_(cfg.lr),
        momentum_(cfg.momentum_initial),
        vel_(zero_velocity(state_)) {
    if (cfg.lr <= 0) throw ConfigError("cd1 lr must be > 0");
    if (cfg.momentum_initial < 0 || cfg.momentum_initial >= 1 ||
        cfg.momentum_final < 0 || cfg.momentum_final >= 1)
      throw ConfigError("cd1 momenta must be in [0,1)");
    if (cfg.variance_ratio_limit <= 0 || cfg.lr_decay <= 0)
      throw ConfigError("cd1 limits must be > 0");
  }

  ReconStats step(const Tensor& batch) {
    const ReconStats stats =
        cd1_update(batch, state_, lr_, momentum_, vel_,
                   Rng::mix(cfg_.seed, 0xcd1 + steps_));
    ++steps_;
    if (stats.var_ratio > cfg_.variance_ratio_limit) {
      lr_ *= cfg_.lr_decay;
      vel_.filters.fill(0.0f);
      std::fill(vel_.hidden_bias.begin(), vel_.hidden_bias.end(), 0.0f);
    }
    return stats;
  }

  void begin_epoch(int epoch_1based) {
    momentum_ = epoch_1based >= cfg_.momentum_switch_epoch
                    ? cfg_.momentum_final
                    : cfg_.momentum_initial;
  }

  const CrbmState& state() const { return state_; }
  CrbmState take_state() { return std::move(state_); }
  double lr() const { return lr_; }
  double momentum() const { return momentum_; }
  const CrbmVelocity& velocity() const { return vel_; }

 private:
  CrbmState state_;
  Cd1Config cfg_;
  double lr_;
  double momentum_;
  CrbmVelocity vel_;
  uint64_t steps_ = 0;
};

struct CrbmTrainResult {
  CrbmState state;
  std::vector<CrbmEpochLog> log;
};

// Epochs of shuffled mini-batches over a (count, c, h, w) dataset with
// values in [0,1]; logs reconstruction MSE per epoch.
CrbmTrainResult train_crbm(const Tensor& dataset, const CrbmGeometry& geometry,
                           const Cd1Config& cfg);

// Tiled filter image: one min-max normalized tile per filter with
// 1-pixel separators, written as PGM (1 channel) or PPM (3 channels).
void export_filters(const Tensor& filters, const std::string& path);

// Copies CRBM filters and hidden biases into a conv layer of the CNN.
void transfer_to_cnn(const CrbmState& s, ModelState& model, int layer_index);

}  // namespace hdlc
