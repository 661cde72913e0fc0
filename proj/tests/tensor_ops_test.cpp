#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "hdlc/ops.hpp"
#include "support/oracles.hpp"

using namespace hdlc;

namespace {

template <class T>
TensorT<T> random_tensor(std::vector<int> shape, Rng& rng, double lo = -1,
                         double hi = 1) {
  TensorT<T> t(std::move(shape));
  for (T& v : t.data) v = static_cast<T>(rng.uniform(lo, hi));
  return t;
}

// Values guaranteed pairwise separated by ~0.3, for kink-free
// finite differences through max pooling.
template <class T>
TensorT<T> separated_tensor(std::vector<int> shape, Rng& rng) {
  TensorT<T> t(std::move(shape));
  std::vector<int> perm(t.data.size());
  std::iota(perm.begin(), perm.end(), 0);
  rng.shuffle(perm);
  for (size_t i = 0; i < t.data.size(); ++i)
    t.data[i] = static_cast<T>(0.31 * perm[i] + rng.uniform(-1e-4, 1e-4));
  return t;
}

}  // namespace

TEST_CASE("conv 1x1 identity filter reproduces the input channel") {
  Rng rng(1);
  Tensor x = random_tensor<float>({2, 1, 4, 4}, rng);
  Tensor w({1, 1, 1, 1});
  w.data[0] = 1.0f;
  Tensor b({1});
  const Tensor out = conv_forward(x, w, b, 1, 0);
  CHECK(out.shape == x.shape);
  for (size_t i = 0; i < x.data.size(); ++i)
    CHECK(out.data[i] == doctest::Approx(x.data[i]));
}

TEST_CASE("conv all-ones 3x3 filter sums the window") {
  Tensor x({1, 1, 3, 3});
  x.fill(2.0f);
  Tensor w({1, 1, 3, 3});
  w.fill(1.0f);
  Tensor b({1});
  const Tensor out = conv_forward(x, w, b, 1, 0);
  REQUIRE(out.numel() == 1);
  CHECK(out.data[0] == doctest::Approx(18.0f));
}

TEST_CASE("conv matches the quadruple-loop oracle on random shapes") {
  Rng rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 1 + rng.below(2), ci = 1 + rng.below(3);
    const int kh = 1 + rng.below(3), kw = 1 + rng.below(3);
    const int stride = 1 + rng.below(2), pad = rng.below(2);
    const int h = kh + rng.below(8 - kh + 1), w = kw + rng.below(8 - kw + 1);
    const int co = 1 + rng.below(3);
    Tensor x = random_tensor<float>({n, ci, h, w}, rng);
    Tensor f = random_tensor<float>({co, ci, kh, kw}, rng);
    Tensor b = random_tensor<float>({co}, rng);
    const Tensor got = conv_forward(x, f, b, stride, pad);
    const Tensor want = oracle::naive_conv(x, f, b, stride, pad);
    REQUIRE(got.shape == want.shape);
    for (size_t i = 0; i < got.data.size(); ++i)
      CHECK(std::fabs(got.data[i] - want.data[i]) < 1e-5);
  }
}

TEST_CASE("conv backward zero gradient and bias adjoint") {
  Rng rng(3);
  Tensor x = random_tensor<float>({2, 2, 5, 5}, rng);
  Tensor w = random_tensor<float>({3, 2, 3, 3}, rng);
  const Tensor out =
      conv_forward(x, w, Tensor({3}), 1, 0);

  Tensor zeros(out.shape);
  const auto g0 = conv_backward(x, w, zeros, 1, 0);
  for (float v : g0.x.data) CHECK(v == 0.0f);
  for (float v : g0.w.data) CHECK(v == 0.0f);
  for (float v : g0.b.data) CHECK(v == 0.0f);

  Tensor go = random_tensor<float>(out.shape, rng);
  const auto g = conv_backward(x, w, go, 1, 0);
  for (int o = 0; o < 3; ++o) {
    double want = 0;
    for (int n = 0; n < 2; ++n)
      for (int i = 0; i < out.dim(2); ++i)
        for (int j = 0; j < out.dim(3); ++j) want += go.at(n, o, i, j);
    CHECK(g.b.at(o) == doctest::Approx(want).epsilon(1e-4));
  }
}

TEST_CASE("conv backward matches finite differences") {
  Rng rng(4);
  for (int trial = 0; trial < 5; ++trial) {
    const int stride = 1 + rng.below(2), pad = rng.below(2);
    TensorT<double> x = random_tensor<double>({2, 2, 5, 5}, rng);
    TensorT<double> w = random_tensor<double>({2, 2, 3, 3}, rng);
    TensorT<double> b = random_tensor<double>({2}, rng);
    const TensorT<double> out0 = conv_forward(x, w, b, stride, pad);
    const TensorT<double> probe = random_tensor<double>(out0.shape, rng);

    auto loss = [&] {
      const TensorT<double> out = conv_forward(x, w, b, stride, pad);
      double acc = 0;
      for (size_t i = 0; i < out.data.size(); ++i)
        acc += out.data[i] * probe.data[i];
      return acc;
    };
    const auto grads = conv_backward(x, w, probe, stride, pad);
    for (auto [theta, analytic] :
         {std::pair<TensorT<double>*, const TensorT<double>*>{&x, &grads.x},
          {&w, &grads.w}, {&b, &grads.b}}) {
      for (size_t i = 0; i < theta->data.size(); ++i) {
        const double fd = oracle::fd_at(loss, &theta->data[i], 1e-3);
        CHECK(oracle::rel_err(fd, analytic->data[i]) < 1e-4);
      }
    }
  }
}

TEST_CASE("relu forward and idempotence") {
  Tensor x({1, 3});
  x.data = {-1.0f, 0.0f, 2.0f};
  const Tensor out = relu_forward(x);
  CHECK(out.data == std::vector<float>{0.0f, 0.0f, 2.0f});
  CHECK(relu_forward(out).data == out.data);
}

TEST_CASE("relu backward matches finite differences off the kink") {
  Rng rng(5);
  TensorT<double> x({2, 8});
  for (double& v : x.data) {
    v = rng.uniform(-1, 1);
    if (std::fabs(v) < 1e-2) v = v < 0 ? v - 0.02 : v + 0.02;
  }
  const TensorT<double> probe = random_tensor<double>({2, 8}, rng);
  auto loss = [&] {
    const TensorT<double> out = relu_forward(x);
    double acc = 0;
    for (size_t i = 0; i < out.data.size(); ++i)
      acc += out.data[i] * probe.data[i];
    return acc;
  };
  const TensorT<double> g = relu_backward(x, probe);
  for (size_t i = 0; i < x.data.size(); ++i) {
    const double fd = oracle::fd_at(loss, &x.data[i], 1e-3);
    CHECK(oracle::rel_err(fd, g.data[i]) < 1e-4);
  }
}

TEST_CASE("maxpool quadrants of the 0..15 grid") {
  Tensor x({1, 1, 4, 4});
  std::iota(x.data.begin(), x.data.end(), 0.0f);
  const auto r = maxpool_forward(x, 2, 2, 0);
  CHECK(r.out.data == std::vector<float>{5, 7, 13, 15});
}

TEST_CASE("maxpool tie goes to the first element in scan order") {
  Tensor x({1, 1, 4, 4});
  x.fill(3.5f);
  const auto r = maxpool_forward(x, 2, 2, 0);
  for (float v : r.out.data) CHECK(v == 3.5f);
  // First element of each window: rows 0,0,2,2; cols 0,2,0,2.
  CHECK(r.index == std::vector<int64_t>{0, 2, 8, 10});

  Tensor go(r.out.shape);
  go.fill(1.0f);
  const Tensor gx = pool_backward_routed(r.index, go, x.shape);
  CHECK(gx.data[0] == 1.0f);
  CHECK(gx.data[1] == 0.0f);
}

TEST_CASE("overlapping maxpool matches the naive oracle") {
  Rng rng(6);
  for (int trial = 0; trial < 100; ++trial) {
    const int window = 2 + rng.below(2), stride = 1 + rng.below(2);
    const int pad = rng.below(window);
    const int h = window + rng.below(6), w = window + rng.below(6);
    Tensor x = random_tensor<float>({2, 2, h, w}, rng);
    const auto got = maxpool_forward(x, window, stride, pad);
    const Tensor want = oracle::naive_maxpool(x, window, stride, pad);
    REQUIRE(got.out.shape == want.shape);
    for (size_t i = 0; i < want.data.size(); ++i)
      CHECK(got.out.data[i] == want.data[i]);
  }
}

TEST_CASE("maxpool backward matches finite differences and accumulates "
          "overlaps") {
  Rng rng(7);
  TensorT<double> x = separated_tensor<double>({1, 1, 5, 5}, rng);
  const auto fwd = maxpool_forward(x, 3, 2, 0);
  const TensorT<double> probe = random_tensor<double>(fwd.out.shape, rng);
  auto loss = [&] {
    const auto out = maxpool_forward(x, 3, 2, 0);
    double acc = 0;
    for (size_t i = 0; i < out.out.data.size(); ++i)
      acc += out.out.data[i] * probe.data[i];
    return acc;
  };
  const TensorT<double> g = pool_backward_routed(fwd.index, probe, x.shape);
  double total_g = 0;
  for (size_t i = 0; i < x.data.size(); ++i) {
    const double fd = oracle::fd_at(loss, &x.data[i], 1e-3);
    CHECK(oracle::rel_err(fd, g.data[i]) < 1e-4);
    total_g += g.data[i];
  }
  // Every output's gradient lands somewhere.
  double total_p = 0;
  for (double v : probe.data) total_p += v;
  CHECK(total_g == doctest::Approx(total_p));
}

TEST_CASE("stochastic pool degenerate regions") {
  // One nonzero element is always selected.
  Tensor x({1, 1, 2, 2});
  x.data = {0, 0, 0, 4.0f};
  for (uint64_t seed = 0; seed < 20; ++seed) {
    const auto r = stochpool_forward(x, 2, 2, 0, Mode::train, seed);
    CHECK(r.out.data[0] == 4.0f);
    CHECK(r.index[0] == 3);
  }
  // All-zero region gives 0 in both modes.
  Tensor z({1, 1, 2, 2});
  CHECK(stochpool_forward(z, 2, 2, 0, Mode::train, 1).out.data[0] == 0.0f);
  CHECK(stochpool_forward(z, 2, 2, 0, Mode::infer, 1).out.data[0] == 0.0f);
}

TEST_CASE("stochastic pool rejects negative activations") {
  Tensor x({1, 1, 2, 2});
  x.data = {0.5f, -0.1f, 0.2f, 0.3f};
  CHECK_THROWS_AS(stochpool_forward(x, 2, 2, 0, Mode::train, 1), ConfigError);
}

TEST_CASE("stochastic pool samples the multinomial frequencies") {
  // Region holding 1 and 3: the larger activation wins 75% of draws.
  Tensor x({1, 1, 2, 2});
  x.data = {1.0f, 3.0f, 0.0f, 0.0f};
  int hits = 0;
  const int draws = 10000;
  for (int i = 0; i < draws; ++i) {
    const auto r = stochpool_forward(x, 2, 2, 0, Mode::train,
                                     static_cast<uint64_t>(i) + 99);
    if (r.out.data[0] == 3.0f) ++hits;
  }
  const double freq = static_cast<double>(hits) / draws;
  CHECK(freq > 0.73);
  CHECK(freq < 0.77);
}

TEST_CASE("stochastic pool inference is the probability-weighted average") {
  Tensor x({1, 1, 2, 2});
  x.data = {1.0f, 3.0f, 0.0f, 0.0f};
  const auto r = stochpool_forward(x, 2, 2, 0, Mode::infer, 1);
  // 0.25*1 + 0.75*3 = 2.5
  CHECK(r.out.data[0] == doctest::Approx(2.5f));
  CHECK(r.index[0] == -1);

  // Outputs always lie within [min, max] of the region.
  Rng rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor t = random_tensor<float>({1, 1, 6, 6}, rng, 0.0, 2.0);
    const auto infer = stochpool_forward(t, 3, 2, 0, Mode::infer, 7);
    const auto naive_max = oracle::naive_maxpool(t, 3, 2, 0);
    for (size_t i = 0; i < infer.out.data.size(); ++i) {
      CHECK(infer.out.data[i] <= naive_max.data[i] + 1e-6f);
      CHECK(infer.out.data[i] >= 0.0f);
    }
  }
}

TEST_CASE("stochastic pool average-mode backward matches finite differences") {
  Rng rng(9);
  TensorT<double> x = random_tensor<double>({1, 2, 4, 4}, rng, 0.05, 1.0);
  const auto fwd = stochpool_forward(x, 2, 2, 0, Mode::infer, 0);
  const TensorT<double> probe = random_tensor<double>(fwd.out.shape, rng);
  auto loss = [&] {
    const auto out = stochpool_forward(x, 2, 2, 0, Mode::infer, 0);
    double acc = 0;
    for (size_t i = 0; i < out.out.data.size(); ++i)
      acc += out.out.data[i] * probe.data[i];
    return acc;
  };
  const TensorT<double> g = stochpool_backward_average(x, 2, 2, 0, probe);
  for (size_t i = 0; i < x.data.size(); ++i) {
    const double fd = oracle::fd_at(loss, &x.data[i], 1e-4);
    CHECK(oracle::rel_err(fd, g.data[i]) < 1e-4);
  }
}

TEST_CASE("dropout p=0 is the identity in both modes") {
  Rng rng(10);
  Tensor x = random_tensor<float>({2, 10}, rng);
  CHECK(dropout_forward(x, 0.0, Mode::train, 1).out.data == x.data);
  CHECK(dropout_forward(x, 0.0, Mode::infer, 1).out.data == x.data);
}

TEST_CASE("dropout inference scales by the keep probability exactly") {
  Rng rng(11);
  Tensor x = random_tensor<float>({2, 16}, rng);
  const auto r = dropout_forward(x, 0.5, Mode::infer, 1);
  for (size_t i = 0; i < x.data.size(); ++i)
    CHECK(r.out.data[i] == 0.5f * x.data[i]);
  CHECK(r.mask.empty());
}

TEST_CASE("dropout training zero fraction is near p") {
  Tensor x({10, 10000});
  x.fill(1.0f);
  const auto r = dropout_forward(x, 0.5, Mode::train, 42);
  int64_t zeros = 0;
  for (float v : r.out.data)
    if (v == 0.0f) ++zeros;
  const double frac = static_cast<double>(zeros) / x.numel();
  CHECK(frac > 0.49);
  CHECK(frac < 0.51);
  // Survivors pass unscaled, and backward routes through the mask.
  Tensor go(x.shape);
  go.fill(2.0f);
  const Tensor gx = dropout_backward(r.mask, go);
  for (size_t i = 0; i < gx.data.size(); ++i)
    CHECK(gx.data[i] == (r.mask[i] ? 2.0f : 0.0f));
}

TEST_CASE("fc identity weights reproduce the input") {
  Tensor x({2, 3});
  x.data = {1, 2, 3, 4, 5, 6};
  Tensor w({3, 3});
  for (int i = 0; i < 3; ++i) w.at(i, i) = 1.0f;
  const Tensor out = fc_forward(x, w, Tensor({3}));
  CHECK(out.data == x.data);
}

TEST_CASE("fc backward matches finite differences") {
  Rng rng(12);
  TensorT<double> x = random_tensor<double>({2, 5}, rng);
  TensorT<double> w = random_tensor<double>({3, 5}, rng);
  TensorT<double> b = random_tensor<double>({3}, rng);
  const TensorT<double> probe = random_tensor<double>({2, 3}, rng);
  auto loss = [&] {
    const TensorT<double> out = fc_forward(x, w, b);
    double acc = 0;
    for (size_t i = 0; i < out.data.size(); ++i)
      acc += out.data[i] * probe.data[i];
    return acc;
  };
  const auto g = fc_backward(x, w, probe);
  for (auto [theta, analytic] :
       {std::pair<TensorT<double>*, const TensorT<double>*>{&x, &g.x},
        {&w, &g.w}, {&b, &g.b}}) {
    for (size_t i = 0; i < theta->data.size(); ++i) {
      const double fd = oracle::fd_at(loss, &theta->data[i], 1e-3);
      CHECK(oracle::rel_err(fd, analytic->data[i]) < 1e-4);
    }
  }
}

TEST_CASE("fc weight gradient is the sum of per-sample outer products") {
  Rng rng(13);
  Tensor x = random_tensor<float>({2, 4}, rng);
  Tensor w = random_tensor<float>({3, 4}, rng);
  Tensor go = random_tensor<float>({2, 3}, rng);
  const auto g = fc_backward(x, w, go);
  for (int o = 0; o < 3; ++o)
    for (int i = 0; i < 4; ++i) {
      double want = 0;
      for (int s = 0; s < 2; ++s) want += go.at(s, o) * x.at(s, i);
      CHECK(g.w.at(o, i) == doctest::Approx(want).epsilon(1e-4));
    }
}

TEST_CASE("softmax of uniform logits") {
  Tensor logits({1, 4});
  logits.fill(0.7f);
  const auto r = softmax_xent(logits, {2});
  for (int i = 0; i < 4; ++i)
    CHECK(r.probs.at(0, i) == doctest::Approx(0.25f));
  CHECK(r.losses[0] == doctest::Approx(std::log(4.0)).epsilon(1e-5));
}

TEST_CASE("softmax of logits {1,2,3}") {
  Tensor logits({1, 3});
  logits.data = {1.0f, 2.0f, 3.0f};
  const Tensor p = softmax_forward(logits);
  CHECK(p.at(0, 0) == doctest::Approx(0.09003057f).epsilon(1e-5));
  CHECK(p.at(0, 1) == doctest::Approx(0.24472847f).epsilon(1e-5));
  CHECK(p.at(0, 2) == doctest::Approx(0.66524096f).epsilon(1e-5));
}

TEST_CASE("softmax properties: simplex, argmax, zero-sum gradient") {
  Rng rng(14);
  for (int trial = 0; trial < 50; ++trial) {
    const int k = 2 + rng.below(8);
    Tensor logits = random_tensor<float>({3, k}, rng, -5, 5);
    const std::vector<int> labels{rng.below(k), rng.below(k), rng.below(k)};
    const auto r = softmax_xent(logits, labels);
    for (int s = 0; s < 3; ++s) {
      double total = 0;
      int argmax_logit = 0, argmax_prob = 0;
      for (int i = 0; i < k; ++i) {
        CHECK(r.probs.at(s, i) >= 0.0f);
        total += r.probs.at(s, i);
        if (logits.at(s, i) > logits.at(s, argmax_logit)) argmax_logit = i;
        if (r.probs.at(s, i) > r.probs.at(s, argmax_prob)) argmax_prob = i;
      }
      CHECK(std::fabs(total - 1.0) < 1e-6);
      CHECK(argmax_logit == argmax_prob);
      double gsum = 0;
      for (int i = 0; i < k; ++i) gsum += r.grad_logits.at(s, i);
      CHECK(std::fabs(gsum) < 1e-5);
    }
  }
}

TEST_CASE("softmax_xent rejects out-of-range labels") {
  Tensor logits({1, 3});
  CHECK_THROWS_AS(softmax_xent(logits, {3}), ConfigError);
  CHECK_THROWS_AS(softmax_xent(logits, {-1}), ConfigError);
}

TEST_CASE("stochastic ops are bit-identical across runs for a fixed seed") {
  Rng rng(15);
  Tensor x = random_tensor<float>({3, 2, 6, 6}, rng, 0.0, 1.0);
  const auto a = stochpool_forward(x, 2, 2, 0, Mode::train, 77);
  const auto b = stochpool_forward(x, 2, 2, 0, Mode::train, 77);
  CHECK(a.out.data == b.out.data);
  CHECK(a.index == b.index);
  const auto da = dropout_forward(x, 0.3, Mode::train, 77);
  const auto db = dropout_forward(x, 0.3, Mode::train, 77);
  CHECK(da.out.data == db.out.data);
}

TEST_CASE("shape helper rejects impossible geometry") {
  CHECK(conv_out_extent(223, 3, 2, 0) == 111);
  CHECK(conv_out_extent(13, 3, 2, 1) == 7);
  CHECK_THROWS_AS(conv_out_extent(2, 5, 1, 0), ShapeError);
  CHECK_THROWS_AS(check_pool_params(3, 2, 3), ShapeError);
}
