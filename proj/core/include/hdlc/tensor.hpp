#pragma once

#include <cassert>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <utility>
#include <vector>

#include "hdlc/error.hpp"

namespace hdlc {

// Dense row-major tensor of up to 4 extents. Activations use
// (batch, channels, height, width); convolution filters use
// (out_channels, in_channels, height, width); flattened activations
// use (batch, units).
template <class T>
struct TensorT {
  std::vector<int> shape;
  std::vector<T> data;

  TensorT() = default;
  explicit TensorT(std::vector<int> s) : shape(std::move(s)) {
    data.assign(static_cast<size_t>(numel_of(shape)), T{0});
  }
  TensorT(std::vector<int> s, std::vector<T> d)
      : shape(std::move(s)), data(std::move(d)) {
    if (static_cast<int64_t>(data.size()) != numel_of(shape))
      throw ShapeError("tensor data length does not match shape");
  }

  static int64_t numel_of(const std::vector<int>& s) {
    if (s.size() > 4) throw ShapeError("tensor rank exceeds 4");
    int64_t n = 1;
    for (int e : s) {
      if (e <= 0) throw ShapeError("non-positive tensor extent");
      n *= e;
    }
    return n;
  }

  int64_t numel() const { return static_cast<int64_t>(data.size()); }
  int rank() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape[static_cast<size_t>(i)]; }

  T& at(int a) { return data[static_cast<size_t>(a)]; }
  const T& at(int a) const { return data[static_cast<size_t>(a)]; }
  T& at(int a, int b) {
    assert(rank() == 2);
    return data[static_cast<size_t>(a) * shape[1] + b];
  }
  const T& at(int a, int b) const {
    assert(rank() == 2);
    return data[static_cast<size_t>(a) * shape[1] + b];
  }
  T& at(int a, int b, int c) {
    assert(rank() == 3);
    return data[(static_cast<size_t>(a) * shape[1] + b) * shape[2] + c];
  }
  const T& at(int a, int b, int c) const {
    assert(rank() == 3);
    return data[(static_cast<size_t>(a) * shape[1] + b) * shape[2] + c];
  }
  T& at(int a, int b, int c, int d) {
    assert(rank() == 4);
    return data[((static_cast<size_t>(a) * shape[1] + b) * shape[2] + c) *
                    shape[3] +
                d];
  }
  const T& at(int a, int b, int c, int d) const {
    assert(rank() == 4);
    return data[((static_cast<size_t>(a) * shape[1] + b) * shape[2] + c) *
                    shape[3] +
                d];
  }

  bool same_shape(const TensorT& o) const { return shape == o.shape; }

  bool all_finite() const {
    for (T v : data)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  void fill(T v) { std::fill(data.begin(), data.end(), v); }

  template <class U>
  TensorT<U> cast() const {
    TensorT<U> out;
    out.shape = shape;
    out.data.resize(data.size());
    for (size_t i = 0; i < data.size(); ++i)
      out.data[i] = static_cast<U>(data[i]);
    return out;
  }
};

using Tensor = TensorT<float>;

// Deterministic random source. The raw stream is std::mt19937 (whose
// output sequence the standard pins down exactly); every distribution
// here is derived from that stream by hand so results do not depend on
// the standard library's distribution implementations.
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(static_cast<uint32_t>(mix(seed, 0x9e3779b9))) {}

  uint32_t next_u32() { return gen_(); }

  // Uniform in [0, 1).
  double uniform() { return next_u32() * (1.0 / 4294967296.0); }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n).
  int below(int n) {
    assert(n > 0);
    return static_cast<int>((static_cast<uint64_t>(next_u32()) *
                             static_cast<uint64_t>(n)) >>
                            32);
  }

  bool bernoulli(double p) { return uniform() < p; }

  // Standard normal via Box-Muller.
  double gaussian() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 1e-12) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 6.283185307179586 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  // Index sampled from unnormalized non-negative weights.
  int multinomial(const std::vector<double>& weights) {
    double total = 0;
    for (double w : weights) total += w;
    assert(total > 0);
    double u = uniform() * total;
    for (size_t i = 0; i < weights.size(); ++i) {
      u -= weights[i];
      if (u < 0) return static_cast<int>(i);
    }
    return static_cast<int>(weights.size()) - 1;
  }

  template <class V>
  void shuffle(V& v) {
    for (size_t i = v.size(); i > 1; --i) {
      const size_t j = static_cast<size_t>(below(static_cast<int>(i)));
      std::swap(v[i - 1], v[j]);
    }
  }

  // splitmix64 step, used to derive independent per-sample streams.
  static uint64_t mix(uint64_t a, uint64_t b) {
    uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

 private:
  std::mt19937 gen_;
  bool have_spare_ = false;
  double spare_ = 0;
};

}  // namespace hdlc
