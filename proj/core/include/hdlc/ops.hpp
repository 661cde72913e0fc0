#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "hdlc/error.hpp"
#include "hdlc/tensor.hpp"

namespace hdlc {

enum class Mode { train, infer };

inline int conv_out_extent(int in, int kernel, int stride, int pad) {
  if (stride < 1) throw ShapeError("stride must be >= 1");
  if (pad < 0) throw ShapeError("pad must be >= 0");
  const int out = (in + 2 * pad - kernel) / stride + 1;
  if (out < 1)
    throw ShapeError(strf("non-positive output extent for in=%d kernel=%d "
                          "stride=%d pad=%d",
                          in, kernel, stride, pad));
  return out;
}

namespace detail {
inline int ceil_div_nonneg(int a, int d) { return a > 0 ? (a + d - 1) / d : 0; }

// Output index range [lo, hi) for which in-bounds input index
// i*stride + k - pad lands in [0, in).
inline void out_range(int out, int in, int k, int stride, int pad, int* lo,
                      int* hi) {
  *lo = std::min(out, ceil_div_nonneg(pad - k, stride));
  *hi = std::min(out, (in - 1 - k + pad) / stride + 1);
  if (in - 1 - k + pad < 0) *hi = 0;
}
}  // namespace detail

// out[n,o,i,j] = bias[o] + sum_{c,u,v} x[n,c,i*s+u-p,j*s+v-p] * w[o,c,u,v],
// zero outside borders (cross-correlation convention).
template <class T>
TensorT<T> conv_forward(const TensorT<T>& x, const TensorT<T>& w,
                        const TensorT<T>& b, int stride, int pad) {
  if (x.rank() != 4 || w.rank() != 4)
    throw ShapeError("conv_forward expects rank-4 input and filters");
  const int n = x.dim(0), ci = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const int co = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  if (w.dim(1) != ci)
    throw ShapeError(strf("conv channel mismatch: input %d, filters %d", ci,
                          w.dim(1)));
  if (b.numel() != co) throw ShapeError("conv bias length != out channels");
  const int oh = conv_out_extent(h, kh, stride, pad);
  const int ow = conv_out_extent(wd, kw, stride, pad);

  TensorT<T> out({n, co, oh, ow});
  for (int in = 0; in < n; ++in) {
    for (int o = 0; o < co; ++o) {
      T* op = &out.at(in, o, 0, 0);
      const T bias = b.at(o);
      for (int i = 0; i < oh * ow; ++i) op[i] = bias;
      for (int c = 0; c < ci; ++c) {
        const T* xp = &x.at(in, c, 0, 0);
        for (int u = 0; u < kh; ++u) {
          int ilo, ihi;
          detail::out_range(oh, h, u, stride, pad, &ilo, &ihi);
          for (int v = 0; v < kw; ++v) {
            const T wval = w.at(o, c, u, v);
            int jlo, jhi;
            detail::out_range(ow, wd, v, stride, pad, &jlo, &jhi);
            for (int i = ilo; i < ihi; ++i) {
              const T* xrow = xp + (i * stride + u - pad) * wd + (v - pad);
              T* orow = op + i * ow;
              for (int j = jlo; j < jhi; ++j)
                orow[j] += wval * xrow[j * stride];
            }
          }
        }
      }
    }
  }
  return out;
}

template <class T>
struct ConvGrads {
  TensorT<T> x, w, b;
};

// Exact adjoints of conv_forward with respect to input, filters and bias.
template <class T>
ConvGrads<T> conv_backward(const TensorT<T>& x, const TensorT<T>& w,
                           const TensorT<T>& grad_out, int stride, int pad) {
  const int n = x.dim(0), ci = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const int co = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const int oh = grad_out.dim(2), ow = grad_out.dim(3);
  if (grad_out.dim(0) != n || grad_out.dim(1) != co)
    throw ShapeError("conv_backward: grad_out shape mismatch");

  ConvGrads<T> g{TensorT<T>(x.shape), TensorT<T>(w.shape),
                 TensorT<T>({co})};
  for (int o = 0; o < co; ++o) {
    T acc = 0;
    for (int in = 0; in < n; ++in) {
      const T* gp = &grad_out.at(in, o, 0, 0);
      for (int i = 0; i < oh * ow; ++i) acc += gp[i];
    }
    g.b.at(o) = acc;
  }
  for (int in = 0; in < n; ++in) {
    for (int o = 0; o < co; ++o) {
      const T* gp = &grad_out.at(in, o, 0, 0);
      for (int c = 0; c < ci; ++c) {
        const T* xp = &x.at(in, c, 0, 0);
        T* gxp = &g.x.at(in, c, 0, 0);
        for (int u = 0; u < kh; ++u) {
          int ilo, ihi;
          detail::out_range(oh, h, u, stride, pad, &ilo, &ihi);
          for (int v = 0; v < kw; ++v) {
            int jlo, jhi;
            detail::out_range(ow, wd, v, stride, pad, &jlo, &jhi);
            const T wval = w.at(o, c, u, v);
            T wacc = 0;
            for (int i = ilo; i < ihi; ++i) {
              const int xi = i * stride + u - pad;
              const T* grow = gp + i * ow;
              const T* xrow = xp + xi * wd + (v - pad);
              T* gxrow = gxp + xi * wd + (v - pad);
              for (int j = jlo; j < jhi; ++j) {
                const T gval = grow[j];
                gxrow[j * stride] += gval * wval;
                wacc += gval * xrow[j * stride];
              }
            }
            g.w.at(o, c, u, v) += wacc;
          }
        }
      }
    }
  }
  return g;
}

template <class T>
TensorT<T> relu_forward(const TensorT<T>& x) {
  TensorT<T> out = x;
  for (T& v : out.data) v = v > T{0} ? v : T{0};
  return out;
}

// Subgradient 0 at exactly 0.
template <class T>
TensorT<T> relu_backward(const TensorT<T>& x, const TensorT<T>& grad_out) {
  if (!x.same_shape(grad_out)) throw ShapeError("relu_backward shape mismatch");
  TensorT<T> gx(x.shape);
  for (size_t i = 0; i < x.data.size(); ++i)
    gx.data[i] = x.data[i] > T{0} ? grad_out.data[i] : T{0};
  return gx;
}

template <class T>
struct PoolResult {
  TensorT<T> out;
  // Flat index into the input tensor per output element; -1 where the
  // routing is undefined (stochastic pooling in infer mode).
  std::vector<int64_t> index;
};

inline void check_pool_params(int window, int stride, int pad) {
  if (window < 1) throw ShapeError("pool window must be >= 1");
  if (stride < 1) throw ShapeError("pool stride must be >= 1");
  if (pad < 0 || pad >= window)
    throw ShapeError("pool pad must satisfy 0 <= pad < window");
}

// Maximum over each (possibly overlapping) window; ties broken by the
// first element in row-major scan order. Padding cells never win.
template <class T>
PoolResult<T> maxpool_forward(const TensorT<T>& x, int window, int stride,
                              int pad = 0) {
  check_pool_params(window, stride, pad);
  if (x.rank() != 4) throw ShapeError("maxpool expects rank-4 input");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int oh = conv_out_extent(h, window, stride, pad);
  const int ow = conv_out_extent(w, window, stride, pad);
  PoolResult<T> r{TensorT<T>({n, c, oh, ow}), {}};
  r.index.resize(static_cast<size_t>(r.out.numel()));
  size_t oidx = 0;
  for (int in = 0; in < n; ++in)
    for (int ch = 0; ch < c; ++ch)
      for (int i = 0; i < oh; ++i)
        for (int j = 0; j < ow; ++j) {
          const int y0 = std::max(0, i * stride - pad);
          const int y1 = std::min(h, i * stride - pad + window);
          const int x0 = std::max(0, j * stride - pad);
          const int x1 = std::min(w, j * stride - pad + window);
          T best{};
          int64_t besti = -1;
          for (int y = y0; y < y1; ++y)
            for (int xx = x0; xx < x1; ++xx) {
              const T v = x.at(in, ch, y, xx);
              if (besti < 0 || v > best) {
                best = v;
                besti = &x.at(in, ch, y, xx) - x.data.data();
              }
            }
          r.out.data[oidx] = best;
          r.index[oidx] = besti;
          ++oidx;
        }
  return r;
}

// Routes each output gradient to its recorded input position,
// accumulating where windows overlap.
template <class T>
TensorT<T> pool_backward_routed(const std::vector<int64_t>& index,
                                const TensorT<T>& grad_out,
                                const std::vector<int>& input_shape) {
  if (index.size() != grad_out.data.size())
    throw ShapeError("pool backward: index/grad length mismatch");
  TensorT<T> gx(input_shape);
  for (size_t i = 0; i < index.size(); ++i) {
    if (index[i] < 0) throw ShapeError("pool backward: undefined routing");
    gx.data[static_cast<size_t>(index[i])] += grad_out.data[i];
  }
  return gx;
}

// Training mode samples one activation per region from the multinomial
// p_i = a_i / sum(a); all-zero regions fall back to uniform. Inference
// outputs the probability-weighted average sum(p_i * a_i). Activations
// must be non-negative.
template <class T>
PoolResult<T> stochpool_forward(const TensorT<T>& x, int window, int stride,
                                int pad, Mode mode, uint64_t seed) {
  check_pool_params(window, stride, pad);
  if (x.rank() != 4) throw ShapeError("stochastic pool expects rank-4 input");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int oh = conv_out_extent(h, window, stride, pad);
  const int ow = conv_out_extent(w, window, stride, pad);
  PoolResult<T> r{TensorT<T>({n, c, oh, ow}), {}};
  r.index.assign(static_cast<size_t>(r.out.numel()), -1);
  std::vector<int64_t> cell;
  size_t oidx = 0;
  for (int in = 0; in < n; ++in) {
    Rng rng(Rng::mix(seed, static_cast<uint64_t>(in)));
    for (int ch = 0; ch < c; ++ch)
      for (int i = 0; i < oh; ++i)
        for (int j = 0; j < ow; ++j) {
          const int y0 = std::max(0, i * stride - pad);
          const int y1 = std::min(h, i * stride - pad + window);
          const int x0 = std::max(0, j * stride - pad);
          const int x1 = std::min(w, j * stride - pad + window);
          cell.clear();
          double total = 0;
          for (int y = y0; y < y1; ++y)
            for (int xx = x0; xx < x1; ++xx) {
              const T v = x.at(in, ch, y, xx);
              if (v < T{0})
                throw ConfigError(
                    "stochastic pooling requires non-negative activations");
              total += static_cast<double>(v);
              cell.push_back(&x.at(in, ch, y, xx) - x.data.data());
            }
          if (mode == Mode::train) {
            int pick;
            if (total <= 0) {
              pick = rng.below(static_cast<int>(cell.size()));
            } else {
              double u = rng.uniform() * total;
              pick = static_cast<int>(cell.size()) - 1;
              for (size_t t = 0; t < cell.size(); ++t) {
                u -= static_cast<double>(x.data[cell[t]]);
                if (u < 0) {
                  pick = static_cast<int>(t);
                  break;
                }
              }
            }
            r.index[oidx] = cell[static_cast<size_t>(pick)];
            r.out.data[oidx] = x.data[cell[static_cast<size_t>(pick)]];
          } else {
            double acc = 0;
            if (total > 0)
              for (int64_t ci : cell)
                acc += static_cast<double>(x.data[ci]) *
                       static_cast<double>(x.data[ci]) / total;
            r.out.data[oidx] = static_cast<T>(acc);
          }
          ++oidx;
        }
  }
  return r;
}

// Backward of the probability-weighted average sum(a_i^2) / sum(a_i):
// d(out)/d(a_j) = (2 a_j - out) / sum(a); zero for all-zero regions.
template <class T>
TensorT<T> stochpool_backward_average(const TensorT<T>& x, int window,
                                      int stride, int pad,
                                      const TensorT<T>& grad_out) {
  check_pool_params(window, stride, pad);
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int oh = grad_out.dim(2), ow = grad_out.dim(3);
  TensorT<T> gx(x.shape);
  for (int in = 0; in < n; ++in)
    for (int ch = 0; ch < c; ++ch)
      for (int i = 0; i < oh; ++i)
        for (int j = 0; j < ow; ++j) {
          const int y0 = std::max(0, i * stride - pad);
          const int y1 = std::min(h, i * stride - pad + window);
          const int x0 = std::max(0, j * stride - pad);
          const int x1 = std::min(w, j * stride - pad + window);
          T total = 0, sq = 0;
          for (int y = y0; y < y1; ++y)
            for (int xx = x0; xx < x1; ++xx) {
              const T v = x.at(in, ch, y, xx);
              total += v;
              sq += v * v;
            }
          if (total <= T{0}) continue;
          const T out = sq / total;
          const T gval = grad_out.at(in, ch, i, j);
          for (int y = y0; y < y1; ++y)
            for (int xx = x0; xx < x1; ++xx)
              gx.at(in, ch, y, xx) +=
                  gval * (T{2} * x.at(in, ch, y, xx) - out) / total;
        }
  return gx;
}

template <class T>
struct DropoutResult {
  TensorT<T> out;
  std::vector<uint8_t> mask;  // 1 = kept; empty in infer mode
};

// Training zeroes each element independently with probability p and
// passes survivors unscaled; inference multiplies everything by (1-p).
template <class T>
DropoutResult<T> dropout_forward(const TensorT<T>& x, double p, Mode mode,
                                 uint64_t seed) {
  if (p < 0 || p >= 1) throw ConfigError("dropout probability must be in [0,1)");
  DropoutResult<T> r;
  r.out = x;
  if (mode == Mode::infer) {
    const T keep = static_cast<T>(1.0 - p);
    for (T& v : r.out.data) v *= keep;
    return r;
  }
  r.mask.assign(x.data.size(), 1);
  const int batch = x.dim(0);
  const int64_t per = x.numel() / batch;
  for (int n = 0; n < batch; ++n) {
    Rng rng(Rng::mix(seed, static_cast<uint64_t>(n)));
    for (int64_t i = 0; i < per; ++i) {
      const size_t idx = static_cast<size_t>(n * per + i);
      if (rng.bernoulli(p)) {
        r.mask[idx] = 0;
        r.out.data[idx] = T{0};
      }
    }
  }
  return r;
}

template <class T>
TensorT<T> dropout_backward(const std::vector<uint8_t>& mask,
                            const TensorT<T>& grad_out) {
  if (mask.size() != grad_out.data.size())
    throw ShapeError("dropout_backward mask/grad length mismatch");
  TensorT<T> gx = grad_out;
  for (size_t i = 0; i < mask.size(); ++i)
    if (!mask[i]) gx.data[i] = T{0};
  return gx;
}

// out[n,o] = b[o] + sum_i w[o,i] * x[n,i]
template <class T>
TensorT<T> fc_forward(const TensorT<T>& x, const TensorT<T>& w,
                      const TensorT<T>& b) {
  if (x.rank() != 2 || w.rank() != 2)
    throw ShapeError("fc_forward expects rank-2 input and weights");
  const int n = x.dim(0), in = x.dim(1);
  const int out = w.dim(0);
  if (w.dim(1) != in)
    throw ShapeError(strf("fc dimension mismatch: input %d, weights expect %d",
                          in, w.dim(1)));
  if (b.numel() != out) throw ShapeError("fc bias length != out units");
  TensorT<T> y({n, out});
  for (int s = 0; s < n; ++s) {
    const T* xp = &x.at(s, 0);
    for (int o = 0; o < out; ++o) {
      const T* wp = &w.at(o, 0);
      T acc = b.at(o);
      for (int i = 0; i < in; ++i) acc += wp[i] * xp[i];
      y.at(s, o) = acc;
    }
  }
  return y;
}

template <class T>
struct FcGrads {
  TensorT<T> x, w, b;
};

template <class T>
FcGrads<T> fc_backward(const TensorT<T>& x, const TensorT<T>& w,
                       const TensorT<T>& grad_out) {
  const int n = x.dim(0), in = x.dim(1), out = w.dim(0);
  if (grad_out.dim(0) != n || grad_out.dim(1) != out)
    throw ShapeError("fc_backward grad shape mismatch");
  FcGrads<T> g{TensorT<T>(x.shape), TensorT<T>(w.shape), TensorT<T>({out})};
  for (int s = 0; s < n; ++s) {
    const T* xp = &x.at(s, 0);
    T* gxp = &g.x.at(s, 0);
    for (int o = 0; o < out; ++o) {
      const T gval = grad_out.at(s, o);
      g.b.at(o) += gval;
      const T* wp = &w.at(o, 0);
      T* gwp = &g.w.at(o, 0);
      for (int i = 0; i < in; ++i) {
        gxp[i] += gval * wp[i];
        gwp[i] += gval * xp[i];
      }
    }
  }
  return g;
}

// Numerically stable softmax over the last extent of a rank-2 tensor.
template <class T>
TensorT<T> softmax_forward(const TensorT<T>& logits) {
  if (logits.rank() != 2) throw ShapeError("softmax expects rank-2 logits");
  const int n = logits.dim(0), k = logits.dim(1);
  TensorT<T> p(logits.shape);
  for (int s = 0; s < n; ++s) {
    T mx = logits.at(s, 0);
    for (int i = 1; i < k; ++i) mx = std::max(mx, logits.at(s, i));
    T total = 0;
    for (int i = 0; i < k; ++i) {
      const T e = std::exp(logits.at(s, i) - mx);
      p.at(s, i) = e;
      total += e;
    }
    for (int i = 0; i < k; ++i) p.at(s, i) /= total;
  }
  return p;
}

template <class T>
struct SoftmaxXent {
  TensorT<T> probs;
  std::vector<T> losses;   // -log p[label] per sample
  TensorT<T> grad_logits;  // probs - one_hot(label), per sample (unscaled)
};

template <class T>
SoftmaxXent<T> softmax_xent(const TensorT<T>& logits,
                            const std::vector<int>& labels) {
  const int n = logits.dim(0), k = logits.dim(1);
  if (static_cast<int>(labels.size()) != n)
    throw ShapeError("softmax_xent: one label per sample required");
  SoftmaxXent<T> r;
  r.probs = softmax_forward(logits);
  r.grad_logits = r.probs;
  r.losses.resize(static_cast<size_t>(n));
  for (int s = 0; s < n; ++s) {
    const int label = labels[static_cast<size_t>(s)];
    if (label < 0 || label >= k)
      throw ConfigError(strf("label %d out of range [0,%d)", label, k));
    const T p = std::max(r.probs.at(s, label),
                         static_cast<T>(1e-30));
    r.losses[static_cast<size_t>(s)] = -std::log(p);
    r.grad_logits.at(s, label) -= T{1};
  }
  return r;
}

}  // namespace hdlc
