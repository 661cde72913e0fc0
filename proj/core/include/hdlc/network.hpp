#pragma once

#include <cstdint>
#include <vector>

#include "hdlc/layers.hpp"
#include "hdlc/ops.hpp"
#include "hdlc/tensor.hpp"

namespace hdlc {

template <class T>
struct ParamPair {
  TensorT<T> w;
  TensorT<T> b;
};

// Learned parameters for one network: one (weights, bias) pair per
// parameterized layer (conv and fullconnect), in layer order.
template <class T>
struct ModelStateT {
  NetworkSpec spec;
  std::vector<ParamPair<T>> params;
  std::vector<int> param_layer;  // spec layer index of each param pair

  int64_t total_params() const {
    int64_t n = 0;
    for (const auto& p : params) n += p.w.numel() + p.b.numel();
    return n;
  }

  // Index into params for a spec layer, or -1.
  int param_index(int layer) const {
    for (size_t i = 0; i < param_layer.size(); ++i)
      if (param_layer[i] == layer) return static_cast<int>(i);
    return -1;
  }
};

using ModelState = ModelStateT<float>;

// Weights ~ uniform(-s, s) with s = sqrt(6 / (fan_in + fan_out)),
// biases zero.
template <class T>
ModelStateT<T> init_model(const NetworkSpec& spec, uint64_t seed) {
  validate_spec(spec);
  ModelStateT<T> m;
  m.spec = spec;
  Rng rng(seed);
  for (size_t li = 0; li < spec.layers.size(); ++li) {
    const LayerSpec& layer = spec.layers[li];
    if (const auto* c = std::get_if<ConvSpec>(&layer)) {
      ParamPair<T> p{TensorT<T>({c->out_channels, c->in_channels, c->kernel_h,
                                 c->kernel_w}),
                     TensorT<T>({c->out_channels})};
      const double fan_in = c->in_channels * c->kernel_h * c->kernel_w;
      const double fan_out = c->out_channels * c->kernel_h * c->kernel_w;
      const double s = std::sqrt(6.0 / (fan_in + fan_out));
      for (T& v : p.w.data) v = static_cast<T>(rng.uniform(-s, s));
      m.params.push_back(std::move(p));
      m.param_layer.push_back(static_cast<int>(li));
    } else if (const auto* f = std::get_if<FullConnectSpec>(&layer)) {
      ParamPair<T> p{TensorT<T>({f->out_units, f->in_units}),
                     TensorT<T>({f->out_units})};
      const double s = std::sqrt(6.0 / (f->in_units + f->out_units));
      for (T& v : p.w.data) v = static_cast<T>(rng.uniform(-s, s));
      m.params.push_back(std::move(p));
      m.param_layer.push_back(static_cast<int>(li));
    }
  }
  return m;
}

struct ForwardOptions {
  Mode mode = Mode::infer;
  uint64_t seed = 0;
  // Recipe toggles: disabled dropout behaves as p=0; disabled
  // stochastic sampling uses the probability-weighted average even
  // during training.
  bool dropout_enabled = true;
  bool stochastic_sampling = true;
};

template <class T>
struct ForwardTrace {
  // Output of each layer; the final entry holds softmax probabilities.
  std::vector<TensorT<T>> acts;
  // Routing indices for pooled layers, dropout masks, effective dropout
  // probabilities; empty/zero elsewhere.
  std::vector<std::vector<int64_t>> pool_index;
  std::vector<std::vector<uint8_t>> drop_mask;
  std::vector<double> drop_p;

  const TensorT<T>& probs() const { return acts.back(); }
};

namespace detail {
template <class T>
TensorT<T> flatten_batch(const TensorT<T>& x) {
  if (x.rank() == 2) return x;
  TensorT<T> out;
  out.shape = {x.dim(0), static_cast<int>(x.numel() / x.dim(0))};
  out.data = x.data;
  return out;
}
}  // namespace detail

// Composes all layer forwards in spec order. Deterministic given seed
// and mode; sample n of the batch always consumes the stream derived
// from mix(seed, n), so batch-parallel evaluation cannot reorder draws.
template <class T>
ForwardTrace<T> network_forward(const ModelStateT<T>& model,
                                const TensorT<T>& batch,
                                const ForwardOptions& opt) {
  const NetworkSpec& spec = model.spec;
  if (batch.rank() != 4 || batch.dim(1) != spec.input_c ||
      batch.dim(2) != spec.input_h || batch.dim(3) != spec.input_w)
    throw ShapeError("batch does not match network input shape");

  ForwardTrace<T> trace;
  const size_t nlayers = spec.layers.size();
  trace.acts.reserve(nlayers);
  trace.pool_index.resize(nlayers);
  trace.drop_mask.resize(nlayers);
  trace.drop_p.assign(nlayers, 0.0);

  const TensorT<T>* cur = &batch;
  int pi = 0;
  for (size_t li = 0; li < nlayers; ++li) {
    const LayerSpec& layer = spec.layers[li];
    const uint64_t layer_seed = Rng::mix(opt.seed, 0x1000 + li);
    if (const auto* c = std::get_if<ConvSpec>(&layer)) {
      const ParamPair<T>& p = model.params[pi++];
      trace.acts.push_back(
          conv_forward(*cur, p.w, p.b, c->stride, c->pad));
    } else if (std::holds_alternative<ReluSpec>(layer)) {
      trace.acts.push_back(relu_forward(*cur));
    } else if (const auto* mp = std::get_if<MaxPoolSpec>(&layer)) {
      auto r = maxpool_forward(*cur, mp->window, mp->stride, mp->pad);
      trace.pool_index[li] = std::move(r.index);
      trace.acts.push_back(std::move(r.out));
    } else if (const auto* sp = std::get_if<StochasticPoolSpec>(&layer)) {
      const Mode m = (opt.mode == Mode::train && opt.stochastic_sampling)
                         ? Mode::train
                         : Mode::infer;
      auto r = stochpool_forward(*cur, sp->window, sp->stride, sp->pad, m,
                                 layer_seed);
      trace.pool_index[li] = std::move(r.index);
      trace.acts.push_back(std::move(r.out));
    } else if (const auto* d = std::get_if<DropoutSpec>(&layer)) {
      const double p = opt.dropout_enabled ? d->p : 0.0;
      auto r = dropout_forward(*cur, p, opt.mode, layer_seed);
      trace.drop_mask[li] = std::move(r.mask);
      trace.drop_p[li] = p;
      trace.acts.push_back(std::move(r.out));
    } else if (std::holds_alternative<FullConnectSpec>(layer)) {
      const ParamPair<T>& p = model.params[pi++];
      trace.acts.push_back(fc_forward(detail::flatten_batch(*cur), p.w, p.b));
    } else if (std::holds_alternative<SoftmaxSpec>(layer)) {
      trace.acts.push_back(softmax_forward(detail::flatten_batch(*cur)));
    }
    cur = &trace.acts.back();
#ifndef NDEBUG
    assert(cur->all_finite());
#endif
  }
  return trace;
}

template <class T>
struct BackwardResult {
  std::vector<ParamPair<T>> grads;  // same layout as model params
  TensorT<T> grad_input;
  T mean_loss = 0;
};

// Mean cross-entropy backward pass over the trace produced by
// network_forward on the same batch.
template <class T>
BackwardResult<T> network_backward(const ModelStateT<T>& model,
                                   const ForwardTrace<T>& trace,
                                   const TensorT<T>& batch,
                                   const std::vector<int>& labels) {
  const NetworkSpec& spec = model.spec;
  const int n = batch.dim(0);
  BackwardResult<T> result;
  result.grads.reserve(model.params.size());
  for (const auto& p : model.params)
    result.grads.push_back({TensorT<T>(p.w.shape), TensorT<T>(p.b.shape)});

  // Softmax + cross entropy head. The logits are the input of the
  // final layer (the batch itself for a single-softmax network).
  const TensorT<T> logits = detail::flatten_batch(
      spec.layers.size() >= 2 ? trace.acts[spec.layers.size() - 2] : batch);
  SoftmaxXent<T> head = softmax_xent(logits, labels);
  T loss = 0;
  for (T l : head.losses) loss += l;
  result.mean_loss = loss / static_cast<T>(n);
  TensorT<T> grad = head.grad_logits;
  for (T& g : grad.data) g /= static_cast<T>(n);

  int pi = static_cast<int>(model.params.size());
  for (int li = static_cast<int>(spec.layers.size()) - 2; li >= -1; --li) {
    const TensorT<T>& input = li >= 0 ? trace.acts[static_cast<size_t>(li)]
                                      : batch;
    if (li >= 0 && grad.shape != trace.acts[static_cast<size_t>(li)].shape) {
      // Un-flatten across the fullconnect boundary.
      TensorT<T> reshaped;
      reshaped.shape = trace.acts[static_cast<size_t>(li)].shape;
      reshaped.data = std::move(grad.data);
      grad = std::move(reshaped);
    }
    if (li < 0) break;
    const LayerSpec& layer = spec.layers[static_cast<size_t>(li)];
    const TensorT<T>& layer_input =
        li == 0 ? batch : trace.acts[static_cast<size_t>(li - 1)];
    if (const auto* c = std::get_if<ConvSpec>(&layer)) {
      --pi;
      auto g = conv_backward(layer_input, model.params[pi].w, grad, c->stride,
                             c->pad);
      result.grads[pi].w = std::move(g.w);
      result.grads[pi].b = std::move(g.b);
      grad = std::move(g.x);
    } else if (std::holds_alternative<ReluSpec>(layer)) {
      grad = relu_backward(layer_input, grad);
    } else if (std::holds_alternative<MaxPoolSpec>(layer)) {
      grad = pool_backward_routed(trace.pool_index[static_cast<size_t>(li)],
                                  grad, layer_input.shape);
    } else if (const auto* sp = std::get_if<StochasticPoolSpec>(&layer)) {
      const auto& idx = trace.pool_index[static_cast<size_t>(li)];
      const bool sampled = !idx.empty() && idx[0] >= 0;
      grad = sampled
                 ? pool_backward_routed(idx, grad, layer_input.shape)
                 : stochpool_backward_average(layer_input, sp->window,
                                              sp->stride, sp->pad, grad);
    } else if (std::holds_alternative<DropoutSpec>(layer)) {
      const auto& mask = trace.drop_mask[static_cast<size_t>(li)];
      if (!mask.empty()) {
        grad = dropout_backward(mask, grad);
      } else {
        const T keep =
            static_cast<T>(1.0 - trace.drop_p[static_cast<size_t>(li)]);
        for (T& g : grad.data) g *= keep;
      }
    } else if (std::holds_alternative<FullConnectSpec>(layer)) {
      --pi;
      auto g = fc_backward(detail::flatten_batch(layer_input),
                           model.params[pi].w, grad);
      result.grads[pi].w = std::move(g.w);
      result.grads[pi].b = std::move(g.b);
      grad = std::move(g.x);
    }
    (void)input;
  }
  if (grad.shape != batch.shape && grad.numel() == batch.numel())
    grad.shape = batch.shape;
  result.grad_input = std::move(grad);
  return result;
}

// Simple dataset container used by the trainers: one image per batch
// row, labels in [0, class_count).
struct TensorDataset {
  Tensor images;  // (count, c, h, w)
  std::vector<int> labels;
  int class_count = 0;

  int64_t size() const { return images.shape.empty() ? 0 : images.dim(0); }
};

}  // namespace hdlc
