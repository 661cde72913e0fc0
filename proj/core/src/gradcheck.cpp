#include "hdlc/gradcheck.hpp"

namespace hdlc {

namespace {

// Mean cross-entropy loss plus a signature of the piecewise-linear
// routing taken by the forward pass: max-pool argmax indices and ReLU
// sign patterns. Two evaluations with equal signatures lie on the same
// linear region, where central differences are exact up to the smooth
// softmax curvature.
struct Probe {
  double loss = 0;
  std::vector<int64_t> signature;
};

Probe probe_loss(const ModelStateT<double>& model, const TensorT<double>& batch,
                 const std::vector<int>& labels, const ForwardOptions& opt) {
  auto trace = network_forward(model, batch, opt);
  Probe p;
  for (size_t li = 0; li < trace.pool_index.size(); ++li)
    p.signature.insert(p.signature.end(), trace.pool_index[li].begin(),
                       trace.pool_index[li].end());
  for (size_t li = 0; li < model.spec.layers.size(); ++li)
    if (std::holds_alternative<ReluSpec>(model.spec.layers[li])) {
      const TensorT<double>& input =
          li == 0 ? batch : trace.acts[li - 1];
      int64_t word = 0;
      int bit = 0;
      for (double v : input.data) {
        word = (word << 1) | (v > 0 ? 1 : 0);
        if (++bit == 62) {
          p.signature.push_back(word);
          word = 0;
          bit = 0;
        }
      }
      p.signature.push_back(word);
    }
  const TensorT<double>& probs = trace.probs();
  for (size_t s = 0; s < labels.size(); ++s) {
    const double pl =
        std::max(probs.at(static_cast<int>(s), labels[s]), 1e-300);
    p.loss += -std::log(pl);
  }
  p.loss /= static_cast<double>(labels.size());
  return p;
}

}  // namespace

GradCheckResult gradcheck_network(const NetworkSpec& spec, uint64_t seed,
                                  double eps, double tolerance, int batch,
                                  int max_coords_per_tensor) {
  validate_spec(spec);
  ModelStateT<double> model = init_model<double>(spec, seed);

  Rng rng(Rng::mix(seed, 0xfd));
  TensorT<double> x({batch, spec.input_c, spec.input_h, spec.input_w});
  for (double& v : x.data) v = rng.uniform();
  std::vector<int> labels(static_cast<size_t>(batch));
  for (int& l : labels) l = rng.below(spec.class_count);

  ForwardOptions opt;
  opt.mode = Mode::train;
  opt.seed = Rng::mix(seed, 0xab);
  opt.stochastic_sampling = false;  // sampled picks are not differentiable

  auto trace = network_forward(model, x, opt);
  auto back = network_backward(model, trace, x, labels);

  GradCheckResult result;
  for (size_t pi = 0; pi < model.params.size(); ++pi) {
    for (int part = 0; part < 2; ++part) {
      TensorT<double>& theta =
          part == 0 ? model.params[pi].w : model.params[pi].b;
      const TensorT<double>& analytic =
          part == 0 ? back.grads[pi].w : back.grads[pi].b;
      const int64_t n = theta.numel();
      const int64_t stride =
          std::max<int64_t>(1, n / max_coords_per_tensor);
      for (int64_t i = 0; i < n; i += stride) {
        double& coord = theta.data[static_cast<size_t>(i)];
        const double keep = coord;
        const Probe up = [&] {
          coord = keep + eps;
          return probe_loss(model, x, labels, opt);
        }();
        const Probe down = [&] {
          coord = keep - eps;
          return probe_loss(model, x, labels, opt);
        }();
        const Probe up_h = [&] {
          coord = keep + eps / 2;
          return probe_loss(model, x, labels, opt);
        }();
        const Probe down_h = [&] {
          coord = keep - eps / 2;
          return probe_loss(model, x, labels, opt);
        }();
        coord = keep;
        if (up.signature != down.signature ||
            up.signature != up_h.signature ||
            up.signature != down_h.signature) {
          ++result.skipped;  // a pooling/ReLU kink lies inside +-eps
          continue;
        }
        // Richardson-extrapolated central differences: O(eps^4) error.
        const double c_full = (up.loss - down.loss) / (2 * eps);
        const double c_half = (up_h.loss - down_h.loss) / eps;
        const double fd = (4 * c_half - c_full) / 3;
        const double an = analytic.data[static_cast<size_t>(i)];
        const double rel = grad_rel_error(fd, an);
        ++result.checked;
        if (rel > result.max_rel_error) {
          result.max_rel_error = rel;
          result.worst = strf(
              "parameterized layer %zu %s[%lld]: analytic %.8g vs fd %.8g",
              pi, part == 0 ? "weights" : "bias", static_cast<long long>(i),
              an, fd);
        }
      }
    }
  }
  result.pass = result.max_rel_error < tolerance;
  return result;
}

}  // namespace hdlc
