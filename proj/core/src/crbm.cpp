#include "hdlc/crbm.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "hdlc/dataio.hpp"

namespace hdlc {

std::string format_crbm_log(const std::vector<CrbmEpochLog>& log) {
  std::ostringstream out;
  for (const CrbmEpochLog& e : log)
    out << strf("%d, %.6f, %.4f, %.6f\n", e.epoch, e.recon_mse,
                e.var_ratio_mean, e.lr);
  return out.str();
}

CrbmTrainResult train_crbm(const Tensor& dataset, const CrbmGeometry& geometry,
                           const Cd1Config& cfg) {
  if (dataset.rank() != 4 || dataset.dim(0) < 1)
    throw ConfigError("train_crbm: empty dataset");
  if (cfg.batch_size < 1 || cfg.epochs < 1)
    throw ConfigError("train_crbm: batch_size and epochs must be >= 1");

  const int n = dataset.dim(0);
  const int c = dataset.dim(1), h = dataset.dim(2), w = dataset.dim(3);
  if (c != geometry.in_channels)
    throw ShapeError(strf("train_crbm: dataset has %d channels, geometry %d",
                          c, geometry.in_channels));

  CrbmTrainer trainer(init_crbm<float>(geometry, cfg.seed), cfg);
  std::vector<int> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  Rng shuffle_rng(Rng::mix(cfg.seed, 0x0d));
  const int64_t img_sz = static_cast<int64_t>(c) * h * w;

  CrbmTrainResult result;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    trainer.begin_epoch(epoch);
    shuffle_rng.shuffle(order);
    double mse_sum = 0, ratio_sum = 0;
    int batches = 0;
    for (int start = 0; start < n; start += cfg.batch_size) {
      const int bs = std::min(cfg.batch_size, n - start);
      Tensor batch({bs, c, h, w});
      for (int i = 0; i < bs; ++i)
        std::copy_n(dataset.data.begin() +
                        order[static_cast<size_t>(start + i)] * img_sz,
                    img_sz, batch.data.begin() + i * img_sz);
      const ReconStats stats = trainer.step(batch);
      mse_sum += stats.recon_mse;
      ratio_sum += stats.var_ratio;
      ++batches;
    }
    result.log.push_back({epoch, mse_sum / batches, ratio_sum / batches,
                          trainer.lr()});
  }
  result.state = trainer.take_state();
  return result;
}

void export_filters(const Tensor& filters, const std::string& path) {
  if (filters.rank() != 4)
    throw ShapeError("export_filters expects (K, channels, kh, kw)");
  const int k = filters.dim(0), c = filters.dim(1), kh = filters.dim(2),
            kw = filters.dim(3);
  if (c != 1 && c != 3)
    throw ShapeError(strf("export_filters supports 1 or 3 channels, got %d",
                          c));

  // Grid as square as possible, 1-pixel separators on all sides.
  const int cols = static_cast<int>(std::ceil(std::sqrt(k)));
  const int rows = (k + cols - 1) / cols;
  const int out_h = rows * (kh + 1) + 1;
  const int out_w = cols * (kw + 1) + 1;
  Tensor image({c, out_h, out_w});

  for (int f = 0; f < k; ++f) {
    float lo = filters.at(f, 0, 0, 0), hi = lo;
    for (int ch = 0; ch < c; ++ch)
      for (int u = 0; u < kh; ++u)
        for (int v = 0; v < kw; ++v) {
          lo = std::min(lo, filters.at(f, ch, u, v));
          hi = std::max(hi, filters.at(f, ch, u, v));
        }
    const int gy = f / cols, gx = f % cols;
    const int oy = 1 + gy * (kh + 1), ox = 1 + gx * (kw + 1);
    for (int ch = 0; ch < c; ++ch)
      for (int u = 0; u < kh; ++u)
        for (int v = 0; v < kw; ++v) {
          // Constant filters map to mid-gray (pixel value 128).
          const float norm =
              hi > lo ? (filters.at(f, ch, u, v) - lo) / (hi - lo)
                      : 128.0f / 255.0f;
          image.at(ch, oy + u, ox + v) = norm;
        }
  }
  encode_pnm_file(image, path);
}

void transfer_to_cnn(const CrbmState& s, ModelState& model, int layer_index) {
  if (layer_index < 0 ||
      layer_index >= static_cast<int>(model.spec.layers.size()))
    throw ConfigError(strf("transfer_to_cnn: layer index %d out of range",
                           layer_index));
  const auto* conv =
      std::get_if<ConvSpec>(&model.spec.layers[static_cast<size_t>(layer_index)]);
  if (!conv)
    throw ConfigError(strf("transfer_to_cnn: layer %d is not convolutional",
                           layer_index));
  const int pi = model.param_index(layer_index);
  ParamPair<float>& p = model.params[static_cast<size_t>(pi)];
  if (p.w.shape != s.filters.shape)
    throw ShapeError(strf(
        "transfer_to_cnn: conv filters (%d,%d,%d,%d) vs CRBM (%d,%d,%d,%d)",
        p.w.dim(0), p.w.dim(1), p.w.dim(2), p.w.dim(3), s.filters.dim(0),
        s.filters.dim(1), s.filters.dim(2), s.filters.dim(3)));
  p.w = s.filters;
  for (int k = 0; k < s.filter_count(); ++k)
    p.b.at(k) = s.hidden_bias[static_cast<size_t>(k)];
}

}  // namespace hdlc
