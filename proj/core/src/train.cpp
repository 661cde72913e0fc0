#include "hdlc/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace hdlc {

OptimState init_optim(const ModelState& model, double lr, double momentum,
                      int batch_size) {
  if (momentum < 0 || momentum >= 1)
    throw ConfigError("momentum must be in [0,1)");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  OptimState o;
  o.lr = lr;
  o.momentum = momentum;
  o.batch_size = batch_size;
  for (const auto& p : model.params)
    o.velocity.push_back({Tensor(p.w.shape), Tensor(p.b.shape)});
  return o;
}

namespace {
void sgd_apply(Tensor& param, const Tensor& grad, Tensor& vel, double lr,
               double momentum, int layer, const char* what) {
  if (!param.same_shape(grad))
    throw ShapeError(strf("sgd_step: %s gradient shape mismatch at "
                          "parameterized layer %d",
                          what, layer));
  for (size_t i = 0; i < param.data.size(); ++i) {
    const float g = grad.data[i];
    if (!std::isfinite(g))
      throw Error(strf("sgd_step: non-finite %s gradient at parameterized "
                       "layer %d",
                       what, layer));
    vel.data[i] = static_cast<float>(momentum * vel.data[i] - lr * g);
    param.data[i] += vel.data[i];
  }
}
}  // namespace

void sgd_step(ModelState& model, const std::vector<ParamPair<float>>& grads,
              OptimState& optim) {
  if (grads.size() != model.params.size() ||
      optim.velocity.size() != model.params.size())
    throw ShapeError("sgd_step: gradient/velocity layout mismatch");
  for (size_t i = 0; i < model.params.size(); ++i) {
    sgd_apply(model.params[i].w, grads[i].w, optim.velocity[i].w, optim.lr,
              optim.momentum, static_cast<int>(i), "weight");
    sgd_apply(model.params[i].b, grads[i].b, optim.velocity[i].b, optim.lr,
              optim.momentum, static_cast<int>(i), "bias");
  }
}

TrainRecipe parse_recipe(std::istream& in) {
  TrainRecipe r;
  bool saw_format = false;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto h = line.find('#'); h != std::string::npos) line.resize(h);
    std::istringstream ss(line);
    std::string key;
    if (!(ss >> key)) continue;
    auto bad = [&](const char* what) {
      return ParseError(strf("line %d: %s", lineno, what));
    };
    if (key == "format") {
      std::string v;
      ss >> v;
      if (v != "recipe/1") throw bad("unsupported recipe format");
      saw_format = true;
    } else if (key == "epochs") {
      if (!(ss >> r.epochs) || r.epochs < 1) throw bad("epochs must be >= 1");
    } else if (key == "lr") {
      if (!(ss >> r.lr)) throw bad("bad lr");
    } else if (key == "momentum") {
      if (!(ss >> r.momentum) || r.momentum < 0 || r.momentum >= 1)
        throw bad("momentum must be in [0,1)");
    } else if (key == "batch_size") {
      if (!(ss >> r.batch_size) || r.batch_size < 1)
        throw bad("batch_size must be >= 1");
    } else if (key == "seed") {
      if (!(ss >> r.seed)) throw bad("bad seed");
    } else if (key == "dropout" || key == "stochastic") {
      std::string v;
      if (!(ss >> v) || (v != "on" && v != "off"))
        throw bad("toggle must be 'on' or 'off'");
      (key == "dropout" ? r.dropout : r.stochastic) = (v == "on");
    } else if (key == "init") {
      std::string mode;
      if (!(ss >> mode)) throw bad("init expects a mode");
      if (mode == "scratch") {
        r.warm.reset();
      } else if (mode == "warm_start") {
        WarmStartInit w;
        if (!(ss >> w.path)) throw bad("warm_start expects a model path");
        std::string scope;
        if (ss >> scope) {
          if (scope == "all") {
            w.layer_count = -1;
          } else if (scope == "first") {
            if (!(ss >> w.layer_count) || w.layer_count < 1)
              throw bad("warm_start first expects a positive layer count");
          } else {
            throw bad("warm_start scope must be 'all' or 'first <n>'");
          }
        }
        r.warm = std::move(w);
      } else {
        throw bad("init mode must be 'scratch' or 'warm_start'");
      }
    } else {
      throw ParseError(strf("line %d: unknown recipe key '%s'", lineno,
                            key.c_str()));
    }
  }
  if (!saw_format) throw ParseError("missing 'format recipe/1' line");
  return r;
}

TrainRecipe parse_recipe_text(const std::string& text) {
  std::istringstream ss(text);
  return parse_recipe(ss);
}

TrainRecipe load_recipe(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open recipe: " + path);
  return parse_recipe(in);
}

std::string serialize_recipe(const TrainRecipe& r) {
  std::ostringstream out;
  out << "format recipe/1\n";
  out << "epochs " << r.epochs << '\n';
  out << strf("lr %g\n", r.lr);
  out << strf("momentum %g\n", r.momentum);
  out << "batch_size " << r.batch_size << '\n';
  out << "seed " << r.seed << '\n';
  out << "dropout " << (r.dropout ? "on" : "off") << '\n';
  out << "stochastic " << (r.stochastic ? "on" : "off") << '\n';
  if (r.warm) {
    out << "init warm_start " << r.warm->path;
    if (r.warm->layer_count < 0)
      out << " all\n";
    else
      out << " first " << r.warm->layer_count << '\n';
  } else {
    out << "init scratch\n";
  }
  return out.str();
}

std::string format_epoch_log(const std::vector<EpochLog>& log) {
  std::ostringstream out;
  for (const EpochLog& e : log)
    out << strf("%d, %.6f, %.4f, %.4f\n", e.epoch, e.mean_loss, e.top1,
                e.top5);
  return out.str();
}

namespace {
// label within the k highest-probability classes, ties to lower index.
bool in_top_k(const Tensor& probs, int sample, int label, int k) {
  const int classes = probs.dim(1);
  const float pl = probs.at(sample, label);
  int better = 0;
  for (int c = 0; c < classes; ++c) {
    if (c == label) continue;
    const float p = probs.at(sample, c);
    if (p > pl || (p == pl && c < label)) ++better;
  }
  return better < k;
}
}  // namespace

TrainResult train_model(const NetworkSpec& spec, const TensorDataset& data,
                        const TrainRecipe& recipe, const ModelState& init) {
  if (data.size() == 0) throw ConfigError("train_model: empty dataset");
  for (int label : data.labels)
    if (label < 0 || label >= data.class_count)
      throw ConfigError(strf("train_model: label %d out of range [0,%d)",
                             label, data.class_count));
  validate_spec(spec);
  if (spec.class_count != data.class_count)
    throw ConfigError(strf("train_model: network has %d classes, dataset %d",
                           spec.class_count, data.class_count));

  TrainResult result;
  result.model = init;
  OptimState optim =
      init_optim(result.model, recipe.lr, recipe.momentum, recipe.batch_size);

  const int n = static_cast<int>(data.size());
  std::vector<int> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  Rng shuffle_rng(Rng::mix(recipe.seed, 0x51u));

  const int c = data.images.dim(1), h = data.images.dim(2),
            w = data.images.dim(3);
  const int64_t img_sz = static_cast<int64_t>(c) * h * w;

  for (int epoch = 0; epoch < recipe.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double loss_sum = 0;
    int64_t seen = 0, hit1 = 0, hit5 = 0;
    int batch_index = 0;
    for (int start = 0; start < n; start += recipe.batch_size, ++batch_index) {
      const int bs = std::min(recipe.batch_size, n - start);
      Tensor batch({bs, c, h, w});
      std::vector<int> labels(static_cast<size_t>(bs));
      for (int i = 0; i < bs; ++i) {
        const int src = order[static_cast<size_t>(start + i)];
        std::copy_n(data.images.data.begin() + src * img_sz, img_sz,
                    batch.data.begin() + i * img_sz);
        labels[static_cast<size_t>(i)] = data.labels[static_cast<size_t>(src)];
      }
      ForwardOptions opt;
      opt.mode = Mode::train;
      opt.seed = Rng::mix(recipe.seed, (static_cast<uint64_t>(epoch) << 20) +
                                           static_cast<uint64_t>(batch_index));
      opt.dropout_enabled = recipe.dropout;
      opt.stochastic_sampling = recipe.stochastic;
      auto trace = network_forward(result.model, batch, opt);
      auto back = network_backward(result.model, trace, batch, labels);
      sgd_step(result.model, back.grads, optim);

      loss_sum += static_cast<double>(back.mean_loss) * bs;
      for (int i = 0; i < bs; ++i) {
        const int label = labels[static_cast<size_t>(i)];
        if (in_top_k(trace.probs(), i, label, 1)) ++hit1;
        if (in_top_k(trace.probs(), i, label, 5)) ++hit5;
        ++seen;
      }
    }
    optim.epoch = epoch + 1;
    result.log.push_back({epoch + 1, loss_sum / n,
                          static_cast<double>(hit1) / seen,
                          static_cast<double>(hit5) / seen});
  }
  return result;
}

TrainResult train_model(const NetworkSpec& spec, const TensorDataset& data,
                        const TrainRecipe& recipe) {
  return train_model(spec, data, recipe,
                     init_model<float>(spec, recipe.seed));
}

WarmStartResult warm_start(const NetworkSpec& target_spec,
                           const ModelState& source, int layer_count,
                           uint64_t seed) {
  WarmStartResult r;
  r.model = init_model<float>(target_spec, seed);
  const int total = static_cast<int>(r.model.params.size());
  const int n = layer_count < 0 ? total : layer_count;
  if (n > total)
    throw ConfigError(strf("warm_start: target has %d parameterized layers, "
                           "%d requested",
                           total, n));
  if (n > static_cast<int>(source.params.size()))
    throw ConfigError(strf("warm_start: source has %zu parameterized layers, "
                           "%d requested",
                           source.params.size(), n));
  for (int i = 0; i < n; ++i) {
    const auto& src = source.params[static_cast<size_t>(i)];
    auto& dst = r.model.params[static_cast<size_t>(i)];
    if (!src.w.same_shape(dst.w) || !src.b.same_shape(dst.b))
      throw ShapeError(strf("warm_start: parameterized layer %d shapes "
                            "differ between source and target",
                            i));
    dst = src;
    r.transferred.push_back(i);
  }
  return r;
}

}  // namespace hdlc
