#pragma once

#include <optional>
#include <string>
#include <vector>

#include "hdlc/network.hpp"

namespace hdlc {

struct OptimState {
  std::vector<ParamPair<float>> velocity;  // mirrors model params
  double lr = 0.01;
  double momentum = 0.9;
  int epoch = 0;
  int batch_size = 32;
};

OptimState init_optim(const ModelState& model, double lr, double momentum,
                      int batch_size);

// velocity <- momentum * velocity - lr * grad; param <- param + velocity.
void sgd_step(ModelState& model, const std::vector<ParamPair<float>>& grads,
              OptimState& optim);

struct WarmStartInit {
  std::string path;
  int layer_count = -1;  // -1 = all parameterized layers, else first n
};

struct TrainRecipe {
  int epochs = 1;
  double lr = 0.01;
  double momentum = 0.9;
  int batch_size = 32;
  uint64_t seed = 1;
  bool dropout = true;     // apply train-mode dropout sampling
  bool stochastic = true;  // sample stochastic-pool activations in training
  std::optional<WarmStartInit> warm;
};

TrainRecipe parse_recipe(std::istream& in);
TrainRecipe parse_recipe_text(const std::string& text);
TrainRecipe load_recipe(const std::string& path);
std::string serialize_recipe(const TrainRecipe& recipe);

struct EpochLog {
  int epoch = 0;
  double mean_loss = 0;
  double top1 = 0;
  double top5 = 0;
};

std::string format_epoch_log(const std::vector<EpochLog>& log);

struct TrainResult {
  ModelState model;
  std::vector<EpochLog> log;
};

// Shuffled mini-batch SGD; deterministic given recipe.seed. The model
// starts from `init`; pass init_model(spec, recipe.seed) for scratch
// training (cmd-level code resolves recipe.warm into an init model).
TrainResult train_model(const NetworkSpec& spec, const TensorDataset& data,
                        const TrainRecipe& recipe, const ModelState& init);
TrainResult train_model(const NetworkSpec& spec, const TensorDataset& data,
                        const TrainRecipe& recipe);

struct WarmStartResult {
  ModelState model;
  std::vector<int> transferred;  // parameterized-layer indices copied
};

// Copies the first `layer_count` parameterized layers (-1 = all) from
// source into a fresh model for target_spec; remaining layers get a
// fresh seeded initialization.
WarmStartResult warm_start(const NetworkSpec& target_spec,
                           const ModelState& source, int layer_count,
                           uint64_t seed);

}  // namespace hdlc
