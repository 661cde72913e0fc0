#pragma once

#include <iosfwd>
#include <string>
#include <variant>
#include <vector>

#include "hdlc/error.hpp"
#include "hdlc/ops.hpp"

namespace hdlc {

struct ConvSpec {
  int in_channels = 0;
  int out_channels = 0;
  int kernel_h = 0;
  int kernel_w = 0;
  int stride = 1;
  int pad = 0;
};
struct ReluSpec {};
struct MaxPoolSpec {
  int window = 0;
  int stride = 1;
  int pad = 0;
};
struct StochasticPoolSpec {
  int window = 0;
  int stride = 1;
  int pad = 0;
};
struct DropoutSpec {
  double p = 0.5;
};
struct FullConnectSpec {
  int in_units = 0;
  int out_units = 0;
};
struct SoftmaxSpec {
  int classes = 0;
};

using LayerSpec = std::variant<ConvSpec, ReluSpec, MaxPoolSpec,
                               StochasticPoolSpec, DropoutSpec,
                               FullConnectSpec, SoftmaxSpec>;

const char* layer_name(const LayerSpec& layer);

// Channel/height/width extent between layers. Flattened activations
// (after a fully-connected layer) are carried as (units, 1, 1).
struct Extent {
  int c = 0;
  int h = 0;
  int w = 0;
  int64_t units() const {
    return static_cast<int64_t>(c) * h * w;
  }
  bool operator==(const Extent&) const = default;
};

struct NetworkSpec {
  int input_c = 0;
  int input_h = 0;
  int input_w = 0;
  std::vector<LayerSpec> layers;
  int class_count = 0;

  Extent input_extent() const { return {input_c, input_h, input_w}; }
};

// Output extent of every layer, in order. Throws ShapeError naming the
// offending layer index on any inconsistency.
std::vector<Extent> infer_shapes(const NetworkSpec& spec);

// Full structural validation: per-layer parameter ranges, shape
// inference, and a final Softmax layer matching class_count.
void validate_spec(const NetworkSpec& spec);

// Trainable parameter count: conv filters + per-output-channel biases
// and fully-connected weights + biases.
int64_t param_count(const NetworkSpec& spec);

NetworkSpec parse_network_spec(std::istream& in);
NetworkSpec parse_network_spec(const std::string& text);
NetworkSpec load_network_spec(const std::string& path);
std::string serialize_network_spec(const NetworkSpec& spec);
void save_network_spec(const NetworkSpec& spec, const std::string& path);

}  // namespace hdlc
