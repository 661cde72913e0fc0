#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sstream>

#include "hdlc/gradcheck.hpp"
#include "hdlc/layers.hpp"
#include "hdlc/network.hpp"
#include "support/oracles.hpp"

using namespace hdlc;

namespace {

NetworkSpec toy_spec(int classes = 3) {
  NetworkSpec spec;
  spec.input_c = 1;
  spec.input_h = 8;
  spec.input_w = 8;
  spec.layers = {ConvSpec{1, 3, 3, 3, 1, 0},
                 ReluSpec{},
                 FullConnectSpec{3 * 6 * 6, classes},
                 SoftmaxSpec{classes}};
  spec.class_count = classes;
  return spec;
}

std::string spec_path(const char* name) {
  return std::string(HDLC_SPEC_DIR) + "/" + name;
}

}  // namespace

TEST_CASE("shape inference follows the pooling and conv arithmetic") {
  NetworkSpec spec;
  spec.input_c = 64;
  spec.input_h = 223;
  spec.input_w = 223;
  spec.layers = {MaxPoolSpec{3, 2, 0}, FullConnectSpec{64 * 111 * 111, 4},
                 SoftmaxSpec{4}};
  spec.class_count = 4;
  const auto shapes = infer_shapes(spec);
  CHECK(shapes[0] == Extent{64, 111, 111});

  NetworkSpec pointwise;
  pointwise.input_c = 2;
  pointwise.input_h = 7;
  pointwise.input_w = 7;
  pointwise.layers = {ConvSpec{2, 5, 1, 1, 1, 0},
                      FullConnectSpec{5 * 7 * 7, 2}, SoftmaxSpec{2}};
  pointwise.class_count = 2;
  CHECK(infer_shapes(pointwise)[0] == Extent{5, 7, 7});

  NetworkSpec strided;
  strided.input_c = 3;
  strided.input_h = 225;
  strided.input_w = 225;
  strided.layers = {ConvSpec{3, 64, 7, 7, 2, 1},
                    FullConnectSpec{64 * 111 * 111, 2}, SoftmaxSpec{2}};
  strided.class_count = 2;
  CHECK(infer_shapes(strided)[0] == Extent{64, 111, 111});
}

TEST_CASE("shape errors name the offending layer") {
  NetworkSpec spec;
  spec.input_c = 1;
  spec.input_h = 4;
  spec.input_w = 4;
  spec.layers = {ConvSpec{1, 2, 3, 3, 1, 0}, FullConnectSpec{999, 2},
                 SoftmaxSpec{2}};
  spec.class_count = 2;
  CHECK_THROWS_WITH_AS(infer_shapes(spec), doctest::Contains("layer 1"),
                       ShapeError);

  spec.layers[0] = ConvSpec{1, 2, 7, 7, 1, 0};  // kernel larger than input
  CHECK_THROWS_WITH_AS(infer_shapes(spec), doctest::Contains("layer 0"),
                       ShapeError);
}

TEST_CASE("validate_spec requires a matching softmax head") {
  NetworkSpec spec = toy_spec();
  spec.class_count = 5;  // softmax says 3
  CHECK_THROWS_AS(validate_spec(spec), ShapeError);
  spec = toy_spec();
  spec.layers.pop_back();
  CHECK_THROWS_AS(validate_spec(spec), ShapeError);
}

TEST_CASE("the shipped root network shape-checks end to end") {
  const NetworkSpec spec = load_network_spec(spec_path("root.netspec"));
  CHECK(spec.class_count == 128);
  const auto shapes = infer_shapes(spec);
  // Declared intermediate extents from the layer listing.
  CHECK(shapes[0] == Extent{64, 223, 223});   // first conv
  CHECK(shapes[2] == Extent{64, 111, 111});   // first pool
  CHECK(shapes[shapes.size() - 2] == Extent{128, 1, 1});
  // The 1x1 stage flattens to 12544 = 7*7*256 units.
  bool saw_flatten = false;
  for (const LayerSpec& layer : spec.layers)
    if (const auto* f = std::get_if<FullConnectSpec>(&layer)) {
      CHECK(f->in_units == 12544);
      saw_flatten = true;
      break;
    }
  CHECK(saw_flatten);
  // Documented reconciliation: the last pool pads by 1 to reach 7x7.
  int pools = 0;
  for (const LayerSpec& layer : spec.layers)
    if (const auto* m = std::get_if<MaxPoolSpec>(&layer)) {
      ++pools;
      if (pools == 5) {
        CHECK(m->pad == 1);
        CHECK(m->stride == 2);
      } else {
        CHECK(m->pad == 0);
      }
    }
  CHECK(pools == 5);
}

TEST_CASE("the shipped leaf networks shape-check end to end") {
  for (const char* name : {"leaf_maxpool.netspec", "leaf_stochpool.netspec"}) {
    CAPTURE(name);
    const NetworkSpec spec = load_network_spec(spec_path(name));
    CHECK(spec.class_count == 256);
    const auto shapes = infer_shapes(spec);
    // Documented reconciliation: 7x7 stride-2 pad-1 first conv -> 111.
    CHECK(shapes[0] == Extent{64, 111, 111});
    bool saw_flatten = false;
    for (const LayerSpec& layer : spec.layers)
      if (const auto* f = std::get_if<FullConnectSpec>(&layer)) {
        CHECK(f->in_units == 6272);  // 7*7*128
        saw_flatten = true;
        break;
      }
    CHECK(saw_flatten);
  }
  const NetworkSpec stoch = load_network_spec(spec_path("leaf_stochpool.netspec"));
  int stochpools = 0;
  for (const LayerSpec& layer : stoch.layers)
    if (std::holds_alternative<StochasticPoolSpec>(layer)) ++stochpools;
  CHECK(stochpools == 4);
}

TEST_CASE("table parameter counts match the closed-form oracle") {
  // Dimensions transcribed independently from the layer listings.
  const std::vector<oracle::ConvDims> root_convs = {
      {3, 64, 3},    {64, 128, 3},  {128, 128, 3}, {128, 256, 3},
      {256, 256, 3}, {256, 384, 3}, {384, 384, 3}, {384, 384, 3},
      {384, 512, 3}, {512, 512, 3}, {512, 512, 3}, {512, 256, 1}};
  const std::vector<oracle::FcDims> root_fcs = {
      {12544, 4096}, {4096, 2048}, {2048, 128}};
  const int64_t root_expect =
      oracle::closed_form_params(root_convs, root_fcs);
  CHECK(root_expect == 71306752);

  const std::vector<oracle::ConvDims> leaf_convs = {
      {3, 64, 7},    {64, 128, 3},  {128, 128, 3}, {128, 256, 3},
      {256, 256, 3}, {256, 384, 3}, {384, 384, 3}, {384, 128, 1}};
  const std::vector<oracle::FcDims> leaf_fcs = {
      {6272, 2048}, {2048, 2048}, {2048, 256}};
  const int64_t leaf_expect = oracle::closed_form_params(leaf_convs, leaf_fcs);
  CHECK(leaf_expect == 20946048);

  CHECK(param_count(load_network_spec(spec_path("root.netspec"))) ==
        root_expect);
  CHECK(param_count(load_network_spec(spec_path("leaf_maxpool.netspec"))) ==
        leaf_expect);
  CHECK(param_count(load_network_spec(spec_path("leaf_stochpool.netspec"))) ==
        leaf_expect);
}

TEST_CASE("netspec text round-trips") {
  for (const char* name :
       {"root.netspec", "leaf_maxpool.netspec", "leaf_stochpool.netspec",
        "toy_gradcheck.netspec"}) {
    const NetworkSpec spec = load_network_spec(spec_path(name));
    const NetworkSpec again = parse_network_spec(serialize_network_spec(spec));
    CHECK(serialize_network_spec(again) == serialize_network_spec(spec));
    CHECK(param_count(again) == param_count(spec));
  }
}

TEST_CASE("netspec parser rejects malformed input") {
  CHECK_THROWS_AS(parse_network_spec(std::string("input 1 4 4\nsoftmax classes=2\n")),
                  ParseError);  // missing format line
  CHECK_THROWS_AS(
      parse_network_spec(std::string("format netspec/1\ninput 1 4 4\nwiggle\n")),
      ParseError);
  CHECK_THROWS_AS(parse_network_spec(std::string(
                      "format netspec/1\ninput 1 4 4\nconv in=1 out=2\n")),
                  ParseError);  // conv missing kernel
}

TEST_CASE("model initialization is deterministic and correctly shaped") {
  const NetworkSpec spec = toy_spec();
  const ModelState a = init_model<float>(spec, 7);
  const ModelState b = init_model<float>(spec, 7);
  const ModelState c = init_model<float>(spec, 8);
  REQUIRE(a.params.size() == 2);
  CHECK(a.params[0].w.shape == std::vector<int>{3, 1, 3, 3});
  CHECK(a.params[0].b.shape == std::vector<int>{3});
  CHECK(a.params[1].w.shape == std::vector<int>{3, 108});
  CHECK(a.total_params() == param_count(spec));
  CHECK(a.params[0].w.data == b.params[0].w.data);
  CHECK(a.params[0].w.data != c.params[0].w.data);
  for (float v : a.params[0].b.data) CHECK(v == 0.0f);
  // Glorot bound for the conv layer: sqrt(6 / (9 + 27)).
  const float bound = std::sqrt(6.0f / (9 + 27));
  for (float v : a.params[0].w.data) {
    CHECK(v <= bound);
    CHECK(v >= -bound);
  }
}

TEST_CASE("a single-softmax network equals softmax_xent") {
  NetworkSpec spec;
  spec.input_c = 4;
  spec.input_h = 1;
  spec.input_w = 1;
  spec.layers = {SoftmaxSpec{4}};
  spec.class_count = 4;
  const ModelState model = init_model<float>(spec, 1);
  Rng rng(2);
  Tensor batch({2, 4, 1, 1});
  for (float& v : batch.data) v = static_cast<float>(rng.uniform(-2, 2));

  ForwardOptions opt;
  auto trace = network_forward(model, batch, opt);
  Tensor logits({2, 4});
  logits.data = batch.data;
  const auto direct = softmax_xent(logits, {1, 3});
  CHECK(trace.probs().data == direct.probs.data);

  auto back = network_backward(model, trace, batch, {1, 3});
  const float want_loss =
      (direct.losses[0] + direct.losses[1]) / 2.0f;
  CHECK(back.mean_loss == doctest::Approx(want_loss));
}

TEST_CASE("forward trace shapes agree with shape inference") {
  const NetworkSpec spec = load_network_spec(spec_path("toy_gradcheck.netspec"));
  const ModelState model = init_model<float>(spec, 3);
  Tensor batch({2, 1, 12, 12});
  Rng rng(4);
  for (float& v : batch.data) v = static_cast<float>(rng.uniform());
  ForwardOptions opt;
  opt.mode = Mode::train;
  opt.seed = 5;
  const auto trace = network_forward(model, batch, opt);
  const auto shapes = infer_shapes(spec);
  REQUIRE(trace.acts.size() == shapes.size());
  for (size_t i = 0; i < shapes.size(); ++i) {
    const int64_t units = trace.acts[i].numel() / 2;
    CHECK(units == shapes[i].units());
  }
}

TEST_CASE("training-mode forward is bit-identical for a fixed seed") {
  NetworkSpec spec;
  spec.input_c = 1;
  spec.input_h = 8;
  spec.input_w = 8;
  spec.layers = {ConvSpec{1, 4, 3, 3, 1, 0},
                 ReluSpec{},
                 StochasticPoolSpec{2, 2, 0},
                 FullConnectSpec{4 * 3 * 3, 8},
                 ReluSpec{},
                 DropoutSpec{0.4},
                 FullConnectSpec{8, 3},
                 SoftmaxSpec{3}};
  spec.class_count = 3;
  const ModelState model = init_model<float>(spec, 11);
  Tensor batch({3, 1, 8, 8});
  Rng rng(12);
  for (float& v : batch.data) v = static_cast<float>(rng.uniform());
  ForwardOptions opt;
  opt.mode = Mode::train;
  opt.seed = 99;
  const auto t1 = network_forward(model, batch, opt);
  const auto t2 = network_forward(model, batch, opt);
  for (size_t i = 0; i < t1.acts.size(); ++i)
    CHECK(t1.acts[i].data == t2.acts[i].data);
}

TEST_CASE("composite gradient check on a conv-relu-fc-softmax network") {
  const auto result = gradcheck_network(toy_spec(), /*seed=*/21);
  CAPTURE(result.worst);
  CHECK(result.pass);
  CHECK(result.max_rel_error < 1e-3);
  CHECK(result.checked > 50);
}

TEST_CASE("gradient check covers pooling and dropout layers") {
  NetworkSpec spec;
  spec.input_c = 2;
  spec.input_h = 10;
  spec.input_w = 10;
  spec.layers = {ConvSpec{2, 4, 3, 3, 1, 1},
                 ReluSpec{},
                 MaxPoolSpec{3, 2, 0},
                 ConvSpec{4, 6, 3, 3, 1, 0},
                 ReluSpec{},
                 StochasticPoolSpec{2, 2, 0},
                 FullConnectSpec{6, 12},
                 ReluSpec{},
                 DropoutSpec{0.3},
                 FullConnectSpec{12, 4},
                 SoftmaxSpec{4}};
  spec.class_count = 4;
  for (uint64_t seed : {1ull, 2ull, 3ull}) {
    const auto result = gradcheck_network(spec, seed);
    CAPTURE(seed);
    CAPTURE(result.worst);
    CHECK(result.pass);
  }
}
