#include "hdlc/layers.hpp"

#include <fstream>
#include <map>
#include <sstream>

namespace hdlc {

const char* layer_name(const LayerSpec& layer) {
  switch (layer.index()) {
    case 0: return "conv";
    case 1: return "relu";
    case 2: return "maxpool";
    case 3: return "stochpool";
    case 4: return "dropout";
    case 5: return "fullconnect";
    case 6: return "softmax";
  }
  return "?";
}

std::vector<Extent> infer_shapes(const NetworkSpec& spec) {
  std::vector<Extent> out;
  out.reserve(spec.layers.size());
  Extent cur = spec.input_extent();
  if (cur.c < 1 || cur.h < 1 || cur.w < 1)
    throw ShapeError("network input extents must be >= 1");
  bool flat = false;
  for (size_t li = 0; li < spec.layers.size(); ++li) {
    const LayerSpec& layer = spec.layers[li];
    try {
      if (const auto* c = std::get_if<ConvSpec>(&layer)) {
        if (flat) throw ShapeError("conv after flattening");
        if (c->in_channels != cur.c)
          throw ShapeError(strf("conv expects %d input channels, got %d",
                                c->in_channels, cur.c));
        cur = {c->out_channels,
               conv_out_extent(cur.h, c->kernel_h, c->stride, c->pad),
               conv_out_extent(cur.w, c->kernel_w, c->stride, c->pad)};
      } else if (std::holds_alternative<ReluSpec>(layer)) {
        // shape preserved
      } else if (const auto* m = std::get_if<MaxPoolSpec>(&layer)) {
        if (flat) throw ShapeError("pool after flattening");
        check_pool_params(m->window, m->stride, m->pad);
        cur = {cur.c, conv_out_extent(cur.h, m->window, m->stride, m->pad),
               conv_out_extent(cur.w, m->window, m->stride, m->pad)};
      } else if (const auto* s = std::get_if<StochasticPoolSpec>(&layer)) {
        if (flat) throw ShapeError("pool after flattening");
        check_pool_params(s->window, s->stride, s->pad);
        cur = {cur.c, conv_out_extent(cur.h, s->window, s->stride, s->pad),
               conv_out_extent(cur.w, s->window, s->stride, s->pad)};
      } else if (const auto* d = std::get_if<DropoutSpec>(&layer)) {
        if (d->p < 0 || d->p >= 1)
          throw ShapeError("dropout probability must be in [0,1)");
      } else if (const auto* f = std::get_if<FullConnectSpec>(&layer)) {
        if (f->in_units < 1 || f->out_units < 1)
          throw ShapeError("fullconnect unit counts must be >= 1");
        if (cur.units() != f->in_units)
          throw ShapeError(strf("fullconnect expects %d input units, got %lld",
                                f->in_units,
                                static_cast<long long>(cur.units())));
        cur = {f->out_units, 1, 1};
        flat = true;
      } else if (const auto* sm = std::get_if<SoftmaxSpec>(&layer)) {
        if (cur.units() != sm->classes)
          throw ShapeError(strf("softmax expects %d logits, got %lld",
                                sm->classes,
                                static_cast<long long>(cur.units())));
        cur = {sm->classes, 1, 1};
        flat = true;
      }
    } catch (const ShapeError& e) {
      throw ShapeError(strf("layer %zu (%s): %s", li, layer_name(layer),
                            e.what()));
    }
    out.push_back(cur);
  }
  return out;
}

void validate_spec(const NetworkSpec& spec) {
  if (spec.layers.empty()) throw ShapeError("network has no layers");
  infer_shapes(spec);
  const auto* sm = std::get_if<SoftmaxSpec>(&spec.layers.back());
  if (!sm) throw ShapeError("final layer must be softmax");
  if (sm->classes != spec.class_count)
    throw ShapeError(strf("softmax width %d does not match class_count %d",
                          sm->classes, spec.class_count));
}

int64_t param_count(const NetworkSpec& spec) {
  int64_t total = 0;
  for (const LayerSpec& layer : spec.layers) {
    if (const auto* c = std::get_if<ConvSpec>(&layer))
      total += static_cast<int64_t>(c->out_channels) * c->in_channels *
                   c->kernel_h * c->kernel_w +
               c->out_channels;
    else if (const auto* f = std::get_if<FullConnectSpec>(&layer))
      total += static_cast<int64_t>(f->in_units) * f->out_units + f->out_units;
  }
  return total;
}

namespace {

// "key=value" fields after the layer keyword.
std::map<std::string, std::string> parse_fields(std::istringstream& ss,
                                                int lineno) {
  std::map<std::string, std::string> fields;
  std::string tok;
  while (ss >> tok) {
    const auto eq = tok.find('=');
    if (eq == std::string::npos || eq == 0 || eq + 1 >= tok.size())
      throw ParseError(strf("line %d: expected key=value, got '%s'", lineno,
                            tok.c_str()));
    fields[tok.substr(0, eq)] = tok.substr(eq + 1);
  }
  return fields;
}

int field_int(const std::map<std::string, std::string>& f,
              const std::string& key, int lineno, int fallback = INT32_MIN) {
  auto it = f.find(key);
  if (it == f.end()) {
    if (fallback != INT32_MIN) return fallback;
    throw ParseError(strf("line %d: missing field '%s'", lineno, key.c_str()));
  }
  try {
    size_t pos = 0;
    const int v = std::stoi(it->second, &pos);
    if (pos != it->second.size()) throw std::invalid_argument("");
    return v;
  } catch (const std::exception&) {
    throw ParseError(strf("line %d: field '%s' is not an integer", lineno,
                          key.c_str()));
  }
}

double field_double(const std::map<std::string, std::string>& f,
                    const std::string& key, int lineno) {
  auto it = f.find(key);
  if (it == f.end())
    throw ParseError(strf("line %d: missing field '%s'", lineno, key.c_str()));
  try {
    size_t pos = 0;
    const double v = std::stod(it->second, &pos);
    if (pos != it->second.size()) throw std::invalid_argument("");
    return v;
  } catch (const std::exception&) {
    throw ParseError(strf("line %d: field '%s' is not a number", lineno,
                          key.c_str()));
  }
}

void parse_kernel(const std::string& s, int lineno, int* kh, int* kw) {
  const auto x = s.find('x');
  try {
    if (x == std::string::npos) {
      *kh = *kw = std::stoi(s);
    } else {
      *kh = std::stoi(s.substr(0, x));
      *kw = std::stoi(s.substr(x + 1));
    }
  } catch (const std::exception&) {
    throw ParseError(strf("line %d: bad kernel '%s'", lineno, s.c_str()));
  }
}

}  // namespace

NetworkSpec parse_network_spec(std::istream& in) {
  NetworkSpec spec;
  bool saw_format = false, saw_input = false;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto h = line.find('#'); h != std::string::npos) line.resize(h);
    std::istringstream ss(line);
    std::string word;
    if (!(ss >> word)) continue;
    if (word == "format") {
      std::string v;
      ss >> v;
      if (v != "netspec/1")
        throw ParseError(strf("line %d: unsupported format '%s'", lineno,
                              v.c_str()));
      saw_format = true;
    } else if (word == "input") {
      if (!(ss >> spec.input_c >> spec.input_h >> spec.input_w))
        throw ParseError(strf("line %d: input expects 'c h w'", lineno));
      saw_input = true;
    } else if (word == "conv") {
      auto f = parse_fields(ss, lineno);
      ConvSpec c;
      c.in_channels = field_int(f, "in", lineno);
      c.out_channels = field_int(f, "out", lineno);
      auto k = f.find("kernel");
      if (k == f.end())
        throw ParseError(strf("line %d: conv missing kernel", lineno));
      parse_kernel(k->second, lineno, &c.kernel_h, &c.kernel_w);
      c.stride = field_int(f, "stride", lineno, 1);
      c.pad = field_int(f, "pad", lineno, 0);
      spec.layers.emplace_back(c);
    } else if (word == "relu") {
      spec.layers.emplace_back(ReluSpec{});
    } else if (word == "maxpool" || word == "stochpool") {
      auto f = parse_fields(ss, lineno);
      const int window = field_int(f, "window", lineno);
      const int stride = field_int(f, "stride", lineno, 1);
      const int pad = field_int(f, "pad", lineno, 0);
      if (word == "maxpool")
        spec.layers.emplace_back(MaxPoolSpec{window, stride, pad});
      else
        spec.layers.emplace_back(StochasticPoolSpec{window, stride, pad});
    } else if (word == "dropout") {
      auto f = parse_fields(ss, lineno);
      spec.layers.emplace_back(DropoutSpec{field_double(f, "p", lineno)});
    } else if (word == "fullconnect") {
      auto f = parse_fields(ss, lineno);
      spec.layers.emplace_back(FullConnectSpec{field_int(f, "in", lineno),
                                               field_int(f, "out", lineno)});
    } else if (word == "softmax") {
      auto f = parse_fields(ss, lineno);
      spec.layers.emplace_back(SoftmaxSpec{field_int(f, "classes", lineno)});
      spec.class_count = field_int(f, "classes", lineno);
    } else {
      throw ParseError(strf("line %d: unknown directive '%s'", lineno,
                            word.c_str()));
    }
  }
  if (!saw_format) throw ParseError("missing 'format netspec/1' line");
  if (!saw_input) throw ParseError("missing 'input c h w' line");
  validate_spec(spec);
  return spec;
}

NetworkSpec parse_network_spec(const std::string& text) {
  std::istringstream ss(text);
  return parse_network_spec(ss);
}

NetworkSpec load_network_spec(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open network spec: " + path);
  return parse_network_spec(in);
}

std::string serialize_network_spec(const NetworkSpec& spec) {
  std::ostringstream out;
  out << "format netspec/1\n";
  out << "input " << spec.input_c << ' ' << spec.input_h << ' '
      << spec.input_w << '\n';
  for (const LayerSpec& layer : spec.layers) {
    if (const auto* c = std::get_if<ConvSpec>(&layer)) {
      out << strf("conv in=%d out=%d kernel=%dx%d stride=%d pad=%d\n",
                  c->in_channels, c->out_channels, c->kernel_h, c->kernel_w,
                  c->stride, c->pad);
    } else if (std::holds_alternative<ReluSpec>(layer)) {
      out << "relu\n";
    } else if (const auto* m = std::get_if<MaxPoolSpec>(&layer)) {
      out << strf("maxpool window=%d stride=%d pad=%d\n", m->window, m->stride,
                  m->pad);
    } else if (const auto* s = std::get_if<StochasticPoolSpec>(&layer)) {
      out << strf("stochpool window=%d stride=%d pad=%d\n", s->window,
                  s->stride, s->pad);
    } else if (const auto* d = std::get_if<DropoutSpec>(&layer)) {
      out << strf("dropout p=%g\n", d->p);
    } else if (const auto* f = std::get_if<FullConnectSpec>(&layer)) {
      out << strf("fullconnect in=%d out=%d\n", f->in_units, f->out_units);
    } else if (const auto* sm = std::get_if<SoftmaxSpec>(&layer)) {
      out << strf("softmax classes=%d\n", sm->classes);
    }
  }
  return out.str();
}

void save_network_spec(const NetworkSpec& spec, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write network spec: " + path);
  out << serialize_network_spec(spec);
}

}  // namespace hdlc
