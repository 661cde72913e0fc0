#include "hdlc/dataio.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;

namespace hdlc {

namespace {

// PNM header token, skipping whitespace and '#' comments.
std::string pnm_token(std::istream& in) {
  std::string tok;
  int c;
  while ((c = in.get()) != EOF) {
    if (c == '#') {
      while ((c = in.get()) != EOF && c != '\n') {
      }
      continue;
    }
    if (!std::isspace(c)) {
      tok.push_back(static_cast<char>(c));
      while ((c = in.peek()) != EOF && !std::isspace(c)) {
        tok.push_back(static_cast<char>(in.get()));
      }
      return tok;
    }
  }
  throw ParseError("unexpected end of PNM header");
}

int pnm_int(std::istream& in, const char* what) {
  const std::string tok = pnm_token(in);
  try {
    size_t pos = 0;
    const int v = std::stoi(tok, &pos);
    if (pos != tok.size() || v < 0) throw std::invalid_argument("");
    return v;
  } catch (const std::exception&) {
    throw ParseError(strf("bad PNM %s: '%s'", what, tok.c_str()));
  }
}

}  // namespace

Tensor decode_pnm(std::istream& in) {
  const std::string magic = pnm_token(in);
  int channels;
  if (magic == "P5")
    channels = 1;
  else if (magic == "P6")
    channels = 3;
  else
    throw ParseError("unsupported image magic '" + magic +
                     "' (expected P5 or P6)");
  const int w = pnm_int(in, "width");
  const int h = pnm_int(in, "height");
  const int maxval = pnm_int(in, "maxval");
  if (maxval != 255) throw ParseError("only 8-bit PNM images are supported");
  in.get();  // single whitespace after maxval
  std::vector<unsigned char> raw(static_cast<size_t>(w) * h * channels);
  in.read(reinterpret_cast<char*>(raw.data()),
          static_cast<std::streamsize>(raw.size()));
  if (static_cast<size_t>(in.gcount()) != raw.size())
    throw ParseError("truncated PNM pixel data");
  Tensor img({channels, h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < channels; ++c)
        img.at(c, y, x) =
            static_cast<float>(raw[(static_cast<size_t>(y) * w + x) * channels +
                                   c]) /
            255.0f;
  return img;
}

Tensor decode_pnm_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open image: " + path);
  try {
    return decode_pnm(in);
  } catch (const ParseError& e) {
    throw ParseError(path + ": " + e.what());
  }
}

void encode_pnm(const Tensor& image, std::ostream& out) {
  if (image.rank() != 3) throw ShapeError("encode_pnm expects (c, h, w)");
  const int c = image.dim(0), h = image.dim(1), w = image.dim(2);
  if (c != 1 && c != 3)
    throw ShapeError("encode_pnm supports 1 or 3 channels");
  out << (c == 1 ? "P5" : "P6") << '\n' << w << ' ' << h << '\n' << 255 << '\n';
  std::vector<unsigned char> raw(static_cast<size_t>(w) * h * c);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int ch = 0; ch < c; ++ch) {
        const float v = std::clamp(image.at(ch, y, x), 0.0f, 1.0f);
        raw[(static_cast<size_t>(y) * w + x) * c + ch] =
            static_cast<unsigned char>(std::lround(v * 255.0f));
      }
  out.write(reinterpret_cast<const char*>(raw.data()),
            static_cast<std::streamsize>(raw.size()));
}

void encode_pnm_file(const Tensor& image, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write image: " + path);
  encode_pnm(image, out);
}

Tensor resize_bilinear(const Tensor& image, int out_h, int out_w) {
  if (image.rank() != 3) throw ShapeError("resize expects (c, h, w)");
  if (out_h < 1 || out_w < 1) throw ShapeError("resize extents must be >= 1");
  const int c = image.dim(0), h = image.dim(1), w = image.dim(2);
  if (h == out_h && w == out_w) return image;
  Tensor out({c, out_h, out_w});
  const double sy = out_h > 1 ? static_cast<double>(h - 1) / (out_h - 1) : 0.0;
  const double sx = out_w > 1 ? static_cast<double>(w - 1) / (out_w - 1) : 0.0;
  for (int y = 0; y < out_h; ++y) {
    const double fy = y * sy;
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, h - 1);
    const double wy = fy - y0;
    for (int x = 0; x < out_w; ++x) {
      const double fx = x * sx;
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, w - 1);
      const double wx = fx - x0;
      for (int ch = 0; ch < c; ++ch) {
        const double top = (1 - wx) * image.at(ch, y0, x0) +
                           wx * image.at(ch, y0, x1);
        const double bot = (1 - wx) * image.at(ch, y1, x0) +
                           wx * image.at(ch, y1, x1);
        out.at(ch, y, x) = static_cast<float>((1 - wy) * top + wy * bot);
      }
    }
  }
  return out;
}

Tensor augment(const Tensor& image, Rng& rng, const AugmentConfig& cfg) {
  if (image.rank() != 3) throw ShapeError("augment expects (c, h, w)");
  const int c = image.dim(0), h = image.dim(1), w = image.dim(2);
  if (cfg.crop_margin < 0 || cfg.crop_margin >= std::min(h, w))
    throw ConfigError("crop_margin must be < min spatial extent");
  Tensor out = image;
  if (cfg.crop_margin > 0) {
    const int ch_ = h - cfg.crop_margin, cw = w - cfg.crop_margin;
    const int oy = rng.below(cfg.crop_margin + 1);
    const int ox = rng.below(cfg.crop_margin + 1);
    Tensor crop({c, ch_, cw});
    for (int cc = 0; cc < c; ++cc)
      for (int y = 0; y < ch_; ++y)
        for (int x = 0; x < cw; ++x)
          crop.at(cc, y, x) = image.at(cc, y + oy, x + ox);
    out = resize_bilinear(crop, h, w);
  }
  if (cfg.hflip && rng.bernoulli(0.5)) {
    for (int cc = 0; cc < c; ++cc)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w / 2; ++x)
          std::swap(out.at(cc, y, x), out.at(cc, y, w - 1 - x));
  }
  return out;
}

Tensor Dataset::load_image(size_t index) const {
  const DatasetItem& item = items.at(index);
  Tensor img = decode_pnm_file(item.path);
  if (img.dim(0) != channels)
    throw IoError(strf("%s: expected %d channels, image has %d",
                       item.path.c_str(), channels, img.dim(0)));
  return resize_bilinear(img, height, width);
}

DatasetLoad load_dataset(const std::string& root_dir, int channels, int height,
                         int width, Split split, double split_fraction,
                         uint64_t seed) {
  if (split_fraction < 0 || split_fraction > 1)
    throw ConfigError("split_fraction must be in [0,1]");
  if (!fs::is_directory(root_dir))
    throw IoError("dataset root is not a directory: " + root_dir);

  DatasetLoad result;
  result.dataset.channels = channels;
  result.dataset.height = height;
  result.dataset.width = width;

  std::vector<std::string> class_dirs;
  for (const auto& e : fs::directory_iterator(root_dir))
    if (e.is_directory()) class_dirs.push_back(e.path().filename().string());
  std::sort(class_dirs.begin(), class_dirs.end());

  for (const std::string& cls : class_dirs) {
    std::vector<std::string> files;
    for (const auto& e : fs::directory_iterator(fs::path(root_dir) / cls)) {
      if (!e.is_regular_file()) continue;
      const std::string ext = e.path().extension().string();
      if (ext == ".pgm" || ext == ".ppm") files.push_back(e.path().string());
    }
    if (files.empty()) {
      result.warnings.push_back("empty class directory excluded: " + cls);
      continue;
    }
    std::sort(files.begin(), files.end());

    // Stratified deterministic split, independent of enumeration order.
    std::vector<int> order(files.size());
    for (size_t i = 0; i < files.size(); ++i) order[i] = static_cast<int>(i);
    Rng rng(Rng::mix(seed, std::hash<std::string>{}(cls)));
    rng.shuffle(order);
    const int train_count = static_cast<int>(
        std::lround(static_cast<double>(files.size()) * split_fraction));

    const int label = static_cast<int>(result.dataset.class_names.size());
    result.dataset.class_names.push_back(cls);
    for (size_t i = 0; i < files.size(); ++i) {
      const bool is_train = static_cast<int>(i) < train_count;
      if ((split == Split::train) != is_train) continue;
      const std::string& path = files[static_cast<size_t>(order[i])];
      // Header sanity check now; full pixel decode stays lazy.
      std::ifstream probe(path, std::ios::binary);
      char magic[2] = {0, 0};
      probe.read(magic, 2);
      if (magic[0] != 'P' || (magic[1] != '5' && magic[1] != '6'))
        throw IoError("undecodable image (bad magic): " + path);
      result.dataset.items.push_back({label, path});
    }
  }
  return result;
}

TensorDataset materialize(const Dataset& dataset) {
  TensorDataset out;
  out.class_count = static_cast<int>(dataset.class_names.size());
  const int n = static_cast<int>(dataset.items.size());
  if (n == 0) throw ConfigError("materialize: dataset has no items");
  out.images = Tensor({n, dataset.channels, dataset.height, dataset.width});
  out.labels.resize(static_cast<size_t>(n));
  const int64_t img_sz = out.images.numel() / n;
  for (int i = 0; i < n; ++i) {
    const Tensor img = dataset.load_image(static_cast<size_t>(i));
    std::copy(img.data.begin(), img.data.end(),
              out.images.data.begin() + i * img_sz);
    out.labels[static_cast<size_t>(i)] = dataset.items[static_cast<size_t>(i)].label;
  }
  return out;
}

namespace {

constexpr char kMagic[4] = {'H', 'D', 'L', 'C'};

void put_u32(std::ostream& out, uint32_t v) {
  const unsigned char b[4] = {
      static_cast<unsigned char>(v & 0xff),
      static_cast<unsigned char>((v >> 8) & 0xff),
      static_cast<unsigned char>((v >> 16) & 0xff),
      static_cast<unsigned char>((v >> 24) & 0xff)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t get_u32(std::istream& in, const char* what) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (in.gcount() != 4) throw IoError(strf("container truncated in %s", what));
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) |
         (static_cast<uint32_t>(b[3]) << 24);
}

void put_floats(std::ostream& out, const std::vector<float>& v) {
  for (float f : v) put_u32(out, std::bit_cast<uint32_t>(f));
}

void get_floats(std::istream& in, std::vector<float>& v, const char* what) {
  for (float& f : v) f = std::bit_cast<float>(get_u32(in, what));
}

void write_container(const std::string& path, const std::string& metadata,
                     const std::vector<const std::vector<float>*>& payload) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write container: " + path);
  out.write(kMagic, 4);
  put_u32(out, kContainerVersion);
  put_u32(out, static_cast<uint32_t>(metadata.size()));
  out.write(metadata.data(), static_cast<std::streamsize>(metadata.size()));
  for (const auto* block : payload) put_floats(out, *block);
  if (!out) throw IoError("short write to container: " + path);
}

std::map<std::string, std::string> metadata_keys(const std::string& metadata) {
  std::map<std::string, std::string> keys;
  std::istringstream ss(metadata);
  std::string line;
  bool in_spec = false;
  while (std::getline(ss, line)) {
    if (line == "spec_begin") in_spec = true;
    if (line == "spec_end") in_spec = false;
    if (in_spec) continue;
    const auto sp = line.find(' ');
    if (sp != std::string::npos)
      keys[line.substr(0, sp)] = line.substr(sp + 1);
  }
  return keys;
}

std::string metadata_spec_block(const std::string& metadata) {
  const auto b = metadata.find("spec_begin\n");
  const auto e = metadata.find("spec_end");
  if (b == std::string::npos || e == std::string::npos || e <= b)
    throw IoError("container metadata is missing the network spec block");
  const auto start = b + std::strlen("spec_begin\n");
  return metadata.substr(start, e - start);
}

}  // namespace

void save_model(const ModelState& model, const std::string& path,
                const std::vector<std::string>& extra_metadata) {
  std::ostringstream meta;
  meta << "kind cnn\n";
  meta << "class_count " << model.spec.class_count << '\n';
  for (const std::string& line : extra_metadata) meta << line << '\n';
  meta << "spec_begin\n" << serialize_network_spec(model.spec) << "spec_end\n";
  std::vector<const std::vector<float>*> payload;
  for (const auto& p : model.params) {
    payload.push_back(&p.w.data);
    payload.push_back(&p.b.data);
  }
  write_container(path, meta.str(), payload);
}

void save_crbm(const CrbmState& state, const std::string& path,
               const std::vector<std::string>& extra_metadata) {
  std::ostringstream meta;
  meta << "kind crbm\n";
  meta << "filters " << state.filter_count() << '\n';
  meta << "channels " << state.in_channels() << '\n';
  meta << "kernel " << state.kernel_h() << ' ' << state.kernel_w() << '\n';
  meta << "pool_block " << state.pool_block << '\n';
  for (const std::string& line : extra_metadata) meta << line << '\n';
  std::vector<float> cbias = {state.visible_bias};
  write_container(path, meta.str(),
                  {&state.filters.data, &state.hidden_bias, &cbias});
}

LoadedContainer load_container(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open container: " + path);
  char magic[4];
  in.read(magic, 4);
  if (in.gcount() != 4 || std::memcmp(magic, kMagic, 4) != 0)
    throw IoError("bad container magic in " + path);
  const uint32_t version = get_u32(in, "version");
  if (version != kContainerVersion)
    throw IoError(strf("unsupported container version %u in %s", version,
                       path.c_str()));
  const uint32_t meta_len = get_u32(in, "metadata length");
  std::string metadata(meta_len, '\0');
  in.read(metadata.data(), meta_len);
  if (static_cast<uint32_t>(in.gcount()) != meta_len)
    throw IoError("container truncated in metadata: " + path);

  const auto keys = metadata_keys(metadata);
  const auto kind = keys.find("kind");
  if (kind == keys.end()) throw IoError("container metadata missing kind");

  LoadedContainer result;
  result.metadata = metadata;
  if (kind->second == "cnn") {
    NetworkSpec spec = parse_network_spec(metadata_spec_block(metadata));
    ModelState model = init_model<float>(spec, /*seed=*/0);
    for (auto& p : model.params) {
      get_floats(in, p.w.data, "payload");
      get_floats(in, p.b.data, "payload");
    }
    if (in.peek() != EOF)
      throw IoError("container payload longer than the spec expects: " + path);
    result.value = std::move(model);
  } else if (kind->second == "crbm") {
    auto req = [&](const char* k) {
      auto it = keys.find(k);
      if (it == keys.end())
        throw IoError(strf("container metadata missing %s", k));
      return it->second;
    };
    CrbmGeometry g;
    g.filters = std::stoi(req("filters"));
    g.in_channels = std::stoi(req("channels"));
    {
      std::istringstream ks(req("kernel"));
      if (!(ks >> g.kernel_h >> g.kernel_w))
        throw IoError("container metadata has a bad kernel line");
    }
    g.pool_block = std::stoi(req("pool_block"));
    CrbmState s = init_crbm<float>(g, /*seed=*/0);
    get_floats(in, s.filters.data, "payload");
    get_floats(in, s.hidden_bias, "payload");
    std::vector<float> cbias(1);
    get_floats(in, cbias, "payload");
    s.visible_bias = cbias[0];
    if (in.peek() != EOF)
      throw IoError("container payload longer than the spec expects: " + path);
    result.value = std::move(s);
  } else {
    throw IoError("unknown container kind '" + kind->second + "'");
  }
  return result;
}

ModelState load_model(const std::string& path) {
  LoadedContainer c = load_container(path);
  if (!c.is_model())
    throw IoError("expected a CNN model container: " + path);
  return std::move(std::get<ModelState>(c.value));
}

CrbmState load_crbm(const std::string& path) {
  LoadedContainer c = load_container(path);
  if (c.is_model())
    throw IoError("expected a CRBM container: " + path);
  return std::move(std::get<CrbmState>(c.value));
}

std::string read_container_metadata(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open container: " + path);
  char magic[4];
  in.read(magic, 4);
  if (in.gcount() != 4 || std::memcmp(magic, kMagic, 4) != 0)
    throw IoError("bad container magic in " + path);
  const uint32_t version = get_u32(in, "version");
  if (version != kContainerVersion)
    throw IoError(strf("unsupported container version %u in %s", version,
                       path.c_str()));
  const uint32_t meta_len = get_u32(in, "metadata length");
  std::string metadata(meta_len, '\0');
  in.read(metadata.data(), meta_len);
  if (static_cast<uint32_t>(in.gcount()) != meta_len)
    throw IoError("container truncated in metadata: " + path);
  return metadata;
}

}  // namespace hdlc
