#pragma once

#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "hdlc/crbm.hpp"
#include "hdlc/network.hpp"
#include "hdlc/tensor.hpp"

namespace hdlc {

// 8-bit binary portable graymap (P5) / pixmap (P6) decoding into a
// (channels, h, w) tensor with values scaled to [0,1].
Tensor decode_pnm(std::istream& in);
Tensor decode_pnm_file(const std::string& path);
void encode_pnm(const Tensor& image, std::ostream& out);
void encode_pnm_file(const Tensor& image, const std::string& path);

// Bilinear interpolation with corner-aligned sampling.
Tensor resize_bilinear(const Tensor& image, int out_h, int out_w);

struct AugmentConfig {
  int crop_margin = 0;
  bool hflip = false;
};

// Random crop of (h - margin) x (w - margin) resized back, plus
// horizontal flip with probability 0.5. Training-path only.
Tensor augment(const Tensor& image, Rng& rng, const AugmentConfig& cfg);

enum class Split { train, val };

struct DatasetItem {
  int label = 0;
  std::string path;
};

// Directory-per-class image tree. Items hold paths; pixels decode on
// demand via load_image.
struct Dataset {
  std::vector<DatasetItem> items;
  std::vector<std::string> class_names;  // lexicographic directory order
  int channels = 1;
  int height = 0;
  int width = 0;

  Tensor load_image(size_t index) const;  // decoded and resized to geometry
};

struct DatasetLoad {
  Dataset dataset;
  std::vector<std::string> warnings;
};

DatasetLoad load_dataset(const std::string& root_dir, int channels, int height,
                         int width, Split split, double split_fraction,
                         uint64_t seed);

// Decode every item into one (count, c, h, w) tensor.
TensorDataset materialize(const Dataset& dataset);

// Versioned binary container holding either a CNN ModelState or a
// CrbmState: magic "HDLC", u32 LE version, u32 LE metadata length,
// metadata text, payload of little-endian 32-bit reals in declaration
// order.
inline constexpr uint32_t kContainerVersion = 1;

void save_model(const ModelState& model, const std::string& path,
                const std::vector<std::string>& extra_metadata = {});
void save_crbm(const CrbmState& state, const std::string& path,
               const std::vector<std::string>& extra_metadata = {});

struct LoadedContainer {
  std::variant<ModelState, CrbmState> value;
  std::string metadata;

  bool is_model() const { return value.index() == 0; }
  const ModelState& model() const { return std::get<ModelState>(value); }
  const CrbmState& crbm() const { return std::get<CrbmState>(value); }
};

LoadedContainer load_container(const std::string& path);
ModelState load_model(const std::string& path);
CrbmState load_crbm(const std::string& path);

// Reads only the header and metadata text, never the payload.
std::string read_container_metadata(const std::string& path);

}  // namespace hdlc
