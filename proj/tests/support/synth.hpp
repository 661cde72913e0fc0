// Synthetic datasets for training tests: parametric shape images with
// a built-in 4-group x 4-class hierarchy, and the classic
// bars-and-stripes binary distribution.
#pragma once

#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "hdlc/dataio.hpp"
#include "hdlc/network.hpp"
#include "hdlc/tensor.hpp"

namespace synth {

inline constexpr int kShapeGroups = 4;
inline constexpr int kClassesPerGroup = 4;
inline constexpr int kShapeClasses = kShapeGroups * kClassesPerGroup;
inline constexpr int kShapeSize = 24;

// Class layout: group 0 filled disks (radius by class), group 1 hollow
// rings, group 2 horizontal bars (count by class), group 3 vertical
// bars. Centers jitter by +-2 pixels; intensity jitters around 0.9.
inline hdlc::Tensor shape_image(int cls, hdlc::Rng& rng) {
  const int group = cls / kClassesPerGroup;
  const int variant = cls % kClassesPerGroup;
  const int s = kShapeSize;
  hdlc::Tensor img({1, s, s});
  const double cx = s / 2.0 + rng.uniform(-2.0, 2.0);
  const double cy = s / 2.0 + rng.uniform(-2.0, 2.0);
  const float fg = static_cast<float>(rng.uniform(0.75, 1.0));

  auto put = [&](int y, int x, float v) {
    if (y >= 0 && y < s && x >= 0 && x < s) img.at(0, y, x) = v;
  };

  if (group == 0 || group == 1) {
    const double radius = 3.0 + 2.0 * variant;  // 3, 5, 7, 9
    for (int y = 0; y < s; ++y)
      for (int x = 0; x < s; ++x) {
        const double d = std::hypot(y - cy, x - cx);
        const bool inside = group == 0 ? d <= radius
                                       : (d <= radius && d >= radius - 1.6);
        if (inside) put(y, x, fg);
      }
  } else {
    const int bars = variant + 1;  // 1..4
    const int thickness = 2;
    const int span = s - 6;
    for (int b = 0; b < bars; ++b) {
      const int offset =
          3 + static_cast<int>((b + 0.5) * span / bars) - thickness / 2 +
          rng.below(3) - 1;
      for (int t = 0; t < thickness; ++t)
        for (int q = 3; q < s - 3; ++q) {
          if (group == 2)
            put(offset + t, q, fg);
          else
            put(q, offset + t, fg);
        }
    }
  }
  // Light pixel noise.
  for (float& v : img.data)
    v = std::clamp(v + static_cast<float>(rng.uniform(-0.04, 0.04)), 0.0f,
                   1.0f);
  return img;
}

struct ShapeDataset {
  hdlc::TensorDataset data;  // labels are class ids 0..15
  std::vector<int> group_of_class;
};

inline ShapeDataset make_shape_dataset(int per_class, uint64_t seed) {
  ShapeDataset out;
  out.data.class_count = kShapeClasses;
  const int total = per_class * kShapeClasses;
  out.data.images = hdlc::Tensor({total, 1, kShapeSize, kShapeSize});
  out.data.labels.resize(static_cast<size_t>(total));
  hdlc::Rng rng(seed);
  const int64_t img_sz = static_cast<int64_t>(kShapeSize) * kShapeSize;
  int idx = 0;
  for (int cls = 0; cls < kShapeClasses; ++cls)
    for (int i = 0; i < per_class; ++i, ++idx) {
      const hdlc::Tensor img = shape_image(cls, rng);
      std::copy(img.data.begin(), img.data.end(),
                out.data.images.data.begin() + idx * img_sz);
      out.data.labels[static_cast<size_t>(idx)] = cls;
    }
  for (int cls = 0; cls < kShapeClasses; ++cls)
    out.group_of_class.push_back(cls / kClassesPerGroup);
  return out;
}

// Writes the dataset as a directory-per-class PGM tree. Class
// directories are named like synsets: group g, class c within g maps
// to n1000<g+1><c+1>0 (zero padded to 8 digits).
inline std::string shape_class_dir(int cls) {
  const int group = cls / kClassesPerGroup;
  const int within = cls % kClassesPerGroup;
  return hdlc::strf("n10%02d%02d00", group + 1, within + 1);
}

inline void write_shape_dataset(const std::string& root, int per_class,
                                uint64_t seed) {
  namespace fs = std::filesystem;
  hdlc::Rng rng(seed);
  for (int cls = 0; cls < kShapeClasses; ++cls) {
    const fs::path dir = fs::path(root) / shape_class_dir(cls);
    fs::create_directories(dir);
    for (int i = 0; i < per_class; ++i) {
      const hdlc::Tensor img = shape_image(cls, rng);
      hdlc::encode_pnm_file(img,
                            (dir / hdlc::strf("img%04d.pgm", i)).string());
    }
  }
}

// Bars-and-stripes: each image is either all-rows or all-columns
// patterns of full-length stripes; binary {0,1} values.
inline hdlc::Tensor bars_and_stripes(int count, int side, uint64_t seed) {
  hdlc::Tensor out({count, 1, side, side});
  hdlc::Rng rng(seed);
  for (int n = 0; n < count; ++n) {
    const bool rows = rng.bernoulli(0.5);
    for (int line = 0; line < side; ++line) {
      const float v = rng.bernoulli(0.5) ? 1.0f : 0.0f;
      for (int q = 0; q < side; ++q) {
        if (rows)
          out.at(n, 0, line, q) = v;
        else
          out.at(n, 0, q, line) = v;
      }
    }
  }
  return out;
}

}  // namespace synth
