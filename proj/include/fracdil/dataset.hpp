#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "fracdil/rng.hpp"
#include "fracdil/serialize.hpp"
#include "fracdil/tensor.hpp"

namespace fracdil {

// Single-channel classification images: one of a few 3x3 binary motifs,
// stretched by a spatial factor and splatted bilinearly onto a noisy canvas
// at a random position. Every motif has the same total ink (5 cells), so
// total intensity carries no label information.
struct DatasetConfig {
  int n = 512;
  int num_patterns = 4;
  double scale = 2.5;   // distance between adjacent motif cells, in pixels
  double noise = 0.25;  // stddev of the gaussian background
  int image = 32;
};

struct SyntheticDataset {
  Tensor images;            // (n, 1, image, image)
  std::vector<int> labels;  // in [0, num_patterns)
  int num_patterns = 0;
};

namespace detail {

inline constexpr int kMotifCells[4][3][3] = {
    {{1, 0, 1}, {0, 1, 0}, {1, 0, 1}},  // diagonal cross
    {{0, 1, 0}, {1, 1, 1}, {0, 1, 0}},  // plus
    {{1, 1, 1}, {0, 1, 0}, {0, 1, 0}},  // tee
    {{1, 0, 0}, {1, 0, 0}, {1, 1, 1}},  // ell
};

inline void splat(float* plane, int height, int width, double y, double x, float v) {
  const int y0 = static_cast<int>(std::floor(y));
  const int x0 = static_cast<int>(std::floor(x));
  const float fy = static_cast<float>(y - y0), fx = static_cast<float>(x - x0);
  auto add = [&](int r, int c, float m) {
    if (r >= 0 && r < height && c >= 0 && c < width)
      plane[static_cast<size_t>(r) * width + c] += m;
  };
  add(y0, x0, v * (1.f - fy) * (1.f - fx));
  add(y0, x0 + 1, v * (1.f - fy) * fx);
  add(y0 + 1, x0, v * fy * (1.f - fx));
  add(y0 + 1, x0 + 1, v * fy * fx);
}

}  // namespace detail

inline SyntheticDataset gen_multiscale_dataset(const DatasetConfig& cfg, uint64_t seed) {
  if (cfg.n < 1) throw std::invalid_argument("dataset needs at least one sample");
  if (cfg.num_patterns < 2 || cfg.num_patterns > 4)
    throw std::invalid_argument("pattern count must be between 2 and 4");
  if (cfg.scale < 1.0 || cfg.scale > 6.0)
    throw std::invalid_argument("pattern scale out of range");
  if (cfg.noise < 0.0) throw std::invalid_argument("negative noise level");
  const int margin = static_cast<int>(std::ceil(cfg.scale)) + 1;
  if (cfg.image < 2 * margin + 2)
    throw std::invalid_argument("image too small for pattern scale");

  SyntheticDataset ds;
  ds.num_patterns = cfg.num_patterns;
  ds.images = Tensor(cfg.n, 1, cfg.image, cfg.image);
  ds.labels.resize(cfg.n);
  const Rng master(seed);
  for (int i = 0; i < cfg.n; ++i) {
    Rng rng = master.derive(static_cast<uint64_t>(i));
    const int label = i % cfg.num_patterns;  // balanced by construction
    ds.labels[i] = label;
    float* plane = ds.images.plane(i, 0);
    if (cfg.noise > 0.0)
      for (int p = 0; p < cfg.image * cfg.image; ++p)
        plane[p] = static_cast<float>(cfg.noise * rng.normal());
    const int cy = rng.uniform_int(margin, cfg.image - 1 - margin);
    const int cx = rng.uniform_int(margin, cfg.image - 1 - margin);
    for (int mi = 0; mi < 3; ++mi)
      for (int mj = 0; mj < 3; ++mj)
        if (detail::kMotifCells[label][mi][mj])
          detail::splat(plane, cfg.image, cfg.image, cy + (mi - 1) * cfg.scale,
                        cx + (mj - 1) * cfg.scale, 1.f);
  }
  return ds;
}

inline void save_dataset(const SyntheticDataset& ds, const std::string& path) {
  WeightStore ws;
  ws["images"] = {{ds.images.n, ds.images.c, ds.images.h, ds.images.w}, ds.images.data};
  NamedArray labels{{static_cast<int>(ds.labels.size())},
                    std::vector<float>(ds.labels.size())};
  for (size_t i = 0; i < ds.labels.size(); ++i) labels.data[i] = static_cast<float>(ds.labels[i]);
  ws["labels"] = std::move(labels);
  ws["num_patterns"] = {{1}, {static_cast<float>(ds.num_patterns)}};
  save_weights(ws, path);
}

inline SyntheticDataset load_dataset(const std::string& path) {
  const WeightStore ws = load_weights(path);
  const NamedArray& img = fetch_array(ws, "images");
  if (img.dims.size() != 4) throw std::runtime_error("bad dataset image array");
  SyntheticDataset ds;
  ds.images = Tensor(img.dims[0], img.dims[1], img.dims[2], img.dims[3]);
  ds.images.data = img.data;
  const NamedArray& labels = fetch_array(ws, "labels");
  ds.labels.resize(labels.data.size());
  for (size_t i = 0; i < labels.data.size(); ++i)
    ds.labels[i] = static_cast<int>(labels.data[i]);
  ds.num_patterns = static_cast<int>(fetch_array(ws, "num_patterns").data.at(0));
  return ds;
}

}  // namespace fracdil
