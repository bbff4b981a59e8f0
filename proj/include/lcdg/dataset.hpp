#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lcdg/image.hpp"
#include "lcdg/rng.hpp"

namespace lcdg {

enum class ShapeKind { none = 0, circle, square, triangle, ring };

// Exact analytic geometry of one rendered scene; the renderer and the mask
// generator share this single source of truth.
struct ShapeGeom {
  ShapeKind kind = ShapeKind::none;
  double cx = 0, cy = 0;        // center, pixel coordinates
  double size = 0;              // radius / half-side / circumradius
  double angle = 0;             // rotation, radians
  double inner_ratio = 0;      // ring hole radius as a fraction of size
  std::vector<float> fg, bg;    // per-channel colors in [-1,1]
};

bool point_in_shape(const ShapeGeom& g, double x, double y);

// Anti-aliased render: 4x4 subsamples per pixel, output in [-1,1].
Image render_shape(const ShapeGeom& g, int channels, int height, int width);

struct DatasetConfig {
  int n = 10000;
  uint64_t seed = 0;
  int channels = 1;  // 1 or 3
  int image_size = 32;
  double val_frac = 0.1;
};

struct DatasetItem {
  Image image;
  int label = 0;        // shape + color-family combined class
  int shape_class = 0;  // label % 4, the classifier target
  ShapeGeom geom;
  bool val = false;
};

struct ProceduralDataset {
  DatasetConfig cfg;
  std::vector<DatasetItem> items;

  int num_classes() const { return cfg.channels == 1 ? 4 : 12; }
  std::vector<int> train_indices() const;
  std::vector<int> val_indices() const;
};

// Deterministic in cfg alone: same config gives byte-identical datasets.
ProceduralDataset gen_dataset(const DatasetConfig& cfg);

std::string shape_name(ShapeKind k);

}  // namespace lcdg
