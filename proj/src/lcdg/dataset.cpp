#include "lcdg/dataset.hpp"

#include <cmath>

namespace lcdg {

namespace {

constexpr double kPi = 3.14159265358979323846;

bool in_triangle(const ShapeGeom& g, double x, double y) {
  double vx[3], vy[3];
  for (int k = 0; k < 3; ++k) {
    double a = g.angle + 2.0 * kPi * k / 3.0;
    vx[k] = g.cx + g.size * std::cos(a);
    vy[k] = g.cy + g.size * std::sin(a);
  }
  bool pos = false, neg = false;
  for (int k = 0; k < 3; ++k) {
    int j = (k + 1) % 3;
    double cross = (vx[j] - vx[k]) * (y - vy[k]) - (vy[j] - vy[k]) * (x - vx[k]);
    if (cross > 0) pos = true;
    if (cross < 0) neg = true;
  }
  return !(pos && neg);
}

}  // namespace

bool point_in_shape(const ShapeGeom& g, double x, double y) {
  double dx = x - g.cx, dy = y - g.cy;
  switch (g.kind) {
    case ShapeKind::none:
      return false;
    case ShapeKind::circle:
      return dx * dx + dy * dy <= g.size * g.size;
    case ShapeKind::square: {
      double c = std::cos(-g.angle), s = std::sin(-g.angle);
      double rx = c * dx - s * dy, ry = s * dx + c * dy;
      return std::fabs(rx) <= g.size && std::fabs(ry) <= g.size;
    }
    case ShapeKind::triangle:
      return in_triangle(g, x, y);
    case ShapeKind::ring: {
      double r2 = dx * dx + dy * dy;
      double inner = g.inner_ratio * g.size;
      return r2 >= inner * inner && r2 <= g.size * g.size;
    }
  }
  return false;
}

Image render_shape(const ShapeGeom& g, int channels, int height, int width) {
  if (int(g.fg.size()) != channels || int(g.bg.size()) != channels)
    throw ShapeError("render_shape: color channel count mismatch");
  Image img(channels, height, width);
  const int ss = 4;
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      int hits = 0;
      for (int sy = 0; sy < ss; ++sy)
        for (int sx = 0; sx < ss; ++sx) {
          double px = x + (sx + 0.5) / ss;
          double py = y + (sy + 0.5) / ss;
          if (point_in_shape(g, px, py)) ++hits;
        }
      float cov = float(hits) / float(ss * ss);
      for (int c = 0; c < channels; ++c)
        img.at(c, y, x) = g.bg[size_t(c)] + (g.fg[size_t(c)] - g.bg[size_t(c)]) * cov;
    }
  return img;
}

std::vector<int> ProceduralDataset::train_indices() const {
  std::vector<int> out;
  for (size_t i = 0; i < items.size(); ++i)
    if (!items[i].val) out.push_back(int(i));
  return out;
}

std::vector<int> ProceduralDataset::val_indices() const {
  std::vector<int> out;
  for (size_t i = 0; i < items.size(); ++i)
    if (items[i].val) out.push_back(int(i));
  return out;
}

ProceduralDataset gen_dataset(const DatasetConfig& cfg) {
  if (cfg.n < 1) throw ValueError("gen_dataset: n must be >= 1");
  if (cfg.channels != 1 && cfg.channels != 3)
    throw ValueError("gen_dataset: channels must be 1 or 3");
  if (cfg.val_frac < 0 || cfg.val_frac >= 1)
    throw ValueError("gen_dataset: val_frac must be in [0,1)");

  ProceduralDataset ds;
  ds.cfg = cfg;
  ds.items.reserve(size_t(cfg.n));
  int num_classes = ds.num_classes();
  int n_val = int(std::lround(cfg.n * cfg.val_frac));
  int val_start = cfg.n - n_val;

  for (int i = 0; i < cfg.n; ++i) {
    RngStream rng(mix_seed(cfg.seed, 1000 + uint64_t(i)));
    DatasetItem item;
    item.label = i % num_classes;
    item.shape_class = item.label % 4;
    int family = item.label / 4;
    item.val = i >= val_start;

    ShapeGeom& g = item.geom;
    g.kind = ShapeKind(item.shape_class + 1);
    double half = cfg.image_size / 2.0;
    g.cx = half + rng.uniform(-4.0, 4.0);
    g.cy = half + rng.uniform(-4.0, 4.0);
    g.size = rng.uniform(6.0, 10.0);
    g.angle = rng.uniform(0.0, 2.0 * kPi);
    g.inner_ratio = rng.uniform(0.4, 0.6);

    g.fg.resize(size_t(cfg.channels));
    g.bg.resize(size_t(cfg.channels));
    for (int c = 0; c < cfg.channels; ++c) g.bg[size_t(c)] = float(rng.uniform(-1.0, -0.3));
    if (cfg.channels == 1) {
      g.fg[0] = float(rng.uniform(0.3, 1.0));
    } else {
      for (int c = 0; c < 3; ++c)
        g.fg[size_t(c)] = float(c == family ? rng.uniform(0.4, 1.0) : rng.uniform(-0.6, 0.0));
    }

    item.image = render_shape(g, cfg.channels, cfg.image_size, cfg.image_size);
    ds.items.push_back(std::move(item));
  }
  return ds;
}

std::string shape_name(ShapeKind k) {
  switch (k) {
    case ShapeKind::none:
      return "none";
    case ShapeKind::circle:
      return "circle";
    case ShapeKind::square:
      return "square";
    case ShapeKind::triangle:
      return "triangle";
    case ShapeKind::ring:
      return "ring";
  }
  return "unknown";
}

}  // namespace lcdg
