#include "lcdg/conditions.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <sstream>

namespace lcdg {

namespace {

int clampi(int v, int lo, int hi) { return v < lo ? lo : (v > hi ? hi : v); }

Image luma(const Image& img) {
  if (img.channels == 1) return img;
  if (img.channels != 3) throw ShapeError("edge: image must have 1 or 3 channels");
  Image out(1, img.height, img.width);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      out.at(0, y, x) =
          0.299f * img.at(0, y, x) + 0.587f * img.at(1, y, x) + 0.114f * img.at(2, y, x);
  return out;
}

// Sobel gradients with replicate padding.
void sobel(const Image& gray, Image& gx, Image& gy) {
  int h = gray.height, w = gray.width;
  gx = Image(1, h, w);
  gy = Image(1, h, w);
  auto px = [&](int y, int x) { return gray.at(0, clampi(y, 0, h - 1), clampi(x, 0, w - 1)); };
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      float tl = px(y - 1, x - 1), tc = px(y - 1, x), tr = px(y - 1, x + 1);
      float ml = px(y, x - 1), mr = px(y, x + 1);
      float bl = px(y + 1, x - 1), bc = px(y + 1, x), br = px(y + 1, x + 1);
      gx.at(0, y, x) = (tr + 2 * mr + br) - (tl + 2 * ml + bl);
      gy.at(0, y, x) = (bl + 2 * bc + br) - (tl + 2 * tc + tr);
    }
}

// Keep local maxima along the quantized gradient direction. Plateau ties keep
// exactly one side (> on one neighbor, >= on the other) so ideal step edges
// thin to one-pixel ridges.
Image thin_ridges(const Image& mag, const Image& gx, const Image& gy) {
  int h = mag.height, w = mag.width;
  Image out(1, h, w);
  auto m = [&](int y, int x) -> float {
    if (y < 0 || y >= h || x < 0 || x >= w) return 0.f;
    return mag.at(0, y, x);
  };
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      float v = mag.at(0, y, x);
      if (v <= 0) continue;
      double ang = std::atan2(double(gy.at(0, y, x)), double(gx.at(0, y, x)));
      if (ang < 0) ang += 3.14159265358979323846;
      int bin = int(std::floor(ang / (3.14159265358979323846 / 4.0) + 0.5)) & 3;
      int dx = 0, dy = 0;
      if (bin == 0) dx = 1;               // horizontal gradient: compare x+-1
      else if (bin == 1) dx = 1, dy = 1;  // diagonal
      else if (bin == 2) dy = 1;          // vertical gradient: compare y+-1
      else dx = 1, dy = -1;               // anti-diagonal
      if (v > m(y + dy, x + dx) && v >= m(y - dy, x - dx)) out.at(0, y, x) = v;
    }
  return out;
}

Image binarize(const Image& img, float thresh) {
  Image out(1, img.height, img.width);
  for (size_t i = 0; i < img.data.size(); ++i) out.data[i] = img.data[i] >= thresh ? 1.f : 0.f;
  return out;
}

float max_value(const Image& img) {
  float m = 0;
  for (float v : img.data) m = std::max(m, v);
  return m;
}

// Smooth random displacement field: a coarse grid bilinearly interpolated up,
// applied with nearest-neighbour resampling.
Image warp_binary(const Image& bin, float amplitude, RngStream& rng) {
  int h = bin.height, w = bin.width;
  const int gs = 4;
  std::vector<float> fx(gs * gs), fy(gs * gs);
  for (int i = 0; i < gs * gs; ++i) {
    fx[size_t(i)] = float(rng.uniform(-1.0, 1.0)) * amplitude;
    fy[size_t(i)] = float(rng.uniform(-1.0, 1.0)) * amplitude;
  }
  auto field = [&](const std::vector<float>& f, double y, double x) {
    double u = x / (w - 1) * (gs - 1), v = y / (h - 1) * (gs - 1);
    int x0 = clampi(int(u), 0, gs - 2), y0 = clampi(int(v), 0, gs - 2);
    double du = u - x0, dv = v - y0;
    double a = f[size_t(y0 * gs + x0)], b = f[size_t(y0 * gs + x0 + 1)];
    double c = f[size_t((y0 + 1) * gs + x0)], d = f[size_t((y0 + 1) * gs + x0 + 1)];
    return (a * (1 - du) + b * du) * (1 - dv) + (c * (1 - du) + d * du) * dv;
  };
  Image out(1, h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      int sx = clampi(int(std::lround(x + field(fx, y, x))), 0, w - 1);
      int sy = clampi(int(std::lround(y + field(fy, y, x))), 0, h - 1);
      out.at(0, y, x) = bin.at(0, sy, sx);
    }
  return out;
}

std::vector<std::array<float, 3>> to_points(const Image& img) {
  std::vector<std::array<float, 3>> pts(size_t(img.height) * img.width);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      pts[size_t(y) * img.width + x] = {img.at(0, y, x), img.at(1, y, x), img.at(2, y, x)};
  return pts;
}

double dist2(const std::array<float, 3>& a, const std::array<float, 3>& b) {
  double d = 0;
  for (int c = 0; c < 3; ++c) {
    double e = double(a[size_t(c)]) - double(b[size_t(c)]);
    d += e * e;
  }
  return d;
}

}  // namespace

std::string cond_kind_name(CondKind k) {
  switch (k) {
    case CondKind::edge:
      return "edge";
    case CondKind::stroke:
      return "stroke";
    case CondKind::palette:
      return "palette";
    case CondKind::mask:
      return "mask";
  }
  return "unknown";
}

CondKind cond_kind_from_name(const std::string& name) {
  if (name == "edge") return CondKind::edge;
  if (name == "stroke") return CondKind::stroke;
  if (name == "palette") return CondKind::palette;
  if (name == "mask") return CondKind::mask;
  throw ValueError("unknown condition kind '" + name + "' (want edge|stroke|palette|mask)");
}

int cond_channels(CondKind k) {
  return (k == CondKind::stroke || k == CondKind::palette) ? 3 : 1;
}

Image median_filter(const Image& img, int k) {
  if (k < 1 || k % 2 == 0) throw ValueError("median_filter: kernel must be odd and positive");
  int r = k / 2, h = img.height, w = img.width;
  Image out(img.channels, h, w);
  std::vector<float> window;
  window.reserve(size_t(k) * k);
  for (int c = 0; c < img.channels; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        window.clear();
        for (int dy = -r; dy <= r; ++dy)
          for (int dx = -r; dx <= r; ++dx)
            window.push_back(img.at(c, clampi(y + dy, 0, h - 1), clampi(x + dx, 0, w - 1)));
        size_t mid = window.size() / 2;
        std::nth_element(window.begin(), window.begin() + std::ptrdiff_t(mid), window.end());
        out.at(c, y, x) = window[mid];
      }
  return out;
}

Image dilate(const Image& bin, int radius) {
  if (bin.channels != 1) throw ShapeError("dilate: binary map must be single-channel");
  if (radius <= 0) return bin;
  int h = bin.height, w = bin.width;
  Image out(1, h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      if (bin.at(0, y, x) <= 0.5f) continue;
      for (int dy = -radius; dy <= radius; ++dy)
        for (int dx = -radius; dx <= radius; ++dx) {
          if (dx * dx + dy * dy > radius * radius) continue;
          int ny = y + dy, nx = x + dx;
          if (ny >= 0 && ny < h && nx >= 0 && nx < w) out.at(0, ny, nx) = 1.f;
        }
    }
  return out;
}

Image erode(const Image& bin, int radius) {
  if (bin.channels != 1) throw ShapeError("erode: binary map must be single-channel");
  if (radius <= 0) return bin;
  int h = bin.height, w = bin.width;
  Image out(1, h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      bool keep = bin.at(0, y, x) > 0.5f;
      for (int dy = -radius; keep && dy <= radius; ++dy)
        for (int dx = -radius; keep && dx <= radius; ++dx) {
          if (dx * dx + dy * dy > radius * radius) continue;
          int ny = y + dy, nx = x + dx;
          if (ny < 0 || ny >= h || nx < 0 || nx >= w || bin.at(0, ny, nx) <= 0.5f) keep = false;
        }
      out.at(0, y, x) = keep ? 1.f : 0.f;
    }
  return out;
}

Image convex_hull_fill(const Image& bin) {
  if (bin.channels != 1) throw ShapeError("convex_hull_fill: map must be single-channel");
  std::vector<std::pair<double, double>> pts;
  for (int y = 0; y < bin.height; ++y)
    for (int x = 0; x < bin.width; ++x)
      if (bin.at(0, y, x) > 0.5f) pts.emplace_back(x + 0.5, y + 0.5);
  if (pts.size() < 3) return bin;

  // Monotone chain.
  std::sort(pts.begin(), pts.end());
  auto cross = [](const std::pair<double, double>& o, const std::pair<double, double>& a,
                  const std::pair<double, double>& b) {
    return (a.first - o.first) * (b.second - o.second) -
           (a.second - o.second) * (b.first - o.first);
  };
  std::vector<std::pair<double, double>> hull(2 * pts.size());
  size_t m = 0;
  for (size_t i = 0; i < pts.size(); ++i) {
    while (m >= 2 && cross(hull[m - 2], hull[m - 1], pts[i]) <= 0) --m;
    hull[m++] = pts[i];
  }
  size_t lower = m + 1;
  for (size_t i = pts.size() - 1; i-- > 0;) {
    while (m >= lower && cross(hull[m - 2], hull[m - 1], pts[i]) <= 0) --m;
    hull[m++] = pts[i];
  }
  hull.resize(m - 1);
  if (hull.size() < 3) return bin;

  Image out(1, bin.height, bin.width);
  for (int y = 0; y < bin.height; ++y)
    for (int x = 0; x < bin.width; ++x) {
      std::pair<double, double> p{x + 0.5, y + 0.5};
      // Inside a convex polygon (either winding): p is never strictly on
      // both sides of the edge lines.
      bool pos = false, neg = false;
      for (size_t i = 0; i < hull.size(); ++i) {
        size_t j = (i + 1) % hull.size();
        double c = cross(hull[i], hull[j], p);
        if (c > 0) pos = true;
        if (c < 0) neg = true;
      }
      if (!(pos && neg)) out.at(0, y, x) = 1.f;
    }
  return out;
}

Image edge_magnitude(const Image& img) {
  Image gray = luma(img);
  Image gx, gy;
  sobel(gray, gx, gy);
  Image mag(1, img.height, img.width);
  for (size_t i = 0; i < mag.data.size(); ++i)
    mag.data[i] = std::hypot(gx.data[i], gy.data[i]);
  return thin_ridges(mag, gx, gy);
}

ConditionMap edge_map(const Image& img, const EdgeAug& aug, RngStream& rng) {
  Image mag = edge_magnitude(img);
  float peak = max_value(mag);
  std::ostringstream prov;
  ConditionMap cm;
  cm.kind = CondKind::edge;
  if (peak <= 0) {
    cm.map = Image(1, img.height, img.width);
    cm.provenance = "edge empty";
    return cm;
  }
  float frac = aug.enabled ? float(rng.uniform(aug.thresh_lo, aug.thresh_hi))
                           : 0.5f * (aug.thresh_lo + aug.thresh_hi);
  Image bin = binarize(mag, frac * peak);
  prov << "edge thresh=" << frac;
  if (aug.enabled) {
    int d = aug.max_dilate > 0 ? int(rng.uniform_int(0, aug.max_dilate)) : 0;
    int e = aug.max_erode > 0 ? int(rng.uniform_int(0, aug.max_erode)) : 0;
    if (d > 0) bin = dilate(bin, d);
    if (e > 0) bin = erode(bin, e);
    float amp = float(rng.uniform(0.0, double(aug.warp_amp)));
    if (amp > 0) bin = warp_binary(bin, amp, rng);
    prov << " dilate=" << d << " erode=" << e << " warp=" << amp;
  }
  cm.map = std::move(bin);
  cm.provenance = prov.str();
  return cm;
}

ConditionMap edge_map_inference(const Image& img) {
  Image mag = edge_magnitude(img);
  float peak = max_value(mag);
  ConditionMap cm;
  cm.kind = CondKind::edge;
  cm.provenance = "edge hysteresis=200/225";
  int h = img.height, w = img.width;
  cm.map = Image(1, h, w);
  if (peak <= 0) return cm;

  // 8-bit magnitude scale; low 200, high 225.
  const float low = 200.f / 255.f * peak, high = 225.f / 255.f * peak;
  std::deque<std::pair<int, int>> frontier;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if (mag.at(0, y, x) >= high) {
        cm.map.at(0, y, x) = 1.f;
        frontier.emplace_back(y, x);
      }
  while (!frontier.empty()) {
    auto [y, x] = frontier.front();
    frontier.pop_front();
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx) {
        int ny = y + dy, nx = x + dx;
        if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
        if (cm.map.at(0, ny, nx) > 0.5f || mag.at(0, ny, nx) < low) continue;
        cm.map.at(0, ny, nx) = 1.f;
        frontier.emplace_back(ny, nx);
      }
  }
  return cm;
}

KMeansResult kmeans_colors(const std::vector<std::array<float, 3>>& pts, int k, RngStream& rng,
                           int max_iters) {
  if (k < 1) throw ValueError("kmeans: k must be >= 1");
  if (pts.empty()) throw ValueError("kmeans: no points");
  KMeansResult res;
  size_t n = pts.size();

  // k-means++ seeding; zero total distance falls back to a uniform pick.
  res.centers.push_back(pts[rng.uniform_int(0, uint64_t(n - 1))]);
  std::vector<double> d2(n);
  while (int(res.centers.size()) < k) {
    double total = 0;
    for (size_t i = 0; i < n; ++i) {
      double best = dist2(pts[i], res.centers[0]);
      for (size_t c = 1; c < res.centers.size(); ++c)
        best = std::min(best, dist2(pts[i], res.centers[c]));
      d2[i] = best;
      total += best;
    }
    if (total <= 0) {
      res.centers.push_back(pts[rng.uniform_int(0, uint64_t(n - 1))]);
      continue;
    }
    double r = rng.uniform(0.0, total);
    size_t pick = n - 1;
    double acc = 0;
    for (size_t i = 0; i < n; ++i) {
      acc += d2[i];
      if (acc >= r) {
        pick = i;
        break;
      }
    }
    res.centers.push_back(pts[pick]);
  }

  res.assign.assign(n, 0);
  for (int iter = 0; iter < max_iters; ++iter) {
    bool changed = false;
    for (size_t i = 0; i < n; ++i) {
      int best = 0;
      double bd = dist2(pts[i], res.centers[0]);
      for (int c = 1; c < k; ++c) {
        double d = dist2(pts[i], res.centers[size_t(c)]);
        if (d < bd) {
          bd = d;
          best = c;
        }
      }
      if (res.assign[i] != best) {
        res.assign[i] = best;
        changed = true;
      }
    }
    std::vector<std::array<double, 3>> sums(size_t(k), {0, 0, 0});
    std::vector<int64_t> counts(size_t(k), 0);
    for (size_t i = 0; i < n; ++i) {
      for (int c = 0; c < 3; ++c) sums[size_t(res.assign[i])][size_t(c)] += pts[i][size_t(c)];
      ++counts[size_t(res.assign[i])];
    }
    for (int c = 0; c < k; ++c)
      if (counts[size_t(c)] > 0)
        for (int j = 0; j < 3; ++j)
          res.centers[size_t(c)][size_t(j)] =
              float(sums[size_t(c)][size_t(j)] / double(counts[size_t(c)]));
    double energy = 0;
    for (size_t i = 0; i < n; ++i) energy += dist2(pts[i], res.centers[size_t(res.assign[i])]);
    res.energy.push_back(energy / double(n));
    if (!changed && iter > 0) break;
  }
  return res;
}

Image stroke_quantize(const Image& img, int k, RngStream& rng) {
  if (img.channels != 3) throw ShapeError("stroke: image must have 3 channels");
  int med_k = std::max(3, int(std::lround(23.0 * img.height / 512.0)));
  if (med_k % 2 == 0) ++med_k;
  Image smooth = median_filter(img, med_k);
  auto pts = to_points(smooth);
  KMeansResult km = kmeans_colors(pts, k, rng);
  Image out(3, img.height, img.width);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      const auto& c = km.centers[size_t(km.assign[size_t(y) * img.width + x])];
      for (int ch = 0; ch < 3; ++ch) out.at(ch, y, x) = c[size_t(ch)];
    }
  return out;
}

ConditionMap stroke_sim(const Image& img, RngStream& rng) {
  static const int kChoices[4] = {4, 8, 12, 16};
  int k = kChoices[rng.uniform_int(0, 3)];
  ConditionMap cm;
  cm.kind = CondKind::stroke;
  cm.map = stroke_quantize(img, k, rng);
  cm.provenance = "stroke k=" + std::to_string(k);
  return cm;
}

ConditionMap palette_sim(const Image& img) {
  if (img.channels != 3) throw ShapeError("palette: image must have 3 channels");
  const int grid = 8;
  int h = img.height, w = img.width;
  int bh = (h + grid - 1) / grid, bw = (w + grid - 1) / grid;
  ConditionMap cm;
  cm.kind = CondKind::palette;
  cm.provenance = "palette grid=8";
  cm.map = Image(3, h, w);
  for (int gy = 0; gy < grid; ++gy)
    for (int gx = 0; gx < grid; ++gx) {
      // Nearest source sample for this block.
      int sy = clampi(gy * bh + bh / 2, 0, h - 1);
      int sx = clampi(gx * bw + bw / 2, 0, w - 1);
      for (int y = gy * bh; y < std::min(h, (gy + 1) * bh); ++y)
        for (int x = gx * bw; x < std::min(w, (gx + 1) * bw); ++x)
          for (int c = 0; c < 3; ++c) cm.map.at(c, y, x) = img.at(c, sy, sx);
    }
  return cm;
}

ConditionMap mask_sim(const ShapeGeom& g, int height, int width) {
  ConditionMap cm;
  cm.kind = CondKind::mask;
  cm.provenance = "mask fine " + shape_name(g.kind);
  cm.map = Image(1, height, width);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      if (point_in_shape(g, x + 0.5, y + 0.5)) cm.map.at(0, y, x) = 1.f;
  return cm;
}

ConditionMap mask_sim_coarse(const ShapeGeom& g, int height, int width) {
  ConditionMap fine = mask_sim(g, height, width);
  ConditionMap cm;
  cm.kind = CondKind::mask;
  cm.provenance = "mask coarse " + shape_name(g.kind) + " dilate=2";
  cm.map = dilate(convex_hull_fill(fine.map), 2);
  return cm;
}

}  // namespace lcdg
