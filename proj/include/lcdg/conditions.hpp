#pragma once

#include <array>
#include <string>
#include <vector>

#include "lcdg/dataset.hpp"
#include "lcdg/image.hpp"
#include "lcdg/rng.hpp"

namespace lcdg {

enum class CondKind { edge, stroke, palette, mask };

std::string cond_kind_name(CondKind k);
CondKind cond_kind_from_name(const std::string& name);
// edge/mask maps are single-channel, stroke/palette three-channel.
int cond_channels(CondKind k);

// A structural condition map in [0,1] plus the generator parameters that
// produced it.
struct ConditionMap {
  CondKind kind = CondKind::edge;
  Image map;
  std::string provenance;
};

// ---- shared image morphology -----------------------------------------------

// Per-channel median with odd kernel and replicate padding.
Image median_filter(const Image& img, int k);
// Binary morphology over a Euclidean disc of the given radius.
Image dilate(const Image& bin, int radius);
Image erode(const Image& bin, int radius);
// Filled convex hull of the set pixels (pixel-center geometry).
Image convex_hull_fill(const Image& bin);

// ---- edge -------------------------------------------------------------------

struct EdgeAug {
  bool enabled = true;
  float thresh_lo = 0.2f;  // binarization threshold range, fraction of peak
  float thresh_hi = 0.6f;
  int max_dilate = 1;
  int max_erode = 1;
  float warp_amp = 2.0f;  // max displacement in pixels
};

// Sobel magnitude after directional thinning; input in [0,1].
Image edge_magnitude(const Image& img);

// Training-time edge map: random threshold, then random dilation/erosion/warp
// when aug.enabled.
ConditionMap edge_map(const Image& img, const EdgeAug& aug, RngStream& rng);

// Inference-time simulation with fixed hysteresis thresholds 200/225 on the
// 8-bit magnitude scale.
ConditionMap edge_map_inference(const Image& img);

// ---- stroke -----------------------------------------------------------------

struct KMeansResult {
  std::vector<std::array<float, 3>> centers;
  std::vector<int> assign;
  std::vector<double> energy;  // mean squared distance after each iteration
};

// Seeded k-means++ over color vectors; ties broken toward the lowest center
// index; stops on stable assignments or max_iters.
KMeansResult kmeans_colors(const std::vector<std::array<float, 3>>& pts, int k, RngStream& rng,
                           int max_iters = 50);

// Median smoothing + color quantization to k centers.
Image stroke_quantize(const Image& img, int k, RngStream& rng);

// Training-time stroke simulation: k drawn uniformly from {4,8,12,16}.
ConditionMap stroke_sim(const Image& img, RngStream& rng);

// ---- palette ----------------------------------------------------------------

// Blockwise color palette: nearest-downsample to an 8x8 grid and back.
ConditionMap palette_sim(const Image& img);

// ---- mask -------------------------------------------------------------------

// Exact foreground raster at pixel centers.
ConditionMap mask_sim(const ShapeGeom& g, int height, int width);
// Coarse scribble stand-in: dilated filled convex hull of the fine mask.
ConditionMap mask_sim_coarse(const ShapeGeom& g, int height, int width);

}  // namespace lcdg
