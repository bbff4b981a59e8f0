#include <doctest.h>

#include <cmath>
#include <set>

#include "lcdg/conditions.hpp"

using namespace lcdg;

namespace {

double count_set(const Image& img) {
  double n = 0;
  for (float v : img.data)
    if (v > 0.5f) n += 1;
  return n;
}

bool in_unit_range(const Image& img) {
  for (float v : img.data)
    if (v < 0.f || v > 1.f) return false;
  return true;
}

int distinct_colors(const Image& img) {
  std::set<std::array<float, 3>> cols;
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      cols.insert({img.at(0, y, x), img.at(1, y, x), img.at(2, y, x)});
  return int(cols.size());
}

Image unit_square_image(double half_side) {
  ShapeGeom g;
  g.kind = ShapeKind::square;
  g.cx = 16;
  g.cy = 16;
  g.size = half_side;
  g.angle = 0;
  g.fg = {1.f};
  g.bg = {-1.f};
  return to_unit_range(render_shape(g, 1, 32, 32));
}

}  // namespace

TEST_CASE("constant images produce empty edge maps") {
  Image flat(1, 16, 16, 0.5f);
  RngStream rng(1);
  EdgeAug aug;
  auto cm = edge_map(flat, aug, rng);
  CHECK(count_set(cm.map) == 0);
  auto ci = edge_map_inference(flat);
  CHECK(count_set(ci.map) == 0);
}

TEST_CASE("square edge pixel count approximates the perimeter") {
  Image img = unit_square_image(5.0);  // side 10
  auto cm = edge_map_inference(img);
  double n = count_set(cm.map);
  CHECK(n >= 0.8 * 40.0);
  CHECK(n <= 1.2 * 40.0);

  EdgeAug off;
  off.enabled = false;
  RngStream rng(2);
  auto ct = edge_map(img, off, rng);
  double nt = count_set(ct.map);
  CHECK(nt >= 0.8 * 40.0);
  CHECK(nt <= 1.2 * 40.0);
}

TEST_CASE("edge augmentation is reproducible and stays binary") {
  Image img = unit_square_image(6.0);
  EdgeAug aug;
  RngStream r1(33), r2(33), r3(44);
  auto a = edge_map(img, aug, r1);
  auto b = edge_map(img, aug, r2);
  CHECK(a.map == b.map);
  CHECK(a.provenance == b.provenance);
  auto c = edge_map(img, aug, r3);
  CHECK(in_unit_range(a.map));
  CHECK(in_unit_range(c.map));
  for (float v : c.map.data) CHECK((v == 0.f || v == 1.f));
}

TEST_CASE("dilate and erode behave on a single pixel") {
  Image one(1, 9, 9);
  one.at(0, 4, 4) = 1.f;
  Image d = dilate(one, 1);
  CHECK(count_set(d) == 5);  // euclidean radius 1 = plus shape
  CHECK(d.at(0, 4, 4) == 1.f);
  CHECK(d.at(0, 3, 4) == 1.f);
  CHECK(d.at(0, 3, 3) == 0.f);
  Image back = erode(d, 1);
  CHECK(back == one);
  CHECK(count_set(erode(one, 1)) == 0);
}

TEST_CASE("kmeans recovers separable colors with stable energy") {
  std::vector<std::array<float, 3>> pts;
  for (int i = 0; i < 512; ++i) pts.push_back({0.9f, 0.1f, 0.1f});
  for (int i = 0; i < 512; ++i) pts.push_back({0.1f, 0.1f, 0.9f});
  RngStream rng(5);
  KMeansResult km = kmeans_colors(pts, 4, rng);
  std::set<int> occupied(km.assign.begin(), km.assign.end());
  CHECK(occupied.size() == 2);
  bool found_a = false, found_b = false;
  for (int c : occupied) {
    const auto& ctr = km.centers[size_t(c)];
    if (std::fabs(ctr[0] - 0.9f) < 1e-3 && std::fabs(ctr[2] - 0.1f) < 1e-3) found_a = true;
    if (std::fabs(ctr[0] - 0.1f) < 1e-3 && std::fabs(ctr[2] - 0.9f) < 1e-3) found_b = true;
  }
  CHECK(found_a);
  CHECK(found_b);
  for (size_t i = 1; i < km.energy.size(); ++i) CHECK(km.energy[i] <= km.energy[i - 1] + 1e-12);
  CHECK(km.energy.back() == doctest::Approx(0.0));
  CHECK_THROWS_AS(kmeans_colors({}, 2, rng), ValueError);
  CHECK_THROWS_AS(kmeans_colors(pts, 0, rng), ValueError);
}

TEST_CASE("stroke simulation quantizes colors") {
  Image flat(3, 16, 16, 0.6f);
  RngStream rng(6);
  auto cm = stroke_sim(flat, rng);
  CHECK(cm.map == flat);  // constant image is its own quantization
  CHECK(cm.kind == CondKind::stroke);
  CHECK(cm.provenance.find("stroke k=") == 0);

  Image halves(3, 16, 16);
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 16; ++x)
      for (int c = 0; c < 3; ++c) halves.at(c, y, x) = y < 8 ? (c == 0 ? 0.9f : 0.2f)
                                                             : (c == 2 ? 0.8f : 0.1f);
  RngStream r2(7);
  Image q = stroke_quantize(halves, 4, r2);
  CHECK(distinct_colors(q) <= 4);
  CHECK(in_unit_range(q));
  RngStream r3(7);
  Image q2 = stroke_quantize(halves, 4, r3);
  CHECK(q == q2);  // seeded determinism

  Image gray(1, 8, 8, 0.5f);
  RngStream r4(8);
  CHECK_THROWS_AS(stroke_sim(gray, r4), ShapeError);
}

TEST_CASE("palette simulation is a blockwise projection") {
  RngStream rng(9);
  Image img(3, 32, 32);
  for (float& v : img.data) v = float(rng.uniform(0.0, 1.0));
  auto once = palette_sim(img);
  CHECK(distinct_colors(once.map) <= 64);
  auto twice = palette_sim(once.map);
  CHECK(twice.map == once.map);  // idempotent
  CHECK(in_unit_range(once.map));

  // Blockwise-constant input is a fixed point.
  auto again = palette_sim(once.map);
  CHECK(again.map == once.map);
  Image gray(1, 32, 32, 0.f);
  CHECK_THROWS_AS(palette_sim(gray), ShapeError);
}

TEST_CASE("fine mask area matches analytic geometry") {
  ShapeGeom g;
  g.kind = ShapeKind::circle;
  g.cx = 16;
  g.cy = 16;
  g.size = 8;
  auto cm = mask_sim(g, 32, 32);
  double area = count_set(cm.map);
  double exact = 3.14159265358979 * 64.0;
  CHECK(std::fabs(area - exact) / exact < 0.10);

  ShapeGeom none;
  auto empty = mask_sim(none, 32, 32);
  CHECK(count_set(empty.map) == 0);
}

TEST_CASE("coarse mask strictly contains the fine mask") {
  for (ShapeKind k : {ShapeKind::circle, ShapeKind::ring, ShapeKind::triangle}) {
    ShapeGeom g;
    g.kind = k;
    g.cx = 15;
    g.cy = 17;
    g.size = 7;
    g.angle = 0.7;
    g.inner_ratio = 0.5;
    auto fine = mask_sim(g, 32, 32);
    auto coarse = mask_sim_coarse(g, 32, 32);
    for (size_t i = 0; i < fine.map.data.size(); ++i)
      if (fine.map.data[i] > 0.5f) CHECK(coarse.map.data[i] > 0.5f);
    CHECK(count_set(coarse.map) > count_set(fine.map));
  }
}

TEST_CASE("convex hull fill contains its input points") {
  RngStream rng(11);
  Image scatter(1, 24, 24);
  for (int i = 0; i < 20; ++i)
    scatter.at(0, int(rng.uniform_int(2, 21)), int(rng.uniform_int(2, 21))) = 1.f;
  Image hull = convex_hull_fill(scatter);
  for (size_t i = 0; i < scatter.data.size(); ++i)
    if (scatter.data[i] > 0.5f) CHECK(hull.data[i] > 0.5f);

  // A convex blob is (nearly) its own hull fill.
  ShapeGeom g;
  g.kind = ShapeKind::circle;
  g.cx = 12;
  g.cy = 12;
  g.size = 6;
  auto disk = mask_sim(g, 24, 24);
  Image dh = convex_hull_fill(disk.map);
  for (size_t i = 0; i < disk.map.data.size(); ++i)
    if (disk.map.data[i] > 0.5f) CHECK(dh.data[i] > 0.5f);
  CHECK(count_set(dh) <= count_set(disk.map) * 1.10);
}

TEST_CASE("median filter removes impulses and validates kernels") {
  Image img(1, 9, 9, 0.f);
  img.at(0, 4, 4) = 1.f;
  Image f = median_filter(img, 3);
  CHECK(count_set(f) == 0);
  CHECK_THROWS_AS(median_filter(img, 2), ValueError);
  CHECK_THROWS_AS(median_filter(img, 0), ValueError);
}

TEST_CASE("condition kind names round-trip") {
  for (CondKind k : {CondKind::edge, CondKind::stroke, CondKind::palette, CondKind::mask})
    CHECK(cond_kind_from_name(cond_kind_name(k)) == k);
  CHECK_THROWS_AS(cond_kind_from_name("sketch"), ValueError);
  CHECK(cond_channels(CondKind::edge) == 1);
  CHECK(cond_channels(CondKind::stroke) == 3);
  CHECK(cond_channels(CondKind::palette) == 3);
  CHECK(cond_channels(CondKind::mask) == 1);
}
