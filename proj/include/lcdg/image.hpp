#pragma once

#include <vector>

#include "lcdg/error.hpp"

namespace lcdg {

// Dense CHW float image. Value range is contextual: dataset images live in
// [-1,1], condition maps in [0,1].
struct Image {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<float> data;  // channels * height * width, row-major per channel

  Image() = default;
  Image(int c, int h, int w, float fill = 0.f)
      : channels(c), height(h), width(w), data(size_t(c) * h * w, fill) {
    if (c <= 0 || h <= 0 || w <= 0) throw ShapeError("image: dims must be positive");
  }

  float& at(int c, int y, int x) { return data[(size_t(c) * height + y) * width + x]; }
  float at(int c, int y, int x) const { return data[(size_t(c) * height + y) * width + x]; }
  size_t numel() const { return data.size(); }

  bool operator==(const Image& o) const {
    return channels == o.channels && height == o.height && width == o.width && data == o.data;
  }
};

// [-1,1] <-> [0,1] range maps used at the dataset/condition boundary.
inline Image to_unit_range(const Image& img) {
  Image out = img;
  for (float& v : out.data) v = 0.5f * (v + 1.f);
  return out;
}

inline Image to_signed_range(const Image& img) {
  Image out = img;
  for (float& v : out.data) v = 2.f * v - 1.f;
  return out;
}

}  // namespace lcdg
