#include "lcdg/image_io.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "lcdg/error.hpp"

namespace lcdg {

unsigned char pixel_byte(float x) {
  double v = std::round(255.0 * (double(x) + 1.0) / 2.0);
  if (v < 0.0) v = 0.0;
  if (v > 255.0) v = 255.0;
  return static_cast<unsigned char>(v);
}

std::vector<unsigned char> encode_pnm(const Image& img) {
  if (img.channels != 1 && img.channels != 3)
    throw ShapeError("encode_pnm: only 1- or 3-channel images, got " +
                     std::to_string(img.channels));
  char header[64];
  int n = std::snprintf(header, sizeof(header), "%s\n%d %d\n255\n",
                        img.channels == 1 ? "P5" : "P6", img.width, img.height);
  std::vector<unsigned char> out(header, header + n);
  out.reserve(out.size() + img.numel());
  // PNM stores pixels interleaved; Image is planar CHW.
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < img.channels; ++c) out.push_back(pixel_byte(img.at(c, y, x)));
  return out;
}

namespace {

// Read one whitespace-delimited token, skipping '#' comment lines.
std::string next_token(const std::vector<unsigned char>& b, size_t& pos) {
  while (pos < b.size()) {
    unsigned char ch = b[pos];
    if (ch == '#') {
      while (pos < b.size() && b[pos] != '\n') ++pos;
    } else if (std::isspace(ch)) {
      ++pos;
    } else {
      break;
    }
  }
  size_t start = pos;
  while (pos < b.size() && !std::isspace(b[pos]) && b[pos] != '#') ++pos;
  if (start == pos) throw Error("decode_pnm: truncated header");
  return std::string(b.begin() + start, b.begin() + pos);
}

int header_int(const std::vector<unsigned char>& b, size_t& pos, const char* what) {
  std::string tok = next_token(b, pos);
  size_t used = 0;
  int v = 0;
  try {
    v = std::stoi(tok, &used);
  } catch (const std::exception&) {
    throw Error(std::string("decode_pnm: bad ") + what + " '" + tok + "'");
  }
  if (used != tok.size() || v <= 0)
    throw Error(std::string("decode_pnm: bad ") + what + " '" + tok + "'");
  return v;
}

}  // namespace

Image decode_pnm(const std::vector<unsigned char>& bytes) {
  size_t pos = 0;
  std::string magic = next_token(bytes, pos);
  int channels = 0;
  if (magic == "P5")
    channels = 1;
  else if (magic == "P6")
    channels = 3;
  else
    throw Error("decode_pnm: unsupported magic '" + magic + "'");
  int width = header_int(bytes, pos, "width");
  int height = header_int(bytes, pos, "height");
  int maxval = header_int(bytes, pos, "maxval");
  if (maxval != 255) throw Error("decode_pnm: only maxval 255 supported");
  if (pos >= bytes.size() || !std::isspace(bytes[pos]))
    throw Error("decode_pnm: missing header terminator");
  ++pos;  // single whitespace byte separates header from raster
  size_t need = size_t(channels) * height * width;
  if (bytes.size() - pos < need) throw Error("decode_pnm: truncated pixel data");
  Image img(channels, height, width);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      for (int c = 0; c < channels; ++c)
        img.at(c, y, x) = float(2.0 * bytes[pos++] / 255.0 - 1.0);
  return img;
}

void write_pnm(const std::string& path, const Image& img) {
  std::vector<unsigned char> bytes = encode_pnm(img);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error("write_pnm: cannot open " + path);
  f.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
  if (!f) throw Error("write_pnm: write failed for " + path);
}

Image read_pnm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("read_pnm: cannot open " + path);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)),
                                   std::istreambuf_iterator<char>());
  return decode_pnm(bytes);
}

std::string pnm_extension(int channels) {
  if (channels == 1) return "pgm";
  if (channels == 3) return "ppm";
  throw ShapeError("pnm_extension: only 1- or 3-channel images");
}

Image contact_sheet(const std::vector<Image>& images, int cols, int gap) {
  if (images.empty()) throw ValueError("contact_sheet: no images");
  if (cols <= 0) throw ValueError("contact_sheet: cols must be positive");
  if (gap < 0) throw ValueError("contact_sheet: gap must be non-negative");
  const Image& first = images.front();
  for (const Image& im : images)
    if (im.channels != first.channels || im.height != first.height || im.width != first.width)
      throw ShapeError("contact_sheet: images must share one shape");
  int n = int(images.size());
  int rows = (n + cols - 1) / cols;
  int used_cols = n < cols ? n : cols;
  int sheet_h = rows * first.height + (rows + 1) * gap;
  int sheet_w = used_cols * first.width + (used_cols + 1) * gap;
  Image sheet(first.channels, sheet_h, sheet_w, 0.f);  // mid-gray ground in [-1,1]
  for (int i = 0; i < n; ++i) {
    int r = i / cols, cidx = i % cols;
    int oy = gap + r * (first.height + gap);
    int ox = gap + cidx * (first.width + gap);
    for (int c = 0; c < first.channels; ++c)
      for (int y = 0; y < first.height; ++y)
        for (int x = 0; x < first.width; ++x)
          sheet.at(c, oy + y, ox + x) = images[size_t(i)].at(c, y, x);
  }
  return sheet;
}

}  // namespace lcdg
