#pragma once

// Binary PGM (P5, 1 channel) / PPM (P6, 3 channels) image files, 8-bit.
//
// Write convention: pixel values are taken to live in [-1, 1] and are stored
// as round(255 * (x + 1) / 2), clamped to [0, 255]. Callers holding [0, 1]
// maps (condition targets) convert via to_signed_range first so every file on
// disk uses one mapping. Reading inverts to 2 * v / 255 - 1, so a
// write/read/write round trip is byte-identical.

#include <string>
#include <vector>

#include "lcdg/image.hpp"

namespace lcdg {

// Quantize one [-1,1] float to the stored byte.
unsigned char pixel_byte(float x);

// Serialize to P5 (1 channel) or P6 (3 channels) bytes. Other channel counts
// throw ShapeError.
std::vector<unsigned char> encode_pnm(const Image& img);

// Parse P5/P6 bytes back into an Image in [-1,1]. Malformed data throws Error.
Image decode_pnm(const std::vector<unsigned char>& bytes);

// File variants. write_pnm derives nothing from the extension; callers pick
// ".pgm" for 1 channel and ".ppm" for 3. I/O failure throws Error.
void write_pnm(const std::string& path, const Image& img);
Image read_pnm(const std::string& path);

// Extension matching the channel count ("pgm" or "ppm", no dot).
std::string pnm_extension(int channels);

// Tile images into one montage on a mid-gray ground: `cols` per row, `gap`
// pixels between tiles. All images must share channels/height/width.
Image contact_sheet(const std::vector<Image>& images, int cols, int gap = 2);

}  // namespace lcdg
