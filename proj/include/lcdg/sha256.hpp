#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>

namespace lcdg {

// Streaming SHA-256.
class Sha256 {
 public:
  Sha256();
  void update(const void* data, size_t len);
  std::array<uint8_t, 32> finish();

  static std::array<uint8_t, 32> digest(const void* data, size_t len);

 private:
  void process_block(const uint8_t* block);

  uint32_t h_[8];
  uint64_t total_ = 0;
  uint8_t buf_[64];
  size_t buf_len_ = 0;
};

std::string hex_digest(const std::array<uint8_t, 32>& d);

}  // namespace lcdg
