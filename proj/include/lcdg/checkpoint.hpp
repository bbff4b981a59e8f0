#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "lcdg/error.hpp"
#include "lcdg/tensor.hpp"

namespace lcdg {

enum class Dtype : uint8_t { f32 = 0, f64 = 1 };

struct TensorRecord {
  std::string name;
  Dtype dtype = Dtype::f32;
  std::vector<int> shape;
  std::vector<uint8_t> bytes;  // row-major, little-endian

  int64_t numel() const;
};

// Named-tensor container: "LCDG" magic, version, model kind, ordered string
// metadata, ordered tensor table, SHA-256 trailer over everything before it.
struct Checkpoint {
  static constexpr uint32_t kVersion = 1;

  std::string kind;
  std::vector<std::pair<std::string, std::string>> metadata;
  std::vector<TensorRecord> tensors;
  std::vector<std::string> warnings;  // load-time notes; not serialized

  void set_meta(const std::string& key, const std::string& value);
  std::optional<std::string> meta(const std::string& key) const;

  template <typename T>
  void add_tensor(const std::string& name, const Tensor<T>& t);
  template <typename T>
  void add_values(const std::string& name, const std::vector<int>& shape,
                  const std::vector<T>& values);

  bool has_tensor(const std::string& name) const;
  const TensorRecord& record(const std::string& name) const;  // missing_tensor

  // Reads a named tensor, converting across precisions; 64->32 narrowing
  // appends a warning record.
  template <typename T>
  Tensor<T> get_tensor(const std::string& name);
  template <typename T>
  std::vector<T> get_values(const std::string& name);

  std::vector<uint8_t> serialize() const;  // includes the digest trailer
};

void save_checkpoint(const Checkpoint& ck, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

// Hex SHA-256 of a file's bytes (manifest provenance).
std::string file_digest(const std::string& path);

// Hex SHA-256 over parameter names and raw values in order; detects any
// weight mutation (frozenness checks).
template <typename T>
std::string params_digest(const std::vector<std::pair<std::string, Tensor<T>>>& params);

#define LCDG_EXTERN_CKPT(T)                                                              \
  extern template void Checkpoint::add_tensor(const std::string&, const Tensor<T>&);     \
  extern template void Checkpoint::add_values(const std::string&, const std::vector<int>&, \
                                              const std::vector<T>&);                    \
  extern template Tensor<T> Checkpoint::get_tensor(const std::string&);                  \
  extern template std::vector<T> Checkpoint::get_values(const std::string&);             \
  extern template std::string params_digest(                                             \
      const std::vector<std::pair<std::string, Tensor<T>>>&);
LCDG_EXTERN_CKPT(float)
LCDG_EXTERN_CKPT(double)
#undef LCDG_EXTERN_CKPT

}  // namespace lcdg
