#pragma once

#include <stdexcept>
#include <string>

namespace lcdg {

// Base for all engine errors; subtypes map to distinct CLI exit codes.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

struct ShapeError : Error {
  explicit ShapeError(const std::string& msg) : Error(msg) {}
};

struct ValueError : Error {
  explicit ValueError(const std::string& msg) : Error(msg) {}
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& msg) : Error(msg) {}
};

struct CheckpointError : Error {
  enum class Kind { bad_magic, version_skew, digest_mismatch, malformed, missing_tensor };
  Kind kind;
  CheckpointError(Kind k, const std::string& msg) : Error(msg), kind(k) {}
};

struct DivergenceError : Error {
  explicit DivergenceError(const std::string& msg) : Error(msg) {}
};

}  // namespace lcdg
