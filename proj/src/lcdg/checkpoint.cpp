#include "lcdg/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "lcdg/sha256.hpp"

namespace lcdg {

namespace {

constexpr char kMagic[4] = {'L', 'C', 'D', 'G'};

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(uint8_t(v >> (8 * i)));
}

void put_u64(std::vector<uint8_t>& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(uint8_t(v >> (8 * i)));
}

void put_str(std::vector<uint8_t>& out, const std::string& s) {
  put_u32(out, uint32_t(s.size()));
  out.insert(out.end(), s.begin(), s.end());
}

// Bounds-checked little-endian reader; any overrun is a malformed file.
struct Reader {
  const std::vector<uint8_t>& buf;
  size_t pos = 0;
  size_t end = 0;

  void need(size_t n) const {
    if (pos + n > end) throw CheckpointError(CheckpointError::Kind::malformed, "truncated field");
  }
  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= uint32_t(buf[pos + size_t(i)]) << (8 * i);
    pos += 4;
    return v;
  }
  uint64_t u64() {
    need(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= uint64_t(buf[pos + size_t(i)]) << (8 * i);
    pos += 8;
    return v;
  }
  uint8_t u8() {
    need(1);
    return buf[pos++];
  }
  std::string str() {
    uint32_t n = u32();
    need(n);
    std::string s(reinterpret_cast<const char*>(buf.data() + pos), n);
    pos += n;
    return s;
  }
};

size_t dtype_size(Dtype d) { return d == Dtype::f32 ? 4 : 8; }

template <typename T>
Dtype dtype_of();
template <>
Dtype dtype_of<float>() {
  return Dtype::f32;
}
template <>
Dtype dtype_of<double>() {
  return Dtype::f64;
}

template <typename Src, typename Dst>
std::vector<Dst> convert_bytes(const std::vector<uint8_t>& bytes) {
  size_t n = bytes.size() / sizeof(Src);
  std::vector<Dst> out(n);
  for (size_t i = 0; i < n; ++i) {
    Src v;
    std::memcpy(&v, bytes.data() + i * sizeof(Src), sizeof(Src));
    out[i] = Dst(v);
  }
  return out;
}

}  // namespace

int64_t TensorRecord::numel() const {
  int64_t n = 1;
  for (int d : shape) n *= d;
  return n;
}

void Checkpoint::set_meta(const std::string& key, const std::string& value) {
  for (auto& kv : metadata)
    if (kv.first == key) {
      kv.second = value;
      return;
    }
  metadata.emplace_back(key, value);
}

std::optional<std::string> Checkpoint::meta(const std::string& key) const {
  for (const auto& kv : metadata)
    if (kv.first == key) return kv.second;
  return std::nullopt;
}

template <typename T>
void Checkpoint::add_values(const std::string& name, const std::vector<int>& shape,
                            const std::vector<T>& values) {
  int64_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw ValueError("checkpoint: non-positive dim in tensor '" + name + "'");
    n *= d;
  }
  if (n != int64_t(values.size()))
    throw ShapeError("checkpoint: tensor '" + name + "' shape/value mismatch");
  TensorRecord rec;
  rec.name = name;
  rec.dtype = dtype_of<T>();
  rec.shape = shape;
  rec.bytes.resize(values.size() * sizeof(T));
  std::memcpy(rec.bytes.data(), values.data(), rec.bytes.size());
  tensors.push_back(std::move(rec));
}

template <typename T>
void Checkpoint::add_tensor(const std::string& name, const Tensor<T>& t) {
  add_values(name, t.shape(), t.values());
}

bool Checkpoint::has_tensor(const std::string& name) const {
  for (const auto& r : tensors)
    if (r.name == name) return true;
  return false;
}

const TensorRecord& Checkpoint::record(const std::string& name) const {
  for (const auto& r : tensors)
    if (r.name == name) return r;
  throw CheckpointError(CheckpointError::Kind::missing_tensor,
                        "tensor '" + name + "' not in checkpoint");
}

template <typename T>
std::vector<T> Checkpoint::get_values(const std::string& name) {
  const TensorRecord& rec = record(name);
  if (rec.dtype == dtype_of<T>())
    return convert_bytes<T, T>(rec.bytes);
  if (rec.dtype == Dtype::f64) {
    warnings.push_back("narrowed tensor '" + name + "' from 64-bit to 32-bit");
    return convert_bytes<double, T>(rec.bytes);
  }
  return convert_bytes<float, T>(rec.bytes);
}

template <typename T>
Tensor<T> Checkpoint::get_tensor(const std::string& name) {
  const TensorRecord& rec = record(name);
  Tensor<T> out = Tensor<T>::zeros(rec.shape);
  out.values() = get_values<T>(name);
  return out;
}

std::vector<uint8_t> Checkpoint::serialize() const {
  std::vector<uint8_t> out;
  out.insert(out.end(), kMagic, kMagic + 4);
  put_u32(out, kVersion);
  put_str(out, kind);
  put_u32(out, uint32_t(metadata.size()));
  for (const auto& [k, v] : metadata) {
    put_str(out, k);
    put_str(out, v);
  }
  put_u32(out, uint32_t(tensors.size()));
  for (const auto& rec : tensors) {
    put_str(out, rec.name);
    out.push_back(uint8_t(rec.dtype));
    put_u32(out, uint32_t(rec.shape.size()));
    for (int d : rec.shape) put_u32(out, uint32_t(d));
    put_u64(out, rec.bytes.size());
    out.insert(out.end(), rec.bytes.begin(), rec.bytes.end());
  }
  auto d = Sha256::digest(out.data(), out.size());
  out.insert(out.end(), d.begin(), d.end());
  return out;
}

void save_checkpoint(const Checkpoint& ck, const std::string& path) {
  std::vector<uint8_t> bytes = ck.serialize();
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw CheckpointError(CheckpointError::Kind::malformed, "cannot open " + path);
  f.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
  if (!f) throw CheckpointError(CheckpointError::Kind::malformed, "short write to " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError(CheckpointError::Kind::malformed, "cannot open " + path);
  std::vector<uint8_t> buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (buf.size() < 4 + 4 + 32)
    throw CheckpointError(CheckpointError::Kind::malformed, "file too small: " + path);
  if (std::memcmp(buf.data(), kMagic, 4) != 0)
    throw CheckpointError(CheckpointError::Kind::bad_magic, "bad magic in " + path);

  size_t body = buf.size() - 32;
  auto d = Sha256::digest(buf.data(), body);
  if (std::memcmp(d.data(), buf.data() + body, 32) != 0)
    throw CheckpointError(CheckpointError::Kind::digest_mismatch, "digest mismatch in " + path);

  Reader r{buf, 4, body};
  uint32_t version = r.u32();
  if (version != Checkpoint::kVersion)
    throw CheckpointError(CheckpointError::Kind::version_skew,
                          "file version " + std::to_string(version) + ", runtime supports " +
                              std::to_string(Checkpoint::kVersion));
  Checkpoint ck;
  ck.kind = r.str();
  uint32_t nmeta = r.u32();
  for (uint32_t i = 0; i < nmeta; ++i) {
    std::string k = r.str();
    std::string v = r.str();
    ck.metadata.emplace_back(std::move(k), std::move(v));
  }
  uint32_t ntensors = r.u32();
  for (uint32_t i = 0; i < ntensors; ++i) {
    TensorRecord rec;
    rec.name = r.str();
    uint8_t dt = r.u8();
    if (dt > 1)
      throw CheckpointError(CheckpointError::Kind::malformed,
                            "unknown dtype for tensor '" + rec.name + "'");
    rec.dtype = Dtype(dt);
    uint32_t ndim = r.u32();
    rec.shape.resize(ndim);
    for (uint32_t di = 0; di < ndim; ++di) {
      uint32_t d32 = r.u32();
      if (d32 == 0 || d32 > (1u << 30))
        throw CheckpointError(CheckpointError::Kind::malformed,
                              "bad dim in tensor '" + rec.name + "'");
      rec.shape[di] = int(d32);
    }
    uint64_t blen = r.u64();
    if (blen != uint64_t(rec.numel()) * dtype_size(rec.dtype))
      throw CheckpointError(CheckpointError::Kind::malformed,
                            "byte length mismatch in tensor '" + rec.name + "'");
    r.need(size_t(blen));
    rec.bytes.assign(buf.begin() + std::ptrdiff_t(r.pos),
                     buf.begin() + std::ptrdiff_t(r.pos + blen));
    r.pos += size_t(blen);
    ck.tensors.push_back(std::move(rec));
  }
  if (r.pos != body)
    throw CheckpointError(CheckpointError::Kind::malformed, "trailing bytes in " + path);
  return ck;
}

std::string file_digest(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError(CheckpointError::Kind::malformed, "cannot open " + path);
  Sha256 s;
  char chunk[65536];
  while (f.read(chunk, sizeof(chunk)) || f.gcount() > 0) s.update(chunk, size_t(f.gcount()));
  return hex_digest(s.finish());
}

template <typename T>
std::string params_digest(const std::vector<std::pair<std::string, Tensor<T>>>& params) {
  Sha256 s;
  for (const auto& [name, p] : params) {
    s.update(name.data(), name.size());
    const auto& v = p.values();
    s.update(v.data(), v.size() * sizeof(T));
  }
  return hex_digest(s.finish());
}

#define LCDG_INST_CKPT(T)                                                                   \
  template void Checkpoint::add_tensor(const std::string&, const Tensor<T>&);               \
  template void Checkpoint::add_values(const std::string&, const std::vector<int>&,         \
                                       const std::vector<T>&);                              \
  template Tensor<T> Checkpoint::get_tensor(const std::string&);                            \
  template std::vector<T> Checkpoint::get_values(const std::string&);                       \
  template std::string params_digest(const std::vector<std::pair<std::string, Tensor<T>>>&);
LCDG_INST_CKPT(float)
LCDG_INST_CKPT(double)
#undef LCDG_INST_CKPT

}  // namespace lcdg
