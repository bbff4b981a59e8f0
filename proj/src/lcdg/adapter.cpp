#include "lcdg/adapter.hpp"

#include <cmath>
#include <cstdint>
#include <sstream>

#include "lcdg/error.hpp"
#include "lcdg/rng.hpp"

namespace lcdg {

namespace {

template <typename T>
Conv2dLayer<T> make_conv(int in_ch, int out_ch, int k, RngStream& rng) {
  Conv2dLayer<T> c;
  double scale = std::sqrt(2.0 / (double(in_ch) * k * k));
  c.w = Tensor<T>::randn({out_ch, in_ch, k, k}, rng, scale);
  c.b = Tensor<T>::zeros({out_ch});
  c.stride = 1;
  c.pad = k / 2;
  return c;
}

template <typename T>
LinearLayer<T> make_linear(int in_dim, int out_dim, RngStream& rng) {
  LinearLayer<T> l;
  l.w = Tensor<T>::randn({in_dim, out_dim}, rng, std::sqrt(1.0 / double(in_dim)));
  l.b = Tensor<T>::zeros({out_dim});
  return l;
}

uint64_t fnv1a(uint64_t h, const std::string& s) {
  for (char c : s) {
    h ^= uint64_t(uint8_t(c));
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace

std::vector<int> AdapterConfig::widths() const {
  if (size_class == "default") return {128, 64, 32, 16};
  if (size_class == "tiny") return {32, 16, 8, 8};
  throw ValueError("adapter: unknown size_class '" + size_class + "' (want default|tiny)");
}

template <typename T>
FeatureStack<T> align_features(const std::vector<Tensor<T>>& taps, int target_h, int target_w,
                               const TapSpec& provenance, UpsampleMode mode) {
  if (taps.empty()) throw ValueError("align_features: empty tap list");
  if (target_h <= 0 || target_w <= 0)
    throw ValueError("align_features: target dims must be positive");
  int batch = taps[0].dim(0);
  std::vector<Tensor<T>> ups;
  ups.reserve(taps.size());
  for (size_t i = 0; i < taps.size(); ++i) {
    const Tensor<T>& tap = taps[i];
    if (tap.ndim() != 4)
      throw ShapeError("align_features: tap " + std::to_string(i) + " must be 4D");
    if (tap.dim(0) != batch)
      throw ShapeError("align_features: tap " + std::to_string(i) + " batch " +
                       std::to_string(tap.dim(0)) + " != " + std::to_string(batch));
    int h = tap.dim(2), w = tap.dim(3);
    if (h > target_h || w > target_w)
      throw ValueError("align_features: tap " + std::to_string(i) + " is larger than target");
    if (target_h % h != 0 || target_w % w != 0 || target_h / h != target_w / w)
      throw ValueError("align_features: tap " + std::to_string(i) +
                       " dims do not divide the target evenly");
    int scale = target_h / h;
    ups.push_back(scale == 1 ? tap : upsample(tap, scale, mode));
  }
  FeatureStack<T> out;
  out.features = ups.size() == 1 ? ups[0] : concat(ups, 1);
  out.provenance = provenance;
  return out;
}

template <typename T>
ConditionAdapter<T>::ConditionAdapter(const AdapterConfig& cfg, uint64_t init_seed) : cfg_(cfg) {
  if (cfg.in_channels <= 0 || cfg.cond_channels <= 0)
    throw ValueError("adapter: channel counts must be positive");
  if (cfg.pe_dim % 2 != 0) throw ValueError("adapter: pe_dim must be even");
  std::vector<int> ws = cfg.widths();
  RngStream rng(mix_seed(init_seed, 0xca01));
  time1_ = make_linear<T>(cfg.pe_dim, cfg.emb_dim, rng);
  int prev = cfg.in_channels;
  for (int w : ws) {
    CABlock<T> b;
    b.conv = make_conv<T>(prev, w, 3, rng);
    b.time_proj = make_linear<T>(cfg.emb_dim, w, rng);
    b.bn_gamma = Tensor<T>::full({w}, T(1));
    b.bn_beta = Tensor<T>::zeros({w});
    b.bn_state.reset(w);
    blocks_.push_back(std::move(b));
    prev = w;
  }
  head_ = make_conv<T>(prev, cfg.cond_channels, 1, rng);
}

template <typename T>
Tensor<T> ConditionAdapter<T>::forward(const Tensor<T>& features, const std::vector<int>& t,
                                       NormMode mode) {
  if (features.ndim() != 4) throw ShapeError("adapter: features must be 4D");
  if (features.dim(1) != cfg_.in_channels)
    throw ShapeError("adapter: feature channels " + std::to_string(features.dim(1)) +
                     " != configured " + std::to_string(cfg_.in_channels));
  if (int(t.size()) != features.dim(0))
    throw ShapeError("adapter: t count " + std::to_string(t.size()) + " != batch " +
                     std::to_string(features.dim(0)));
  Tensor<T> emb = silu(time1_(sinusoidal_embed<T>(t, cfg_.pe_dim)));
  Tensor<T> h = features;
  for (auto& b : blocks_) h = b.forward(h, emb, mode);
  return head_(h);
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>>> ConditionAdapter<T>::named_params() {
  std::vector<std::pair<std::string, Tensor<T>>> out;
  out.emplace_back("time1.w", time1_.w);
  out.emplace_back("time1.b", time1_.b);
  for (size_t i = 0; i < blocks_.size(); ++i) {
    std::string p = "blocks." + std::to_string(i) + ".";
    out.emplace_back(p + "conv.w", blocks_[i].conv.w);
    out.emplace_back(p + "conv.b", blocks_[i].conv.b);
    out.emplace_back(p + "time_proj.w", blocks_[i].time_proj.w);
    out.emplace_back(p + "time_proj.b", blocks_[i].time_proj.b);
    out.emplace_back(p + "bn.gamma", blocks_[i].bn_gamma);
    out.emplace_back(p + "bn.beta", blocks_[i].bn_beta);
  }
  out.emplace_back("head.w", head_.w);
  out.emplace_back("head.b", head_.b);
  return out;
}

template <typename T>
std::vector<std::pair<std::string, std::vector<T>>> ConditionAdapter<T>::named_buffers() const {
  std::vector<std::pair<std::string, std::vector<T>>> out;
  for (size_t i = 0; i < blocks_.size(); ++i) {
    std::string p = "blocks." + std::to_string(i) + ".bn.";
    const auto& st = blocks_[i].bn_state;
    out.emplace_back(p + "running_mean", st.running_mean);
    out.emplace_back(p + "running_var", st.running_var);
    out.emplace_back(p + "initialized", std::vector<T>{st.initialized ? T(1) : T(0)});
  }
  return out;
}

template <typename T>
void ConditionAdapter<T>::load_buffer(const std::string& name, const std::vector<T>& data) {
  for (size_t i = 0; i < blocks_.size(); ++i) {
    std::string p = "blocks." + std::to_string(i) + ".bn.";
    auto& st = blocks_[i].bn_state;
    if (name == p + "running_mean" || name == p + "running_var") {
      auto& dst = name == p + "running_mean" ? st.running_mean : st.running_var;
      if (data.size() != dst.size())
        throw ShapeError("adapter: buffer " + name + " size " + std::to_string(data.size()) +
                         " != " + std::to_string(dst.size()));
      dst = data;
      return;
    }
    if (name == p + "initialized") {
      if (data.size() != 1) throw ShapeError("adapter: buffer " + name + " must hold 1 value");
      st.initialized = data[0] != T(0);
      return;
    }
  }
  throw ValueError("adapter: unknown buffer '" + name + "'");
}

template <typename T>
int64_t ConditionAdapter<T>::param_count() {
  int64_t n = 0;
  for (auto& [name, p] : named_params()) n += p.numel();
  return n;
}

template <typename T>
uint64_t ConditionAdapter<T>::arch_hash() {
  uint64_t h = 1469598103934665603ull;
  h = fnv1a(h, "adapter/" + cfg_.size_class);
  for (auto& [name, p] : named_params()) {
    h = fnv1a(h, name);
    for (int d = 0; d < p.ndim(); ++d) h = fnv1a(h, std::to_string(p.dim(d)));
  }
  return h;
}

template <typename T>
std::string ConditionAdapter<T>::describe() {
  std::ostringstream os;
  os << "ConditionAdapter size_class=" << cfg_.size_class << " in_ch=" << cfg_.in_channels
     << " cond_ch=" << cfg_.cond_channels << " res=" << cfg_.height << "x" << cfg_.width
     << " widths=";
  std::vector<int> ws = cfg_.widths();
  for (size_t i = 0; i < ws.size(); ++i) os << (i ? "-" : "") << ws[i];
  os << " params=" << param_count();
  return os.str();
}

template <typename T>
Tensor<T> ca_forward(ConditionAdapter<T>& adapter, const FeatureStack<T>& F,
                     const std::vector<int>& t, NormMode mode) {
  return adapter.forward(F.features, t, mode);
}

template <typename T>
Tensor<T> ca_loss(ConditionAdapter<T>& adapter, const FeatureStack<T>& F,
                  const std::vector<int>& t, const Tensor<T>& c_ext, NormMode mode) {
  Tensor<T> pred = ca_forward(adapter, F, t, mode);
  if (pred.shape() != c_ext.shape())
    throw ShapeError("ca_loss: prediction/target shape mismatch");
  return mse(pred, c_ext);
}

#define LCDG_INST_ADAPTER(T)                                                        \
  template FeatureStack<T> align_features(const std::vector<Tensor<T>>&, int, int,  \
                                          const TapSpec&, UpsampleMode);            \
  template class ConditionAdapter<T>;                                               \
  template Tensor<T> ca_forward(ConditionAdapter<T>&, const FeatureStack<T>&,       \
                                const std::vector<int>&, NormMode);                 \
  template Tensor<T> ca_loss(ConditionAdapter<T>&, const FeatureStack<T>&,          \
                             const std::vector<int>&, const Tensor<T>&, NormMode);
LCDG_INST_ADAPTER(float)
LCDG_INST_ADAPTER(double)
#undef LCDG_INST_ADAPTER

}  // namespace lcdg
