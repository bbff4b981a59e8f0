#include "lcdg/unet.hpp"

#include <cmath>
#include <sstream>

namespace lcdg {

template <typename T>
Tensor<T> sinusoidal_embed(const std::vector<int>& t, int dim) {
  if (dim < 2 || dim % 2 != 0)
    throw ValueError("sinusoidal_embed: dim must be even and >= 2, got " + std::to_string(dim));
  int half = dim / 2;
  int N = int(t.size());
  std::vector<T> out(size_t(N) * dim);
  for (int n = 0; n < N; ++n) {
    for (int i = 0; i < half; ++i) {
      double freq = half > 1 ? std::exp(-std::log(10000.0) * double(i) / double(half - 1)) : 1.0;
      double phase = double(t[size_t(n)]) * freq;
      out[size_t(n) * dim + i] = T(std::sin(phase));
      out[size_t(n) * dim + half + i] = T(std::cos(phase));
    }
  }
  return Tensor<T>({N, dim}, std::move(out));
}

namespace {

template <typename T>
Tensor<T> he_conv(int out_ch, int in_ch, int k, RngStream& rng) {
  double std = std::sqrt(2.0 / (double(in_ch) * k * k));
  return Tensor<T>::randn({out_ch, in_ch, k, k}, rng, std);
}

template <typename T>
Conv2dLayer<T> make_conv(int in_ch, int out_ch, int k, int stride, int pad, RngStream& rng) {
  Conv2dLayer<T> c;
  c.w = he_conv<T>(out_ch, in_ch, k, rng);
  c.b = Tensor<T>::zeros({out_ch});
  c.stride = stride;
  c.pad = pad;
  return c;
}

template <typename T>
LinearLayer<T> make_linear(int in_dim, int out_dim, RngStream& rng) {
  LinearLayer<T> l;
  l.w = Tensor<T>::randn({in_dim, out_dim}, rng, std::sqrt(1.0 / in_dim));
  l.b = Tensor<T>::zeros({out_dim});
  return l;
}

template <typename T>
ConvBlock<T> make_block(int in_ch, int out_ch, int emb_dim, RngStream& rng) {
  ConvBlock<T> b;
  b.conv1 = make_conv<T>(in_ch, out_ch, 3, 1, 1, rng);
  b.conv2 = make_conv<T>(out_ch, out_ch, 3, 1, 1, rng);
  b.emb_proj = make_linear<T>(emb_dim, out_ch, rng);
  return b;
}

}  // namespace

template <typename T>
DenoiserModel<T>::DenoiserModel(const DenoiserConfig& cfg, uint64_t init_seed) : cfg_(cfg) {
  if (cfg.image_size % 4 != 0 || cfg.image_size < 8)
    throw ValueError("DenoiserModel: image_size must be a multiple of 4 and >= 8");
  if (cfg.in_channels != 1 && cfg.in_channels != 3)
    throw ValueError("DenoiserModel: in_channels must be 1 or 3");
  RngStream rng(mix_seed(init_seed, 0x0e15));
  int c1 = cfg.base_channels, c2 = 2 * c1, c3 = 4 * c1;
  int e = cfg.emb_dim;

  stem_ = make_conv<T>(cfg.in_channels, c1, 3, 1, 1, rng);
  enc1_ = {make_block<T>(c1, c1, e, rng), make_block<T>(c1, c1, e, rng)};
  down1_ = make_conv<T>(c1, c2, 3, 2, 1, rng);
  enc2_ = {make_block<T>(c2, c2, e, rng), make_block<T>(c2, c2, e, rng)};
  down2_ = make_conv<T>(c2, c3, 3, 2, 1, rng);
  enc3_ = {make_block<T>(c3, c3, e, rng), make_block<T>(c3, c3, e, rng)};
  mid_ = {make_block<T>(c3, c3, e, rng), make_block<T>(c3, c3, e, rng)};
  dec1_ = {make_block<T>(2 * c3, c3, e, rng), make_block<T>(c3, c3, e, rng)};
  up1_ = make_conv<T>(c3, c2, 3, 1, 1, rng);
  dec2_ = {make_block<T>(2 * c2, c2, e, rng), make_block<T>(c2, c2, e, rng)};
  up2_ = make_conv<T>(c2, c1, 3, 1, 1, rng);
  dec3_ = {make_block<T>(2 * c1, c1, e, rng), make_block<T>(c1, c1, e, rng)};
  // Zero-init head: the model starts as the identity denoiser (predicts 0).
  head_ = make_conv<T>(c1, cfg.in_channels, 3, 1, 1, rng);
  head_.w = Tensor<T>::zeros(head_.w.shape());

  time1_ = make_linear<T>(cfg.pe_dim, e, rng);
  time2_ = make_linear<T>(e, e, rng);
  class_emb_ = Tensor<T>::randn({cfg.num_classes + 1, e}, rng, 0.02);

  int s = cfg.image_size;
  taps_ = {
      {"enc1", c1, s, s},          {"enc2", c2, s / 2, s / 2}, {"enc3", c3, s / 4, s / 4},
      {"mid", c3, s / 4, s / 4},   {"dec1", c3, s / 4, s / 4}, {"dec2", c2, s / 2, s / 2},
      {"dec3", c1, s, s},
  };
}

template <typename T>
Tensor<T> DenoiserModel<T>::embed(const std::vector<int>& t, const std::vector<int>& cls) {
  if (t.size() != cls.size())
    throw ShapeError("DenoiserModel: timestep and class counts differ");
  for (int c : cls)
    if (c < 0 || c > cfg_.num_classes)
      throw ValueError("DenoiserModel: class id " + std::to_string(c) + " outside [0," +
                       std::to_string(cfg_.num_classes) + "]");
  Tensor<T> pe = sinusoidal_embed<T>(t, cfg_.pe_dim);
  Tensor<T> te = time2_(silu(time1_(pe)));
  Tensor<T> ce = embedding_lookup(class_emb_, cls);
  return add(te, ce);
}

template <typename T>
std::pair<Tensor<T>, std::vector<Tensor<T>>> DenoiserModel<T>::forward_with_taps(
    const Tensor<T>& z, const std::vector<int>& t, const std::vector<int>& cls) {
  if (z.ndim() != 4 || z.dim(1) != cfg_.in_channels || z.dim(2) != cfg_.image_size ||
      z.dim(3) != cfg_.image_size)
    throw ShapeError("DenoiserModel: input " + shape_str(z.shape()) + " does not match (N," +
                     std::to_string(cfg_.in_channels) + "," + std::to_string(cfg_.image_size) +
                     "," + std::to_string(cfg_.image_size) + ")");
  if (int(t.size()) != z.dim(0))
    throw ShapeError("DenoiserModel: " + std::to_string(t.size()) + " timesteps for batch of " +
                     std::to_string(z.dim(0)));

  Tensor<T> se = silu(embed(t, cls));
  auto run = [&](const std::vector<ConvBlock<T>>& blocks, Tensor<T> h) {
    for (const auto& b : blocks) h = b.forward(h, se);
    return h;
  };

  Tensor<T> h = stem_(z);
  Tensor<T> e1 = run(enc1_, h);
  Tensor<T> e2 = run(enc2_, down1_(e1));
  Tensor<T> e3 = run(enc3_, down2_(e2));
  Tensor<T> m = run(mid_, e3);
  Tensor<T> d1 = run(dec1_, concat<T>({m, e3}, 1));
  Tensor<T> d2 = run(dec2_, concat<T>({up1_(upsample(d1, 2, UpsampleMode::nearest)), e2}, 1));
  Tensor<T> d3 = run(dec3_, concat<T>({up2_(upsample(d2, 2, UpsampleMode::nearest)), e1}, 1));
  Tensor<T> out = head_(silu(d3));
  return {out, {e1, e2, e3, m, d1, d2, d3}};
}

template <typename T>
Tensor<T> DenoiserModel<T>::eps(const Tensor<T>& z, const std::vector<int>& t,
                                const std::vector<int>& cls) {
  return forward_with_taps(z, t, cls).first;
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>>> DenoiserModel<T>::named_params() {
  std::vector<std::pair<std::string, Tensor<T>>> out;
  auto add_conv = [&](const std::string& name, Conv2dLayer<T>& c) {
    out.emplace_back(name + ".w", c.w);
    out.emplace_back(name + ".b", c.b);
  };
  auto add_blocks = [&](const std::string& name, std::vector<ConvBlock<T>>& blocks) {
    for (size_t i = 0; i < blocks.size(); ++i) {
      std::string p = name + "." + std::to_string(i);
      add_conv(p + ".conv1", blocks[i].conv1);
      add_conv(p + ".conv2", blocks[i].conv2);
      out.emplace_back(p + ".emb_proj.w", blocks[i].emb_proj.w);
      out.emplace_back(p + ".emb_proj.b", blocks[i].emb_proj.b);
    }
  };
  add_conv("stem", stem_);
  add_blocks("enc1", enc1_);
  add_conv("down1", down1_);
  add_blocks("enc2", enc2_);
  add_conv("down2", down2_);
  add_blocks("enc3", enc3_);
  add_blocks("mid", mid_);
  add_blocks("dec1", dec1_);
  add_conv("up1", up1_);
  add_blocks("dec2", dec2_);
  add_conv("up2", up2_);
  add_blocks("dec3", dec3_);
  add_conv("head", head_);
  out.emplace_back("time1.w", time1_.w);
  out.emplace_back("time1.b", time1_.b);
  out.emplace_back("time2.w", time2_.w);
  out.emplace_back("time2.b", time2_.b);
  out.emplace_back("class_emb", class_emb_);
  return out;
}

template <typename T>
int64_t DenoiserModel<T>::param_count() {
  int64_t n = 0;
  for (auto& [name, p] : named_params()) n += p.numel();
  return n;
}

template <typename T>
uint64_t DenoiserModel<T>::arch_hash() {
  uint64_t h = 1469598103934665603ull;
  auto mix = [&](uint64_t v) {
    h ^= v;
    h *= 1099511628211ull;
  };
  for (auto& [name, p] : named_params()) {
    for (char c : name) mix(uint64_t(uint8_t(c)));
    for (int d : p.shape()) mix(uint64_t(d));
  }
  return h;
}

template <typename T>
std::string DenoiserModel<T>::describe() {
  std::ostringstream os;
  os << "denoiser in_channels=" << cfg_.in_channels << " image_size=" << cfg_.image_size
     << " base_channels=" << cfg_.base_channels << " num_classes=" << cfg_.num_classes
     << " params=" << param_count() << " arch_hash=" << std::hex << arch_hash() << std::dec
     << "\n";
  os << "taps:";
  for (const auto& tp : taps_)
    os << " " << tp.name << "(" << tp.channels << "x" << tp.height << "x" << tp.width << ")";
  os << "\n";
  for (auto& [name, p] : named_params()) os << "  " << name << " " << shape_str(p.shape()) << "\n";
  return os.str();
}

template Tensor<float> sinusoidal_embed(const std::vector<int>&, int);
template Tensor<double> sinusoidal_embed(const std::vector<int>&, int);
template class DenoiserModel<float>;
template class DenoiserModel<double>;

}  // namespace lcdg
