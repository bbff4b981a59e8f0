#pragma once

#include <string>
#include <utility>
#include <vector>

#include "lcdg/diffusion.hpp"
#include "lcdg/ops.hpp"
#include "lcdg/tensor.hpp"

namespace lcdg {

// Sinusoidal position code over integer timesteps: first half sin, second half
// cos, frequencies geometric from 1 down to 1/10000. dim must be even.
template <typename T>
Tensor<T> sinusoidal_embed(const std::vector<int>& t, int dim);

struct TapInfo {
  std::string name;
  int channels = 0;
  int height = 0;
  int width = 0;
};
using TapSpec = std::vector<TapInfo>;

struct DenoiserConfig {
  int in_channels = 1;
  int image_size = 32;
  int base_channels = 32;
  int num_classes = 4;  // null id = num_classes
  int pe_dim = 64;
  int emb_dim = 128;
};

template <typename T>
struct Conv2dLayer {
  Tensor<T> w, b;
  int stride = 1, pad = 1;
  Tensor<T> operator()(const Tensor<T>& x) const { return conv2d(x, w, b, stride, pad); }
};

template <typename T>
struct LinearLayer {
  Tensor<T> w, b;
  Tensor<T> operator()(const Tensor<T>& x) const { return linear(x, w, b); }
};

// Conv-SiLU-Conv with the shared embedding projected and added after the
// first convolution.
template <typename T>
struct ConvBlock {
  Conv2dLayer<T> conv1, conv2;
  LinearLayer<T> emb_proj;

  Tensor<T> forward(const Tensor<T>& x, const Tensor<T>& silu_emb) const {
    Tensor<T> h = conv1(x);
    h = add_rowwise(h, emb_proj(silu_emb));
    return conv2(silu(h));
  }
};

// Three-resolution encoder/decoder denoiser with skip concatenations, no
// attention, and taps exposed at every stage output plus the middle.
template <typename T>
class DenoiserModel : public EpsModel<T> {
 public:
  explicit DenoiserModel(const DenoiserConfig& cfg, uint64_t init_seed = 0);

  const DenoiserConfig& config() const { return cfg_; }
  const TapSpec& tap_spec() const { return taps_; }

  // eps prediction plus tap activations in tap_spec order. Gradients flow
  // back to z when it requires grad.
  std::pair<Tensor<T>, std::vector<Tensor<T>>> forward_with_taps(const Tensor<T>& z,
                                                                 const std::vector<int>& t,
                                                                 const std::vector<int>& cls);

  Tensor<T> eps(const Tensor<T>& z, const std::vector<int>& t,
                const std::vector<int>& cls) override;
  int null_class() const override { return cfg_.num_classes; }

  std::vector<std::pair<std::string, Tensor<T>>> named_params();
  int64_t param_count();
  // Stable digest over layer names and shapes; values do not enter.
  uint64_t arch_hash();
  std::string describe();

 private:
  Tensor<T> embed(const std::vector<int>& t, const std::vector<int>& cls);

  DenoiserConfig cfg_;
  TapSpec taps_;

  Conv2dLayer<T> stem_;
  std::vector<ConvBlock<T>> enc1_, enc2_, enc3_, mid_, dec1_, dec2_, dec3_;
  Conv2dLayer<T> down1_, down2_, up1_, up2_, head_;
  LinearLayer<T> time1_, time2_;
  Tensor<T> class_emb_;
};

extern template Tensor<float> sinusoidal_embed(const std::vector<int>&, int);
extern template Tensor<double> sinusoidal_embed(const std::vector<int>&, int);
extern template class DenoiserModel<float>;
extern template class DenoiserModel<double>;

}  // namespace lcdg
