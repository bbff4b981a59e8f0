#pragma once

#include <string>
#include <utility>
#include <vector>

#include "lcdg/ops.hpp"
#include "lcdg/tensor.hpp"
#include "lcdg/unet.hpp"

namespace lcdg {

// Tapped feature maps upsampled to a common resolution and concatenated
// along channels, remembering which taps produced them.
template <typename T>
struct FeatureStack {
  Tensor<T> features;  // (N, sum of tap channels, H0, W0)
  TapSpec provenance;
};

// Bilinearly upsample every tap to (target_h, target_w) and concatenate.
// Target dims must be an integer multiple of each tap's dims.
template <typename T>
FeatureStack<T> align_features(const std::vector<Tensor<T>>& taps, int target_h, int target_w,
                               const TapSpec& provenance = {},
                               UpsampleMode mode = UpsampleMode::bilinear);

struct AdapterConfig {
  int in_channels = 576;   // sum of tap channels
  int cond_channels = 1;   // condition map channels
  int height = 32;         // condition resolution H0
  int width = 32;          // W0
  std::string size_class = "default";  // "default" or "tiny"
  int pe_dim = 64;
  int emb_dim = 128;

  // Feature-branch widths per block; chosen by size_class.
  std::vector<int> widths() const;
};

// Conv(3x3)-ReLU-BatchNorm with a per-block time projection added after the
// convolution.
template <typename T>
struct CABlock {
  Conv2dLayer<T> conv;
  LinearLayer<T> time_proj;
  Tensor<T> bn_gamma, bn_beta;
  BatchNormState<T> bn_state;

  Tensor<T> forward(const Tensor<T>& x, const Tensor<T>& silu_emb, NormMode mode) {
    Tensor<T> h = add_rowwise(conv(x), time_proj(silu_emb));
    return batchnorm2d(relu(h), bn_gamma, bn_beta, bn_state, mode);
  }
};

// Reconstructs the external condition map from aligned denoiser features and
// the timestep. Blocks narrow the stack down to a 1x1-conv head.
template <typename T>
class ConditionAdapter {
 public:
  explicit ConditionAdapter(const AdapterConfig& cfg, uint64_t init_seed = 0);

  const AdapterConfig& config() const { return cfg_; }

  // Predicted condition map (N, cond_channels, H0, W0).
  Tensor<T> forward(const Tensor<T>& features, const std::vector<int>& t,
                    NormMode mode = NormMode::eval);

  std::vector<std::pair<std::string, Tensor<T>>> named_params();
  // Non-trainable state (batch-norm running statistics + init flags), as
  // named buffers for the checkpoint container.
  std::vector<std::pair<std::string, std::vector<T>>> named_buffers() const;
  void load_buffer(const std::string& name, const std::vector<T>& data);

  int64_t param_count();
  uint64_t arch_hash();
  std::string describe();

 private:
  AdapterConfig cfg_;
  std::vector<CABlock<T>> blocks_;
  Conv2dLayer<T> head_;
  LinearLayer<T> time1_;
};

// Condition map reconstructed from a feature stack at timestep t.
template <typename T>
Tensor<T> ca_forward(ConditionAdapter<T>& adapter, const FeatureStack<T>& F,
                     const std::vector<int>& t, NormMode mode = NormMode::eval);

// Mean squared reconstruction error against the external condition map.
template <typename T>
Tensor<T> ca_loss(ConditionAdapter<T>& adapter, const FeatureStack<T>& F,
                  const std::vector<int>& t, const Tensor<T>& c_ext,
                  NormMode mode = NormMode::eval);

#define LCDG_EXTERN_ADAPTER(T)                                                             \
  extern template FeatureStack<T> align_features(const std::vector<Tensor<T>>&, int, int,  \
                                                 const TapSpec&, UpsampleMode);            \
  extern template class ConditionAdapter<T>;                                               \
  extern template Tensor<T> ca_forward(ConditionAdapter<T>&, const FeatureStack<T>&,       \
                                       const std::vector<int>&, NormMode);                 \
  extern template Tensor<T> ca_loss(ConditionAdapter<T>&, const FeatureStack<T>&,          \
                                    const std::vector<int>&, const Tensor<T>&, NormMode);
LCDG_EXTERN_ADAPTER(float)
LCDG_EXTERN_ADAPTER(double)
#undef LCDG_EXTERN_ADAPTER

}  // namespace lcdg
