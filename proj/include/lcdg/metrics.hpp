#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "lcdg/conditions.hpp"
#include "lcdg/image.hpp"
#include "lcdg/ops.hpp"
#include "lcdg/tensor.hpp"
#include "lcdg/unet.hpp"

namespace lcdg {

struct ClassifierConfig {
  int in_channels = 1;
  int image_size = 32;
  int num_classes = 4;  // shape classes
  int feat_dim = 64;    // penultimate feature width
};

// Small strided CNN over [-1,1] images; its pooled penultimate features feed
// the Fréchet proxy and its logits score class accuracy.
template <typename T>
class Classifier {
 public:
  explicit Classifier(const ClassifierConfig& cfg, uint64_t init_seed = 0);

  const ClassifierConfig& config() const { return cfg_; }
  Tensor<T> features(const Tensor<T>& x);  // (N, feat_dim)
  Tensor<T> logits(const Tensor<T>& x);    // (N, num_classes)
  std::vector<int> predict(const Tensor<T>& x);

  std::vector<std::pair<std::string, Tensor<T>>> named_params();
  int64_t param_count();
  uint64_t arch_hash();

 private:
  ClassifierConfig cfg_;
  Conv2dLayer<T> c1_, c2_, c3_;
  LinearLayer<T> head_;
};

// Gaussian fit of a feature set (unbiased covariance).
struct FeatureStats {
  std::vector<double> mean;              // (D)
  std::vector<std::vector<double>> cov;  // (D,D)
  int n = 0;
};

FeatureStats fit_feature_stats(const std::vector<std::vector<double>>& features);

// ||mu_a-mu_b||^2 + tr(Sa+Sb-2(Sa Sb)^(1/2)); matrix square root by
// eigendecomposition with negative eigenvalues clamped at 0; both covariances
// get +1e-6 diagonal jitter; result clamped at 0.
double frechet_distance(const FeatureStats& a, const FeatureStats& b);

// Fréchet distance between classifier-feature Gaussians of two sample sets.
template <typename T>
double frechet_feature_distance(const std::vector<Image>& set_a, const std::vector<Image>& set_b,
                                Classifier<T>& clf, int min_count = 64);

// Re-extract the target condition from a [-1,1] sample with the deterministic
// per-domain extractor (edge: fixed-threshold hysteresis; stroke: k=8 seeded
// quantization; palette: block projection; mask: max-channel > 0.5).
Image extract_condition(const Image& sample_signed, CondKind kind);

// Mean squared distance between the re-extracted condition and the target.
double condition_distance(const Image& sample_signed, const ConditionMap& target);
double fidelity_metric(const std::vector<Image>& samples_signed, const ConditionMap& target);

// Fraction of samples whose predicted shape class matches `labels`.
template <typename T>
double class_accuracy(Classifier<T>& clf, const std::vector<Image>& samples,
                      const std::vector<int>& labels);

// (N,C,H,W) batch tensor from CHW images.
template <typename T>
Tensor<T> images_to_tensor(const std::vector<Image>& images);
template <typename T>
Image tensor_to_image(const Tensor<T>& batch, int index);

#define LCDG_EXTERN_METRICS(T)                                                              \
  extern template class Classifier<T>;                                                      \
  extern template double frechet_feature_distance(const std::vector<Image>&,                \
                                                  const std::vector<Image>&, Classifier<T>&, \
                                                  int);                                     \
  extern template double class_accuracy(Classifier<T>&, const std::vector<Image>&,          \
                                        const std::vector<int>&);                           \
  extern template Tensor<T> images_to_tensor(const std::vector<Image>&);                    \
  extern template Image tensor_to_image(const Tensor<T>&, int);
LCDG_EXTERN_METRICS(float)
LCDG_EXTERN_METRICS(double)
#undef LCDG_EXTERN_METRICS

}  // namespace lcdg
