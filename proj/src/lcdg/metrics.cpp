#include "lcdg/metrics.hpp"

#include <Eigen/Dense>
#include <cmath>

#include "lcdg/rng.hpp"

namespace lcdg {

namespace {

template <typename T>
Conv2dLayer<T> make_conv(int in_ch, int out_ch, int stride, RngStream& rng) {
  Conv2dLayer<T> c;
  c.w = Tensor<T>::randn({out_ch, in_ch, 3, 3}, rng, std::sqrt(2.0 / (double(in_ch) * 9)));
  c.b = Tensor<T>::zeros({out_ch});
  c.stride = stride;
  c.pad = 1;
  return c;
}

uint64_t fnv1a(uint64_t h, const std::string& s) {
  for (char c : s) {
    h ^= uint64_t(uint8_t(c));
    h *= 1099511628211ull;
  }
  return h;
}

Eigen::MatrixXd to_eigen(const std::vector<std::vector<double>>& m) {
  Eigen::MatrixXd out(m.size(), m.empty() ? 0 : m[0].size());
  for (size_t i = 0; i < m.size(); ++i)
    for (size_t j = 0; j < m[i].size(); ++j) out(long(i), long(j)) = m[i][j];
  return out;
}

// Symmetric PSD square root; negative eigenvalues clamp to 0.
Eigen::MatrixXd sqrtm_sym(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
  Eigen::VectorXd d = es.eigenvalues();
  for (long i = 0; i < d.size(); ++i) d(i) = d(i) > 0 ? std::sqrt(d(i)) : 0.0;
  return es.eigenvectors() * d.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

template <typename T>
Classifier<T>::Classifier(const ClassifierConfig& cfg, uint64_t init_seed) : cfg_(cfg) {
  if (cfg.image_size % 8 != 0) throw ValueError("classifier: image_size must be divisible by 8");
  if (cfg.feat_dim < 1 || cfg.num_classes < 2) throw ValueError("classifier: bad dimensions");
  RngStream rng(mix_seed(init_seed, 0xc1a5));
  c1_ = make_conv<T>(cfg.in_channels, 16, 2, rng);
  c2_ = make_conv<T>(16, 32, 2, rng);
  c3_ = make_conv<T>(32, cfg.feat_dim, 2, rng);
  head_.w = Tensor<T>::randn({cfg.feat_dim, cfg.num_classes}, rng,
                             std::sqrt(1.0 / double(cfg.feat_dim)));
  head_.b = Tensor<T>::zeros({cfg.num_classes});
}

template <typename T>
Tensor<T> Classifier<T>::features(const Tensor<T>& x) {
  if (x.ndim() != 4 || x.dim(1) != cfg_.in_channels || x.dim(2) != cfg_.image_size ||
      x.dim(3) != cfg_.image_size)
    throw ShapeError("classifier: input must be (N," + std::to_string(cfg_.in_channels) + "," +
                     std::to_string(cfg_.image_size) + "," + std::to_string(cfg_.image_size) +
                     ")");
  Tensor<T> h = silu(c1_(x));
  h = silu(c2_(h));
  h = silu(c3_(h));
  return global_avg_pool2d(h);
}

template <typename T>
Tensor<T> Classifier<T>::logits(const Tensor<T>& x) {
  return head_(features(x));
}

template <typename T>
std::vector<int> Classifier<T>::predict(const Tensor<T>& x) {
  NoGradGuard ng;
  Tensor<T> lg = logits(x);
  int N = lg.dim(0), C = lg.dim(1);
  std::vector<int> out(static_cast<size_t>(N));
  for (int n = 0; n < N; ++n) {
    int best = 0;
    for (int c = 1; c < C; ++c)
      if (lg.values()[size_t(n) * C + c] > lg.values()[size_t(n) * C + best]) best = c;
    out[size_t(n)] = best;
  }
  return out;
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>>> Classifier<T>::named_params() {
  return {{"c1.w", c1_.w}, {"c1.b", c1_.b}, {"c2.w", c2_.w},     {"c2.b", c2_.b},
          {"c3.w", c3_.w}, {"c3.b", c3_.b}, {"head.w", head_.w}, {"head.b", head_.b}};
}

template <typename T>
int64_t Classifier<T>::param_count() {
  int64_t n = 0;
  for (auto& [name, p] : named_params()) n += p.numel();
  return n;
}

template <typename T>
uint64_t Classifier<T>::arch_hash() {
  uint64_t h = 1469598103934665603ull;
  h = fnv1a(h, "classifier");
  for (auto& [name, p] : named_params()) {
    h = fnv1a(h, name);
    for (int d = 0; d < p.ndim(); ++d) h = fnv1a(h, std::to_string(p.dim(d)));
  }
  return h;
}

FeatureStats fit_feature_stats(const std::vector<std::vector<double>>& features) {
  if (features.empty()) throw ValueError("feature stats: empty set");
  size_t d = features[0].size();
  FeatureStats st;
  st.n = int(features.size());
  st.mean.assign(d, 0.0);
  for (const auto& f : features) {
    if (f.size() != d) throw ShapeError("feature stats: ragged feature rows");
    for (size_t j = 0; j < d; ++j) st.mean[j] += f[j];
  }
  for (double& m : st.mean) m /= double(st.n);
  st.cov.assign(d, std::vector<double>(d, 0.0));
  if (st.n > 1) {
    for (const auto& f : features)
      for (size_t i = 0; i < d; ++i)
        for (size_t j = 0; j < d; ++j)
          st.cov[i][j] += (f[i] - st.mean[i]) * (f[j] - st.mean[j]);
    for (size_t i = 0; i < d; ++i)
      for (size_t j = 0; j < d; ++j) st.cov[i][j] /= double(st.n - 1);
  }
  return st;
}

double frechet_distance(const FeatureStats& a, const FeatureStats& b) {
  if (a.mean.size() != b.mean.size())
    throw ShapeError("frechet: feature dimensions differ");
  long d = long(a.mean.size());
  double mean_term = 0;
  for (long i = 0; i < d; ++i) {
    double diff = a.mean[size_t(i)] - b.mean[size_t(i)];
    mean_term += diff * diff;
  }
  Eigen::MatrixXd sa = to_eigen(a.cov) + 1e-6 * Eigen::MatrixXd::Identity(d, d);
  Eigen::MatrixXd sb = to_eigen(b.cov) + 1e-6 * Eigen::MatrixXd::Identity(d, d);
  // tr((Sa Sb)^1/2) computed on the symmetric similar form Sa^1/2 Sb Sa^1/2.
  Eigen::MatrixXd ra = sqrtm_sym(sa);
  Eigen::MatrixXd inner = ra * sb * ra;
  double tr_sqrt = sqrtm_sym(inner).trace();
  double val = mean_term + sa.trace() + sb.trace() - 2.0 * tr_sqrt;
  return val > 0 ? val : 0.0;
}

template <typename T>
double frechet_feature_distance(const std::vector<Image>& set_a, const std::vector<Image>& set_b,
                                Classifier<T>& clf, int min_count) {
  if (int(set_a.size()) < min_count || int(set_b.size()) < min_count)
    throw ValueError("frechet: both sets need at least " + std::to_string(min_count) +
                     " samples");
  NoGradGuard ng;
  auto featurize = [&](const std::vector<Image>& set) {
    std::vector<std::vector<double>> rows;
    rows.reserve(set.size());
    const size_t batch = 64;
    for (size_t i = 0; i < set.size(); i += batch) {
      std::vector<Image> chunk(set.begin() + std::ptrdiff_t(i),
                               set.begin() + std::ptrdiff_t(std::min(set.size(), i + batch)));
      Tensor<T> f = clf.features(images_to_tensor<T>(chunk));
      int D = f.dim(1);
      for (int n = 0; n < f.dim(0); ++n) {
        std::vector<double> row(static_cast<size_t>(D));
        for (int j = 0; j < D; ++j) row[size_t(j)] = double(f.values()[size_t(n) * D + j]);
        rows.push_back(std::move(row));
      }
    }
    return rows;
  };
  return frechet_distance(fit_feature_stats(featurize(set_a)), fit_feature_stats(featurize(set_b)));
}

Image extract_condition(const Image& sample_signed, CondKind kind) {
  Image unit = to_unit_range(sample_signed);
  switch (kind) {
    case CondKind::edge:
      return edge_map_inference(unit).map;
    case CondKind::stroke: {
      RngStream rng(0);  // fixed seed: extraction must be deterministic
      return stroke_quantize(unit, 8, rng);
    }
    case CondKind::palette:
      return palette_sim(unit).map;
    case CondKind::mask: {
      Image out(1, unit.height, unit.width);
      for (int y = 0; y < unit.height; ++y)
        for (int x = 0; x < unit.width; ++x) {
          float m = unit.at(0, y, x);
          for (int c = 1; c < unit.channels; ++c) m = std::max(m, unit.at(c, y, x));
          out.at(0, y, x) = m > 0.5f ? 1.f : 0.f;
        }
      return out;
    }
  }
  throw ValueError("extract_condition: unknown kind");
}

double condition_distance(const Image& sample_signed, const ConditionMap& target) {
  Image got = extract_condition(sample_signed, target.kind);
  if (!(got.channels == target.map.channels && got.height == target.map.height &&
        got.width == target.map.width))
    throw ShapeError("condition_distance: extracted/target shapes differ (kind mismatch?)");
  double acc = 0;
  for (size_t i = 0; i < got.data.size(); ++i) {
    double d = double(got.data[i]) - double(target.map.data[i]);
    acc += d * d;
  }
  return acc / double(got.data.size());
}

double fidelity_metric(const std::vector<Image>& samples_signed, const ConditionMap& target) {
  if (samples_signed.empty()) throw ValueError("fidelity: no samples");
  double acc = 0;
  for (const Image& s : samples_signed) acc += condition_distance(s, target);
  return acc / double(samples_signed.size());
}

template <typename T>
double class_accuracy(Classifier<T>& clf, const std::vector<Image>& samples,
                      const std::vector<int>& labels) {
  if (samples.size() != labels.size()) throw ShapeError("accuracy: samples/labels mismatch");
  if (samples.empty()) throw ValueError("accuracy: no samples");
  std::vector<int> pred = clf.predict(images_to_tensor<T>(samples));
  int hits = 0;
  for (size_t i = 0; i < pred.size(); ++i)
    if (pred[i] == labels[i]) ++hits;
  return double(hits) / double(pred.size());
}

template <typename T>
Tensor<T> images_to_tensor(const std::vector<Image>& images) {
  if (images.empty()) throw ValueError("images_to_tensor: empty batch");
  int C = images[0].channels, H = images[0].height, W = images[0].width;
  Tensor<T> out = Tensor<T>::zeros({int(images.size()), C, H, W});
  size_t per = size_t(C) * H * W;
  for (size_t n = 0; n < images.size(); ++n) {
    const Image& im = images[n];
    if (im.channels != C || im.height != H || im.width != W)
      throw ShapeError("images_to_tensor: inconsistent image dims in batch");
    for (size_t i = 0; i < per; ++i) out.values()[n * per + i] = T(im.data[i]);
  }
  return out;
}

template <typename T>
Image tensor_to_image(const Tensor<T>& batch, int index) {
  if (batch.ndim() != 4) throw ShapeError("tensor_to_image: batch must be 4D");
  if (index < 0 || index >= batch.dim(0)) throw ValueError("tensor_to_image: index out of range");
  Image im(batch.dim(1), batch.dim(2), batch.dim(3));
  size_t per = im.numel();
  for (size_t i = 0; i < per; ++i) im.data[i] = float(batch.values()[size_t(index) * per + i]);
  return im;
}

#define LCDG_INST_METRICS(T)                                                          \
  template class Classifier<T>;                                                       \
  template double frechet_feature_distance(const std::vector<Image>&,                 \
                                           const std::vector<Image>&, Classifier<T>&, \
                                           int);                                      \
  template double class_accuracy(Classifier<T>&, const std::vector<Image>&,           \
                                 const std::vector<int>&);                            \
  template Tensor<T> images_to_tensor(const std::vector<Image>&);                     \
  template Image tensor_to_image(const Tensor<T>&, int);
LCDG_INST_METRICS(float)
LCDG_INST_METRICS(double)
#undef LCDG_INST_METRICS

}  // namespace lcdg
