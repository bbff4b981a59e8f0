#include "lcdg/training.hpp"

#include <cmath>
#include <cstdio>
#include <string>
#include <utility>

#include "lcdg/error.hpp"

namespace lcdg {
namespace {

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string require_meta(const Checkpoint& ck, const std::string& key) {
  auto v = ck.meta(key);
  if (!v) {
    throw CheckpointError(CheckpointError::Kind::malformed,
                          "checkpoint missing metadata key '" + key + "'");
  }
  return *v;
}

int64_t meta_i64(const Checkpoint& ck, const std::string& key) {
  std::string v = require_meta(ck, key);
  try {
    return std::stoll(v);
  } catch (const std::exception&) {
    throw CheckpointError(CheckpointError::Kind::malformed,
                          "metadata key '" + key + "' is not an integer: '" + v + "'");
  }
}

uint64_t meta_u64(const Checkpoint& ck, const std::string& key) {
  std::string v = require_meta(ck, key);
  try {
    return std::stoull(v);
  } catch (const std::exception&) {
    throw CheckpointError(CheckpointError::Kind::malformed,
                          "metadata key '" + key + "' is not an unsigned integer: '" + v + "'");
  }
}

double meta_f64(const Checkpoint& ck, const std::string& key) {
  std::string v = require_meta(ck, key);
  try {
    return std::stod(v);
  } catch (const std::exception&) {
    throw CheckpointError(CheckpointError::Kind::malformed,
                          "metadata key '" + key + "' is not a number: '" + v + "'");
  }
}

void check_opts(const TrainOpts& opts) {
  if (opts.batch_size < 1) throw ValueError("batch_size must be >= 1");
  if (opts.lr <= 0) throw ValueError("learning rate must be positive");
  if (opts.log_every < 1) throw ValueError("log_every must be >= 1");
  if (opts.p_uncond < 0 || opts.p_uncond > 1) throw ValueError("p_uncond must be in [0,1]");
  if (opts.divergence_factor <= 0) throw ValueError("divergence_factor must be positive");
}

std::vector<int> draw_batch(const std::vector<int>& pool, int n, RngStream& rs) {
  std::vector<int> out(static_cast<size_t>(n));
  for (auto& v : out) v = pool[size_t(rs.uniform_int(0, int64_t(pool.size()) - 1))];
  return out;
}

Tensor<float> batch_images(const ProceduralDataset& data, const std::vector<int>& idx) {
  std::vector<Image> imgs;
  imgs.reserve(idx.size());
  for (int i : idx) imgs.push_back(data.items[size_t(i)].image);
  return images_to_tensor<float>(imgs);
}

// Shared divergence guard: sets the reference on first use.
void guard_loss(double loss, double& ref, double factor, int64_t step, const char* what) {
  if (!std::isfinite(loss)) {
    throw DivergenceError(std::string(what) + " training diverged at step " +
                          std::to_string(step) + ": loss is not finite");
  }
  if (ref < 0) ref = loss;
  if (loss > factor * ref) {
    throw DivergenceError(std::string(what) + " training diverged at step " +
                          std::to_string(step) + ": loss " + format_double(loss) + " exceeds " +
                          format_double(factor) + " x reference " + format_double(ref));
  }
}

void record_step(TrainReport& rep, int64_t global_step, double loss, int i, int steps,
                 int log_every) {
  if (i == 0) rep.initial_loss = loss;
  rep.final_loss = loss;
  if (global_step % log_every == 0 || i == steps - 1) {
    rep.loss_curve.emplace_back(global_step, loss);
  }
}

}  // namespace

// ---- Adam -------------------------------------------------------------------

template <typename T>
Adam<T>::Adam(std::vector<std::pair<std::string, Tensor<T>>> params, double lr, double beta1,
              double beta2, double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  if (params.empty()) throw ValueError("optimizer needs at least one parameter");
  if (lr <= 0 || eps <= 0) throw ValueError("optimizer lr and eps must be positive");
  if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1) {
    throw ValueError("optimizer betas must lie in [0,1)");
  }
  slots_.reserve(params.size());
  for (auto& [name, t] : params) {
    t.set_requires_grad(true);
    Slot s;
    s.name = name;
    s.param = t;
    s.m.assign(static_cast<size_t>(t.numel()), T(0));
    s.v.assign(static_cast<size_t>(t.numel()), T(0));
    slots_.push_back(std::move(s));
  }
}

template <typename T>
void Adam<T>::step() {
  t_ += 1;
  const double bc1 = 1.0 - std::pow(beta1_, double(t_));
  const double bc2 = 1.0 - std::pow(beta2_, double(t_));
  for (Slot& s : slots_) {
    auto& p = s.param.values();
    const std::vector<T>* g = s.param.has_grad() ? &s.param.grad() : nullptr;
    for (size_t i = 0; i < p.size(); ++i) {
      const double gi = g ? double((*g)[i]) : 0.0;
      const double m = beta1_ * double(s.m[i]) + (1.0 - beta1_) * gi;
      const double v = beta2_ * double(s.v[i]) + (1.0 - beta2_) * gi * gi;
      s.m[i] = T(m);
      s.v[i] = T(v);
      p[i] -= T(lr_ * (m / bc1) / (std::sqrt(v / bc2) + eps_));
    }
  }
}

template <typename T>
void Adam<T>::zero_grad() {
  for (Slot& s : slots_) s.param.zero_grad();
}

template <typename T>
void Adam<T>::add_to_checkpoint(Checkpoint& ck) const {
  ck.set_meta("opt.step", std::to_string(t_));
  ck.set_meta("opt.lr", format_double(lr_));
  for (const Slot& s : slots_) {
    ck.add_values("opt.m." + s.name, {static_cast<int>(s.m.size())}, s.m);
    ck.add_values("opt.v." + s.name, {static_cast<int>(s.v.size())}, s.v);
  }
}

template <typename T>
void Adam<T>::load_from_checkpoint(Checkpoint& ck) {
  t_ = meta_i64(ck, "opt.step");
  lr_ = meta_f64(ck, "opt.lr");
  for (Slot& s : slots_) {
    std::vector<T> m = ck.template get_values<T>("opt.m." + s.name);
    std::vector<T> v = ck.template get_values<T>("opt.v." + s.name);
    if (m.size() != s.m.size() || v.size() != s.v.size()) {
      throw CheckpointError(CheckpointError::Kind::malformed,
                            "optimizer moments for '" + s.name + "' have unexpected size");
    }
    s.m = std::move(m);
    s.v = std::move(v);
  }
}

template <typename T>
void freeze_params(std::vector<std::pair<std::string, Tensor<T>>> params) {
  for (auto& [name, t] : params) t.set_requires_grad(false);
}

// ---- condition targets --------------------------------------------------

ConditionMap train_condition(const DatasetItem& item, CondKind kind, RngStream& rng) {
  Image unit = to_unit_range(item.image);
  switch (kind) {
    case CondKind::edge:
      return edge_map(unit, EdgeAug{}, rng);
    case CondKind::stroke:
      return stroke_sim(unit, rng);
    case CondKind::palette:
      return palette_sim(unit);
    case CondKind::mask:
      return mask_sim(item.geom, item.image.height, item.image.width);
  }
  throw ValueError("unknown condition kind");
}

ConditionMap eval_condition(const DatasetItem& item, CondKind kind) {
  Image unit = to_unit_range(item.image);
  switch (kind) {
    case CondKind::edge:
      return edge_map_inference(unit);
    case CondKind::stroke: {
      ConditionMap cm;
      cm.kind = CondKind::stroke;
      RngStream r0(0);
      cm.map = stroke_quantize(unit, 8, r0);
      cm.provenance = "stroke eval k=8";
      return cm;
    }
    case CondKind::palette:
      return palette_sim(unit);
    case CondKind::mask:
      return mask_sim(item.geom, item.image.height, item.image.width);
  }
  throw ValueError("unknown condition kind");
}

// ---- denoiser trainer -----------------------------------------------------

DenoiserTrainer::DenoiserTrainer(DenoiserModel<float>& model, const ProceduralDataset& data,
                                 const NoiseSchedule& sched, const TrainOpts& opts)
    : model_(model),
      data_(data),
      sched_(sched),
      opts_(opts),
      opt_(model.named_params(), opts.lr),
      train_idx_(data.train_indices()) {
  check_opts(opts);
  if (train_idx_.empty()) throw ValueError("dataset has no training items");
}

double DenoiserTrainer::one_step() {
  RngStream rs(mix_seed(mix_seed(opts_.seed, 0xD0ull), uint64_t(step_)));
  const std::vector<int> idx = draw_batch(train_idx_, opts_.batch_size, rs);
  Tensor<float> z0 = batch_images(data_, idx);

  std::vector<int> t(idx.size()), cls(idx.size());
  for (size_t i = 0; i < idx.size(); ++i) t[i] = int(rs.uniform_int(0, sched_.T - 1));
  for (size_t i = 0; i < idx.size(); ++i) {
    const int label = data_.items[size_t(idx[i])].label;
    cls[i] = rs.uniform() < opts_.p_uncond ? model_.null_class() : label;
  }
  Tensor<float> eps(z0.shape(), std::vector<float>(static_cast<size_t>(z0.numel())));
  rs.fill_normal(eps.values());

  Tensor<float> loss = denoiser_loss_given<float>(model_, z0, cls, t, eps, sched_);
  const double lval = double(loss.values()[0]);
  guard_loss(lval, ref_loss_, opts_.divergence_factor, step_, "denoiser");
  opt_.zero_grad();
  loss.backward();
  opt_.step();
  return lval;
}

TrainReport DenoiserTrainer::run(int steps) {
  if (steps < 0) throw ValueError("steps must be >= 0");
  TrainReport rep;
  for (int i = 0; i < steps; ++i) {
    const double lval = one_step();
    record_step(rep, step_, lval, i, steps, opts_.log_every);
    ++step_;
  }
  rep.steps_done = steps;
  return rep;
}

void DenoiserTrainer::save_state(Checkpoint& ck) const {
  opt_.add_to_checkpoint(ck);
  ck.set_meta("trainer.step", std::to_string(step_));
  ck.set_meta("trainer.seed", std::to_string(opts_.seed));
  ck.set_meta("trainer.ref_loss", format_double(ref_loss_));
}

void DenoiserTrainer::load_state(Checkpoint& ck) {
  opt_.load_from_checkpoint(ck);
  step_ = meta_i64(ck, "trainer.step");
  opts_.seed = meta_u64(ck, "trainer.seed");
  ref_loss_ = meta_f64(ck, "trainer.ref_loss");
}

// ---- adapter trainer --------------------------------------------------------

AdapterTrainer::AdapterTrainer(ConditionAdapter<float>& adapter, DenoiserModel<float>& denoiser,
                               const ProceduralDataset& data, CondKind kind,
                               const NoiseSchedule& sched, const TimestepSampler& tsampler,
                               const TrainOpts& opts)
    : adapter_(adapter),
      denoiser_(denoiser),
      data_(data),
      kind_(kind),
      sched_(sched),
      tsampler_(tsampler),
      opts_(opts),
      opt_(adapter.named_params(), opts.lr),
      train_idx_(data.train_indices()) {
  check_opts(opts);
  if (train_idx_.empty()) throw ValueError("dataset has no training items");
  if (tsampler_.T != sched_.T) throw ValueError("timestep sampler horizon differs from schedule");
  for (auto& [name, p] : denoiser_.named_params()) {
    if (p.requires_grad()) {
      throw Error("backbone must be frozen before adapter training (parameter '" + name +
                  "' still tracks gradients); call freeze_params or reload it");
    }
  }
  frozen_digest_ = params_digest(denoiser_.named_params());
}

double AdapterTrainer::one_step() {
  RngStream rs(mix_seed(mix_seed(opts_.seed, 0xA0ull), uint64_t(step_)));
  const std::vector<int> idx = draw_batch(train_idx_, opts_.batch_size, rs);
  Tensor<float> z0 = batch_images(data_, idx);

  std::vector<int> t(idx.size()), cls(idx.size());
  for (size_t i = 0; i < idx.size(); ++i) t[i] = tsampler_.draw(rs);
  for (size_t i = 0; i < idx.size(); ++i) cls[i] = data_.items[size_t(idx[i])].label;

  std::vector<Image> maps;
  maps.reserve(idx.size());
  for (int i : idx) maps.push_back(train_condition(data_.items[size_t(i)], kind_, rs).map);
  Tensor<float> target = images_to_tensor<float>(maps);

  Tensor<float> eps(z0.shape(), std::vector<float>(static_cast<size_t>(z0.numel())));
  rs.fill_normal(eps.values());

  FeatureStack<float> stack;
  {
    NoGradGuard ng;
    Tensor<float> zt = q_sample<float>(z0, t, eps, sched_);
    auto [eps_pred, taps] = denoiser_.forward_with_taps(zt, t, cls);
    stack = align_features(taps, adapter_.config().height, adapter_.config().width,
                           denoiser_.tap_spec());
  }

  Tensor<float> loss = ca_loss(adapter_, stack, t, target, NormMode::train);
  const double lval = double(loss.values()[0]);
  guard_loss(lval, ref_loss_, opts_.divergence_factor, step_, "adapter");
  opt_.zero_grad();
  loss.backward();
  opt_.step();
  return lval;
}

TrainReport AdapterTrainer::run(int steps) {
  if (steps < 0) throw ValueError("steps must be >= 0");
  TrainReport rep;
  for (int i = 0; i < steps; ++i) {
    const double lval = one_step();
    record_step(rep, step_, lval, i, steps, opts_.log_every);
    ++step_;
  }
  rep.steps_done = steps;
  const std::string now = params_digest(denoiser_.named_params());
  if (now != frozen_digest_) {
    throw Error("frozen backbone changed during adapter training: parameter digest " +
                frozen_digest_.substr(0, 12) + " became " + now.substr(0, 12));
  }
  return rep;
}

void AdapterTrainer::save_state(Checkpoint& ck) const {
  opt_.add_to_checkpoint(ck);
  ck.set_meta("trainer.step", std::to_string(step_));
  ck.set_meta("trainer.seed", std::to_string(opts_.seed));
  ck.set_meta("trainer.ref_loss", format_double(ref_loss_));
}

void AdapterTrainer::load_state(Checkpoint& ck) {
  opt_.load_from_checkpoint(ck);
  step_ = meta_i64(ck, "trainer.step");
  opts_.seed = meta_u64(ck, "trainer.seed");
  ref_loss_ = meta_f64(ck, "trainer.ref_loss");
}

double eval_adapter_heldout(ConditionAdapter<float>& adapter, DenoiserModel<float>& denoiser,
                            const ProceduralDataset& data, CondKind kind,
                            const NoiseSchedule& sched, int batches, int batch_size,
                            uint64_t seed) {
  if (batches < 1 || batch_size < 1) throw ValueError("batches and batch_size must be >= 1");
  const std::vector<int> val = data.val_indices();
  if (val.empty()) throw ValueError("dataset has no validation items");
  RngStream rs(mix_seed(seed, 0xEBA1ull));
  const int lo = sched.T / 2;

  NoGradGuard ng;
  double total = 0;
  for (int b = 0; b < batches; ++b) {
    const std::vector<int> idx = draw_batch(val, batch_size, rs);
    Tensor<float> z0 = batch_images(data, idx);
    std::vector<int> t(idx.size()), cls(idx.size());
    for (size_t i = 0; i < idx.size(); ++i) t[i] = lo + int(rs.uniform_int(0, sched.T - lo - 1));
    for (size_t i = 0; i < idx.size(); ++i) cls[i] = data.items[size_t(idx[i])].label;

    std::vector<Image> maps;
    maps.reserve(idx.size());
    for (int i : idx) maps.push_back(eval_condition(data.items[size_t(i)], kind).map);
    Tensor<float> target = images_to_tensor<float>(maps);

    Tensor<float> eps(z0.shape(), std::vector<float>(static_cast<size_t>(z0.numel())));
    rs.fill_normal(eps.values());
    Tensor<float> zt = q_sample<float>(z0, t, eps, sched);
    auto [eps_pred, taps] = denoiser.forward_with_taps(zt, t, cls);
    FeatureStack<float> stack = align_features(taps, adapter.config().height,
                                               adapter.config().width, denoiser.tap_spec());
    Tensor<float> loss = ca_loss(adapter, stack, t, target, NormMode::batch_frozen);
    total += double(loss.values()[0]);
  }
  return total / batches;
}

// ---- classifier trainer -------------------------------------------------

ClassifierTrainer::ClassifierTrainer(Classifier<float>& clf, const ProceduralDataset& data,
                                     const TrainOpts& opts)
    : clf_(clf),
      data_(data),
      opts_(opts),
      opt_(clf.named_params(), opts.lr),
      train_idx_(data.train_indices()) {
  check_opts(opts);
  if (train_idx_.empty()) throw ValueError("dataset has no training items");
}

double ClassifierTrainer::one_step() {
  RngStream rs(mix_seed(mix_seed(opts_.seed, 0xC1ull), uint64_t(step_)));
  const std::vector<int> idx = draw_batch(train_idx_, opts_.batch_size, rs);
  Tensor<float> x = batch_images(data_, idx);
  std::vector<int> y(idx.size());
  for (size_t i = 0; i < idx.size(); ++i) y[i] = data_.items[size_t(idx[i])].shape_class;

  Tensor<float> loss = softmax_cross_entropy(clf_.logits(x), y);
  const double lval = double(loss.values()[0]);
  guard_loss(lval, ref_loss_, opts_.divergence_factor, step_, "classifier");
  opt_.zero_grad();
  loss.backward();
  opt_.step();
  return lval;
}

TrainReport ClassifierTrainer::run(int steps) {
  if (steps < 0) throw ValueError("steps must be >= 0");
  TrainReport rep;
  for (int i = 0; i < steps; ++i) {
    const double lval = one_step();
    record_step(rep, step_, lval, i, steps, opts_.log_every);
    ++step_;
  }
  rep.steps_done = steps;
  return rep;
}

void ClassifierTrainer::save_state(Checkpoint& ck) const {
  opt_.add_to_checkpoint(ck);
  ck.set_meta("trainer.step", std::to_string(step_));
  ck.set_meta("trainer.seed", std::to_string(opts_.seed));
  ck.set_meta("trainer.ref_loss", format_double(ref_loss_));
}

void ClassifierTrainer::load_state(Checkpoint& ck) {
  opt_.load_from_checkpoint(ck);
  step_ = meta_i64(ck, "trainer.step");
  opts_.seed = meta_u64(ck, "trainer.seed");
  ref_loss_ = meta_f64(ck, "trainer.ref_loss");
}

double eval_classifier_heldout(Classifier<float>& clf, const ProceduralDataset& data) {
  const std::vector<int> val = data.val_indices();
  if (val.empty()) throw ValueError("dataset has no validation items");
  std::vector<Image> imgs;
  std::vector<int> labels;
  imgs.reserve(val.size());
  labels.reserve(val.size());
  for (int i : val) {
    imgs.push_back(data.items[size_t(i)].image);
    labels.push_back(data.items[size_t(i)].shape_class);
  }
  return class_accuracy(clf, imgs, labels);
}

template class Adam<float>;
template class Adam<double>;
template void freeze_params(std::vector<std::pair<std::string, Tensor<float>>>);
template void freeze_params(std::vector<std::pair<std::string, Tensor<double>>>);

}  // namespace lcdg
