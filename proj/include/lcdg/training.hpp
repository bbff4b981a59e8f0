#pragma once

// Parameter-gradient convention: models construct every parameter with
// requires_grad = false, and the optimizer's constructor is the single place
// that turns gradient tracking on. A freshly built or loaded model is
// therefore frozen by default, and a grad-enabled forward during guided
// sampling back-propagates to the input alone without touching weights.

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "lcdg/adapter.hpp"
#include "lcdg/checkpoint.hpp"
#include "lcdg/conditions.hpp"
#include "lcdg/dataset.hpp"
#include "lcdg/diffusion.hpp"
#include "lcdg/metrics.hpp"
#include "lcdg/unet.hpp"

namespace lcdg {

// Adam with bias correction. Construction attaches the given parameters:
// requires_grad is switched on and first/second moment slots are allocated.
template <typename T>
class Adam {
 public:
  explicit Adam(std::vector<std::pair<std::string, Tensor<T>>> params, double lr = 1e-4,
                double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

  // Applies the current gradients (a parameter without a gradient buffer
  // counts as zero-gradient) and advances the shared step counter.
  void step();
  void zero_grad();

  int64_t steps_done() const { return t_; }
  double lr() const { return lr_; }
  void set_lr(double lr) { lr_ = lr; }

  // Moment vectors and the step counter, embedded as "opt."-prefixed tensors
  // and metadata so a training run can resume bit-exactly.
  void add_to_checkpoint(Checkpoint& ck) const;
  void load_from_checkpoint(Checkpoint& ck);

 private:
  struct Slot {
    std::string name;
    Tensor<T> param;
    std::vector<T> m, v;
  };
  std::vector<Slot> slots_;
  double lr_, beta1_, beta2_, eps_;
  int64_t t_ = 0;
};

// Turns gradient tracking off on every given parameter — the inverse of the
// optimizer's attach step. Freshly constructed or loaded models are already
// frozen; this is for reusing a just-trained model as a frozen backbone.
template <typename T>
void freeze_params(std::vector<std::pair<std::string, Tensor<T>>> params);

struct TrainOpts {
  int batch_size = 16;
  double lr = 1e-4;
  uint64_t seed = 0;
  double p_uncond = 0.1;           // denoiser class-drop probability
  int log_every = 50;              // loss-curve sampling stride
  double divergence_factor = 10.0; // abort when loss exceeds this x reference
};

struct TrainReport {
  std::vector<std::pair<int64_t, double>> loss_curve;  // (global step, loss)
  double initial_loss = 0;  // loss at the first step of this run
  double final_loss = 0;    // loss at the last step of this run
  int64_t steps_done = 0;   // steps executed by this run() call
};

// Deterministic condition targets. Training draws augmented maps from the
// step stream; evaluation uses the fixed inference-style generators. Both
// return maps in [0,1] (inputs are converted to unit range internally).
ConditionMap train_condition(const DatasetItem& item, CondKind kind, RngStream& rng);
ConditionMap eval_condition(const DatasetItem& item, CondKind kind);

// Trains the eps-denoiser with classifier-free condition drop. Every draw at
// step k comes from a stream keyed by (seed, k), so a run of n steps equals a
// run of m steps plus a resumed run of n-m steps with the same seed.
class DenoiserTrainer {
 public:
  DenoiserTrainer(DenoiserModel<float>& model, const ProceduralDataset& data,
                  const NoiseSchedule& sched, const TrainOpts& opts);

  TrainReport run(int steps);  // continues from the current step counter
  int64_t step() const { return step_; }

  // Optimizer moments plus counters and the stored seed. Loading restores the
  // seed from the checkpoint so the step streams continue unchanged.
  void save_state(Checkpoint& ck) const;
  void load_state(Checkpoint& ck);

 private:
  double one_step();

  DenoiserModel<float>& model_;
  const ProceduralDataset& data_;
  const NoiseSchedule& sched_;
  TrainOpts opts_;
  Adam<float> opt_;
  std::vector<int> train_idx_;
  int64_t step_ = 0;
  double ref_loss_ = -1;
};

// Trains the condition adapter against a frozen denoiser. The denoiser's
// parameter digest is asserted unchanged across every run() call; timesteps
// come from the given sampler (late-biased when resampled); reconstruction
// runs in batch-stat training mode.
class AdapterTrainer {
 public:
  AdapterTrainer(ConditionAdapter<float>& adapter, DenoiserModel<float>& denoiser,
                 const ProceduralDataset& data, CondKind kind, const NoiseSchedule& sched,
                 const TimestepSampler& tsampler, const TrainOpts& opts);

  TrainReport run(int steps);
  int64_t step() const { return step_; }

  void save_state(Checkpoint& ck) const;
  void load_state(Checkpoint& ck);

 private:
  double one_step();

  ConditionAdapter<float>& adapter_;
  DenoiserModel<float>& denoiser_;
  const ProceduralDataset& data_;
  CondKind kind_;
  const NoiseSchedule& sched_;
  TimestepSampler tsampler_;
  TrainOpts opts_;
  Adam<float> opt_;
  std::vector<int> train_idx_;
  std::string frozen_digest_;
  int64_t step_ = 0;
  double ref_loss_ = -1;
};

// Mean reconstruction loss on validation items: deterministic inference-style
// conditions, timesteps uniform over the late half [T/2, T), batch statistics
// applied without being stored (so an untrained adapter evaluates cleanly).
double eval_adapter_heldout(ConditionAdapter<float>& adapter, DenoiserModel<float>& denoiser,
                            const ProceduralDataset& data, CondKind kind,
                            const NoiseSchedule& sched, int batches, int batch_size,
                            uint64_t seed);

// Trains the shape-class probe with softmax cross-entropy.
class ClassifierTrainer {
 public:
  ClassifierTrainer(Classifier<float>& clf, const ProceduralDataset& data,
                    const TrainOpts& opts);

  TrainReport run(int steps);
  int64_t step() const { return step_; }

  void save_state(Checkpoint& ck) const;
  void load_state(Checkpoint& ck);

 private:
  double one_step();

  Classifier<float>& clf_;
  const ProceduralDataset& data_;
  TrainOpts opts_;
  Adam<float> opt_;
  std::vector<int> train_idx_;
  int64_t step_ = 0;
  double ref_loss_ = -1;
};

// Classifier accuracy over the validation split.
double eval_classifier_heldout(Classifier<float>& clf, const ProceduralDataset& data);

extern template class Adam<float>;
extern template class Adam<double>;
extern template void freeze_params(std::vector<std::pair<std::string, Tensor<float>>>);
extern template void freeze_params(std::vector<std::pair<std::string, Tensor<double>>>);

}  // namespace lcdg
