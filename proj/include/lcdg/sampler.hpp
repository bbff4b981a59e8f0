#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "lcdg/adapter.hpp"
#include "lcdg/diffusion.hpp"
#include "lcdg/tensor.hpp"
#include "lcdg/unet.hpp"

namespace lcdg {

// How the per-step guidance scale alpha is chosen.
enum class AlphaMode {
  verbatim,    // |mu_theta - z_t|^2 / |grad dist|^2, recomputed every step (default)
  norm_ratio,  // |mu_theta - z_t| / |grad dist|: same ratio on plain norms
  fixed,       // a constant, for closed-form checks and sweeps
};

enum class SamplerKind { ddpm, ddim };

struct GuidanceConfig {
  double beta = 0.0;    // structural guidance strength; 0 disables guidance
  int t_trunc = 1;      // guide only while the conceptual step (T..1) >= this
  double omega = 6.0;   // classifier-free mixing weight
  AlphaMode alpha_mode = AlphaMode::verbatim;
  double fixed_alpha = 1.0;  // used when alpha_mode == fixed
  SamplerKind kind = SamplerKind::ddpm;
  int ddim_steps = 50;       // kept steps; must divide the schedule length
  double ddim_eta = 0.0;     // 0 = deterministic
  bool ssc = false;          // guide every other eligible step, first included
  uint64_t seed = 0;
  bool collect_trace = true;
  int dump_every = 0;  // invoke the dump callback every k-th kept step (0 = off)
};

// What guidance did at one reverse step. Batch items are guided as if each
// were sampled alone (per-item distance gradient and scale); these record the
// batch aggregate.
struct StepTrace {
  int level = 0;         // conceptual step, T down to 1
  int t_index = 0;       // schedule index fed to the model (level - 1)
  bool guided = false;
  double distance = -1;  // batch-mean dist(C, C_ext) pre-update; -1 unguided
  double alpha = 0;      // batch-mean applied scale; 0 when skipped/unguided
  double grad_norm = 0;  // full-batch gradient norm before scaling
  double millis = 0;     // wall time of this step
};

struct SampleResult {
  Tensor<float> z0;
  std::vector<StepTrace> trace;  // empty when collect_trace is false
};

// One reverse step's model outputs. eps values are read as data; cond carries
// the autodiff path back to z when the caller asked for it.
template <typename T>
struct StepOutputs {
  Tensor<T> eps_c;     // conditional eps prediction
  Tensor<T> eps_null;  // null-class eps prediction
  Tensor<T> cond;      // predicted condition map; undefined when not requested
};

// The model pair driving guided sampling: an eps-denoiser plus a condition
// head whose prediction differentiates back to the latent.
template <typename T>
class GuidedModel {
 public:
  virtual ~GuidedModel() = default;
  virtual int null_class() const = 0;
  // z arrives with requires_grad set iff want_cond; implementations must give
  // cond an autodiff path to z in that case and may skip it otherwise.
  virtual StepOutputs<T> forward(const Tensor<T>& z, const std::vector<int>& t,
                              const std::vector<int>& cls, bool want_cond) = 0;
};

// Backbone + condition-reconstruction head: the conditional forward is shared
// between the eps prediction and the tapped features feeding the head, so
// guidance costs one extra null forward plus one backward per guided step.
class AdapterGuidedModel : public GuidedModel<float> {
 public:
  AdapterGuidedModel(DenoiserModel<float>& denoiser, ConditionAdapter<float>& adapter);
  int null_class() const override;
  StepOutputs<float> forward(const Tensor<float>& z, const std::vector<int>& t,
                             const std::vector<int>& cls, bool want_cond) override;

 private:
  DenoiserModel<float>& denoiser_;
  ConditionAdapter<float>& adapter_;
};

// Decides, step by step, whether guidance fires: beta must be positive, the
// conceptual level must sit inside the truncation band, and with skip-step
// enabled only every other eligible step fires, starting with the first.
// Shared by the sampler and the closed-form reference so gating can never
// drift between them.
class GuidanceGate {
 public:
  GuidanceGate(double beta, int t_trunc, bool ssc)
      : beta_(beta), t_trunc_(t_trunc), ssc_(ssc) {}
  bool next(int level) {
    if (beta_ <= 0 || level < t_trunc_) return false;
    const bool fire = !ssc_ || band_count_ % 2 == 0;
    ++band_count_;
    return fire;
  }

 private:
  double beta_;
  int t_trunc_;
  bool ssc_;
  int64_t band_count_ = 0;
};

// Everything one sampling call needs besides the models and schedule.
struct SampleRequest {
  int batch = 1;
  int channels = 1;
  int height = 32;
  int width = 32;
  std::vector<int> cls;  // length batch; entries may be the null id
  Tensor<float> c_ext;   // external condition target; required when guiding
  // Called on dump steps with the step record, the current latent, and the
  // predicted condition map values (empty when the step computed none).
  std::function<void(const StepTrace&, const Tensor<float>& z, const Tensor<float>& cond)>
      dump;
};

// Runs the full reverse chain under the given guidance configuration.
// Guidance never consumes randomness: a beta=0 run and a guided run with the
// same seed draw identical noise.
SampleResult sample_guided(GuidedModel<float>& model, const NoiseSchedule& sched,
                           const GuidanceConfig& cfg, const SampleRequest& req);

// Validation shared with config loading: throws ValueError on a bad combination.
void validate_guidance(const GuidanceConfig& cfg, int T);

// Conceptual levels (T..1) visited by the configured sampler, in visit order.
std::vector<int> sampler_levels(const GuidanceConfig& cfg, int T);

}  // namespace lcdg
