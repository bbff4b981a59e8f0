#pragma once

#include <memory>
#include <vector>

#include "lcdg/ops.hpp"
#include "lcdg/rng.hpp"
#include "lcdg/tensor.hpp"

namespace lcdg {

// Variance schedule plus derived per-step quantities, all precomputed in
// double. Index i holds the values for timestep t = i.
struct NoiseSchedule {
  int T = 0;
  std::vector<double> betas;
  std::vector<double> alphas;
  std::vector<double> alpha_bars;
  std::vector<double> posterior_vars;  // posterior_vars[0] = betas[0]
};

// Linearly spaced betas from beta_start to beta_end inclusive.
NoiseSchedule make_schedule(int T = 1000, double beta_start = 1e-4, double beta_end = 0.02);

// Diffuses z0 to timestep t[i] per batch item: sqrt(abar)*z0 + sqrt(1-abar)*eps.
template <typename T>
Tensor<T> q_sample(const Tensor<T>& z0, const std::vector<int>& t, const Tensor<T>& eps,
                   const NoiseSchedule& sched);

// Maps a uniform draw t_in in [1,T] to a late-biased timestep index in [0,T-1].
int resample_timestep(int t_in, int T, double n);

// Draws training timesteps; `resampled` biases toward high-noise steps.
struct TimestepSampler {
  enum class Mode { uniform, resampled };
  Mode mode = Mode::uniform;
  double n = 2.0;
  int T = 0;

  int draw(RngStream& rng) const;
};

// Minimal denoiser interface: everything the diffusion and sampling code needs
// from a model. cls entries must already be valid ids (null id included).
template <typename T>
struct EpsModel {
  virtual ~EpsModel() = default;
  virtual Tensor<T> eps(const Tensor<T>& z, const std::vector<int>& t,
                        const std::vector<int>& cls) = 0;
  virtual int null_class() const = 0;
};

// Deterministic core of the training objective: mean squared error between the
// model's prediction at (q_sample(z0,t,eps), t, cls) and eps itself.
template <typename T>
Tensor<T> denoiser_loss_given(EpsModel<T>& model, const Tensor<T>& z0, const std::vector<int>& cls,
                              const std::vector<int>& t, const Tensor<T>& eps,
                              const NoiseSchedule& sched);

// Samples t, eps and the classifier-free condition drop, then defers to the
// deterministic core. p_uncond replaces cls with the model's null id.
template <typename T>
Tensor<T> denoiser_loss(EpsModel<T>& model, const Tensor<T>& z0, const std::vector<int>& cls,
                        const NoiseSchedule& sched, RngStream& rng, double p_uncond = 0.1);

extern template Tensor<float> q_sample(const Tensor<float>&, const std::vector<int>&,
                                       const Tensor<float>&, const NoiseSchedule&);
extern template Tensor<double> q_sample(const Tensor<double>&, const std::vector<int>&,
                                        const Tensor<double>&, const NoiseSchedule&);

}  // namespace lcdg
