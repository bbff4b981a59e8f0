#pragma once

#include <vector>

#include "lcdg/diffusion.hpp"
#include "lcdg/sampler.hpp"

namespace lcdg {

// Linear-Gaussian reference world: z0 ~ N(m 1, s^2 I) over a (1, 1, h, w)
// latent, the condition head is the identity, and the target is the constant
// map c 1. The optimal eps predictor is affine in z, so every guided update
// is an affine map and the chain's per-pixel moments propagate exactly.
struct AnalyticWorld {
  double m = 0.7;  // world mean
  double s = 0.4;  // world stddev; must be positive
  double c = 0.0;  // condition target value
  int height = 4;
  int width = 4;
};

// eps*(z,t) = a_t (z - sqrt(abar_t) m) with
// a_t = sqrt(1 - abar_t) / (abar_t s^2 + 1 - abar_t).
double analytic_eps_coeff(const AnalyticWorld& w, const NoiseSchedule& sched, int t_idx);

// GuidedModel over the analytic world: conditional and null predictions
// coincide (class-free world) and the condition prediction is the latent
// itself, so the structural gradient is the exact mse gradient to z.
class AnalyticGuidedModel : public GuidedModel<float> {
 public:
  AnalyticGuidedModel(const AnalyticWorld& w, const NoiseSchedule& sched);
  int null_class() const override { return 0; }
  StepOutputs<float> forward(const Tensor<float>& z, const std::vector<int>& t,
                             const std::vector<int>& cls, bool want_cond) override;

 private:
  AnalyticWorld w_;
  const NoiseSchedule& sched_;
};

// Final per-pixel moments of the configured chain's output distribution.
struct ChainMoments {
  double mean = 0;
  double var = 0;
};

// z' = p z + q: the composition of the chain's deterministic per-step maps.
struct AffineMap {
  double p = 1;
  double q = 0;
};

// Exact mean/variance of the sampler's output in the analytic world. Supports
// both samplers, truncation, skip-step, and fixed-alpha guidance; the
// adaptive norm-ratio scale makes updates non-affine and is rejected.
ChainMoments propagate_moments(const AnalyticWorld& w, const NoiseSchedule& sched,
                               const GuidanceConfig& cfg);

// The full-chain affine map for the deterministic sampler (ddim, eta = 0):
// the endpoint is exactly p z_T + q per pixel. Other configurations inject
// noise mid-chain and are rejected.
AffineMap chain_affine(const AnalyticWorld& w, const NoiseSchedule& sched,
                       const GuidanceConfig& cfg);

// Expected mean-squared distance from the chain endpoint to the target:
// (mean - c)^2 + var.
double endpoint_condition_mse(const ChainMoments& mom, const AnalyticWorld& w);

}  // namespace lcdg
