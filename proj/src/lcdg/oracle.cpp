#include "lcdg/oracle.hpp"

#include <cmath>

#include "lcdg/error.hpp"

namespace lcdg {
namespace {

void check_world(const AnalyticWorld& w) {
  if (w.s <= 0) throw ValueError("analytic world stddev must be positive");
  if (w.height < 1 || w.width < 1) throw ValueError("analytic world dims must be positive");
}

// One reverse step as an affine map z' = p z + q plus independent noise of
// variance nv. Mirrors sample_guided's update arithmetic exactly.
struct StepMap {
  double p = 1, q = 0, nv = 0;
};

StepMap step_map(const AnalyticWorld& w, const NoiseSchedule& sched, const GuidanceConfig& cfg,
                 int t_idx, double abar_prev, bool guided) {
  const double abar = sched.alpha_bars[static_cast<size_t>(t_idx)];
  const double s1mabar = std::sqrt(1.0 - abar);
  const double a_t = analytic_eps_coeff(w, sched, t_idx);
  const double d = double(w.height) * double(w.width);  // mse denominator
  const double galpha = cfg.beta * cfg.fixed_alpha;     // guidance weight

  StepMap sm;
  if (cfg.kind == SamplerKind::ddpm) {
    const double beta_t = sched.betas[static_cast<size_t>(t_idx)];
    const double inv_sqrt_alpha = 1.0 / std::sqrt(sched.alphas[static_cast<size_t>(t_idx)]);
    const double b = beta_t / s1mabar;
    // mu = (z - b eps)/sqrt(alpha), eps = a_t z - a_t sqrt(abar) m
    sm.p = inv_sqrt_alpha * (1.0 - b * a_t);
    sm.q = inv_sqrt_alpha * b * a_t * std::sqrt(abar) * w.m;
    const double sigma2 = sched.posterior_vars[static_cast<size_t>(t_idx)];
    if (guided) {
      // mean += beta alpha sigma^2 g, g = -(2/d)(z - c)
      sm.p -= galpha * sigma2 * 2.0 / d;
      sm.q += galpha * sigma2 * 2.0 / d * w.c;
    }
    sm.nv = t_idx > 0 ? sigma2 : 0.0;  // no noise at the final step
  } else {
    // eps_hat = A z + B, with the guided correction folded in.
    double A = a_t;
    double B = -a_t * std::sqrt(abar) * w.m;
    if (guided) {
      A += s1mabar * galpha * 2.0 / d;
      B -= s1mabar * galpha * 2.0 / d * w.c;
    }
    const double sigma_d = cfg.ddim_eta *
                           std::sqrt(std::max(0.0, (1.0 - abar_prev) / (1.0 - abar))) *
                           std::sqrt(std::max(0.0, 1.0 - abar / abar_prev));
    const double dir = std::sqrt(std::max(0.0, 1.0 - abar_prev - sigma_d * sigma_d));
    const double sqrt_abar = std::sqrt(abar);
    const double sqrt_abar_prev = std::sqrt(abar_prev);
    // x0 = (z - s1mabar eps)/sqrt(abar); z' = sqrt(abar_prev) x0 + dir eps
    sm.p = sqrt_abar_prev * (1.0 - s1mabar * A) / sqrt_abar + dir * A;
    sm.q = -sqrt_abar_prev * s1mabar * B / sqrt_abar + dir * B;
    sm.nv = sigma_d * sigma_d;
  }
  return sm;
}

}  // namespace

double analytic_eps_coeff(const AnalyticWorld& w, const NoiseSchedule& sched, int t_idx) {
  check_world(w);
  if (t_idx < 0 || t_idx >= sched.T) throw ValueError("timestep index out of range");
  const double abar = sched.alpha_bars[static_cast<size_t>(t_idx)];
  return std::sqrt(1.0 - abar) / (abar * w.s * w.s + 1.0 - abar);
}

AnalyticGuidedModel::AnalyticGuidedModel(const AnalyticWorld& w, const NoiseSchedule& sched)
    : w_(w), sched_(sched) {
  check_world(w);
}

StepOutputs<float> AnalyticGuidedModel::forward(const Tensor<float>& z, const std::vector<int>& t,
                                                const std::vector<int>& cls, bool want_cond) {
  (void)cls;  // class-free world
  if (z.ndim() != 4) throw ShapeError("analytic model expects a 4-d latent");
  if (int(t.size()) != z.dim(0)) throw ShapeError("one timestep per batch item required");
  const int per = z.dim(1) * z.dim(2) * z.dim(3);
  const std::vector<float>& zvals = z.values();
  std::vector<float> evals(zvals.size());
  for (size_t b = 0; b < t.size(); ++b) {
    const double a_t = analytic_eps_coeff(w_, sched_, t[b]);
    const double abar = sched_.alpha_bars[static_cast<size_t>(t[b])];
    const double shift = std::sqrt(abar) * w_.m;
    for (int k = 0; k < per; ++k) {
      const size_t idx = b * static_cast<size_t>(per) + static_cast<size_t>(k);
      evals[idx] = float(a_t * (double(zvals[idx]) - shift));
    }
  }
  StepOutputs<float> out;
  out.eps_c = Tensor<float>(z.shape(), evals);
  out.eps_null = out.eps_c;
  if (want_cond) out.cond = z;  // identity head: gradient lands on z directly
  return out;
}

ChainMoments propagate_moments(const AnalyticWorld& w, const NoiseSchedule& sched,
                               const GuidanceConfig& cfg) {
  check_world(w);
  validate_guidance(cfg, sched.T);
  if (cfg.beta > 0 && cfg.alpha_mode != AlphaMode::fixed) {
    throw ValueError("closed-form propagation needs a fixed guidance scale");
  }
  GuidanceGate gate(cfg.beta, cfg.t_trunc, cfg.ssc);
  const bool ddim = cfg.kind == SamplerKind::ddim;
  const int stride = ddim ? sched.T / cfg.ddim_steps : 1;
  const int kept = ddim ? cfg.ddim_steps : sched.T;

  ChainMoments mom;
  mom.mean = 0;
  mom.var = 1;  // z_T ~ N(0, I)
  for (int pos = 0; pos < kept; ++pos) {
    const int i = kept - pos;
    const int t_idx = i * stride - 1;
    const double abar_prev =
        ddim ? (i > 1 ? sched.alpha_bars[static_cast<size_t>((i - 1) * stride - 1)] : 1.0) : 0.0;
    const bool guided = gate.next(t_idx + 1);
    const StepMap sm = step_map(w, sched, cfg, t_idx, abar_prev, guided);
    mom.mean = sm.p * mom.mean + sm.q;
    mom.var = sm.p * sm.p * mom.var + sm.nv;
  }
  return mom;
}

AffineMap chain_affine(const AnalyticWorld& w, const NoiseSchedule& sched,
                       const GuidanceConfig& cfg) {
  check_world(w);
  validate_guidance(cfg, sched.T);
  if (cfg.kind != SamplerKind::ddim || cfg.ddim_eta != 0) {
    throw ValueError("the full-chain affine map exists only for the deterministic sampler");
  }
  if (cfg.beta > 0 && cfg.alpha_mode != AlphaMode::fixed) {
    throw ValueError("closed-form propagation needs a fixed guidance scale");
  }
  GuidanceGate gate(cfg.beta, cfg.t_trunc, cfg.ssc);
  const int stride = sched.T / cfg.ddim_steps;
  AffineMap map;
  for (int pos = 0; pos < cfg.ddim_steps; ++pos) {
    const int i = cfg.ddim_steps - pos;
    const int t_idx = i * stride - 1;
    const double abar_prev =
        i > 1 ? sched.alpha_bars[static_cast<size_t>((i - 1) * stride - 1)] : 1.0;
    const bool guided = gate.next(t_idx + 1);
    const StepMap sm = step_map(w, sched, cfg, t_idx, abar_prev, guided);
    map.p = sm.p * map.p;
    map.q = sm.p * map.q + sm.q;
  }
  return map;
}

double endpoint_condition_mse(const ChainMoments& mom, const AnalyticWorld& w) {
  const double bias = mom.mean - w.c;
  return bias * bias + mom.var;
}

}  // namespace lcdg
