#include "lcdg/sampler.hpp"

#include <chrono>
#include <cmath>
#include <utility>

#include "lcdg/error.hpp"
#include "lcdg/ops.hpp"
#include "lcdg/rng.hpp"

namespace lcdg {

AdapterGuidedModel::AdapterGuidedModel(DenoiserModel<float>& denoiser,
                                       ConditionAdapter<float>& adapter)
    : denoiser_(denoiser), adapter_(adapter) {}

int AdapterGuidedModel::null_class() const { return denoiser_.null_class(); }

StepOutputs<float> AdapterGuidedModel::forward(const Tensor<float>& z, const std::vector<int>& t,
                                               const std::vector<int>& cls, bool want_cond) {
  StepOutputs<float> out;
  if (want_cond) {
    auto [eps_c, taps] = denoiser_.forward_with_taps(z, t, cls);
    out.eps_c = eps_c;
    FeatureStack<float> stack = align_features(taps, adapter_.config().height,
                                               adapter_.config().width, denoiser_.tap_spec());
    out.cond = ca_forward(adapter_, stack, t, NormMode::eval);
  } else {
    NoGradGuard ng;
    out.eps_c = denoiser_.eps(z, t, cls);
  }
  {
    NoGradGuard ng;
    std::vector<int> nulls(t.size(), denoiser_.null_class());
    out.eps_null = denoiser_.eps(z, t, nulls);
  }
  return out;
}

void validate_guidance(const GuidanceConfig& cfg, int T) {
  if (T < 1) throw ValueError("schedule must have at least one step");
  if (cfg.beta < 0) throw ValueError("guidance beta must be >= 0");
  if (cfg.t_trunc < 1 || cfg.t_trunc > T) {
    throw ValueError("t_trunc must lie in [1, T], got " + std::to_string(cfg.t_trunc));
  }
  if (cfg.alpha_mode == AlphaMode::fixed && cfg.fixed_alpha < 0) {
    throw ValueError("fixed alpha must be >= 0");
  }
  if (cfg.kind == SamplerKind::ddim) {
    if (cfg.ddim_steps < 1 || cfg.ddim_steps > T) {
      throw ValueError("ddim_steps must lie in [1, T]");
    }
    if (T % cfg.ddim_steps != 0) {
      throw ValueError("ddim_steps must divide the schedule length");
    }
    if (cfg.ddim_eta < 0) throw ValueError("ddim_eta must be >= 0");
  }
  if (cfg.dump_every < 0) throw ValueError("dump_every must be >= 0");
}

std::vector<int> sampler_levels(const GuidanceConfig& cfg, int T) {
  validate_guidance(cfg, T);
  std::vector<int> levels;
  if (cfg.kind == SamplerKind::ddpm) {
    for (int level = T; level >= 1; --level) levels.push_back(level);
  } else {
    const int stride = T / cfg.ddim_steps;
    for (int i = cfg.ddim_steps; i >= 1; --i) levels.push_back(i * stride);
  }
  return levels;
}

SampleResult sample_guided(GuidedModel<float>& model, const NoiseSchedule& sched,
                           const GuidanceConfig& cfg, const SampleRequest& req) {
  validate_guidance(cfg, sched.T);
  if (req.batch < 1 || req.channels < 1 || req.height < 1 || req.width < 1) {
    throw ValueError("sample request dimensions must be positive");
  }
  if (int(req.cls.size()) != req.batch) {
    throw ValueError("sample request needs one class id per batch item");
  }
  if (cfg.beta > 0) {
    if (!req.c_ext.defined()) {
      throw ValueError("guided sampling needs an external condition target");
    }
    if (req.c_ext.dim(0) != req.batch) {
      throw ShapeError("condition target batch size does not match the request");
    }
  }

  RngStream rng(mix_seed(cfg.seed, 0x5A3Dull));
  const Shape shape{req.batch, req.channels, req.height, req.width};
  const size_t n = static_cast<size_t>(numel_of(shape));
  std::vector<float> zv(n);
  rng.fill_normal(zv);

  GuidanceGate gate(cfg.beta, cfg.t_trunc, cfg.ssc);
  const bool ddim = cfg.kind == SamplerKind::ddim;
  const int stride = ddim ? sched.T / cfg.ddim_steps : 1;
  const int kept = ddim ? cfg.ddim_steps : sched.T;

  SampleResult res;
  if (cfg.collect_trace) res.trace.reserve(static_cast<size_t>(kept));

  for (int pos = 0; pos < kept; ++pos) {
    const auto wall0 = std::chrono::steady_clock::now();
    const int i = kept - pos;  // countdown over kept steps
    const int t_idx = i * stride - 1;
    const int level = t_idx + 1;  // conceptual step, T down to stride

    StepTrace tr;
    tr.level = level;
    tr.t_index = t_idx;
    tr.guided = gate.next(level);
    const bool dump_step = cfg.dump_every > 0 && req.dump && pos % cfg.dump_every == 0;
    const bool want_cond = tr.guided || dump_step;

    Tensor<float> zl(shape, zv);
    if (tr.guided) zl.set_requires_grad(true);
    const std::vector<int> t_vec(static_cast<size_t>(req.batch), t_idx);
    StepOutputs<float> out = model.forward(zl, t_vec, req.cls, want_cond);

    // Structural gradient. Guidance consumes no randomness anywhere in here.
    // The scalar swept backward is the SUM of per-item reconstruction errors,
    // so each chain in the batch sees exactly the gradient a batch-of-one run
    // would see.
    const size_t per = n / static_cast<size_t>(req.batch);
    std::vector<float> grad;
    std::vector<double> gnorm2(static_cast<size_t>(req.batch), 0.0);
    if (tr.guided) {
      Tensor<float> dist = mse(out.cond, req.c_ext);
      tr.distance = double(dist.values()[0]);
      Tensor<float> loss = scalar_mul(dist, float(req.batch));
      loss.backward();
      if (zl.has_grad()) {
        grad = zl.grad();
        double total = 0;
        for (size_t b = 0; b < static_cast<size_t>(req.batch); ++b) {
          double acc = 0;
          for (size_t k = 0; k < per; ++k) {
            const double g = double(grad[b * per + k]);
            acc += g * g;
          }
          gnorm2[b] = acc;
          total += acc;
        }
        tr.grad_norm = std::sqrt(total);
      } else {
        grad.assign(n, 0.f);
      }
    }

    // Classifier-free mix.
    const std::vector<float>& ec = out.eps_c.values();
    const std::vector<float>& en = out.eps_null.values();
    std::vector<float> eps_hat(n);
    for (size_t k = 0; k < n; ++k) {
      eps_hat[k] = float(cfg.omega * double(ec[k]) + (1.0 - cfg.omega) * double(en[k]));
    }

    const double abar = sched.alpha_bars[static_cast<size_t>(t_idx)];
    const double beta_t = sched.betas[static_cast<size_t>(t_idx)];
    const double alpha_t = sched.alphas[static_cast<size_t>(t_idx)];
    const double s1mabar = std::sqrt(1.0 - abar);

    // Ancestral posterior mean; also the numerator source for the adaptive
    // scale, in both samplers.
    std::vector<double> mean(n);
    const double inv_sqrt_alpha = 1.0 / std::sqrt(alpha_t);
    for (size_t k = 0; k < n; ++k) {
      mean[k] = inv_sqrt_alpha * (double(zv[k]) - beta_t / s1mabar * double(eps_hat[k]));
    }

    // Per-item scale: each chain is guided exactly as it would be alone.
    std::vector<double> alphas(static_cast<size_t>(req.batch), 0.0);
    bool any_alpha = false;
    if (tr.guided) {
      for (size_t b = 0; b < static_cast<size_t>(req.batch); ++b) {
        if (gnorm2[b] <= 0) continue;
        if (cfg.alpha_mode == AlphaMode::fixed) {
          alphas[b] = cfg.fixed_alpha;
        } else {
          double num = 0;
          for (size_t k = 0; k < per; ++k) {
            const size_t idx = b * per + k;
            const double d = mean[idx] - double(zv[idx]);
            num += d * d;
          }
          alphas[b] = num / gnorm2[b];
          if (cfg.alpha_mode == AlphaMode::norm_ratio) alphas[b] = std::sqrt(alphas[b]);
        }
        if (alphas[b] > 0) any_alpha = true;
      }
      double asum = 0;
      for (double a : alphas) asum += a;
      tr.alpha = asum / double(req.batch);
    }

    if (dump_step) req.dump(tr, zl, out.cond);

    const bool apply_guidance = tr.guided && any_alpha;
    if (ddim) {
      const double abar_prev =
          i > 1 ? sched.alpha_bars[static_cast<size_t>((i - 1) * stride - 1)] : 1.0;
      if (apply_guidance) {
        for (size_t b = 0; b < static_cast<size_t>(req.batch); ++b) {
          const double c = s1mabar * cfg.beta * alphas[b];
          if (c == 0) continue;
          for (size_t k = 0; k < per; ++k) {
            const size_t idx = b * per + k;
            eps_hat[idx] = float(double(eps_hat[idx]) + c * double(grad[idx]));
          }
        }
      }
      const double sigma_d =
          cfg.ddim_eta * std::sqrt(std::max(0.0, (1.0 - abar_prev) / (1.0 - abar))) *
          std::sqrt(std::max(0.0, 1.0 - abar / abar_prev));
      const double dir = std::sqrt(std::max(0.0, 1.0 - abar_prev - sigma_d * sigma_d));
      const double sqrt_abar = std::sqrt(abar);
      const double sqrt_abar_prev = std::sqrt(abar_prev);
      std::vector<float> noise;
      if (sigma_d > 0) {
        noise.resize(n);
        rng.fill_normal(noise);
      }
      for (size_t k = 0; k < n; ++k) {
        const double x0 = (double(zv[k]) - s1mabar * double(eps_hat[k])) / sqrt_abar;
        double znew = sqrt_abar_prev * x0 + dir * double(eps_hat[k]);
        if (sigma_d > 0) znew += sigma_d * double(noise[k]);
        zv[k] = float(znew);
      }
    } else {
      const double sigma2 = sched.posterior_vars[static_cast<size_t>(t_idx)];
      const double sigma = std::sqrt(sigma2);
      if (apply_guidance) {
        for (size_t b = 0; b < static_cast<size_t>(req.batch); ++b) {
          const double c = cfg.beta * alphas[b] * sigma2;
          if (c == 0) continue;
          for (size_t k = 0; k < per; ++k) {
            const size_t idx = b * per + k;
            mean[idx] -= c * double(grad[idx]);
          }
        }
      }
      std::vector<float> noise;
      if (level > 1) {
        noise.resize(n);
        rng.fill_normal(noise);
      }
      for (size_t k = 0; k < n; ++k) {
        zv[k] = float(level > 1 ? mean[k] + sigma * double(noise[k]) : mean[k]);
      }
    }

    tr.millis = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() -
                                                          wall0)
                    .count();
    if (cfg.collect_trace) res.trace.push_back(tr);
  }

  res.z0 = Tensor<float>(shape, std::move(zv));
  return res;
}

}  // namespace lcdg
