#include "lcdg/diffusion.hpp"

#include <cmath>

namespace lcdg {

NoiseSchedule make_schedule(int T, double beta_start, double beta_end) {
  if (T < 2) throw ValueError("make_schedule: T must be >= 2, got " + std::to_string(T));
  if (!(beta_start > 0) || !(beta_end < 1) || beta_start > beta_end)
    throw ValueError("make_schedule: need 0 < beta_start <= beta_end < 1");
  NoiseSchedule s;
  s.T = T;
  s.betas.resize(size_t(T));
  s.alphas.resize(size_t(T));
  s.alpha_bars.resize(size_t(T));
  s.posterior_vars.resize(size_t(T));
  double bar = 1.0;
  for (int t = 0; t < T; ++t) {
    double beta = beta_start + (beta_end - beta_start) * double(t) / double(T - 1);
    s.betas[size_t(t)] = beta;
    s.alphas[size_t(t)] = 1.0 - beta;
    double prev_bar = bar;
    bar *= 1.0 - beta;
    s.alpha_bars[size_t(t)] = bar;
    s.posterior_vars[size_t(t)] = t == 0 ? beta : beta * (1.0 - prev_bar) / (1.0 - bar);
  }
  return s;
}

template <typename T>
Tensor<T> q_sample(const Tensor<T>& z0, const std::vector<int>& t, const Tensor<T>& eps,
                   const NoiseSchedule& sched) {
  if (z0.shape() != eps.shape())
    throw ShapeError("q_sample: z0 " + shape_str(z0.shape()) + " and eps " +
                     shape_str(eps.shape()) + " differ");
  if (z0.ndim() < 1) throw ShapeError("q_sample: z0 must have a batch dimension");
  int N = z0.dim(0);
  if (int(t.size()) != N)
    throw ShapeError("q_sample: " + std::to_string(t.size()) + " timesteps for batch of " +
                     std::to_string(N));
  for (int ti : t)
    if (ti < 0 || ti >= sched.T)
      throw ValueError("q_sample: timestep " + std::to_string(ti) + " outside [0," +
                       std::to_string(sched.T) + ")");
  int64_t per = z0.numel() / N;
  std::vector<T> out(z0.values().size());
  const auto& zv = z0.values();
  const auto& ev = eps.values();
  for (int n = 0; n < N; ++n) {
    double abar = sched.alpha_bars[size_t(t[size_t(n)])];
    T a = T(std::sqrt(abar)), b = T(std::sqrt(1.0 - abar));
    const T* pz = zv.data() + int64_t(n) * per;
    const T* pe = ev.data() + int64_t(n) * per;
    T* po = out.data() + int64_t(n) * per;
    for (int64_t i = 0; i < per; ++i) po[i] = a * pz[i] + b * pe[i];
  }
  return Tensor<T>(z0.shape(), std::move(out));
}

int resample_timestep(int t_in, int T, double n) {
  if (T < 2) throw ValueError("resample_timestep: T must be >= 2");
  if (t_in < 1 || t_in > T)
    throw ValueError("resample_timestep: t_in " + std::to_string(t_in) + " outside [1," +
                     std::to_string(T) + "]");
  if (!(n > 0)) throw ValueError("resample_timestep: exponent must be positive");
  double mapped = (1.0 - std::pow(double(t_in) / double(T), n)) * double(T);
  int t_hat = int(std::lround(mapped));
  if (t_hat < 0) t_hat = 0;
  if (t_hat > T - 1) t_hat = T - 1;
  return t_hat;
}

int TimestepSampler::draw(RngStream& rng) const {
  if (T < 2) throw ValueError("TimestepSampler: T must be >= 2");
  if (mode == Mode::uniform) return int(rng.uniform_int(0, T - 1));
  return resample_timestep(int(rng.uniform_int(1, T)), T, n);
}

template <typename T>
Tensor<T> denoiser_loss_given(EpsModel<T>& model, const Tensor<T>& z0, const std::vector<int>& cls,
                              const std::vector<int>& t, const Tensor<T>& eps,
                              const NoiseSchedule& sched) {
  Tensor<T> zt = q_sample(z0, t, eps, sched);
  Tensor<T> pred = model.eps(zt, t, cls);
  return mse(pred, eps);
}

template <typename T>
Tensor<T> denoiser_loss(EpsModel<T>& model, const Tensor<T>& z0, const std::vector<int>& cls,
                        const NoiseSchedule& sched, RngStream& rng, double p_uncond) {
  int N = z0.dim(0);
  if (int(cls.size()) != N)
    throw ShapeError("denoiser_loss: " + std::to_string(cls.size()) + " class ids for batch of " +
                     std::to_string(N));
  std::vector<int> t(static_cast<size_t>(N));
  for (auto& ti : t) ti = int(rng.uniform_int(0, sched.T - 1));
  std::vector<T> noise(z0.values().size());
  rng.fill_normal(noise);
  Tensor<T> eps(z0.shape(), std::move(noise));
  std::vector<int> dropped = cls;
  for (auto& c : dropped)
    if (rng.uniform() < p_uncond) c = model.null_class();
  return denoiser_loss_given(model, z0, dropped, t, eps, sched);
}

template Tensor<float> q_sample(const Tensor<float>&, const std::vector<int>&,
                                const Tensor<float>&, const NoiseSchedule&);
template Tensor<double> q_sample(const Tensor<double>&, const std::vector<int>&,
                                 const Tensor<double>&, const NoiseSchedule&);
template Tensor<float> denoiser_loss_given(EpsModel<float>&, const Tensor<float>&,
                                           const std::vector<int>&, const std::vector<int>&,
                                           const Tensor<float>&, const NoiseSchedule&);
template Tensor<double> denoiser_loss_given(EpsModel<double>&, const Tensor<double>&,
                                            const std::vector<int>&, const std::vector<int>&,
                                            const Tensor<double>&, const NoiseSchedule&);
template Tensor<float> denoiser_loss(EpsModel<float>&, const Tensor<float>&,
                                     const std::vector<int>&, const NoiseSchedule&, RngStream&,
                                     double);
template Tensor<double> denoiser_loss(EpsModel<double>&, const Tensor<double>&,
                                      const std::vector<int>&, const NoiseSchedule&, RngStream&,
                                      double);

}  // namespace lcdg
