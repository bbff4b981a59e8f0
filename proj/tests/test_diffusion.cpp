#include <doctest.h>

#include <cmath>

#include "lcdg/diffusion.hpp"
#include "stat_utils.hpp"

using namespace lcdg;

TEST_CASE("schedule values for a two-step schedule") {
  auto s = make_schedule(2, 0.1, 0.1);
  CHECK(s.betas[0] == doctest::Approx(0.1));
  CHECK(s.betas[1] == doctest::Approx(0.1));
  CHECK(s.alpha_bars[0] == doctest::Approx(0.9));
  CHECK(s.alpha_bars[1] == doctest::Approx(0.81));
  CHECK(s.posterior_vars[0] == doctest::Approx(0.1));
  // beta * (1 - abar_prev) / (1 - abar)
  CHECK(s.posterior_vars[1] == doctest::Approx(0.1 * (1 - 0.9) / (1 - 0.81)));
}

TEST_CASE("schedule validation") {
  CHECK_THROWS_AS(make_schedule(1, 1e-4, 0.02), ValueError);
  CHECK_THROWS_AS(make_schedule(10, 0.0, 0.02), ValueError);
  CHECK_THROWS_AS(make_schedule(10, 0.03, 0.02), ValueError);
  CHECK_THROWS_AS(make_schedule(10, 1e-4, 1.0), ValueError);
}

TEST_CASE("cumulative product against an independent log-space route") {
  auto s = make_schedule(1000, 1e-4, 0.02);
  long double logsum = 0;
  for (int t = 0; t < 1000; ++t) {
    logsum += std::log1p(-(long double)s.betas[size_t(t)]);
    double ref = double(std::exp(logsum));
    CHECK(std::fabs(s.alpha_bars[size_t(t)] - ref) / ref < 1e-12);
  }
  // Monotone strictly decreasing, all in (0,1).
  for (int t = 0; t < 1000; ++t) {
    CHECK(s.alpha_bars[size_t(t)] > 0.0);
    CHECK(s.alpha_bars[size_t(t)] < 1.0);
    if (t) CHECK(s.alpha_bars[size_t(t)] < s.alpha_bars[size_t(t - 1)]);
  }
  CHECK(s.betas.front() == doctest::Approx(1e-4));
  CHECK(s.betas.back() == doctest::Approx(0.02));
}

TEST_CASE("q_sample closed form and validation") {
  auto s = make_schedule(1000, 1e-4, 0.02);
  Tensor<double> z0({2, 1, 2, 2}, {1, 2, 3, 4, -1, -2, -3, -4});
  Tensor<double> zero_eps = Tensor<double>::zeros({2, 1, 2, 2});
  auto zt = q_sample(z0, {10, 500}, zero_eps, s);
  for (int i = 0; i < 4; ++i) {
    CHECK(zt.values()[size_t(i)] ==
          doctest::Approx(std::sqrt(s.alpha_bars[10]) * z0.values()[size_t(i)]));
    CHECK(zt.values()[size_t(4 + i)] ==
          doctest::Approx(std::sqrt(s.alpha_bars[500]) * z0.values()[size_t(4 + i)]));
  }
  RngStream rng(1);
  Tensor<double> eps = Tensor<double>::randn({2, 1, 2, 2}, rng);
  auto z1 = q_sample(z0, {0, 0}, eps, s);
  for (int i = 0; i < 8; ++i)
    CHECK(z1.values()[size_t(i)] == doctest::Approx(std::sqrt(s.alpha_bars[0]) *
                                                        z0.values()[size_t(i)] +
                                                    std::sqrt(1 - s.alpha_bars[0]) *
                                                        eps.values()[size_t(i)]));
  CHECK_THROWS_AS(q_sample(z0, {0}, eps, s), ShapeError);
  CHECK_THROWS_AS(q_sample(z0, {0, 1000}, eps, s), ValueError);
}

TEST_CASE("forward process moments over Monte Carlo draws") {
  auto s = make_schedule(1000, 1e-4, 0.02);
  RngStream rng(17);
  const int kDraws = 100000;
  for (int t : {10, 500, 990}) {
    std::vector<double> zs(static_cast<size_t>(kDraws));
    double abar = s.alpha_bars[size_t(t)];
    for (int i = 0; i < kDraws; ++i) {
      // Unit-variance z0 with nonzero mean keeps both moments informative.
      double z0 = 0.5 + rng.normal();
      double eps = rng.normal();
      zs[size_t(i)] = std::sqrt(abar) * z0 + std::sqrt(1 - abar) * eps;
    }
    auto mv = lcdg_test::mean_var(zs);
    double want_var = abar * 1.0 + (1 - abar);
    double want_mean = std::sqrt(abar) * 0.5;
    CHECK(std::fabs(mv.var - want_var) / want_var < 0.02);
    CHECK(std::fabs(mv.mean - want_mean) < 4 * std::sqrt(want_var / kDraws));
  }
}

TEST_CASE("resample_timestep known values and validation") {
  // n = 1 is the exact complement.
  for (int t : {1, 250, 500, 999, 1000}) CHECK(resample_timestep(t, 1000, 1.0) == 1000 - t);
  // Quadratic curve pins a few representative points.
  CHECK(resample_timestep(500, 1000, 2.0) == 750);
  CHECK(resample_timestep(1000, 1000, 2.0) == 0);
  CHECK(resample_timestep(1, 1000, 2.0) == 999);  // clamped from 1000
  CHECK(resample_timestep(100, 1000, 2.0) == 990);
  CHECK_THROWS_AS(resample_timestep(0, 1000, 2.0), ValueError);
  CHECK_THROWS_AS(resample_timestep(1001, 1000, 2.0), ValueError);
  CHECK_THROWS_AS(resample_timestep(5, 1000, 0.0), ValueError);
}

TEST_CASE("resample_timestep properties") {
  for (double n : {1.0, 2.0, 3.0, 5.0}) {
    int prev = 1000;
    for (int t = 1; t <= 1000; ++t) {
      int th = resample_timestep(t, 1000, n);
      CHECK(th >= 0);
      CHECK(th <= 999);
      CHECK(th >= 1000 - t);  // late bias never maps below the complement
      CHECK(th <= prev);      // monotone non-increasing in t_in
      prev = th;
    }
  }
}

TEST_CASE("resampled draw law matches the mapping's distribution") {
  RngStream rng(23);
  TimestepSampler sampler{TimestepSampler::Mode::resampled, 2.0, 1000};
  const int kDraws = 30000;
  std::vector<int> draws(static_cast<size_t>(kDraws));
  for (auto& d : draws) d = sampler.draw(rng);
  auto exact = lcdg_test::resample_pushforward_cdf(1000, 2.0);
  CHECK(lcdg_test::ks_distance(draws, exact, 1000) < 0.03);
  // Away from the clamped boundary the continuous survival form applies too.
  auto cont = lcdg_test::resample_continuous_cdf(1000, 2.0);
  CHECK(lcdg_test::ks_distance(draws, cont, 950) < 0.03);
}

namespace {

// Echoes a fixed tensor regardless of input; stands in for a perfect oracle.
struct EchoModel : EpsModel<double> {
  Tensor<double> out;
  Tensor<double> eps(const Tensor<double>&, const std::vector<int>&,
                     const std::vector<int>&) override {
    return out;
  }
  int null_class() const override { return 0; }
};

}  // namespace

TEST_CASE("denoiser loss vanishes for a perfect prediction and is nonnegative") {
  auto s = make_schedule(100, 1e-4, 0.02);
  RngStream rng(5);
  Tensor<double> z0 = Tensor<double>::randn({3, 1, 4, 4}, rng);
  Tensor<double> eps = Tensor<double>::randn({3, 1, 4, 4}, rng);
  EchoModel model;
  model.out = eps;
  auto loss = denoiser_loss_given(model, z0, {0, 0, 0}, {5, 50, 99}, eps, s);
  CHECK(loss.item() == doctest::Approx(0.0));

  // Predicting zero leaves the full noise energy: mean eps^2 ~ 1.
  model.out = Tensor<double>::zeros({3, 1, 4, 4});
  RngStream rng2(6);
  double acc = 0;
  const int reps = 200;
  for (int r = 0; r < reps; ++r) {
    Tensor<double> e = Tensor<double>::randn({3, 1, 4, 4}, rng2);
    acc += denoiser_loss_given(model, z0, {0, 0, 0}, {5, 50, 99}, e, s).item();
  }
  CHECK(acc / reps == doctest::Approx(1.0).epsilon(0.1));
}
