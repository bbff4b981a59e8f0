#pragma once

// Statistical comparison helpers shared by unit and acceptance suites.

#include <algorithm>
#include <cmath>
#include <vector>

#include "lcdg/diffusion.hpp"

namespace lcdg_test {

struct MeanVar {
  double mean = 0;
  double var = 0;
};

inline MeanVar mean_var(const std::vector<double>& xs) {
  MeanVar r;
  for (double x : xs) r.mean += x;
  r.mean /= double(xs.size());
  for (double x : xs) r.var += (x - r.mean) * (x - r.mean);
  r.var /= double(xs.size() - 1);
  return r;
}

// Exact distribution of resample_timestep over a uniform draw t_in in [1,T]:
// cdf[x] = P(t_hat <= x) for integer x in [0, T-1].
inline std::vector<double> resample_pushforward_cdf(int T, double n) {
  std::vector<double> pmf(static_cast<size_t>(T), 0.0);
  for (int t_in = 1; t_in <= T; ++t_in)
    pmf[size_t(lcdg::resample_timestep(t_in, T, n))] += 1.0 / double(T);
  std::vector<double> cdf(static_cast<size_t>(T));
  double acc = 0;
  for (int x = 0; x < T; ++x) {
    acc += pmf[size_t(x)];
    cdf[size_t(x)] = acc;
  }
  return cdf;
}

// KS distance between integer draws in [0, T-1] and a reference cdf given at
// each integer. x_hi limits the comparison range (exclusive; pass T for all).
inline double ks_distance(const std::vector<int>& draws, const std::vector<double>& cdf,
                          int x_hi) {
  std::vector<int> counts(cdf.size(), 0);
  for (int d : draws) counts[size_t(d)]++;
  double acc = 0, worst = 0;
  for (int x = 0; x < x_hi; ++x) {
    acc += double(counts[size_t(x)]) / double(draws.size());
    worst = std::max(worst, std::fabs(acc - cdf[size_t(x)]));
  }
  return worst;
}

// Continuous-form reference implied by the resampling map: survival
// S(x) = (1 - x/T)^(1/n), i.e. cdf F(x) = 1 - S(x).
inline std::vector<double> resample_continuous_cdf(int T, double n) {
  std::vector<double> cdf(static_cast<size_t>(T));
  for (int x = 0; x < T; ++x)
    cdf[size_t(x)] = 1.0 - std::pow(1.0 - double(x) / double(T), 1.0 / n);
  return cdf;
}

}  // namespace lcdg_test
