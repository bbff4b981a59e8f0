#pragma once

// Finite-difference gradient oracle. Uses only forward evaluations, so it is
// independent of the reverse-mode engine it checks.

#include <cmath>
#include <functional>
#include <vector>

#include "lcdg/tensor.hpp"

namespace lcdg_test {

struct GradCheckResult {
  double max_rel = 0;
  double max_abs = 0;
  double worst_analytic = 0;
  double worst_numeric = 0;
};

// make_loss must rebuild the scalar loss from the given leaves on every call.
inline GradCheckResult gradcheck(const std::function<lcdg::Tensor<double>()>& make_loss,
                                 std::vector<lcdg::Tensor<double>> leaves, double h = 1e-5) {
  using lcdg::Tensor;
  for (auto& p : leaves) p.zero_grad();
  Tensor<double> loss = make_loss();
  loss.backward();

  std::vector<std::vector<double>> analytic;
  for (auto& p : leaves) analytic.push_back(p.grad());

  GradCheckResult r;
  for (size_t pi = 0; pi < leaves.size(); ++pi) {
    auto& vals = leaves[pi].values();
    for (size_t i = 0; i < vals.size(); ++i) {
      double v = vals[i];
      vals[i] = v + h;
      double lp = make_loss().item();
      vals[i] = v - h;
      double lm = make_loss().item();
      vals[i] = v;
      double fd = (lp - lm) / (2 * h);
      double an = analytic[pi][i];
      double abs_err = std::fabs(an - fd);
      double denom = std::max({std::fabs(an), std::fabs(fd), 1e-6});
      double rel = abs_err / denom;
      if (rel > r.max_rel) {
        r.max_rel = rel;
        r.worst_analytic = an;
        r.worst_numeric = fd;
      }
      r.max_abs = std::max(r.max_abs, abs_err);
    }
  }
  return r;
}

}  // namespace lcdg_test
