#pragma once

// One finite-difference pass over every differentiable op at a given seed.
// Shared by the unit suite and the acceptance gate.

#include <algorithm>
#include <string>
#include <vector>

#include "gradcheck.hpp"
#include "lcdg/ops.hpp"
#include "lcdg/rng.hpp"

namespace lcdg_test {

struct OpCheck {
  std::string name;
  GradCheckResult result;
};

inline std::vector<OpCheck> run_op_gradchecks(uint64_t seed) {
  using namespace lcdg;
  using Td = Tensor<double>;
  RngStream rng(seed);
  std::vector<OpCheck> out;

  auto leaf = [&](Shape s, double scale = 1.0) {
    Td t = Td::randn(s, rng, scale);
    t.set_requires_grad(true);
    return t;
  };
  auto weighted = [&](Td y) {
    // Project to a scalar with fixed random weights so every output element
    // influences the loss.
    RngStream wrng(splitmix64(0xabcdef ^ y.numel()));
    Td w = Td::randn(y.shape(), wrng);
    return sum(mul(y, w));
  };

  {
    Td a = leaf({3, 4}), b = leaf({3, 4});
    out.push_back({"add", gradcheck([&] { return weighted(add(a, b)); }, {a, b})});
  }
  {
    Td a = leaf({3, 4}), b = leaf({3, 4});
    out.push_back({"sub", gradcheck([&] { return weighted(sub(a, b)); }, {a, b})});
  }
  {
    Td a = leaf({3, 4}), b = leaf({3, 4});
    out.push_back({"mul", gradcheck([&] { return weighted(mul(a, b)); }, {a, b})});
  }
  {
    Td a = leaf({2, 5});
    out.push_back({"scalar_mul", gradcheck([&] { return weighted(scalar_mul(a, 1.7)); }, {a})});
  }
  {
    Td x = leaf({2, 3, 4, 4}), e = leaf({2, 3});
    out.push_back({"add_rowwise", gradcheck([&] { return weighted(add_rowwise(x, e)); }, {x, e})});
  }
  {
    // Keep values away from the relu kink where the derivative jumps.
    Td x = leaf({4, 6});
    for (auto& v : x.values())
      if (std::fabs(v) < 0.05) v = v < 0 ? v - 0.1 : v + 0.1;
    out.push_back({"relu", gradcheck([&] { return weighted(relu(x)); }, {x})});
  }
  {
    Td x = leaf({4, 6});
    out.push_back({"silu", gradcheck([&] { return weighted(silu(x)); }, {x})});
  }
  {
    Td a = leaf({2, 2, 3, 3}), b = leaf({2, 3, 3, 3}), c = leaf({2, 1, 3, 3});
    out.push_back({"concat", gradcheck(
        [&] { return weighted(concat<double>({a, b, c}, 1)); }, {a, b, c})});
  }
  {
    Td x = leaf({3, 4}), w = leaf({4, 5}, 0.5), b = leaf({5}, 0.5);
    out.push_back({"linear", gradcheck([&] { return weighted(linear(x, w, b)); }, {x, w, b})});
  }
  {
    Td x = leaf({2, 3, 6, 6}), w = leaf({4, 3, 3, 3}, 0.4), b = leaf({4}, 0.4);
    out.push_back({"conv2d_s1p1", gradcheck(
        [&] { return weighted(conv2d(x, w, b, 1, 1)); }, {x, w, b})});
  }
  {
    Td x = leaf({2, 2, 7, 7}), w = leaf({3, 2, 3, 3}, 0.4), b = leaf({3}, 0.4);
    out.push_back({"conv2d_s2p0", gradcheck(
        [&] { return weighted(conv2d(x, w, b, 2, 0)); }, {x, w, b})});
  }
  {
    Td x = leaf({2, 3, 5, 5}), w = leaf({2, 3, 1, 1}, 0.5);
    out.push_back({"conv2d_1x1_nobias", gradcheck(
        [&] { return weighted(conv2d(x, w, Td(), 1, 0)); }, {x, w})});
  }
  {
    Td x = leaf({3, 2, 4, 4}), g = leaf({2}, 0.5), b = leaf({2}, 0.5);
    for (auto& v : g.values()) v += 1.0;
    BatchNormState<double> st;
    out.push_back({"batchnorm_train", gradcheck(
        [&] { return weighted(batchnorm2d(x, g, b, st, NormMode::train)); }, {x, g, b})});
  }
  {
    Td x = leaf({3, 2, 4, 4}), g = leaf({2}, 0.5), b = leaf({2}, 0.5);
    for (auto& v : g.values()) v += 1.0;
    BatchNormState<double> st;
    {
      NoGradGuard ng;
      Td warm = Td::randn({4, 2, 4, 4}, rng);
      batchnorm2d(warm, g, b, st, NormMode::train);
    }
    out.push_back({"batchnorm_eval", gradcheck(
        [&] { return weighted(batchnorm2d(x, g, b, st, NormMode::eval)); }, {x, g, b})});
  }
  {
    Td x = leaf({2, 2, 3, 3});
    out.push_back({"upsample_nearest", gradcheck(
        [&] { return weighted(upsample(x, 2, UpsampleMode::nearest)); }, {x})});
  }
  {
    Td x = leaf({2, 2, 3, 3});
    out.push_back({"upsample_bilinear", gradcheck(
        [&] { return weighted(upsample(x, 3, UpsampleMode::bilinear)); }, {x})});
  }
  {
    Td table = leaf({5, 4});
    std::vector<int> ids{0, 3, 3, 1};
    out.push_back({"embedding_lookup", gradcheck(
        [&] { return weighted(embedding_lookup(table, ids)); }, {table})});
  }
  {
    Td a = leaf({3, 5}), b = leaf({3, 5});
    out.push_back({"mse", gradcheck([&] { return mse(a, b); }, {a, b})});
  }
  {
    Td x = leaf({4, 3});
    out.push_back({"sum", gradcheck([&] { return sum(x); }, {x})});
  }
  {
    Td x = leaf({2, 3, 4, 5});
    out.push_back(
        {"global_avg_pool2d", gradcheck([&] { return weighted(global_avg_pool2d(x)); }, {x})});
  }
  {
    Td logits = leaf({4, 5});
    std::vector<int> labels{0, 2, 4, 1};
    out.push_back({"softmax_cross_entropy", gradcheck(
        [&] { return softmax_cross_entropy(logits, labels); }, {logits})});
  }
  return out;
}

inline double worst_rel_err(const std::vector<OpCheck>& checks, std::string* worst_name = nullptr) {
  double worst = 0;
  for (const auto& c : checks)
    if (c.result.max_rel > worst) {
      worst = c.result.max_rel;
      if (worst_name) *worst_name = c.name;
    }
  return worst;
}

}  // namespace lcdg_test
