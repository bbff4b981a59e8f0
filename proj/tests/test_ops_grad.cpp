#include <doctest.h>

#include <cmath>

#include "lcdg/ops.hpp"
#include "lcdg/rng.hpp"
#include "op_checks.hpp"

using namespace lcdg;
using lcdg_test::gradcheck;

TEST_CASE("finite-difference check of every op across seeds") {
  for (uint64_t seed = 1; seed <= 5; ++seed) {
    auto checks = lcdg_test::run_op_gradchecks(seed);
    for (const auto& c : checks) {
      INFO("op ", c.name, " seed ", seed, " analytic ", c.result.worst_analytic, " numeric ",
           c.result.worst_numeric);
      CHECK(c.result.max_rel < 1e-4);
    }
  }
}

TEST_CASE("conv2d identity kernel reproduces input") {
  RngStream rng(3);
  Tensor<float> x = Tensor<float>::randn({2, 3, 6, 6}, rng);
  Tensor<float> w = Tensor<float>::zeros({3, 3, 3, 3});
  for (int c = 0; c < 3; ++c) w.values()[size_t(((c * 3 + c) * 3 + 1) * 3 + 1)] = 1.f;
  auto y = conv2d(x, w, Tensor<float>(), 1, 1);
  REQUIRE(y.shape() == x.shape());
  for (size_t i = 0; i < x.values().size(); ++i)
    CHECK(y.values()[i] == doctest::Approx(x.values()[i]));
}

TEST_CASE("conv2d zero kernel with bias gives constant maps") {
  RngStream rng(4);
  Tensor<float> x = Tensor<float>::randn({1, 2, 5, 5}, rng);
  Tensor<float> w = Tensor<float>::zeros({4, 2, 3, 3});
  Tensor<float> b({4}, {0.5f, -1.f, 2.f, 0.f});
  auto y = conv2d(x, w, b, 1, 1);
  for (int o = 0; o < 4; ++o)
    for (int i = 0; i < 25; ++i)
      CHECK(y.values()[size_t(o * 25 + i)] == doctest::Approx(b.values()[size_t(o)]));
}

TEST_CASE("conv2d output shape formula over a parameter sweep") {
  RngStream rng(5);
  for (int h = 3; h <= 9; ++h)
    for (int k : {1, 3, 5})
      for (int s : {1, 2, 3})
        for (int p : {0, 1, 2}) {
          if (h + 2 * p < k) continue;
          Tensor<float> x = Tensor<float>::randn({1, 2, h, h}, rng);
          Tensor<float> w = Tensor<float>::randn({3, 2, k, k}, rng, 0.2);
          auto y = conv2d(x, w, Tensor<float>(), s, p);
          int expect = (h + 2 * p - k) / s + 1;
          CHECK(y.dim(2) == expect);
          CHECK(y.dim(3) == expect);
        }
}

TEST_CASE("conv2d rejects mismatched channels and oversized kernels") {
  Tensor<float> x = Tensor<float>::zeros({1, 3, 8, 8});
  Tensor<float> w = Tensor<float>::zeros({4, 2, 3, 3});
  CHECK_THROWS_AS(conv2d(x, w, Tensor<float>(), 1, 1), ShapeError);
  Tensor<float> wbig = Tensor<float>::zeros({4, 3, 11, 11});
  CHECK_THROWS_AS(conv2d(x, wbig, Tensor<float>(), 1, 0), ShapeError);
}

TEST_CASE("linear identity weights reproduce input") {
  Tensor<float> x({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor<float> w = Tensor<float>::zeros({3, 3});
  for (int i = 0; i < 3; ++i) w.values()[size_t(i * 3 + i)] = 1.f;
  auto y = linear(x, w, Tensor<float>());
  CHECK(y.values() == x.values());
}

TEST_CASE("activation values") {
  Tensor<double> x({4}, {-2.0, 0.0, 1.0, 3.0});
  auto r = relu(x);
  CHECK(r.values() == std::vector<double>{0, 0, 1, 3});
  auto s = silu(x);
  CHECK(s.values()[1] == doctest::Approx(0.0));
  CHECK(s.values()[2] == doctest::Approx(1.0 / (1.0 + std::exp(-1.0))));
  CHECK(s.values()[0] == doctest::Approx(-2.0 / (1.0 + std::exp(2.0))));
}

TEST_CASE("batchnorm train normalizes per channel") {
  RngStream rng(6);
  Tensor<double> x = Tensor<double>::randn({4, 3, 5, 5}, rng, 2.5);
  Tensor<double> g = Tensor<double>::full({3}, 1.0);
  Tensor<double> b = Tensor<double>::zeros({3});
  BatchNormState<double> st;
  auto y = batchnorm2d(x, g, b, st, NormMode::train);
  int64_t cnt = 4 * 5 * 5;
  for (int c = 0; c < 3; ++c) {
    double m = 0, v = 0;
    for (int n = 0; n < 4; ++n)
      for (int i = 0; i < 25; ++i) m += y.values()[size_t((n * 3 + c) * 25 + i)];
    m /= double(cnt);
    for (int n = 0; n < 4; ++n)
      for (int i = 0; i < 25; ++i) {
        double d = y.values()[size_t((n * 3 + c) * 25 + i)] - m;
        v += d * d;
      }
    v /= double(cnt);
    CHECK(m == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(v == doctest::Approx(1.0).epsilon(1e-3));
  }
}

TEST_CASE("batchnorm constant channel maps to zero in train mode") {
  Tensor<double> x = Tensor<double>::full({2, 1, 4, 4}, 3.7);
  Tensor<double> g = Tensor<double>::full({1}, 1.0);
  Tensor<double> b = Tensor<double>::zeros({1});
  BatchNormState<double> st;
  auto y = batchnorm2d(x, g, b, st, NormMode::train);
  for (double v : y.values()) CHECK(v == doctest::Approx(0.0));
}

TEST_CASE("batchnorm eval before any train step is an error") {
  Tensor<double> x = Tensor<double>::zeros({1, 2, 3, 3});
  Tensor<double> g = Tensor<double>::full({2}, 1.0);
  Tensor<double> b = Tensor<double>::zeros({2});
  BatchNormState<double> st;
  CHECK_THROWS_AS(batchnorm2d(x, g, b, st, NormMode::eval), ValueError);
}

TEST_CASE("upsample nearest replicates pixels and scale 1 is identity") {
  Tensor<float> x({1, 1, 2, 2}, {1, 2, 3, 4});
  auto y = upsample(x, 2, UpsampleMode::nearest);
  std::vector<float> expect{1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4};
  CHECK(y.values() == expect);
  auto idn = upsample(x, 1, UpsampleMode::nearest);
  CHECK(idn.values() == x.values());
  auto idb = upsample(x, 1, UpsampleMode::bilinear);
  CHECK(idb.values() == x.values());
}

TEST_CASE("concat validates non-axis dims") {
  Tensor<float> a = Tensor<float>::zeros({1, 2, 4, 4});
  Tensor<float> b = Tensor<float>::zeros({1, 3, 4, 4});
  auto y = concat<float>({a, b}, 1);
  CHECK(y.shape() == Shape{1, 5, 4, 4});
  Tensor<float> bad = Tensor<float>::zeros({1, 3, 5, 4});
  CHECK_THROWS_AS(concat<float>({a, bad}, 1), ShapeError);
}

TEST_CASE("mse value and closed-form gradient") {
  Tensor<double> a({2}, {1.0, 3.0});
  Tensor<double> b({2}, {0.0, 1.0});
  auto l = mse(a, b);
  CHECK(l.item() == doctest::Approx((1.0 + 4.0) / 2));

  // loss = mse(Ax, c): dL/dx = 2/N * A^T (Ax - c)
  RngStream rng(8);
  Tensor<double> A = Tensor<double>::randn({3, 4}, rng);
  Tensor<double> x = Tensor<double>::randn({1, 3}, rng);
  Tensor<double> c = Tensor<double>::randn({1, 4}, rng);
  x.set_requires_grad(true);
  auto loss = mse(linear(x, A, Tensor<double>()), c);
  loss.backward();
  // Independent evaluation of the closed form.
  std::vector<double> ax(4, 0.0);
  for (int j = 0; j < 4; ++j)
    for (int i = 0; i < 3; ++i) ax[size_t(j)] += x.values()[size_t(i)] * A.values()[size_t(i * 4 + j)];
  for (int j = 0; j < 4; ++j) ax[size_t(j)] -= c.values()[size_t(j)];
  for (int i = 0; i < 3; ++i) {
    double gi = 0;
    for (int j = 0; j < 4; ++j) gi += A.values()[size_t(i * 4 + j)] * ax[size_t(j)];
    gi *= 2.0 / 4.0;
    CHECK(x.grad()[size_t(i)] == doctest::Approx(gi).epsilon(1e-6));
  }
}

TEST_CASE("gradients are bit-deterministic across repeat runs") {
  RngStream rng(11);
  Tensor<float> x = Tensor<float>::randn({2, 3, 8, 8}, rng);
  Tensor<float> w = Tensor<float>::randn({4, 3, 3, 3}, rng, 0.3);
  std::vector<float> g1, g2;
  for (int rep = 0; rep < 2; ++rep) {
    Tensor<float> xr = x.detach();
    Tensor<float> wr = w.detach();
    xr.set_requires_grad(true);
    wr.set_requires_grad(true);
    auto loss = mse(silu(conv2d(xr, wr, Tensor<float>(), 1, 1)), Tensor<float>::zeros({2, 4, 8, 8}));
    loss.backward();
    auto& dst = rep == 0 ? g1 : g2;
    dst = xr.grad();
    dst.insert(dst.end(), wr.grad().begin(), wr.grad().end());
  }
  CHECK(g1 == g2);
}
