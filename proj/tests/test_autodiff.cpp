#include <doctest.h>

#include <cmath>

#include "gridda/finite_diff.hpp"
#include "gridda/gradcheck.hpp"
#include "gridda/ops.hpp"

using namespace gridda;
using namespace gridda::ad;

TEST_CASE("conv2d shape arithmetic") {
  GraphD g;
  auto x = g.input(TensorD({1, 5, 8, 8}), false);
  auto w = g.input(TensorD({16, 5, 3, 3}), false);
  auto y = ops::conv2d(x, w, 1, 1);
  CHECK(y.shape() == std::vector<int>{1, 16, 8, 8});

  auto up = ops::nearest_upsample2(g.input(TensorD({1, 4, 3, 3}), false));
  CHECK(up.shape() == std::vector<int>{1, 4, 6, 6});
}

TEST_CASE("relu values") {
  GraphD g;
  auto x = g.input(TensorD({3}, {-1.0, 0.0, 2.0}), false);
  auto y = ops::relu(x);
  CHECK(y.tensor()[0] == 0.0);
  CHECK(y.tensor()[1] == 0.0);
  CHECK(y.tensor()[2] == 2.0);
}

TEST_CASE("conv2d shape mismatch rejected with op name") {
  GraphD g;
  auto x = g.input(TensorD({1, 4, 8, 8}), false);
  auto w = g.input(TensorD({16, 5, 3, 3}), false);
  CHECK_THROWS_WITH_AS(ops::conv2d(x, w, 1, 1), doctest::Contains("conv2d"), ShapeError);
}

TEST_CASE("non-finite forward output rejected") {
  GraphD g;
  auto x = g.input(TensorD({2}, {-1.0, 700.0}), false);
  CHECK_THROWS_AS(ops::exp(x), NumericError);
  auto z = g.input(TensorD({1}, {0.0}), false);
  CHECK_THROWS_AS(ops::log(z), NumericError);
}

TEST_CASE("backward of sum(w * x) gives grad(w) = x") {
  GraphD g;
  Parameter<double> w("w", TensorD({4}, {1.0, 2.0, 3.0, 4.0}));
  TensorD xv({4}, {0.5, -1.5, 2.0, 0.25});
  auto loss = ops::reduce_sum(ops::mul(g.leaf(w), g.constant(xv)));
  g.backward(loss);
  for (int i = 0; i < 4; ++i) CHECK(w.grad[i] == doctest::Approx(xv[i]).epsilon(1e-12));
}

TEST_CASE("sigmoid scalar gradient at 0 is 1/4") {
  GraphD g;
  Parameter<double> s("s", TensorD::scalar(0.0));
  auto loss = ops::sigmoid(g.leaf(s));
  g.backward(loss);
  CHECK(s.grad[0] == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("backward called twice is rejected") {
  GraphD g;
  Parameter<double> w("w", TensorD::scalar(1.0));
  auto loss = ops::square(g.leaf(w));
  g.backward(loss);
  CHECK_THROWS_AS(g.backward(loss), Error);
}

TEST_CASE("backward requires scalar loss") {
  GraphD g;
  Parameter<double> w("w", TensorD({2}, {1.0, 2.0}));
  auto y = ops::square(g.leaf(w));
  CHECK_THROWS_AS(g.backward(y), ShapeError);
}

TEST_CASE("unreachable parameters keep zero gradient") {
  GraphD g;
  Parameter<double> w("w", TensorD::scalar(1.0));
  Parameter<double> u("u", TensorD::scalar(5.0));
  auto loss = ops::square(g.leaf(w));
  g.leaf(u);  // bound but not part of the loss
  g.backward(loss);
  CHECK(u.grad[0] == 0.0);
  CHECK(w.grad[0] == doctest::Approx(2.0));
}

TEST_CASE("grad_reverse forward identity and sign flip") {
  GraphD g;
  Parameter<double> x("x", TensorD({2}, {1.5, -2.0}));
  auto y = ops::grad_reverse(g.leaf(x), 1.0);
  CHECK(y.tensor()[0] == 1.5);
  CHECK(y.tensor()[1] == -2.0);

  // upstream grad (1, 2, -3) with lambda=1 -> incoming (-1, -2, 3)
  GraphD g2;
  Parameter<double> x2("x", TensorD({3}, {0.1, 0.2, 0.3}));
  TensorD w({3}, {1.0, 2.0, -3.0});
  auto loss = ops::reduce_sum(ops::mul(ops::grad_reverse(g2.leaf(x2), 1.0), g2.constant(w)));
  g2.backward(loss);
  CHECK(x2.grad[0] == doctest::Approx(-1.0));
  CHECK(x2.grad[1] == doctest::Approx(-2.0));
  CHECK(x2.grad[2] == doctest::Approx(3.0));
}

TEST_CASE("grad_reverse with lambda 0 blocks the gradient") {
  GraphD g;
  Parameter<double> x("x", TensorD({3}, {0.1, 0.2, 0.3}));
  TensorD w({3}, {1.0, 2.0, -3.0});
  auto loss = ops::reduce_sum(ops::mul(ops::grad_reverse(g.leaf(x), 0.0), g.constant(w)));
  g.backward(loss);
  for (int i = 0; i < 3; ++i) CHECK(x.grad[i] == 0.0);
}

TEST_CASE("grad_reverse composes as -lambda times the plain gradient") {
  Rng rng(11);
  std::uniform_real_distribution<double> dist(-1, 1);
  TensorD base({6});
  for (int i = 0; i < 6; ++i) base[i] = dist(rng);
  const double lambda = 0.7;

  Parameter<double> x("x", base);
  GraphD g;
  auto loss = ops::reduce_sum(ops::square(ops::grad_reverse(g.leaf(x), lambda)));
  g.backward(loss);

  Parameter<double> x2("x", base);
  GraphD g2;
  auto loss2 = ops::reduce_sum(ops::square(g2.leaf(x2)));
  g2.backward(loss2);

  for (int i = 0; i < 6; ++i) CHECK(x.grad[i] == doctest::Approx(-lambda * x2.grad[i]).epsilon(1e-12));
}

TEST_CASE("finite differences: identity loss sum(x) is exact") {
  Parameter<double> x("x", TensorD({5}, {1.0, -2.0, 0.5, 3.0, -0.25}));
  auto r = finite_diff_check({&x}, [&](GraphD& g) { return ops::reduce_sum(g.leaf(x)); }, 1e-3);
  CHECK(r.max_rel_err == doctest::Approx(0.0).epsilon(1e-10));
}

TEST_CASE("finite differences: random small conv net under 1e-4") {
  Rng rng(3);
  std::uniform_real_distribution<double> dist(-1, 1);
  auto rand_tensor = [&](std::vector<int> shape) {
    TensorD t(std::move(shape));
    for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = dist(rng);
    return t;
  };
  Parameter<double> x("x", rand_tensor({1, 3, 6, 6}));
  Parameter<double> k1("k1", rand_tensor({4, 3, 3, 3}));
  Parameter<double> b1("b1", rand_tensor({4}));
  Parameter<double> k2("k2", rand_tensor({2, 4, 3, 3}));
  auto build = [&](GraphD& g) {
    auto h = ops::sigmoid(ops::conv2d(g.leaf(x), g.leaf(k1), g.leaf(b1), 1, 1));
    auto y = ops::conv2d(h, g.leaf(k2), 2, 1);
    return ops::reduce_mean(ops::square(y));
  };
  auto r = finite_diff_check({&x, &k1, &b1, &k2}, build, 1e-3);
  CHECK(r.max_rel_err < 1e-4);
}

TEST_CASE("linearity: backward of a sum equals sum of backwards") {
  Rng rng(5);
  std::uniform_real_distribution<double> dist(-1, 1);
  TensorD base({8});
  for (int i = 0; i < 8; ++i) base[i] = dist(rng);

  auto loss_a = [](GraphD& g, Parameter<double>& p) { return ops::reduce_sum(ops::square(g.leaf(p))); };
  auto loss_b = [](GraphD& g, Parameter<double>& p) { return ops::reduce_mean(ops::sigmoid(g.leaf(p))); };

  Parameter<double> x("x", base);
  {
    GraphD g;
    g.backward(ops::add(loss_a(g, x), loss_b(g, x)));
  }
  Parameter<double> xa("xa", base), xb("xb", base);
  {
    GraphD g;
    g.backward(loss_a(g, xa));
  }
  {
    GraphD g;
    g.backward(loss_b(g, xb));
  }
  for (int i = 0; i < 8; ++i) CHECK(x.grad[i] == doctest::Approx(xa.grad[i] + xb.grad[i]).epsilon(1e-6));
}

TEST_CASE("repeated forward+backward is bit-identical") {
  Rng rng(17);
  std::uniform_real_distribution<float> dist(-1, 1);
  Tensor<float> xv({2, 3, 8, 8}), kv({4, 3, 3, 3});
  for (std::int64_t i = 0; i < xv.numel(); ++i) xv[i] = dist(rng);
  for (std::int64_t i = 0; i < kv.numel(); ++i) kv[i] = dist(rng);

  auto run = [&](Tensor<float>& grad_out) {
    Parameter<float> k("k", kv);
    GraphF g;
    auto y = ops::relu(ops::conv2d(g.input(xv, false), g.leaf(k), 1, 1));
    auto loss = ops::reduce_sum(ops::square(y));
    g.backward(loss);
    grad_out = k.grad;
    return loss.item();
  };
  Tensor<float> g1, g2;
  const float l1 = run(g1);
  const float l2 = run(g2);
  CHECK(l1 == l2);
  for (std::int64_t i = 0; i < g1.numel(); ++i) CHECK(g1[i] == g2[i]);
}

TEST_CASE("max_over_axis forward and gradient routing") {
  GraphD g;
  Parameter<double> x("x", TensorD({2, 3}, {1.0, 5.0, 2.0, 7.0, 0.0, 7.0}));
  auto y = ops::max_over_axis(g.leaf(x), 1);
  CHECK(y.tensor()[0] == 5.0);
  CHECK(y.tensor()[1] == 7.0);
  auto loss = ops::reduce_sum(y);
  g.backward(loss);
  // ties route to the first maximum
  CHECK(x.grad[1] == 1.0);
  CHECK(x.grad[3] == 1.0);
  CHECK(x.grad[5] == 0.0);
}

TEST_CASE("primitive battery vs central differences") {
  // small battery here; the acceptance suite runs the full one
  auto suite = gridda::ad::gradcheck::run_suite(2);
  for (const auto& c : suite.cases) {
    INFO(c.name, " err=", c.max_rel_err);
    CHECK(c.max_rel_err < 1e-3);
  }
  CHECK(suite.primitives_max < 1e-4);
  CHECK(suite.end_to_end < 1e-3);
}
