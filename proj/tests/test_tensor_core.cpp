#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "hpl/errors.hpp"
#include "hpl/layers.hpp"
#include "hpl/tensor.hpp"

using namespace hpl;

namespace {

AffineLayer make_layer(std::vector<std::size_t> wshape, std::vector<double> w,
                       std::vector<double> b) {
  AffineLayer l;
  l.weights = Tensor(std::move(wshape), std::move(w));
  l.bias = Tensor({b.size()}, std::move(b));
  return l;
}

AffineTanhStack random_stack(Rng& rng, std::vector<std::size_t> sizes) {
  AffineTanhStack stack;
  for (std::size_t i = 0; i + 1 < sizes.size(); ++i) {
    AffineLayer l;
    l.weights = Tensor({sizes[i + 1], sizes[i]});
    l.bias = Tensor({sizes[i + 1]});
    for (double& v : l.weights.data) v = rng.uniform(-0.8, 0.8);
    for (double& v : l.bias.data) v = rng.uniform(-0.3, 0.3);
    stack.layers.push_back(std::move(l));
  }
  return stack;
}

double rel_err(double a, double b) {
  const double scale = std::max({std::abs(a), std::abs(b), 1e-6});
  return std::abs(a - b) / scale;
}

}  // namespace

TEST_CASE("tensor shape validation") {
  CHECK_THROWS_AS(Tensor({2, 3}, {1.0, 2.0}), ShapeError);
  Tensor t({2, 2}, {1, 2, 3, 4});
  CHECK(t.size() == 4);
  CHECK(shape_product({3, 4, 5}) == 60);
}

TEST_CASE("affine_forward examples") {
  // identity
  auto id2 = make_layer({2, 2}, {1, 0, 0, 1}, {0, 0});
  Tensor x({2}, {1, 2});
  auto y = affine_forward(x, id2);
  CHECK(y[0] == 1.0);
  CHECK(y[1] == 2.0);

  // zero input passes the bias through
  auto l = make_layer({2, 2}, {5, -2, 7, 9}, {3, -1});
  auto z = affine_forward(Tensor({2}, {0, 0}), l);
  CHECK(z[0] == 3.0);
  CHECK(z[1] == -1.0);

  // hand matrix multiply: [[1,2],[3,4]] . [1,1] = [3,7]
  auto m = make_layer({2, 2}, {1, 2, 3, 4}, {0, 0});
  auto r = affine_forward(Tensor({2}, {1, 1}), m);
  CHECK(r[0] == doctest::Approx(3.0));
  CHECK(r[1] == doctest::Approx(7.0));

  CHECK_THROWS_AS(affine_forward(Tensor({3}, {1, 2, 3}), m), ShapeError);
}

TEST_CASE("affine_forward linearity") {
  Rng rng(99);
  auto l = make_layer({3, 4},
                      {0.3, -1.2, 0.5, 0.7, 1.1, 0.2, -0.4, 0.9, -0.6, 0.8,
                       1.3, -0.2},
                      {0.4, -0.1, 0.25});
  for (int rep = 0; rep < 20; ++rep) {
    Tensor x({4}), y({4});
    for (auto& v : x.data) v = rng.uniform(-2, 2);
    for (auto& v : y.data) v = rng.uniform(-2, 2);
    const double a = rng.uniform(-2, 2), b = rng.uniform(-2, 2);
    Tensor mix({4});
    for (std::size_t i = 0; i < 4; ++i) mix[i] = a * x[i] + b * y[i];
    const auto fm = affine_forward(mix, l);
    const auto fx = affine_forward(x, l);
    const auto fy = affine_forward(y, l);
    for (std::size_t o = 0; o < 3; ++o) {
      const double expected = a * fx[o] + b * fy[o] - (a + b - 1.0) * l.bias[o];
      CHECK(fm[o] == doctest::Approx(expected).epsilon(1e-9));
    }
  }
}

TEST_CASE("tanh_forward examples and range") {
  auto z = tanh_forward(Tensor({1}, {0.0}));
  CHECK(z[0] == 0.0);

  auto sat = tanh_forward(Tensor({1}, {20.0}));
  CHECK(std::abs(sat[0] - 1.0) < 1e-9);

  auto mid = tanh_forward(Tensor({1}, {0.5}));
  CHECK(mid[0] == doctest::Approx(std::tanh(0.5)).epsilon(1e-12));
  CHECK(mid[0] == doctest::Approx(0.46211715726000974).epsilon(1e-12));

  Rng rng(3);
  Tensor big({100});
  for (auto& v : big.data) v = rng.uniform(-50, 50);
  for (double v : tanh_forward(big).data) {
    CHECK(v > -1.0);
    CHECK(v < 1.0);
  }
}

TEST_CASE("primitive backward rules") {
  // tanh'(0) = 1
  auto g = tanh_backward(Tensor({1}, {0.0}), Tensor({1}, {1.0}));
  CHECK(g[0] == 1.0);

  // y = Wx with W = [[2]]: input grad 2, weight grad x
  auto l = make_layer({1, 1}, {2.0}, {0.0});
  auto ag = affine_backward(l, Tensor({1}, {3.0}), Tensor({1}, {1.0}));
  CHECK(ag.input[0] == 2.0);
  CHECK(ag.weights[0] == 3.0);
  CHECK(ag.bias[0] == 1.0);
}

TEST_CASE("stack backward requires a recorded tape") {
  Rng rng(5);
  auto stack = random_stack(rng, {3, 2});
  ForwardTape empty;
  CHECK_THROWS_AS(stack_backward(stack, empty, Tensor({2}, {1, 1})),
                  StateError);
}

TEST_CASE("stack backward matches finite differences") {
  Rng rng(2024);
  for (int rep = 0; rep < 10; ++rep) {
    auto stack = random_stack(rng, {5, 4, 3});
    Tensor r({3});
    for (auto& v : r.data) v = rng.uniform(-1, 1);
    Tensor x({5});
    for (auto& v : x.data) v = rng.uniform(-1, 1);

    // scalar loss: dot(relaxed, r)
    auto f = [&](const Tensor& probe) {
      return dot(stack_forward(stack, probe).relaxed(), r);
    };
    const auto tape = stack_forward(stack, x);
    const auto grads = stack_backward(stack, tape, r);
    const auto numeric = numeric_gradient(f, x, 1e-4);
    for (std::size_t i = 0; i < x.size(); ++i) {
      CHECK(rel_err(grads.input[i], numeric[i]) < 1e-4);
    }

    // parameter gradients of the first layer, same loss
    for (std::size_t k = 0; k < stack.layers[0].weights.size(); k += 3) {
      auto fp = [&](const Tensor& wprobe) {
        AffineTanhStack s2 = stack;
        s2.layers[0].weights = wprobe;
        return dot(stack_forward(s2, x).relaxed(), r);
      };
      const auto wnum = numeric_gradient(fp, stack.layers[0].weights, 1e-4);
      CHECK(rel_err(grads.params.layers[0].weights[k], wnum[k]) < 1e-4);
    }
  }
}

TEST_CASE("numeric_gradient examples") {
  auto square = [](const Tensor& t) { return t[0] * t[0]; };
  auto g = numeric_gradient(square, Tensor({1}, {3.0}), 1e-4);
  CHECK(std::abs(g[0] - 6.0) < 1e-6);

  auto total = [](const Tensor& t) {
    double s = 0;
    for (double v : t.data) s += v;
    return s;
  };
  auto ones = numeric_gradient(total, Tensor({4}, {0.3, -2, 5, 1}), 1e-3);
  for (double v : ones.data) CHECK(v == doctest::Approx(1.0).epsilon(1e-9));

  CHECK_THROWS_AS(numeric_gradient(square, Tensor({1}, {1.0}), 1e-7),
                  ArgumentError);
  CHECK_THROWS_AS(numeric_gradient(square, Tensor({1}, {1.0}), 0.5),
                  ArgumentError);

  auto bad = [](const Tensor&) { return std::nan(""); };
  CHECK_THROWS_AS(numeric_gradient(bad, Tensor({1}, {1.0}), 1e-4),
                  NumericError);
}

TEST_CASE("sgd_step examples") {
  // plain gradient step
  std::vector<AffineLayer> params{make_layer({1, 1}, {5.0}, {0.0})};
  GradStore grads = GradStore::zeros_like(params);
  grads.layers[0].weights[0] = 2.0;
  GradStore velocity = GradStore::zeros_like(params);
  SgdSchedule s;
  s.learning_rate = 1.0;
  s.momentum = 0.0;
  s.weight_decay = 0.0;
  sgd_step(params, grads, s, velocity);
  CHECK(params[0].weights[0] == 3.0);

  // zero grad, zero decay: parameter fixed, velocity decays
  SgdSchedule s2;
  s2.learning_rate = 0.5;
  s2.momentum = 0.5;
  s2.weight_decay = 0.0;
  std::vector<AffineLayer> p2{make_layer({1, 1}, {1.0}, {0.0})};
  GradStore v2 = GradStore::zeros_like(p2);
  GradStore zero = GradStore::zeros_like(p2);
  sgd_step(p2, zero, s2, v2);
  sgd_step(p2, zero, s2, v2);
  CHECK(p2[0].weights[0] == 1.0);
  CHECK(v2.layers[0].weights[0] == 0.0);

  // two-step hand recurrence with momentum 0.9 and decay 0.0005:
  // v1 = 0.5 + 0.0005*1 = 0.5005,        p1 = 1 - 0.1*0.5005   = 0.94995
  // v2 = 0.9*0.5005 + 0.5 + 0.0005*p1,   p2 = p1 - 0.1*v2      = 0.8548575025...
  std::vector<AffineLayer> p3{make_layer({1, 1}, {1.0}, {0.0})};
  GradStore v3 = GradStore::zeros_like(p3);
  GradStore g3 = GradStore::zeros_like(p3);
  g3.layers[0].weights[0] = 0.5;
  SgdSchedule s3;
  s3.learning_rate = 0.1;
  s3.momentum = 0.9;
  s3.weight_decay = 0.0005;
  sgd_step(p3, g3, s3, v3);
  CHECK(p3[0].weights[0] == doctest::Approx(0.94995).epsilon(1e-12));
  sgd_step(p3, g3, s3, v3);
  const double v_expect = 0.9 * 0.5005 + 0.5 + 0.0005 * 0.94995;
  const double p_expect = 0.94995 - 0.1 * v_expect;
  CHECK(p3[0].weights[0] == doctest::Approx(p_expect).epsilon(1e-12));

  // shape mismatch
  std::vector<AffineLayer> p4{make_layer({1, 2}, {1.0, 2.0}, {0.0})};
  CHECK_THROWS_AS(sgd_step(p4, grads, s, velocity), ShapeError);
}

TEST_CASE("rng determinism") {
  Rng a(42), b(42), c(43);
  bool all_equal = true;
  bool any_diff = false;
  for (int i = 0; i < 100; ++i) {
    const auto va = a.next();
    all_equal = all_equal && va == b.next();
    any_diff = any_diff || va != c.next();
  }
  CHECK(all_equal);
  CHECK(any_diff);

  Rng g(7);
  for (int i = 0; i < 1000; ++i) {
    const double u = g.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
  }
}
