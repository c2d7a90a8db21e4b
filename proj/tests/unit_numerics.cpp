#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "caql/errors.hpp"
#include "caql/matrix.hpp"
#include "caql/nn.hpp"
#include "caql/optim.hpp"
#include "caql/rng.hpp"

using namespace caql;

namespace {

DenseMatrix random_matrix(std::size_t r, std::size_t c, Rng& rng,
                          double scale = 1.0) {
  DenseMatrix m(r, c);
  for (double& v : m.data) v = rng.uniform(-scale, scale);
  return m;
}

}  // namespace

TEST_CASE("matmul identity is exact") {
  Rng rng(7);
  const DenseMatrix m = random_matrix(2, 2, rng);
  const DenseMatrix out = matmul(DenseMatrix::identity(2), m);
  for (std::size_t i = 0; i < 4; ++i) CHECK(out.data[i] == m.data[i]);
}

TEST_CASE("matmul hand case") {
  DenseMatrix a(2, 2);
  a.data = {1, 2, 3, 4};
  DenseMatrix b(2, 1);
  b.data = {0, 1};
  const DenseMatrix out = matmul(a, b);
  CHECK(out.rows == 2);
  CHECK(out.cols == 1);
  CHECK(out(0, 0) == doctest::Approx(2.0));
  CHECK(out(1, 0) == doctest::Approx(4.0));
}

TEST_CASE("matmul zero case") {
  Rng rng(3);
  const DenseMatrix z(2, 3);
  const DenseMatrix b = random_matrix(3, 4, rng);
  const DenseMatrix out = matmul(z, b);
  for (double v : out.data) CHECK(v == 0.0);
}

TEST_CASE("matmul shape mismatch names both shapes") {
  DenseMatrix a(2, 3), b(4, 2);
  try {
    matmul(a, b);
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("2x3") != std::string::npos);
    CHECK(msg.find("4x2") != std::string::npos);
  }
}

TEST_CASE("matmul associative within 1e-10 on random 4x4 triples") {
  Rng rng(11);
  for (int t = 0; t < 20; ++t) {
    const DenseMatrix a = random_matrix(4, 4, rng);
    const DenseMatrix b = random_matrix(4, 4, rng);
    const DenseMatrix c = random_matrix(4, 4, rng);
    const DenseMatrix lhs = matmul(matmul(a, b), c);
    const DenseMatrix rhs = matmul(a, matmul(b, c));
    CHECK(max_abs_diff(lhs, rhs) < 1e-10);
  }
}

TEST_CASE("affine forward zero input, zero bias, relu") {
  AffineLayer layer("l", 3, 2, Activation::Relu);
  Rng rng(1);
  layer.init(rng);
  const DenseMatrix out = layer.forward(DenseMatrix(4, 3), nullptr);
  for (double v : out.data) CHECK(v == 0.0);
}

TEST_CASE("affine forward identity weights passes input through") {
  AffineLayer layer("l", 2, 2, Activation::None);
  layer.weight.value = DenseMatrix::identity(2);
  Rng rng(2);
  const DenseMatrix x = random_matrix(3, 2, rng);
  const DenseMatrix out = layer.forward(x, nullptr);
  CHECK(max_abs_diff(out, x) == 0.0);
}

TEST_CASE("affine forward relu gating") {
  AffineLayer layer("l", 2, 2, Activation::Relu);
  layer.weight.value = DenseMatrix::identity(2);
  DenseMatrix x(1, 2);
  x.data = {1.0, -1.0};
  const DenseMatrix out = layer.forward(x, nullptr);
  CHECK(out(0, 0) == 1.0);
  CHECK(out(0, 1) == 0.0);
}

TEST_CASE("affine forward shape mismatch") {
  AffineLayer layer("l", 3, 2, Activation::None);
  CHECK_THROWS_AS(layer.forward(DenseMatrix(1, 4), nullptr), DimensionError);
}

TEST_CASE("affine backward zero upstream gives zero grads") {
  AffineLayer layer("l", 3, 2, Activation::Relu);
  Rng rng(5);
  layer.init(rng);
  AffineCache cache;
  layer.forward(random_matrix(4, 3, rng), &cache);
  const DenseMatrix dx = layer.backward(DenseMatrix(4, 2), cache);
  for (double v : dx.data) CHECK(v == 0.0);
  for (double v : layer.weight.grad.data) CHECK(v == 0.0);
  for (double v : layer.bias.grad.data) CHECK(v == 0.0);
}

TEST_CASE("affine backward linear input grad is upstream times W^T") {
  AffineLayer layer("l", 3, 2, Activation::None);
  Rng rng(6);
  layer.init(rng);
  AffineCache cache;
  layer.forward(random_matrix(1, 3, rng), &cache);
  const DenseMatrix up = random_matrix(1, 2, rng);
  const DenseMatrix dx = layer.backward(up, cache);
  const DenseMatrix expect = matmul(up, transpose(layer.weight.value));
  CHECK(max_abs_diff(dx, expect) < 1e-14);
}

TEST_CASE("affine backward requires cache") {
  AffineLayer layer("l", 2, 2, Activation::None);
  AffineCache cache;
  CHECK_THROWS_AS(layer.backward(DenseMatrix(1, 2), cache), StateError);
}

TEST_CASE("affine backward matches finite differences") {
  // MSE of a single relu layer against fixed targets, random 3x4 case.
  AffineLayer layer("l", 3, 4, Activation::Relu);
  Rng rng(17);
  layer.init(rng);
  const DenseMatrix x = random_matrix(3, 3, rng);
  const DenseMatrix target = random_matrix(3, 4, rng);

  auto loss_value = [&]() {
    const DenseMatrix out = layer.forward(x, nullptr);
    double s = 0.0;
    for (std::size_t i = 0; i < out.data.size(); ++i) {
      const double d = out.data[i] - target.data[i];
      s += d * d;
    }
    return s / static_cast<double>(out.data.size());
  };

  AffineCache cache;
  const DenseMatrix out = layer.forward(x, &cache);
  DenseMatrix up(out.rows, out.cols);
  for (std::size_t i = 0; i < out.data.size(); ++i)
    up.data[i] =
        2.0 * (out.data[i] - target.data[i]) / static_cast<double>(out.data.size());
  layer.backward(up, cache);

  const double err =
      finite_diff_check(loss_value, {&layer.weight, &layer.bias}, 1e-5);
  CHECK(err < 1e-5);
}

TEST_CASE("adam zero grad zero decay is a bitwise no-op") {
  ParamBlock p("p", 2, 2);
  Rng rng(9);
  for (double& v : p.value.data) v = rng.uniform(-1, 1);
  const std::vector<double> before = p.value.data;
  adam_step({&p}, 1e-3, 0.0);
  for (std::size_t i = 0; i < before.size(); ++i)
    CHECK(p.value.data[i] == before[i]);
}

TEST_CASE("adam first step magnitude is about lr") {
  ParamBlock p("p", 1, 1);
  p.value(0, 0) = 1.0;
  p.grad(0, 0) = 1.0;
  const double lr = 1e-4;
  adam_step({&p}, lr, 0.0);
  // first step: mhat = 1, vhat = 1 -> update lr/(1+eps)
  CHECK(p.value(0, 0) == doctest::Approx(1.0 - lr).epsilon(1e-6));
  CHECK(p.grad(0, 0) == 0.0);  // zeroed afterward
}

TEST_CASE("adam decoupled decay shrinks value by (1 - lr*wd)") {
  ParamBlock p("p", 1, 1);
  p.value(0, 0) = 2.0;
  adam_step({&p}, 0.1, 0.5);
  CHECK(p.value(0, 0) == doctest::Approx(2.0 * (1.0 - 0.1 * 0.5)).epsilon(1e-12));
}

TEST_CASE("adam rejects non-finite grads naming the block") {
  ParamBlock p("theta_g", 1, 1);
  p.grad(0, 0) = std::nan("");
  try {
    adam_step({&p}, 1e-3, 0.0);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("theta_g") != std::string::npos);
  }
}

TEST_CASE("finite_diff_check on quadratic loss") {
  ParamBlock p("p", 2, 3);
  Rng rng(21);
  for (double& v : p.value.data) v = rng.uniform(-1, 1);
  auto loss = [&]() {
    double s = 0.0;
    for (double v : p.value.data) s += v * v;
    return s;
  };
  for (std::size_t i = 0; i < p.value.data.size(); ++i)
    p.grad.data[i] = 2.0 * p.value.data[i];
  CHECK(finite_diff_check(loss, {&p}, 1e-4) < 1e-7);
}

TEST_CASE("finite_diff_check on constant loss is zero") {
  ParamBlock p("p", 2, 2);
  auto loss = [&]() { return 3.5; };
  CHECK(finite_diff_check(loss, {&p}, 1e-4) == 0.0);
}

TEST_CASE("finite_diff_check rejects non-positive perturbation") {
  ParamBlock p("p", 1, 1);
  CHECK_THROWS_AS(finite_diff_check([]() { return 0.0; }, {&p}, 0.0),
                  DomainError);
}

TEST_CASE("rng determinism and fork stability") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());

  // fork does not depend on parent's consumption
  Rng c(42);
  Rng f1 = c.fork(3);
  c.next_u64();
  c.next_u64();
  Rng f2 = c.fork(3);
  for (int i = 0; i < 10; ++i) CHECK(f1.next_u64() == f2.next_u64());

  // distinct streams differ
  Rng g1 = c.fork(1), g2 = c.fork(2);
  CHECK(g1.next_u64() != g2.next_u64());
}

TEST_CASE("rng uniform range and gaussian sanity") {
  Rng rng(5);
  double mean = 0.0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const double u = rng.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    mean += rng.gaussian();
  }
  mean /= n;
  CHECK(std::abs(mean) < 0.05);
}
