// License: Apache-2.0 (http://www.apache.org/licenses/LICENSE-2.0)
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "demix/ops.hpp"
#include "demix/tape.hpp"

using namespace demix;
namespace op = demix::ops;

TEST_CASE("abs2 of 3+4i is 25") {
  Tape t;
  Var z = t.leaf(Tensor::scalar(cd(3.0, 4.0)));
  Var r = op::abs2(z);
  CHECK(r.value().re[0] == doctest::Approx(25.0));
}

TEST_CASE("mul 2*5 = 10 and matmul by identity is identity") {
  Tape t;
  Var a = t.leaf(Tensor::scalar(2.0));
  Var b = t.leaf(Tensor::scalar(5.0));
  CHECK(op::mul(a, b).value().re[0] == doctest::Approx(10.0));

  std::mt19937_64 rng(1);
  Tensor x = randn(rng, {2, 3}, Dtype::Complex);
  Tensor eye = Tensor::zeros({2, 2}, Dtype::Complex);
  eye.set(eye.off2(0, 0), 1.0);
  eye.set(eye.off2(1, 1), 1.0);
  Var xv = t.leaf(x);
  Var iv = t.leaf(eye);
  Tensor y = op::matmul(iv, xv).value();
  for (int64_t i = 0; i < x.numel(); ++i)
    CHECK(std::abs(y.at(i) - x.at(i)) < 1e-15);
}

TEST_CASE("gradient of |z|^2 is 2z under descent convention") {
  Tape t;
  Var z = t.leaf(Tensor::scalar(cd(3.0, 4.0)));
  Var loss = op::sum_all(op::abs2(z));
  auto adj = t.backward({{loss.id(), Tensor::scalar(1.0)}});
  CHECK(adj[z.id()].re[0] == doctest::Approx(6.0));
  CHECK(adj[z.id()].im[0] == doctest::Approx(8.0));
}

TEST_CASE("gradient of x^2 at 3 is 6") {
  Tape t;
  Var x = t.leaf(Tensor::scalar(3.0));
  Var loss = op::abs2(x);
  auto adj = t.backward({{loss.id(), Tensor::scalar(1.0)}});
  CHECK(adj[x.id()].re[0] == doctest::Approx(6.0));
}

TEST_CASE("fan-out accumulates: f(x)=x+x has gradient 2") {
  Tape t;
  Var x = t.leaf(Tensor::scalar(1.5));
  Var loss = op::add(x, x);
  auto adj = t.backward({{loss.id(), Tensor::scalar(1.0)}});
  CHECK(adj[x.id()].re[0] == doctest::Approx(2.0));
}

TEST_CASE("constant function has zero gradient") {
  auto fn = [](Tape&, const std::vector<Var>& ls) {
    return op::scale(op::sum_all(op::sub(ls[0], ls[0])), 1.0);
  };
  std::mt19937_64 rng(7);
  auto rep = grad_check(fn, {randn(rng, {4}, Dtype::Real)}, 1e-8);
  CHECK(rep.pass);
}

// Every primitive against central finite differences, inputs bounded away
// from the clamping floors.
TEST_CASE("primitive adjoints match finite differences") {
  std::mt19937_64 rng(42);
  auto check = [&](const char* name,
                   std::function<Var(Tape&, const std::vector<Var>&)> fn,
                   std::vector<Tensor> leaves, double tol = 1e-6) {
    auto rep = grad_check(fn, leaves, tol);
    INFO(name << " worst rel err " << rep.worst);
    CHECK(rep.pass);
  };
  Tensor c1 = randn(rng, {3, 4}, Dtype::Complex);
  Tensor c2 = randn(rng, {3, 4}, Dtype::Complex);
  Tensor r1 = randn(rng, {3, 4}, Dtype::Real);
  Tensor rpos = Tensor::full({3, 4}, 0.0);
  for (auto& v : rpos.re) v = 0.5 + std::abs(randn(rng, {1}).re[0]);

  auto loss_c = [](const Var& v) { return op::sum_all(op::abs2(v)); };
  auto loss_r = [](const Var& v) { return op::sum_all(op::mul(v, v)); };

  check("add", [&](Tape&, const std::vector<Var>& l) {
    return loss_c(op::add(l[0], l[1]));
  }, {c1, c2});
  check("sub", [&](Tape&, const std::vector<Var>& l) {
    return loss_c(op::sub(l[0], l[1]));
  }, {c1, c2});
  check("mul_cc", [&](Tape&, const std::vector<Var>& l) {
    return loss_c(op::mul(l[0], l[1]));
  }, {c1, c2});
  check("mul_rc", [&](Tape&, const std::vector<Var>& l) {
    return loss_c(op::mul_rc(l[0], l[1]));
  }, {r1, c2});
  check("conj", [&](Tape&, const std::vector<Var>& l) {
    return loss_c(op::mul(op::conj(l[0]), l[1]));
  }, {c1, c2});
  check("sqrt", [&](Tape&, const std::vector<Var>& l) {
    return op::sum_all(op::sqrt_f(l[0], 1e-3));
  }, {rpos});
  check("rsqrt", [&](Tape&, const std::vector<Var>& l) {
    return op::sum_all(op::rsqrt_f(l[0], 1e-3));
  }, {rpos});
  check("reciprocal", [&](Tape&, const std::vector<Var>& l) {
    return op::sum_all(op::reciprocal_f(l[0], 1e-3));
  }, {rpos});
  check("div_cr", [&](Tape&, const std::vector<Var>& l) {
    return loss_c(op::div_cr(l[0], l[1], 1e-3));
  }, {c1, rpos});
  check("div_rr", [&](Tape&, const std::vector<Var>& l) {
    return op::sum_all(op::div_rr(l[0], l[1], 1e-3));
  }, {r1, rpos});
  check("log1p", [&](Tape&, const std::vector<Var>& l) {
    return op::sum_all(op::log1p_v(l[0]));
  }, {rpos});
  check("sigmoid", [&](Tape&, const std::vector<Var>& l) {
    return loss_r(op::sigmoid(l[0]));
  }, {r1});
  check("real_imag_make", [&](Tape&, const std::vector<Var>& l) {
    Var z = op::make_complex(op::imag_part(l[0]), op::real_part(l[0]));
    return loss_c(z);
  }, {c1});
  check("sum_cols_scale_rows", [&](Tape&, const std::vector<Var>& l) {
    Var v = op::sum_cols(l[0]);
    return loss_c(op::scale_rows(l[1], v));
  }, {c1, c2});
  check("sub_col", [&](Tape&, const std::vector<Var>& l) {
    Var v = op::sum_cols(l[0]);
    return loss_c(op::sub_col(l[1], v, 2));
  }, {c1, c2});
  check("matmul", [&](Tape&, const std::vector<Var>& l) {
    return loss_c(op::matmul(l[0], op::conj(l[1])));
  }, {randn(rng, {3, 3}, Dtype::Complex), c2});
  check("concat_slice", [&](Tape&, const std::vector<Var>& l) {
    Var c = op::concat0({l[0], l[1]});
    return loss_c(op::slice0(c, 1, 5));
  }, {c1, c2});
  check("conv2d", [&](Tape&, const std::vector<Var>& l) {
    return loss_r(op::conv2d(l[0], l[1], l[2], 2, 1, 1, 1));
  }, {randn(rng, {2, 6, 5}), randn(rng, {3, 2, 3, 3}), randn(rng, {3})}, 1e-5);
  check("conv_transpose2d", [&](Tape&, const std::vector<Var>& l) {
    return loss_r(op::conv_transpose2d(l[0], l[1], l[2], 2, 1, 1, 1, 1, 0));
  }, {randn(rng, {2, 4, 5}), randn(rng, {2, 3, 3, 3}), randn(rng, {3})}, 1e-5);
}

// Random DAG built from the complex primitive set, FD-checked on every
// real/imag leaf component.
TEST_CASE("random 20-node complex DAG passes finite differences") {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 3; ++trial) {
    std::vector<Tensor> leaves = {randn(rng, {2, 3}, Dtype::Complex),
                                  randn(rng, {2, 3}, Dtype::Complex),
                                  randn(rng, {2, 3}, Dtype::Complex)};
    const uint64_t seed = rng();
    auto fn = [seed](Tape&, const std::vector<Var>& l) {
      std::mt19937_64 pick(seed);
      std::vector<Var> pool(l);
      for (int i = 0; i < 20; ++i) {
        const Var& a = pool[pick() % pool.size()];
        const Var& b = pool[pick() % pool.size()];
        switch (pick() % 5) {
          case 0: pool.push_back(op::add(a, b)); break;
          case 1: pool.push_back(op::sub(a, b)); break;
          case 2: pool.push_back(op::mul(a, b)); break;
          case 3: pool.push_back(op::conj(a)); break;
          default: pool.push_back(op::scale(a, 0.5)); break;
        }
      }
      Var s = op::sum_all(op::abs2(pool.back()));
      for (const Var& v : pool)
        s = op::add(s, op::scale(op::sum_all(op::abs2(v)), 0.01));
      return s;
    };
    auto rep = grad_check(fn, leaves, 1e-6);
    INFO("worst " << rep.worst);
    CHECK(rep.pass);
  }
}

TEST_CASE("tape node count is linear in repeated iterations") {
  auto run = [](int iters) {
    Tape t;
    std::mt19937_64 rng(5);
    Var x = t.leaf(randn(rng, {4}, Dtype::Complex));
    Var y = x;
    for (int i = 0; i < iters; ++i) {
      y = op::add(op::mul(y, x), op::conj(y));
    }
    return t.size();
  };
  const size_t n1 = run(1), n2 = run(2), n5 = run(5);
  const size_t per_iter = n2 - n1;
  CHECK(n5 == n1 + 4 * per_iter);
}

TEST_CASE("backward errors on seed shape mismatch") {
  Tape t;
  Var x = t.leaf(Tensor::scalar(1.0));
  CHECK_THROWS(t.backward({{x.id(), Tensor::zeros({3}, Dtype::Real)}}));
  CHECK_THROWS(t.backward({{42, Tensor::scalar(1.0)}}));
}

TEST_CASE("untaped execution records nothing") {
  Tape t;
  Var a = op::constant(Tensor::scalar(cd(1.0, 2.0)));
  Var b = op::constant(Tensor::scalar(cd(3.0, -1.0)));
  Var c = op::abs2(op::mul(a, b));
  CHECK(t.size() == 0);
  CHECK(!c.taped());
}
