// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>

#include "generators.hpp"
#include "gfss/errors.hpp"
#include "gfss/numeric/autodiff.hpp"
#include "gfss/numeric/gradcheck.hpp"
#include "gfss/numeric/kernels.hpp"
#include "gfss/optim.hpp"

using namespace gfss;
namespace kn = gfss::kernels;

TEST_CASE("matmul, row softmax and outer on hand-computed inputs") {
  Tensor c = ad::matmul(Tensor::from_rows({{1, 2}, {3, 4}}), Tensor::from_rows({{1}, {1}}));
  CHECK(c == Tensor::from_rows({{3}, {7}}));

  Tensor s = ad::softmax_rows(Tensor::from_rows({{0, 0, 0}}));
  for (double v : s.data()) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));

  Tensor o = ad::outer(Tensor::vector({1, 2}), Tensor::vector({3, 4, 5}));
  CHECK(o == Tensor::from_rows({{3, 4, 5}, {6, 8, 10}}));
}

TEST_CASE("shape mismatches and domain violations raise") {
  CHECK_THROWS_AS(ad::matmul(Tensor::from_rows({{1, 2}}), Tensor::from_rows({{1, 2}})), ShapeError);
  ad::Tape t;
  CHECK_THROWS_AS(ad::log(t.constant(Tensor::vector({1.0, 0.0}))), DomainError);
  CHECK_THROWS_AS(ad::log(t.constant(Tensor::vector({-1.0}))), DomainError);
}

TEST_CASE("gradient of sum of squares") {
  ad::LossFn f = [](ad::Tape&, std::span<const ad::Var> p) { return ad::sum(ad::mul(p[0], p[0])); };
  std::vector<Tensor> x{Tensor::vector({1, 2, 3})};
  auto r = ad::value_and_grad(f, x);
  CHECK(r.value == 14.0);
  CHECK(r.grads[0] == Tensor::vector({2, 4, 6}));
}

TEST_CASE("gradient of first log-softmax entry at zero") {
  ad::LossFn f = [](ad::Tape&, std::span<const ad::Var> p) {
    return ad::sum(ad::mul(ad::log_softmax_rows(p[0]), p[0].tape()->constant(Tensor::vector({1, 0}))));
  };
  std::vector<Tensor> x{Tensor::vector({0, 0})};
  auto r = ad::value_and_grad(f, x);
  CHECK(r.grads[0][0] == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(r.grads[0][1] == doctest::Approx(-0.5).epsilon(1e-15));
}

TEST_CASE("backward visits every op once and skips constants") {
  ad::Tape t;
  ad::Var x = t.parameter(Tensor::vector({1, 2}));
  ad::Var c = t.constant(Tensor::vector({3, 4}));
  ad::Var y = ad::sum(ad::mul(ad::exp(x), c));
  t.backward(y);
  CHECK(t.backward_visits() == 3);
  CHECK(t.grad(c) == nullptr);
  REQUIRE(t.grad(x) != nullptr);
  CHECK((*t.grad(x))[1] == doctest::Approx(4 * std::exp(2.0)));
}

TEST_CASE("finite-difference checker on closed-form cases") {
  SUBCASE("quadratic") {
    ad::LossFn f = [](ad::Tape& t, std::span<const ad::Var> p) {
      return ad::sum(ad::mul(ad::mul(p[0], p[0]), t.constant(Tensor::vector({1, 2, 3}))));
    };
    std::vector<Tensor> x{Tensor::vector({0.3, -1.2, 2.0})};
    CHECK(ad::finite_difference_check(f, x, 1e-5).max_rel_error < 1e-6);
  }
  SUBCASE("constant loss") {
    ad::LossFn f = [](ad::Tape& t, std::span<const ad::Var> p) {
      return ad::add(ad::scale(ad::sum(p[0]), 0.0), ad::sum(t.constant(Tensor::scalar(5.0))));
    };
    std::vector<Tensor> x{Tensor::vector({1, 2})};
    auto r = ad::finite_difference_check(f, x, 1e-5);
    CHECK(r.max_rel_error == 0.0);
    CHECK(r.value == 5.0);
  }
  SUBCASE("five-parameter composition") {
    testgen::Gen g(11);
    std::vector<Tensor> p{g.matrix(2, 3), g.matrix(3, 2), g.vector(2), g.matrix(2, 2), g.vector(3)};
    ad::LossFn f = [](ad::Tape&, std::span<const ad::Var> v) {
      ad::Var h = ad::tanh(ad::add_row_vector(ad::matmul(v[0], v[1]), v[2]));
      ad::Var z = ad::matmul(h, v[3]);
      return ad::add(ad::mean(ad::log_softmax_rows(z)), ad::sum(ad::mul(v[4], v[4])));
    };
    CHECK(ad::finite_difference_check(f, p, 1e-5).max_rel_error < 1e-6);
  }
  CHECK_THROWS_AS(ad::finite_difference_check([](ad::Tape&, std::span<const ad::Var> v) { return ad::sum(v[0]); },
                                              std::vector<Tensor>{Tensor::vector({1})}, 0.0),
                  ContractError);
}

TEST_CASE("sgd with and without momentum") {
  Tensor p = Tensor::vector({0, 0});
  std::vector<Tensor*> params{&p};
  std::vector<Tensor> velocity;
  sgd_step(params, std::vector<Tensor>{Tensor::vector({1, 2})}, velocity, 1.0, 0.0);
  CHECK(p == Tensor::vector({-1, -2}));

  Tensor q = Tensor::vector({0.5, -0.5});
  std::vector<Tensor*> qp{&q};
  std::vector<Tensor> qv;
  sgd_step(qp, std::vector<Tensor>{Tensor::vector({0, 0})}, qv, 0.1, 0.9);
  CHECK(q == Tensor::vector({0.5, -0.5}));

  Tensor r = Tensor::vector({0.0});
  std::vector<Tensor*> rp{&r};
  std::vector<Tensor> rv;
  const std::vector<Tensor> g{Tensor::vector({2.0})};
  sgd_step(rp, g, rv, 0.1, 0.9);
  sgd_step(rp, g, rv, 0.1, 0.9);
  CHECK(r[0] == doctest::Approx(-0.1 * (2.0 * 1.9 + 2.0)).epsilon(1e-14));
}

TEST_CASE("AVX2 kernels match the scalar reference") {
  if (!kn::backend_available(kn::Backend::kAvx2)) {
    MESSAGE("AVX2 not available on this CPU; only the scalar backend is exercised");
    return;
  }
  testgen::Gen g(5);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t m = g.size(1, 9), k = g.size(1, 13), n = g.size(1, 11);
    Tensor a = g.matrix(m, k), b = g.matrix(k, n), bt = g.matrix(n, k), at = g.matrix(k, m);
    Tensor x = g.vector(k), y = g.vector(k);
    auto run = [&](kn::Backend be) {
      kn::ScopedBackend scope(be);
      std::vector<Tensor> out;
      Tensor c1(Shape::matrix(m, n)), c2(Shape::matrix(m, n)), c3(Shape::matrix(m, n));
      kn::gemm_nn(m, k, n, a.data().data(), b.data().data(), c1.data().data());
      kn::gemm_nt(m, k, n, a.data().data(), bt.data().data(), c2.data().data());
      kn::gemm_tn(m, k, n, at.data().data(), b.data().data(), c3.data().data());
      Tensor ax = y, sum(Shape::vector(k)), prod(Shape::vector(k)), sc(Shape::vector(k));
      kn::axpy(0.7, x.data(), ax.data());
      kn::add(x.data(), y.data(), sum.data());
      kn::mul(x.data(), y.data(), prod.data());
      kn::scale(-1.3, x.data(), sc.data());
      out = {c1, c2, c3, ax, sum, prod, sc, Tensor::scalar(kn::dot(x.data(), y.data()))};
      return out;
    };
    auto s = run(kn::Backend::kScalar);
    auto v = run(kn::Backend::kAvx2);
    for (std::size_t i = 0; i < s.size(); ++i) CHECK(max_abs_diff(s[i], v[i]) <= 1e-12 * (1.0 + k));
  }
}

TEST_CASE("each backend is bit-reproducible") {
  testgen::Gen g(9);
  Tensor a = g.matrix(7, 13), b = g.matrix(13, 5);
  for (kn::Backend be : {kn::Backend::kScalar, kn::Backend::kAvx2}) {
    if (!kn::backend_available(be)) continue;
    kn::ScopedBackend scope(be);
    CHECK(ad::matmul(a, b) == ad::matmul(a, b));
  }
}
