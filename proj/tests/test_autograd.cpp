#include "sepkit/autograd.hpp"
#include "sepkit/rng.hpp"

#include "fd_check.hpp"

#include <doctest.h>

#include <memory>
#include <vector>

using namespace sepkit;
using ag::Mat;
using ag::Var;

namespace {

Mat random_mat(Eigen::Index r, Eigen::Index c, Rng& rng) {
  Mat m(r, c);
  for (Eigen::Index j = 0; j < c; ++j)
    for (Eigen::Index i = 0; i < r; ++i) m(i, j) = rng.normal() * 0.5;
  return m;
}

}  // namespace

TEST_CASE("add/sub/mul/matmul forward values") {
  Mat a(2, 2), b(2, 2);
  a << 1, 2, 3, 4;
  b << 5, 6, 7, 8;
  CHECK(ag::add(Var(a), Var(b)).value()(1, 1) == 12);
  CHECK(ag::sub(Var(a), Var(b)).value()(0, 0) == -4);
  CHECK(ag::mul(Var(a), Var(b)).value()(1, 0) == 21);
  CHECK(ag::matmul(Var(a), Var(b)).value()(0, 0) == doctest::Approx(19));
}

TEST_CASE("gradient of composite expression matches finite differences") {
  Rng rng(7);
  Var w = ag::param(random_mat(3, 4, rng));
  Var b = ag::param(random_mat(3, 1, rng));
  Var x = ag::constant(random_mat(4, 5, rng));
  auto loss = [&] {
    Var h = ag::relu(ag::colwise_add_vec(ag::matmul(w, x), b));
    Var s = ag::sigmoid(h);
    Var t = ag::tanh_(s);
    return ag::mean(ag::mul(t, t));
  };
  auto report = testing::fd_check({w, b}, loss);
  CHECK(report.checked > 0);
  CHECK(report.max_rel_err < 1e-6);
}

TEST_CASE("gradients through log/sqrt/inv/broadcast") {
  Rng rng(13);
  Mat raw = random_mat(3, 3, rng);
  raw = raw.array().abs() + 0.5;
  Var p = ag::param(raw);
  auto loss = [&] {
    Var mu = ag::mean(p);
    Var centered = ag::sub(p, ag::broadcast_scalar(mu, 3, 3));
    Var variance = ag::add_scalar(ag::mean(ag::mul(centered, centered)), 1e-8);
    Var z = ag::mul(centered, ag::broadcast_scalar(ag::inv(ag::sqrt_(variance)), 3, 3));
    return ag::sum(ag::log_(ag::add_scalar(ag::mul(z, z), 1.0)));
  };
  auto report = testing::fd_check({p}, loss);
  CHECK(report.max_rel_err < 1e-5);
}

TEST_CASE("gradients through slice/concat/colwise ops") {
  Rng rng(21);
  Var a = ag::param(random_mat(4, 3, rng));
  Var v = ag::param(random_mat(4, 1, rng));
  auto loss = [&] {
    Var top = ag::slice_rows(a, 0, 2);
    Var bottom = ag::slice_rows(a, 2, 2);
    Var joined = ag::concat_rows({bottom, top});
    Var scaled = ag::colwise_mul_vec(joined, v);
    Var wide = ag::concat_cols({scaled, ag::scale(scaled, -0.5)});
    return ag::sum(ag::mul(wide, wide));
  };
  auto report = testing::fd_check({a, v}, loss);
  CHECK(report.max_rel_err < 1e-6);
}

TEST_CASE("gather and scatter_add are adjoint linear maps") {
  Rng rng(3);
  Var a = ag::param(random_mat(2, 4, rng));
  // Overlapping frame layout: columns {0,1}, {1,2}, {2,3}.
  auto idx = std::make_shared<std::vector<std::int64_t>>();
  for (int f = 0; f < 3; ++f)
    for (int c = 0; c < 2; ++c)
      for (int r = 0; r < 2; ++r) idx->push_back((f + c) * 2 + r);
  auto loss = [&] {
    Var framed = ag::gather(a, idx, 2, 6);
    Var merged = ag::scatter_add(framed, idx, 2, 4);  // same map used as adjoint
    return ag::sum(ag::mul(merged, merged));
  };
  auto report = testing::fd_check({a}, loss);
  CHECK(report.max_rel_err < 1e-6);

  // Structural zeros pass through.
  auto idx2 = std::make_shared<std::vector<std::int64_t>>(std::vector<std::int64_t>{0, -1, 3, -1});
  Var g = ag::gather(a, idx2, 2, 2);
  CHECK(g.value()(1, 0) == 0.0);
  CHECK(g.value()(0, 0) == a.value()(0, 0));
}

TEST_CASE("backward requires 1x1 loss and repeated forward is deterministic") {
  Rng rng(5);
  Var a = ag::param(random_mat(2, 2, rng));
  CHECK_THROWS(ag::backward(ag::relu(a)));
  Var x = ag::constant(random_mat(2, 2, rng));
  Mat y1 = ag::matmul(a, x).value();
  Mat y2 = ag::matmul(a, x).value();
  CHECK((y1 - y2).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("grad accumulates across shared subexpressions") {
  Var a = ag::param(Mat::Constant(1, 1, 2.0));
  Var b = ag::add(a, a);  // d/da = 2
  Var loss = ag::mul(b, b);  // (2a)^2 -> d/da = 8a = 16
  ag::backward(loss);
  CHECK(a.grad()(0, 0) == doctest::Approx(16.0));
}
