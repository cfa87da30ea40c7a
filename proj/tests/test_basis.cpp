#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include "doctest.h"
#include "oracles.hpp"
#include "sddr/basis.hpp"

using namespace sddr;

namespace {

DesignBlock raw_block(const Eigen::MatrixXd& X, const Eigen::MatrixXd& P) {
  DesignBlock b;
  b.X = X;
  b.P = P;
  b.Z = Eigen::MatrixXd::Identity(X.cols(), X.cols());
  return b;
}

double min_eigenvalue(const Eigen::MatrixXd& P) {
  const Eigen::MatrixXd sym = 0.5 * (P + P.transpose());
  return Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(sym).eigenvalues().minCoeff();
}

}  // namespace

TEST_CASE("bspline_basis: degree 0 indicator") {
  const KnotVector kv{{0, 1, 2}, 0};
  const std::vector<double> x{0.5};
  const auto B = bspline_basis(x, kv);
  REQUIRE(B.cols() == 2);
  CHECK(B(0, 0) == 1.0);
  CHECK(B(0, 1) == 0.0);
}

TEST_CASE("bspline_basis: partition of unity on equidistant knots") {
  KnotVector kv{{0, 0, 0, 0, 0.5, 1, 1.5, 2, 2.5, 3, 3, 3, 3}, 3};
  std::mt19937_64 rng(1);
  const auto x = oracle::uniform_vector(500, 0.0, 3.0, rng);
  const auto B = bspline_basis(x, kv);
  for (Eigen::Index i = 0; i < B.rows(); ++i) CHECK(std::abs(B.row(i).sum() - 1.0) <= 1e-12);
  CHECK((B.array() >= 0.0).all());
}

TEST_CASE("bspline_basis: matches the recursive Cox-de Boor oracle") {
  const std::vector<double> t{0, 0, 0, 0, 1, 2, 3, 4, 4, 4, 4};
  const KnotVector kv{t, 3};
  for (double xv : {2.0, 0.3, 1.7, 3.99, 0.0}) {
    const std::vector<double> x{xv};
    const auto B = bspline_basis(x, kv);
    REQUIRE(B.cols() == 7);
    for (int i = 0; i < 7; ++i) CHECK(std::abs(B(0, i) - oracle::cox_de_boor(t, i, 3, xv)) <= 1e-12);
  }
  // Exact values at x = 2 from the recursion: (0, 0, 1/6, 2/3, 1/6, 0, 0).
  const std::vector<double> two{2.0};
  const auto B = bspline_basis(two, kv);
  CHECK(B(0, 2) == doctest::Approx(1.0 / 6.0).epsilon(1e-14));
  CHECK(B(0, 3) == doctest::Approx(2.0 / 3.0).epsilon(1e-14));
  CHECK(B(0, 4) == doctest::Approx(1.0 / 6.0).epsilon(1e-14));
}

TEST_CASE("bspline_basis: linear extrapolation beyond the boundary") {
  const KnotVector kv{{0, 0, 0, 0, 1, 2, 3, 4, 4, 4, 4}, 3};
  const std::vector<double> edge{4.0}, out{5.5}, lo_edge{0.0}, lo_out{-2.0};
  const auto B4 = bspline_basis(edge, kv);
  const auto D4 = bspline_derivative(edge, kv, 1);
  const auto B5 = bspline_basis(out, kv);
  CHECK((B5 - (B4 + 1.5 * D4)).cwiseAbs().maxCoeff() <= 1e-12);
  const auto B0 = bspline_basis(lo_edge, kv);
  const auto D0 = bspline_derivative(lo_edge, kv, 1);
  const auto Bm = bspline_basis(lo_out, kv);
  CHECK((Bm - (B0 - 2.0 * D0)).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("bspline_basis: knot validation") {
  const std::vector<double> x{0.5};
  CHECK_THROWS_AS(bspline_basis(x, KnotVector{{0, 0, 1}, 3}), BasisError);
  CHECK_THROWS_AS(bspline_basis(x, KnotVector{{0, 0, 0, 0, 0, 0, 0, 0}, 3}), BasisError);
  CHECK_THROWS_AS(bspline_basis(x, KnotVector{{0, 2, 1, 3, 4}, 0}), BasisError);
}

TEST_CASE("difference_penalty examples") {
  const auto P2 = difference_penalty(2, 5);
  Eigen::VectorXd diag(5);
  diag << 1, 5, 6, 5, 1;
  CHECK((P2.diagonal() - diag).cwiseAbs().maxCoeff() == 0.0);
  // D row 1 is (1, -2, 1, 0, 0): the first row of P = D^T D is D_00 * D_0.
  CHECK(P2(0, 0) == 1.0);
  CHECK(P2(0, 1) == -2.0);
  CHECK(P2(0, 2) == 1.0);

  Eigen::MatrixXd expect(3, 3);
  expect << 1, -1, 0, -1, 2, -1, 0, -1, 1;
  CHECK((difference_penalty(1, 3) - expect).cwiseAbs().maxCoeff() == 0.0);

  for (int order = 1; order <= 3; ++order)
    for (int m = order + 1; m <= 12; ++m) {
      const auto P = difference_penalty(order, m);
      CHECK((P * Eigen::VectorXd::Ones(m)).cwiseAbs().maxCoeff() <= 1e-12);
      Eigen::VectorXd ramp = Eigen::VectorXd::LinSpaced(m, 0, m - 1);
      if (order >= 2) CHECK((P * ramp).cwiseAbs().maxCoeff() <= 1e-10);
      CHECK(min_eigenvalue(P) >= -1e-10);
    }
  CHECK_THROWS_AS(difference_penalty(2, 2), BasisError);
}

TEST_CASE("curvature_penalty annihilates linear functions and is PSD") {
  std::mt19937_64 rng(3);
  const auto x = oracle::uniform_vector(200, -1.0, 2.0, rng);
  const auto kv = quantile_knots(x, 10);
  const auto P = curvature_penalty(kv);
  // Greville abscissae reproduce linear functions exactly.
  Eigen::VectorXd grev(kv.n_basis());
  for (int j = 0; j < kv.n_basis(); ++j)
    grev(j) = (kv.knots[j + 1] + kv.knots[j + 2] + kv.knots[j + 3]) / 3.0;
  CHECK((P * Eigen::VectorXd::Ones(kv.n_basis())).cwiseAbs().maxCoeff() <= 1e-9);
  CHECK((P * grev).cwiseAbs().maxCoeff() <= 1e-9 * P.cwiseAbs().maxCoeff());
  CHECK(min_eigenvalue(P) >= -1e-10 * P.cwiseAbs().maxCoeff());
}

TEST_CASE("build_smooth: sum-to-zero absorption") {
  std::mt19937_64 rng(4);
  const auto x = oracle::uniform_vector(300, 0.0, 10.0, rng);
  SmoothConfig cfg;
  cfg.k = 10;
  const auto b = build_smooth(x, cfg, "x");
  CHECK(b.p() == 9);
  CHECK(b.X.colwise().sum().cwiseAbs().maxCoeff() <= 1e-8);
  CHECK(min_eigenvalue(b.P) >= -1e-10);

  // Constraint absorption preserves the fit space exactly.
  const auto raw = bspline_basis(x, b.knots[0]);
  const Eigen::VectorXd g = oracle::gaussian_matrix(9, 1, rng);
  CHECK((raw * (b.Z * g) - b.X * g).cwiseAbs().maxCoeff() <= 1e-12);

  cfg.sum_to_zero = false;
  const auto u = build_smooth(x, cfg, "x");
  CHECK(u.p() == 10);
  CHECK((u.P - difference_penalty(2, 10)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("build_smooth: thin-plate substitute has a linear null space") {
  std::mt19937_64 rng(5);
  const auto x = oracle::uniform_vector(200, 0.0, 1.0, rng);
  SmoothConfig cfg;
  cfg.basis = BasisTag::ThinPlate;
  cfg.sum_to_zero = false;
  const auto b = build_smooth(x, cfg, "x");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(b.P);
  const double top = es.eigenvalues().maxCoeff();
  int null_dim = 0;
  for (double e : es.eigenvalues()) null_dim += e <= 1e-9 * top;
  CHECK(null_dim == 2);
}

TEST_CASE("build_smooth: errors") {
  const std::vector<double> constant(50, 3.0);
  CHECK_THROWS_AS(build_smooth(constant, SmoothConfig{}, "c"), BasisError);
  const std::vector<double> few{1, 2, 3, 4, 5};
  CHECK_THROWS_AS(build_smooth(few, SmoothConfig{}, "f"), BasisError);
}

TEST_CASE("build_smooth: penalized fit matches a constrained raw-basis oracle") {
  std::mt19937_64 rng(6);
  const auto xs = oracle::uniform_vector(250, 0.0, 6.0, rng);
  std::normal_distribution<double> noise(0.0, 0.3);
  Eigen::VectorXd y(250);
  for (int i = 0; i < 250; ++i) y(i) = std::sin(xs[i]) + noise(rng);
  y.array() -= y.mean();
  const auto b = build_smooth(xs, SmoothConfig{}, "x");
  const double lambda = 3.7;
  const Eigen::VectorXd gamma = (b.X.transpose() * b.X + lambda * b.P).llt().solve(b.X.transpose() * y);

  // KKT system on the raw basis with the constraint 1^T B beta = 0.
  const auto B = bspline_basis(xs, b.knots[0]);
  const auto Praw = difference_penalty(2, static_cast<int>(B.cols()));
  const Eigen::Index m = B.cols();
  Eigen::MatrixXd K = Eigen::MatrixXd::Zero(m + 1, m + 1);
  K.topLeftCorner(m, m) = B.transpose() * B + lambda * Praw;
  K.block(0, m, m, 1) = B.colwise().sum().transpose();
  K.block(m, 0, 1, m) = B.colwise().sum();
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(m + 1);
  rhs.head(m) = B.transpose() * y;
  const Eigen::VectorXd beta = K.fullPivLu().solve(rhs).head(m);
  CHECK((B * beta - b.X * gamma).cwiseAbs().maxCoeff() <= 1e-8);
  CHECK((gamma - oracle::penalized_ls(b.X, y, lambda * b.P)).cwiseAbs().maxCoeff() <= 1e-8);
}

TEST_CASE("tensor_product: dimensions, penalty and Kronecker rows") {
  std::mt19937_64 rng(7);
  const auto a = oracle::uniform_vector(400, 0.0, 1.0, rng);
  const auto c = oracle::uniform_vector(400, -3.0, 3.0, rng);
  SmoothConfig m1, m2;
  m1.k = 4;
  m2.k = 5;
  m1.sum_to_zero = m2.sum_to_zero = false;
  const auto ba = build_smooth(a, m1, "a");
  const auto bc = build_smooth(c, m2, "c");

  const auto raw = tensor_product({ba, bc}, false, "te(a, c)");
  CHECK(raw.p() == 20);
  const auto te = tensor_product({ba, bc}, true, "te(a, c)");
  CHECK(te.p() == 19);
  CHECK(te.X.colwise().sum().cwiseAbs().maxCoeff() <= 1e-8);
  CHECK(min_eigenvalue(raw.P) >= -1e-10);
  CHECK(min_eigenvalue(te.P) >= -1e-10);

  for (Eigen::Index i : {0, 17, 399}) {
    Eigen::RowVectorXd expect(20);
    for (int j = 0; j < 4; ++j)
      for (int l = 0; l < 5; ++l) expect(j * 5 + l) = ba.X(i, j) * bc.X(i, l);
    CHECK((raw.X.row(i) - expect).cwiseAbs().maxCoeff() <= 1e-12);
  }
  auto kron = [](const Eigen::MatrixXd& x, const Eigen::MatrixXd& y) {
    Eigen::MatrixXd out(x.rows() * y.rows(), x.cols() * y.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i)
      for (Eigen::Index j = 0; j < x.cols(); ++j) out.block(i * y.rows(), j * y.cols(), y.rows(), y.cols()) = x(i, j) * y;
    return out;
  };
  const Eigen::MatrixXd Pexpect = kron(ba.P, Eigen::MatrixXd::Identity(5, 5)) + kron(Eigen::MatrixXd::Identity(4, 4), bc.P);
  CHECK((raw.P - Pexpect).cwiseAbs().maxCoeff() <= 1e-12);
  CHECK((te.P - te.Z.transpose() * Pexpect * te.Z).cwiseAbs().maxCoeff() <= 1e-10);
  CHECK_THROWS_AS(tensor_product({ba}, true), BasisError);
}

TEST_CASE("effective df closed forms") {
  const DesignBlock eye = raw_block(Eigen::MatrixXd::Identity(10, 10), Eigen::MatrixXd::Identity(10, 10));
  CHECK(effective_df(eye, 1.0, true) == doctest::Approx(5.0).epsilon(1e-12));
  CHECK(effective_df(eye, 1.0, false) == doctest::Approx(7.5).epsilon(1e-12));
  std::mt19937_64 rng(8);
  const DesignBlock rnd = raw_block(oracle::gaussian_matrix(40, 7, rng), difference_penalty(2, 7));
  CHECK(effective_df(rnd, 0.0, true) == doctest::Approx(7.0).epsilon(1e-10));
  CHECK(effective_df(rnd, 0.0, false) == doctest::Approx(7.0).epsilon(1e-10));
}

TEST_CASE("df_to_lambda: random block hits df=6 against dense oracles") {
  std::mt19937_64 rng(9);
  for (int rep = 0; rep < 10; ++rep) {
    const DesignBlock b = raw_block(oracle::gaussian_matrix(80, 10, rng), difference_penalty(2, 10));
    for (bool hat1 : {false, true}) {
      const double lambda = df_to_lambda(b, 6.0, hat1);
      CHECK(lambda > 0.0);
      CHECK(std::abs(oracle::eigen_df(b.X, b.P, lambda, hat1) - 6.0) <= 1e-6);
      CHECK(std::abs(oracle::dense_df(b.X, b.P, lambda, hat1) - 6.0) <= 1e-6);
    }
  }
}

TEST_CASE("df_to_lambda: unreachable targets") {
  std::mt19937_64 rng(10);
  const DesignBlock b = raw_block(oracle::gaussian_matrix(50, 8, rng), difference_penalty(2, 8));
  CHECK_THROWS_AS(df_to_lambda(b, 1.5, false), BasisError);
  CHECK_THROWS_AS(df_to_lambda(b, 8.5, false), BasisError);
}

TEST_CASE("property: df is strictly decreasing in lambda") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> logl(-6.0, 6.0);
  for (int rep = 0; rep < 50; ++rep) {
    const DesignBlock b = raw_block(oracle::gaussian_matrix(60, 9, rng), difference_penalty(1 + rep % 3, 9));
    double l1 = std::pow(10.0, logl(rng)), l2 = std::pow(10.0, logl(rng));
    if (l1 > l2) std::swap(l1, l2);
    if (l2 / l1 < 1.01) continue;
    for (bool hat1 : {false, true}) CHECK(effective_df(b, l1, hat1) > effective_df(b, l2, hat1));
  }
}

TEST_CASE("evaluate_partial_effect") {
  std::mt19937_64 rng(12);
  const auto xs = oracle::uniform_vector(300, 0.0, 6.0, rng);
  const auto b = build_smooth(xs, SmoothConfig{}, "x");
  const Eigen::VectorXd xv = oracle::to_eigen(xs);

  const auto zero = evaluate_partial_effect(b, Eigen::VectorXd::Zero(b.p()), {xv});
  CHECK(zero.effect.cwiseAbs().maxCoeff() == 0.0);

  const Eigen::VectorXd g = oracle::gaussian_matrix(b.p(), 1, rng);
  const auto same = evaluate_partial_effect(b, g, {xv});
  CHECK((same.effect - b.X * g).cwiseAbs().maxCoeff() <= 1e-10);
  CHECK(std::none_of(same.clamped.begin(), same.clamped.end(), [](bool c) { return c; }));

  Eigen::VectorXd outside(2);
  outside << -1.0, 7.0;
  const auto cl = evaluate_partial_effect(b, g, {outside});
  CHECK(cl.clamped[0]);
  CHECK(cl.clamped[1]);
  Eigen::VectorXd ends(2);
  ends << b.range[0].first, b.range[0].second;
  const auto at_ends = evaluate_partial_effect(b, g, {ends});
  CHECK((cl.effect - at_ends.effect).cwiseAbs().maxCoeff() <= 1e-12);

  CHECK_THROWS_AS(evaluate_partial_effect(b, Eigen::VectorXd::Zero(b.p() + 1), {xv}), BasisError);
}

TEST_CASE("sin recovery: curve RMSE below the noise level") {
  std::mt19937_64 rng(13);
  const auto xs = oracle::uniform_vector(500, 0.0, 2.0 * M_PI, rng);
  std::normal_distribution<double> noise(0.0, 0.3);
  Eigen::VectorXd y(500), truth(500);
  for (int i = 0; i < 500; ++i) {
    truth(i) = std::sin(xs[i]);
    y(i) = truth(i) + noise(rng);
  }
  const double offset = y.mean();
  SmoothConfig cfg;
  cfg.k = 12;
  const auto b = build_smooth(xs, cfg, "x");
  const double lambda = df_to_lambda(b, 6.0, false);
  const Eigen::VectorXd g = oracle::penalized_ls(b.X, y.array() - offset, lambda * b.P);
  const auto pe = evaluate_partial_effect(b, g, {oracle::to_eigen(xs)});
  const double rmse = std::sqrt((pe.effect.array() + offset - truth.array()).square().mean());
  CHECK(rmse < 0.3);
}
