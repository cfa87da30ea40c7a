#pragma once

// Independent reference computations for the unit and acceptance tests. These
// deliberately avoid the library's own code paths (no QR projector, no
// Demmler-Reinsch, no Cox-de Boor triangle table).

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "sddr/data_frame.hpp"

namespace oracle {

inline Eigen::MatrixXd gaussian_matrix(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
  std::normal_distribution<double> z;
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = z(rng);
  return m;
}

inline std::vector<double> uniform_vector(std::size_t n, double lo, double hi, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

// Textbook recursive definition, half-open spans.
inline double cox_de_boor(const std::vector<double>& t, int i, int d, double x) {
  if (d == 0) return (t[i] <= x && x < t[i + 1]) ? 1.0 : 0.0;
  double out = 0.0;
  const double l = t[i + d] - t[i];
  const double r = t[i + d + 1] - t[i + 1];
  if (l > 0) out += (x - t[i]) / l * cox_de_boor(t, i, d - 1, x);
  if (r > 0) out += (t[i + d + 1] - x) / r * cox_de_boor(t, i + 1, d - 1, x);
  return out;
}

// Smoother matrix by a dense solve, then the trace definitions directly.
inline double dense_df(const Eigen::MatrixXd& X, const Eigen::MatrixXd& P, double lambda, bool hat1) {
  const Eigen::MatrixXd A = X.transpose() * X + lambda * P;
  const Eigen::MatrixXd H = X * A.fullPivLu().solve(X.transpose());
  return hat1 ? H.trace() : (2.0 * H - H * H).trace();
}

// Same quantity through a symmetric eigendecomposition of the penalized system.
inline double eigen_df(const Eigen::MatrixXd& X, const Eigen::MatrixXd& P, double lambda, bool hat1) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(X.transpose() * X);
  const Eigen::MatrixXd half_inv =
      es.eigenvectors() * es.eigenvalues().cwiseSqrt().cwiseInverse().asDiagonal() * es.eigenvectors().transpose();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ps(half_inv * P * half_inv);
  double df = 0.0;
  for (double s : ps.eigenvalues()) {
    s = std::max(s, 0.0);
    const double a = 1.0 / (1.0 + lambda * s);
    df += hat1 ? a : 2.0 * a - a * a;
  }
  return df;
}

inline Eigen::MatrixXd pinv(const Eigen::MatrixXd& A) {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(A, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto& s = svd.singularValues();
  const double tol = 1e-10 * (s.size() ? s(0) : 0.0);
  Eigen::VectorXd inv = s;
  for (Eigen::Index i = 0; i < s.size(); ++i) inv(i) = s(i) > tol ? 1.0 / s(i) : 0.0;
  return svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose();
}

inline Eigen::MatrixXd annihilate(const Eigen::MatrixXd& U, const Eigen::MatrixXd& Xoz) {
  return U - Xoz * (pinv(Xoz) * U);
}

inline Eigen::VectorXd penalized_ls(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const Eigen::MatrixXd& S) {
  return (X.transpose() * X + S).fullPivLu().solve(X.transpose() * y);
}

inline double central_difference(const std::function<double(double)>& f, double x, double h = 1e-6) {
  return (f(x + h) - f(x - h)) / (2.0 * h);
}

// Relative error of an analytic gradient entry against a finite difference.
// Entries whose magnitude is below `floor` are compared on that scale, since
// a relative error of two near-zero numbers is dominated by round-off.
inline double gradient_error(double analytic, double numeric, double floor = 1e-2) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

inline sddr::DataFrame frame(const std::vector<std::pair<std::string, std::vector<double>>>& cols) {
  sddr::DataFrame df;
  for (const auto& [name, v] : cols) df.add_numeric(name, v);
  return df;
}

inline Eigen::VectorXd to_eigen(const std::vector<double>& v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace oracle
