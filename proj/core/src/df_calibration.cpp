#include <cmath>

#include "sddr/basis.hpp"

namespace sddr {

Eigen::VectorXd demmler_reinsch_eigenvalues(const Eigen::MatrixXd& X, const Eigen::MatrixXd& P) {
  const Eigen::Index p = X.cols();
  if (P.rows() != p || P.cols() != p) throw BasisError("penalty dimension does not match design");
  Eigen::MatrixXd G = X.transpose() * X;
  Eigen::LLT<Eigen::MatrixXd> llt(G);
  auto ill_conditioned = [&] {
    if (llt.info() != Eigen::Success) return true;
    const Eigen::VectorXd d = Eigen::MatrixXd(llt.matrixL()).diagonal().array().square();
    return d.minCoeff() < 1e-14 * d.maxCoeff();
  };
  if (ill_conditioned()) {
    const double jitter = 1e-8 * G.trace() / static_cast<double>(p);
    G.diagonal().array() += jitter;
    llt.compute(G);
    if (llt.info() != Eigen::Success) throw BasisError("X^T X is singular beyond the jitter tolerance");
  }
  // L^{-1} P L^{-T}
  const Eigen::MatrixXd LinvP = llt.matrixL().solve(P);
  Eigen::MatrixXd A = llt.matrixL().solve(LinvP.transpose());
  A = 0.5 * (A + A.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(A, Eigen::EigenvaluesOnly);
  return eig.eigenvalues().cwiseMax(0.0);
}

double effective_df(const Eigen::VectorXd& s, double lambda, bool hat1) {
  double df = 0.0;
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    const double ls = lambda * s(i);
    df += hat1 ? 1.0 / (1.0 + ls) : (1.0 + 2.0 * ls) / ((1.0 + ls) * (1.0 + ls));
  }
  return df;
}

double effective_df(const DesignBlock& block, double lambda, bool hat1) {
  return effective_df(demmler_reinsch_eigenvalues(block.X, block.P), lambda, hat1);
}

double df_to_lambda(const DesignBlock& block, double df_target, bool hat1) {
  const Eigen::VectorXd s = demmler_reinsch_eigenvalues(block.X, block.P);
  const double p = static_cast<double>(s.size());
  const double smax = s.size() ? s.maxCoeff() : 0.0;
  int nullity = 0;
  for (Eigen::Index i = 0; i < s.size(); ++i)
    if (s(i) <= 1e-10 * smax) ++nullity;
  if (!(df_target > 0) || df_target > p + 1e-9 || df_target < nullity - 1e-9)
    throw BasisError("df target " + std::to_string(df_target) + " outside attainable range [" +
                     std::to_string(nullity) + ", " + std::to_string(s.size()) + "] for '" + block.term_id + "'");
  if (df_target >= p - 1e-12) return 0.0;

  double lo = -10.0, hi = 12.0;
  const auto df_at = [&](double log10_lambda) { return effective_df(s, std::pow(10.0, log10_lambda), hat1); };
  if (df_at(hi) > df_target + 1e-6)
    throw BasisError("df target " + std::to_string(df_target) + " not reachable below lambda=1e12 for '" +
                     block.term_id + "'");
  if (df_at(lo) < df_target) return std::pow(10.0, lo);
  double mid = 0.5 * (lo + hi);
  for (int it = 0; it < 200; ++it) {
    mid = 0.5 * (lo + hi);
    const double df = df_at(mid);
    if (std::abs(df - df_target) <= 1e-11) break;
    (df > df_target ? lo : hi) = mid;
  }
  return std::pow(10.0, mid);
}

}  // namespace sddr
