#pragma once

#include <Eigen/Dense>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "sddr/formula.hpp"

namespace sddr {

class BasisError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Full (open) knot sequence; boundary knots are repeated degree+1 times.
struct KnotVector {
  std::vector<double> knots;
  int degree = 3;

  int n_basis() const { return static_cast<int>(knots.size()) - degree - 1; }
  double lower() const { return knots[static_cast<std::size_t>(degree)]; }
  double upper() const { return knots[static_cast<std::size_t>(n_basis())]; }
  // Throws BasisError unless knots are non-decreasing with >= degree+2 distinct values.
  void validate() const;
};

// Open knot vector with boundary knots at min/max of x and interior knots at
// quantiles, giving n_basis basis functions.
KnotVector quantile_knots(std::span<const double> x, int n_basis, int degree = 3);

// n x M Cox-de Boor basis. Outside [lower, upper] each basis function is
// extended linearly from the boundary.
Eigen::MatrixXd bspline_basis(std::span<const double> x, const KnotVector& knots);

// Derivative of the given order (x is clamped to the boundary interval).
Eigen::MatrixXd bspline_derivative(std::span<const double> x, const KnotVector& knots, int order);

// D^T D for the order-th difference operator D on m coefficients.
Eigen::MatrixXd difference_penalty(int order, int m);

// Integrated squared second derivative over the boundary interval, by
// Gauss-Legendre quadrature on each knot span (exact for cubic splines).
Eigen::MatrixXd curvature_penalty(const KnotVector& knots);

struct SmoothConfig {
  BasisTag basis = BasisTag::PSpline;
  int k = 10;
  int penalty_order = 2;
  std::optional<double> df_target;
  bool sum_to_zero = true;
  bool hat1 = false;
};

// A structured term's design: X = B * Z on the training rows, penalty P in
// the constrained coordinates, and everything needed to rebuild rows for new
// data. Spline blocks carry one KnotVector per margin; other blocks have none.
struct DesignBlock {
  Eigen::MatrixXd X;
  Eigen::MatrixXd P;
  Eigen::MatrixXd Z;
  double lambda = 0.0;
  std::optional<double> df_target;
  std::string term_id;
  std::vector<std::string> coef_names;
  std::vector<std::string> var_names;
  std::vector<std::pair<double, double>> range;

  BasisTag basis = BasisTag::PSpline;
  std::vector<KnotVector> knots;
  std::vector<Eigen::MatrixXd> margin_Z;

  Eigen::Index p() const { return X.cols(); }
  bool is_spline() const { return !knots.empty(); }
};

DesignBlock build_smooth(std::span<const double> x, const SmoothConfig& cfg, const std::string& var,
                         const std::string& term_id = {});

// Row-wise Kronecker product of marginal bases with the summed Kronecker
// penalty (one shared smoothing weight). Marginals must be unconstrained or
// carry their own Z; the product constraint is absorbed when sum_to_zero.
DesignBlock tensor_product(const std::vector<DesignBlock>& marginals, bool sum_to_zero = true,
                           const std::string& term_id = {});

// Orthonormal basis (columns) of the null space of c^T.
Eigen::MatrixXd sum_to_zero_transform(const Eigen::VectorXd& column_sums);

// Evaluates a spline block's constrained basis on new feature columns (one per
// margin). `extrapolated`, when given, flags rows outside the training range.
Eigen::MatrixXd spline_design(const DesignBlock& block, const std::vector<std::span<const double>>& columns,
                              std::vector<bool>* extrapolated = nullptr);

// Eigenvalues s_i of R^{-T} P R^{-1} where R^T R = X^T X (+ jitter when X^T X
// is not positive definite). df(lambda) is a sum of scalar shrinkage factors.
Eigen::VectorXd demmler_reinsch_eigenvalues(const Eigen::MatrixXd& X, const Eigen::MatrixXd& P);

double effective_df(const Eigen::VectorXd& dr_eigenvalues, double lambda, bool hat1);
double effective_df(const DesignBlock& block, double lambda, bool hat1);

// Smoothing weight whose effective df equals target (to 1e-6 or better).
double df_to_lambda(const DesignBlock& block, double df_target, bool hat1);

struct PartialEffect {
  std::vector<Eigen::VectorXd> grid;  // one column per variable
  Eigen::VectorXd effect;
  std::vector<bool> clamped;
};

// Re-evaluates the block at grid values; values outside the training range are
// clamped to it and flagged.
PartialEffect evaluate_partial_effect(const DesignBlock& block, const Eigen::VectorXd& coefs,
                                      const std::vector<Eigen::VectorXd>& grid);

}  // namespace sddr
