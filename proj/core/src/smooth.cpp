#include <algorithm>
#include <cmath>

#include "sddr/basis.hpp"

namespace sddr {
namespace {

Eigen::MatrixXd kron(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  Eigen::MatrixXd out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j) out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
  return out;
}

// Row i of the result is kron(a.row(i), b.row(i)).
Eigen::MatrixXd row_kron(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  Eigen::MatrixXd out(a.rows(), a.cols() * b.cols());
  for (Eigen::Index j = 0; j < a.cols(); ++j) out.middleCols(j * b.cols(), b.cols()) = b.array().colwise() * a.col(j).array();
  return out;
}

void absorb_constraint(DesignBlock& block, const Eigen::MatrixXd& raw_X, const Eigen::MatrixXd& raw_P,
                       bool sum_to_zero) {
  if (sum_to_zero) {
    block.Z = sum_to_zero_transform(raw_X.colwise().sum().transpose());
  } else {
    block.Z = Eigen::MatrixXd::Identity(raw_X.cols(), raw_X.cols());
  }
  block.X = raw_X * block.Z;
  const Eigen::MatrixXd P = block.Z.transpose() * raw_P * block.Z;
  block.P = 0.5 * (P + P.transpose());
  block.coef_names.clear();
  for (Eigen::Index j = 0; j < block.X.cols(); ++j) block.coef_names.push_back(block.term_id + "." + std::to_string(j + 1));
}

}  // namespace

Eigen::MatrixXd sum_to_zero_transform(const Eigen::VectorXd& column_sums) {
  const Eigen::Index m = column_sums.size();
  if (m < 2) throw BasisError("cannot absorb a constraint into a one-column basis");
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(column_sums);
  const Eigen::MatrixXd Q = qr.householderQ() * Eigen::MatrixXd::Identity(m, m);
  return Q.rightCols(m - 1);
}

DesignBlock build_smooth(std::span<const double> x, const SmoothConfig& cfg, const std::string& var,
                         const std::string& term_id) {
  if (cfg.k <= cfg.penalty_order) throw BasisError("basis dimension k must exceed the penalty order");
  if (static_cast<int>(x.size()) < cfg.k)
    throw BasisError("smooth of '" + var + "' needs at least k=" + std::to_string(cfg.k) + " observations");
  const auto [mn, mx] = std::minmax_element(x.begin(), x.end());
  if (!(*mn < *mx)) throw BasisError("smooth of '" + var + "' has a constant input column");

  DesignBlock block;
  block.term_id = term_id.empty() ? "s(" + var + ")" : term_id;
  block.var_names = {var};
  block.range = {{*mn, *mx}};
  block.basis = cfg.basis;
  block.knots = {quantile_knots(x, cfg.k, 3)};
  block.margin_Z = {Eigen::MatrixXd::Identity(cfg.k, cfg.k)};

  const Eigen::MatrixXd B = bspline_basis(x, block.knots.front());
  const Eigen::MatrixXd P = cfg.basis == BasisTag::PSpline ? difference_penalty(cfg.penalty_order, cfg.k)
                                                           : curvature_penalty(block.knots.front());
  absorb_constraint(block, B, P, cfg.sum_to_zero);
  if (cfg.df_target) {
    block.df_target = cfg.df_target;
    block.lambda = *cfg.df_target >= static_cast<double>(block.p()) ? 0.0 : df_to_lambda(block, *cfg.df_target, cfg.hat1);
  }
  return block;
}

DesignBlock tensor_product(const std::vector<DesignBlock>& marginals, bool sum_to_zero, const std::string& term_id) {
  if (marginals.size() < 2) throw BasisError("tensor product needs at least two marginals");
  DesignBlock block;
  Eigen::MatrixXd X = marginals.front().X;
  Eigen::MatrixXd P;
  std::string vars;
  for (const auto& m : marginals) {
    if (m.X.rows() != X.rows()) throw BasisError("tensor product marginals have mismatched row counts");
    if (m.knots.size() != 1) throw BasisError("tensor product marginals must be univariate splines");
    block.var_names.push_back(m.var_names.front());
    block.range.push_back(m.range.front());
    block.knots.push_back(m.knots.front());
    block.margin_Z.push_back(m.Z);
    vars += (vars.empty() ? "" : ",") + m.var_names.front();
  }
  for (std::size_t j = 1; j < marginals.size(); ++j) X = row_kron(X, marginals[j].X);

  // Sum over j of I (x) ... (x) P_j (x) ... (x) I.
  const Eigen::Index dim = X.cols();
  P = Eigen::MatrixXd::Zero(dim, dim);
  for (std::size_t j = 0; j < marginals.size(); ++j) {
    Eigen::MatrixXd term = Eigen::MatrixXd::Ones(1, 1);
    for (std::size_t i = 0; i < marginals.size(); ++i) {
      const Eigen::MatrixXd factor = i == j ? marginals[i].P : Eigen::MatrixXd::Identity(marginals[i].p(), marginals[i].p());
      term = kron(term, factor);
    }
    P += term;
  }
  block.term_id = term_id.empty() ? "te(" + vars + ")" : term_id;
  block.basis = marginals.front().basis;
  absorb_constraint(block, X, P, sum_to_zero);
  return block;
}

Eigen::MatrixXd spline_design(const DesignBlock& block, const std::vector<std::span<const double>>& columns,
                              std::vector<bool>* extrapolated) {
  if (!block.is_spline()) throw BasisError("block '" + block.term_id + "' is not a spline block");
  if (columns.size() != block.knots.size())
    throw BasisError("block '" + block.term_id + "' expects " + std::to_string(block.knots.size()) + " columns");
  const std::size_t n = columns.front().size();
  if (extrapolated) extrapolated->assign(n, false);
  Eigen::MatrixXd X;
  for (std::size_t m = 0; m < columns.size(); ++m) {
    if (columns[m].size() != n) throw BasisError("spline columns have mismatched lengths");
    const Eigen::MatrixXd Bm = bspline_basis(columns[m], block.knots[m]) * block.margin_Z[m];
    X = m == 0 ? Bm : row_kron(X, Bm);
    if (extrapolated) {
      const auto [lo, hi] = block.range[m];
      for (std::size_t r = 0; r < n; ++r)
        if (columns[m][r] < lo || columns[m][r] > hi) (*extrapolated)[r] = true;
    }
  }
  return X * block.Z;
}

PartialEffect evaluate_partial_effect(const DesignBlock& block, const Eigen::VectorXd& coefs,
                                      const std::vector<Eigen::VectorXd>& grid) {
  if (coefs.size() != block.p())
    throw BasisError("coefficient length " + std::to_string(coefs.size()) + " does not match block dimension " +
                     std::to_string(block.p()));
  if (grid.size() != block.knots.size()) throw BasisError("grid needs one column per smooth variable");
  PartialEffect out;
  const Eigen::Index n = grid.empty() ? 0 : grid.front().size();
  out.clamped.assign(static_cast<std::size_t>(n), false);
  std::vector<std::span<const double>> cols;
  for (std::size_t m = 0; m < grid.size(); ++m) {
    if (grid[m].size() != n) throw BasisError("grid columns have mismatched lengths");
    Eigen::VectorXd g = grid[m];
    const auto [lo, hi] = block.range[m];
    for (Eigen::Index r = 0; r < n; ++r) {
      if (g(r) < lo || g(r) > hi) {
        out.clamped[static_cast<std::size_t>(r)] = true;
        g(r) = std::clamp(g(r), lo, hi);
      }
    }
    out.grid.push_back(std::move(g));
  }
  for (const auto& g : out.grid) cols.emplace_back(g.data(), static_cast<std::size_t>(g.size()));
  out.effect = spline_design(block, cols) * coefs;
  return out;
}

}  // namespace sddr
