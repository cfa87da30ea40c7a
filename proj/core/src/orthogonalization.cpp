#include "sddr/orthogonalization.hpp"

#include <algorithm>
#include <stdexcept>

namespace sddr {

OrthogonalProjector::OrthogonalProjector(const Eigen::MatrixXd& Xoz) {
  if (Xoz.rows() == 0) throw std::invalid_argument("orthogonalization needs a non-empty batch");
  if (!Xoz.allFinite()) throw std::invalid_argument("orthogonalization constraint columns must be finite");
  if (Xoz.cols() == 0) {
    Q_.resize(Xoz.rows(), 0);
    return;
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(Xoz);
  const Eigen::VectorXd r = qr.matrixR().diagonal().cwiseAbs();
  const double r00 = r.size() ? r(0) : 0.0;
  Eigen::Index rank = 0;
  while (rank < r.size() && r00 > 0.0 && r(rank) > 1e-10 * r00) ++rank;
  Q_ = qr.householderQ() * Eigen::MatrixXd::Identity(Xoz.rows(), rank);
}

Eigen::MatrixXd OrthogonalProjector::project(const Eigen::MatrixXd& U) const {
  if (U.rows() != Q_.rows()) throw std::invalid_argument("projection row count mismatch");
  return Q_ * (Q_.transpose() * U);
}

Eigen::MatrixXd OrthogonalProjector::annihilate(const Eigen::MatrixXd& U) const { return U - project(U); }

Eigen::MatrixXd project_orthogonal(const Eigen::MatrixXd& U, const Eigen::MatrixXd& Xoz) {
  return OrthogonalProjector(Xoz).annihilate(U);
}

std::vector<OzPlan> build_oz_plans(const FormulaSet& formulas, const OrthogOptions& options,
                                   const std::function<bool(const std::string&)>& has_column) {
  std::vector<OzPlan> plans;
  for (std::size_t f = 0; f < formulas.formulas.size(); ++f) {
    const auto& formula = formulas.formulas[f];
    std::vector<Overlap> overlaps;
    if (options.orthogonalize) overlaps = detect_overlap(formula, false);
    for (std::size_t t = 0; t < formula.terms.size(); ++t) {
      const auto& term = formula.terms[t];
      if (!term.is_network()) continue;
      OzPlan plan{f, t, term.name, {}};
      auto add = [&](const TermSpec& s, OzOrigin origin) {
        const bool dup = std::any_of(plan.sources.begin(), plan.sources.end(),
                                     [&](const OzSource& o) { return o.term.label() == s.label(); });
        if (!dup) plan.sources.push_back({s, origin});
      };
      if (options.identify_intercept && formula.has_intercept) add(TermSpec{.kind = TermKind::Intercept}, OzOrigin::InterceptOption);
      const TermSpec net = term.network_part();
      for (const auto& ov : overlaps)
        if (ov.network == net)
          for (const auto& s : ov.structured) add(s, OzOrigin::AutomaticOverlap);
      for (const auto& s : term.against) {
        if (has_column)
          for (const auto& v : s.vars)
            if (!has_column(v)) throw std::invalid_argument("%OZ% term '" + s.label() + "' references missing column '" + v + "'");
        add(s, OzOrigin::Manual);
      }
      if (!plan.sources.empty()) plans.push_back(std::move(plan));
    }
  }
  return plans;
}

}  // namespace sddr
