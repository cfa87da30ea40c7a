#pragma once

#include <Eigen/Dense>
#include <functional>
#include <string>
#include <vector>

#include "sddr/formula.hpp"

namespace sddr {

// Orthonormal basis of col(Xoz) from a column-pivoted QR; columns whose
// |r_ii| <= 1e-10 |r_00| are treated as dependent and dropped.
class OrthogonalProjector {
 public:
  explicit OrthogonalProjector(const Eigen::MatrixXd& Xoz);

  // (I - P) U
  Eigen::MatrixXd annihilate(const Eigen::MatrixXd& U) const;
  // P U
  Eigen::MatrixXd project(const Eigen::MatrixXd& U) const;
  Eigen::Index rank() const { return Q_.cols(); }

 private:
  Eigen::MatrixXd Q_;
};

// (I - P) U with P the orthogonal projector onto col(Xoz).
Eigen::MatrixXd project_orthogonal(const Eigen::MatrixXd& U, const Eigen::MatrixXd& Xoz);

struct OrthogOptions {
  bool orthogonalize = true;
  bool identify_intercept = false;
};

enum class OzOrigin { AutomaticOverlap, Manual, InterceptOption };

struct OzSource {
  TermSpec term;
  OzOrigin origin;
};

// Constraint columns for one network term occurrence: the union of every
// structured term it must be orthogonal to, within its own formula.
struct OzPlan {
  std::size_t formula = 0;
  std::size_t term = 0;
  std::string network;
  std::vector<OzSource> sources;
};

// has_column, when set, is used to reject %OZ% terms referencing variables
// absent from the data.
std::vector<OzPlan> build_oz_plans(const FormulaSet& formulas, const OrthogOptions& options,
                                   const std::function<bool(const std::string&)>& has_column = {});

}  // namespace sddr
