#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "sddr/basis.hpp"
#include "sddr/data_frame.hpp"
#include "sddr/families.hpp"
#include "sddr/formula.hpp"
#include "sddr/graph.hpp"
#include "sddr/orthogonalization.hpp"

namespace sddr {

class ModelError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct PenaltyOptions {
  double df_default = 10.0;
  bool hat1 = false;
  // Multiplier on all structured penalties; 1/n when unset.
  std::optional<double> sp_scale;
};

// Extra penalty on the trainable weights: returns its value and adds its
// gradient to the store's grad accumulators. Not scaled by sp_scale.
using CustomPenalty = std::function<double(ParamStore&)>;

struct ModelSpec {
  FormulaSet formulas;
  FamilySpec family = make_family("normal");
  // Layer stacks by network name; inputs are taken from each formula term.
  std::map<std::string, NetworkSpec> networks;
  PenaltyOptions penalty;
  OrthogOptions orthog;
  CustomPenalty custom_penalty;
};

enum class StructuredKind { Intercept, Linear, Ridge, Lasso, Smooth };

// One design column of a linear term: a numeric variable, or the indicator of
// one factor level.
struct LinearColumn {
  std::string var;
  std::optional<std::string> level;
};

// A structured additive term: its design on the training rows plus the recipe
// for rebuilding design rows on new data.
struct StructuredTerm {
  TermSpec spec;
  StructuredKind kind = StructuredKind::Linear;
  DesignBlock block;
  std::vector<LinearColumn> columns;
  // Training levels per variable of spec.vars (empty for numeric variables).
  std::vector<std::vector<std::string>> levels;
  double la = 0.0;
  std::size_t coef = 0;               // p x 1 slot in the ParamStore (u for lasso)
  std::optional<std::size_t> coef_v;  // lasso: w = u .* v

  bool penalized() const { return kind == StructuredKind::Ridge || kind == StructuredKind::Lasso ||
                                  (kind == StructuredKind::Smooth && block.lambda > 0); }
};

struct NetworkTerm {
  TermSpec spec;
  Network net;
  // Orthogonalization sources; the network's penultimate features are
  // projected off their column space on every batch.
  std::vector<StructuredTerm> constraints;
  std::vector<OzOrigin> origins;
};

// One formula with its compiled terms; contributes to every parameter in `params`.
struct FormulaPart {
  std::string name;
  ParameterFormula formula;
  std::vector<int> params;
  std::vector<StructuredTerm> structured;
  std::vector<NetworkTerm> networks;
  std::vector<std::string> offsets;
};

// Design matrices of a dataset in the layout of a model's formula parts.
struct DesignData {
  Eigen::Index n = 0;
  std::vector<std::vector<Eigen::MatrixXd>> X;       // [part][structured term]
  std::vector<std::vector<Eigen::MatrixXd>> inputs;  // [part][network term]
  std::vector<std::vector<Eigen::MatrixXd>> oz;      // [part][network term]; zero columns when unconstrained
  Eigen::MatrixXd offset;                            // n x K
};

struct ForwardPass {
  std::vector<Eigen::Index> rows;
  Eigen::MatrixXd eta;                               // rows x K
  std::vector<std::vector<Eigen::MatrixXd>> X;       // batch rows of the structured designs
  std::vector<std::vector<Tape>> tapes;
  std::vector<std::unique_ptr<FeatureMap>> maps;
};

class BundleCodec;

// Networks with orthogonalization constraints get no output-layer bias: a
// constant added after the projection would escape it.
void drop_output_bias(NetworkSpec& spec);

class Model {
 public:
  // Compiles formulas against the data: design blocks with calibrated
  // smoothing weights, networks with seeded initial weights, and
  // orthogonalization constraints. Structured coefficients start at zero.
  static Model build(const Eigen::VectorXd& y, const DataFrame& data, ModelSpec spec, std::uint64_t seed = 0);

  const ModelSpec& spec() const { return spec_; }
  const FamilySpec& family() const { return spec_.family; }
  int n_params() const { return spec_.family.n_params(); }
  const std::vector<FormulaPart>& parts() const { return parts_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  std::uint64_t seed() const { return seed_; }

  // Empty for models restored from a bundle.
  const DesignData& training_design() const { return train_; }
  const Eigen::VectorXd& response() const { return y_; }
  Eigen::Index n_train() const { return n_train_; }

  // Design rows for new data, reusing training knots, constraints and levels.
  DesignData design(const DataFrame& data) const;

  // Predictors for the given rows (all rows when `rows` is null). With
  // `record`, tapes and batch designs are kept for backward().
  ForwardPass forward(const DesignData& design, const std::vector<Eigen::Index>* rows, bool training,
                      std::uint64_t seed, bool record) const;
  // Accumulates d(sum(eta .* d_eta))/dtheta into the parameter gradients.
  void backward(ForwardPass& pass, const Eigen::MatrixXd& d_eta);

  // Inference-mode predictors on every row of a design.
  Eigen::MatrixXd predictors(const DesignData& design) const;
  FittedDistribution distribution(const DesignData& design) const;
  FittedDistribution distribution(const DataFrame& data) const { return distribution(design(data)); }

  // Reported coefficient vector (u .* v for lasso terms).
  Eigen::VectorXd coefficients(const StructuredTerm& term) const;
  double sp_scale() const;
  // Largest number of orthogonalization constraint columns of any network.
  Eigen::Index max_constraint_columns() const;
  // Data columns the model reads.
  std::vector<std::string> used_columns() const;

 private:
  Model() = default;
  friend class BundleCodec;

  ModelSpec spec_;
  std::vector<FormulaPart> parts_;
  ParamStore params_;
  DesignData train_;
  Eigen::VectorXd y_;
  Eigen::Index n_train_ = 0;
  std::uint64_t seed_ = 0;
};

}  // namespace sddr
