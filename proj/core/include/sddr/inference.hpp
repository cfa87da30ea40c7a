#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "sddr/data_frame.hpp"
#include "sddr/families.hpp"
#include "sddr/model.hpp"
#include "sddr/trainer.hpp"

namespace sddr {

enum class CoefType { Linear, Smooth };

struct NamedCoefficients {
  std::string term;
  std::vector<std::string> names;
  Eigen::VectorXd values;
};

// Structured coefficients feeding parameter `param` (0-based). Linear covers
// intercept, linear, ridge and lasso terms; Smooth covers s() and te()/ti().
std::vector<NamedCoefficients> coef(const Model& model, CoefType type, int param);

struct PartialEffectTable {
  std::string term;
  std::vector<std::string> vars;
  PartialEffect effect;
};

// Smooth effect curves of parameter `param`: 1-d terms on an n_1d grid over
// the training range, tensor terms on an n_2d x n_2d grid over their first two
// variables (further variables held at the middle of their range).
// `which` picks one smooth by position among that parameter's smooths.
std::vector<PartialEffectTable> partial_effects(const Model& model, int param,
                                                std::optional<std::size_t> which = std::nullopt, int n_1d = 200,
                                                int n_2d = 40);

enum class Statistic { Mean, Stddev, Quantile };

Statistic parse_statistic(std::string_view name);

struct PredictionTable {
  std::vector<std::string> columns;
  Eigen::MatrixXd values;  // rows x columns
};

// Quantile returns one column per entry of probs.
PredictionTable predict_stats(const Model& model, const DataFrame& data, Statistic statistic,
                              const std::vector<double>& probs = {});

// Per-row support points with their densities: an equally spaced grid between
// the 1e-6 and 1 - 1e-6 quantiles, or consecutive integers (masses) for
// discrete families, padded to a common width.
struct DensityGrid {
  Eigen::MatrixXd value;  // rows x points
  Eigen::MatrixXd density;
};
DensityGrid density_grid(const FittedDistribution& dist, int points = 401);

struct LogScore {
  Eigen::VectorXd per_observation;
  double sum = 0.0;
};

// Training data and response when data/y are null.
LogScore log_score(const Model& model, const DataFrame* data = nullptr, const Eigen::VectorXd* y = nullptr);

struct Ensemble {
  std::vector<Model> members;
  std::vector<FitHistory> histories;
};

// Member i is built and trained with seed + i (or with seed itself when
// vary_seed is false).
Ensemble ensemble(const ModelSpec& spec, const DataFrame& data, const Eigen::VectorXd& y, int n_ensemble,
                  const TrainConfig& config, bool vary_seed = true);

MixtureDistribution get_ensemble_distribution(const std::vector<Model>& members, const DataFrame& data);

struct RefitBand {
  std::string term;
  std::vector<Eigen::VectorXd> grid;
  Eigen::VectorXd fit;
  Eigen::VectorXd lower;
  Eigen::VectorXd upper;
};

// Gaussian refit of the location predictor on [structured design | latent
// network features] with the training smoothing weights held fixed. The
// covariance is conditional on the latent features.
struct RefitResult {
  std::vector<std::string> names;
  Eigen::VectorXd coefficients;
  Eigen::MatrixXd covariance;
  Eigen::MatrixXd design;
  Eigen::MatrixXd penalty;
  double sigma2 = 0.0;
  double edf = 0.0;
  Eigen::Index structured_columns = 0;
  Eigen::Index latent_columns = 0;
  std::vector<RefitBand> bands;
};

// Uses the training design and response when data/y are null.
RefitResult last_layer_refit(const Model& model, const DataFrame* data = nullptr, const Eigen::VectorXd* y = nullptr,
                             int n_grid = 200);

}  // namespace sddr
