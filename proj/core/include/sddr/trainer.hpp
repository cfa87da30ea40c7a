#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "sddr/data_frame.hpp"
#include "sddr/model.hpp"

namespace sddr {

// Non-finite loss during training.
class NumericError : public std::runtime_error {
 public:
  NumericError(const std::string& what, int epoch, int batch)
      : std::runtime_error(what), epoch_(epoch), batch_(batch) {}
  int epoch() const noexcept { return epoch_; }
  int batch() const noexcept { return batch_; }

 private:
  int epoch_;
  int batch_;
};

class TrainConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class OptimizerKind { Adam, Sgd, RmsProp, Adadelta };

OptimizerKind parse_optimizer(std::string_view name);
std::string_view optimizer_name(OptimizerKind kind);

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::Adam;
  // Defaults: adam/rmsprop 1e-3, sgd 1e-2, adadelta 1.
  std::optional<double> lr;
  // lr_t = lr / (1 + decay * t), t = number of completed steps.
  double decay = 0.0;
  double momentum = 0.0;  // sgd
  double beta1 = 0.9;
  double beta2 = 0.999;
  // rmsprop 0.9, adadelta 0.95 when unset.
  std::optional<double> rho;
  double epsilon = 1e-7;

  double learning_rate() const;
};

class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig cfg) : cfg_(cfg) {}
  // Applies one update to every parameter from its accumulated gradient.
  void step(ParamStore& params);
  long steps() const { return t_; }

 private:
  OptimizerConfig cfg_;
  long t_ = 0;
  std::vector<Eigen::MatrixXd> s1_, s2_;
};

struct TrainConfig {
  int epochs = 100;
  int batch_size = 32;
  OptimizerConfig optimizer;
  double validation_split = 0.0;
  bool early_stopping = false;
  int patience = 5;
  std::uint64_t seed = 0;
  bool shuffle = true;

  void validate() const;
};

struct FitHistory {
  std::vector<double> loss;
  std::vector<double> val_loss;  // empty without validation data
  int stop_epoch = 0;            // 1-based, = epochs run
  int best_epoch = 0;            // 1-based epoch of the monitored minimum
  bool early_stopped = false;
  std::vector<std::string> warnings;
};

struct LossParts {
  double nll = 0.0;      // mean negative log-likelihood over the batch
  double penalty = 0.0;  // sp_scale * structured penalties
  double custom = 0.0;
  double total() const { return nll + penalty + custom; }
};

// Unscaled structured penalty: sum lambda g'Pg + sum la |w|^2 + sum la (|u|^2 + |v|^2) / 2.
double structured_penalty(const Model& model);

// Loss on the given rows (all when null). With `backprop`, gradients of the
// total are accumulated into the model's parameter store (not zeroed first).
LossParts assemble_loss(Model& model, const DesignData& design, const Eigen::VectorXd& y,
                        const std::vector<Eigen::Index>* rows, bool training, std::uint64_t seed, bool backprop);

struct Validation {
  const DesignData* design = nullptr;
  const Eigen::VectorXd* y = nullptr;
};

using EpochCallback = std::function<void(int epoch, double loss, std::optional<double> val_loss)>;

// Trains on the model's training design. Without explicit validation data the
// trailing floor(validation_split * n) rows are held out.
FitHistory fit(Model& model, const TrainConfig& config, std::optional<Validation> validation = std::nullopt,
               const EpochCallback& on_epoch = {});

struct CvFold {
  std::vector<Eigen::Index> train;
  std::vector<Eigen::Index> test;
};

// One seeded shuffle, then k contiguous folds.
std::vector<CvFold> make_folds(Eigen::Index n, int k, std::uint64_t seed);
// Throws TrainConfigError on out-of-range indices, overlap, or empty sides.
void validate_folds(const std::vector<CvFold>& folds, Eigen::Index n);

struct CvResult {
  std::vector<FitHistory> folds;
  std::vector<double> final_val_loss;
  // Means over the epochs every fold ran.
  std::vector<double> mean_loss;
  std::vector<double> mean_val_loss;
  int best_epoch = 0;  // 1-based argmin of mean_val_loss
};

// Rebuilds the model from `spec` on each fold's training rows (seed
// config.seed) and fits with the fold's test rows as validation data.
CvResult cross_validate(const ModelSpec& spec, const DataFrame& data, const Eigen::VectorXd& y,
                        const std::vector<CvFold>& folds, const TrainConfig& config);

// Fisher-Yates with the portable uniform01 stream.
std::vector<Eigen::Index> shuffled_indices(Eigen::Index n, std::uint64_t seed);

}  // namespace sddr
