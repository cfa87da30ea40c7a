#include "sddr/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <set>

#include "sddr/parallel.hpp"
#include "sddr/random.hpp"

namespace sddr {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

OptimizerKind parse_optimizer(std::string_view name) {
  if (name == "adam") return OptimizerKind::Adam;
  if (name == "sgd") return OptimizerKind::Sgd;
  if (name == "rmsprop") return OptimizerKind::RmsProp;
  if (name == "adadelta") return OptimizerKind::Adadelta;
  throw TrainConfigError("unknown optimizer '" + std::string(name) + "' (expected adam, sgd, rmsprop or adadelta)");
}

std::string_view optimizer_name(OptimizerKind kind) {
  switch (kind) {
    case OptimizerKind::Adam: return "adam";
    case OptimizerKind::Sgd: return "sgd";
    case OptimizerKind::RmsProp: return "rmsprop";
    case OptimizerKind::Adadelta: return "adadelta";
  }
  return "adam";
}

double OptimizerConfig::learning_rate() const {
  if (lr) return *lr;
  switch (kind) {
    case OptimizerKind::Sgd: return 1e-2;
    case OptimizerKind::Adadelta: return 1.0;
    default: return 1e-3;
  }
}

void Optimizer::step(ParamStore& params) {
  if (s1_.empty()) {
    for (const auto& p : params) {
      s1_.push_back(MatrixXd::Zero(p.value.rows(), p.value.cols()));
      s2_.push_back(MatrixXd::Zero(p.value.rows(), p.value.cols()));
    }
  }
  if (s1_.size() != params.size()) throw std::logic_error("optimizer state does not match the parameter store");
  const double lr = cfg_.learning_rate() / (1.0 + cfg_.decay * static_cast<double>(t_));
  ++t_;
  const double eps = cfg_.epsilon;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    auto& m = s1_[i];
    auto& v = s2_[i];
    switch (cfg_.kind) {
      case OptimizerKind::Sgd:
        if (cfg_.momentum > 0.0) {
          m = cfg_.momentum * m - lr * p.grad;
          p.value += m;
        } else {
          p.value -= lr * p.grad;
        }
        break;
      case OptimizerKind::Adam: {
        m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * p.grad;
        v = cfg_.beta2 * v + (1.0 - cfg_.beta2) * p.grad.cwiseAbs2();
        const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        p.value.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
        break;
      }
      case OptimizerKind::RmsProp: {
        const double rho = cfg_.rho.value_or(0.9);
        v = rho * v + (1.0 - rho) * p.grad.cwiseAbs2();
        p.value.array() -= lr * p.grad.array() / (v.array().sqrt() + eps);
        break;
      }
      case OptimizerKind::Adadelta: {
        const double rho = cfg_.rho.value_or(0.95);
        v = rho * v + (1.0 - rho) * p.grad.cwiseAbs2();
        const MatrixXd delta = ((m.array() + eps).sqrt() / (v.array() + eps).sqrt() * p.grad.array()).matrix();
        m = rho * m + (1.0 - rho) * delta.cwiseAbs2();
        p.value -= lr * delta;
        break;
      }
    }
  }
}

void TrainConfig::validate() const {
  if (epochs < 1) throw TrainConfigError("epochs must be >= 1");
  if (batch_size < 1) throw TrainConfigError("batch_size must be >= 1");
  if (patience < 1) throw TrainConfigError("patience must be >= 1");
  if (!(validation_split >= 0.0 && validation_split < 1.0)) throw TrainConfigError("validation_split must lie in [0, 1)");
  if (optimizer.lr && !(*optimizer.lr > 0.0)) throw TrainConfigError("learning rate must be positive");
  if (!(optimizer.decay >= 0.0)) throw TrainConfigError("decay must be >= 0");
  if (!(optimizer.momentum >= 0.0 && optimizer.momentum < 1.0)) throw TrainConfigError("momentum must lie in [0, 1)");
}

double structured_penalty(const Model& model) {
  double pen = 0.0;
  const auto& params = model.params();
  for (const auto& part : model.parts())
    for (const auto& st : part.structured) {
      if (!st.penalized()) continue;
      const VectorXd u = params[st.coef].value.col(0);
      switch (st.kind) {
        case StructuredKind::Smooth: pen += st.block.lambda * u.dot(st.block.P * u); break;
        case StructuredKind::Ridge: pen += st.la * u.squaredNorm(); break;
        case StructuredKind::Lasso:
          pen += 0.5 * st.la * (u.squaredNorm() + params[*st.coef_v].value.squaredNorm());
          break;
        default: break;
      }
    }
  return pen;
}

namespace {

void add_penalty_gradient(Model& model, double scale) {
  auto& params = model.params();
  for (const auto& part : model.parts())
    for (const auto& st : part.structured) {
      if (!st.penalized()) continue;
      auto& u = params[st.coef];
      switch (st.kind) {
        case StructuredKind::Smooth: u.grad.noalias() += scale * 2.0 * st.block.lambda * (st.block.P * u.value); break;
        case StructuredKind::Ridge: u.grad += scale * 2.0 * st.la * u.value; break;
        case StructuredKind::Lasso:
          u.grad += scale * st.la * u.value;
          params[*st.coef_v].grad += scale * st.la * params[*st.coef_v].value;
          break;
        default: break;
      }
    }
}

// Names the first structured term whose penalty is not finite.
std::string non_finite_term(const Model& model) {
  for (const auto& part : model.parts())
    for (const auto& st : part.structured)
      if (!model.coefficients(st).allFinite()) return part.name + "/" + st.block.term_id;
  return {};
}

std::vector<Index> iota(Index from, Index to) {
  std::vector<Index> out(static_cast<std::size_t>(std::max<Index>(0, to - from)));
  std::iota(out.begin(), out.end(), from);
  return out;
}

}  // namespace

LossParts assemble_loss(Model& model, const DesignData& design, const VectorXd& y, const std::vector<Index>* rows,
                        bool training, std::uint64_t seed, bool backprop) {
  ForwardPass pass = model.forward(design, rows, training, seed, backprop);
  const Index nb = pass.eta.rows();
  if (nb == 0) throw TrainConfigError("empty batch");
  const VectorXd yb = rows ? VectorXd(y(*rows)) : y;
  const FittedDistribution dist = FittedDistribution::from_predictors(model.family(), pass.eta);
  LossParts out;
  out.nll = -log_prob(dist, yb).mean();
  const double scale = model.sp_scale();
  out.penalty = scale * structured_penalty(model);
  if (backprop) {
    const MatrixXd d_eta = -log_prob_grad_eta(model.family(), pass.eta, yb) / static_cast<double>(nb);
    model.backward(pass, d_eta);
    add_penalty_gradient(model, scale);
  }
  if (model.spec().custom_penalty) {
    if (backprop) {
      out.custom = model.spec().custom_penalty(model.params());
    } else {
      // Evaluate on a copy so that inference never touches the gradients.
      ParamStore scratch = model.params();
      out.custom = model.spec().custom_penalty(scratch);
    }
  }
  return out;
}

FitHistory fit(Model& model, const TrainConfig& config, std::optional<Validation> validation,
               const EpochCallback& on_epoch) {
  config.validate();
  const DesignData& design = model.training_design();
  const VectorXd& y = model.response();
  const Index n = design.n;
  if (n == 0 || y.size() != n) throw TrainConfigError("model has no training data");

  Index n_train = n;
  std::vector<Index> val_rows;
  if (!validation && config.validation_split > 0.0) {
    const auto n_val = static_cast<Index>(std::floor(config.validation_split * static_cast<double>(n)));
    n_train = n - n_val;
    val_rows = iota(n_train, n);
  }
  if (n_train <= 0) throw TrainConfigError("validation_split leaves no training rows");
  const bool has_val = validation.has_value() || !val_rows.empty();

  FitHistory hist;
  const Index batch = std::min<Index>(config.batch_size, n_train);
  if (model.max_constraint_columns() > batch)
    hist.warnings.push_back("batch size " + std::to_string(batch) + " is smaller than the " +
                            std::to_string(model.max_constraint_columns()) +
                            " orthogonalization constraint columns; projections may remove all network features");

  auto monitored_loss = [&]() -> std::optional<double> {
    if (validation) return assemble_loss(model, *validation->design, *validation->y, nullptr, false, 0, false).total();
    if (!val_rows.empty()) return assemble_loss(model, design, y, &val_rows, false, 0, false).total();
    return std::nullopt;
  };

  Optimizer opt(config.optimizer);
  double best = std::numeric_limits<double>::infinity();
  std::vector<MatrixXd> best_weights;
  int wait = 0;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    std::vector<Index> order = config.shuffle ? shuffled_indices(n_train, mix_seed(config.seed, epoch)) : iota(0, n_train);
    double sum = 0.0;
    int b = 0;
    for (Index start = 0; start < n_train; start += batch, ++b) {
      const std::vector<Index> rows(order.begin() + start, order.begin() + std::min(n_train, start + batch));
      model.params().zero_grad();
      const LossParts parts =
          assemble_loss(model, design, y, &rows, true, mix_seed(mix_seed(config.seed, epoch), b), true);
      if (!std::isfinite(parts.total())) {
        std::string what = "non-finite loss at epoch " + std::to_string(epoch) + ", batch " + std::to_string(b + 1);
        if (!std::isfinite(parts.nll)) what += " (negative log-likelihood)";
        else if (!std::isfinite(parts.custom)) what += " (custom penalty)";
        else what += " (penalty of " + non_finite_term(model) + ")";
        throw NumericError(what, epoch, b + 1);
      }
      for (const auto& p : model.params())
        if (!p.grad.allFinite())
          throw NumericError("non-finite gradient for '" + p.name + "' at epoch " + std::to_string(epoch) + ", batch " +
                                 std::to_string(b + 1),
                             epoch, b + 1);
      opt.step(model.params());
      sum += parts.total() * static_cast<double>(rows.size());
    }
    hist.loss.push_back(sum / static_cast<double>(n_train));
    const std::optional<double> val = monitored_loss();
    if (val) {
      if (!std::isfinite(*val))
        throw NumericError("non-finite validation loss at epoch " + std::to_string(epoch), epoch, 0);
      hist.val_loss.push_back(*val);
    }
    hist.stop_epoch = epoch;
    if (on_epoch) on_epoch(epoch, hist.loss.back(), val);

    const double monitor = has_val ? *val : hist.loss.back();
    if (monitor < best) {
      best = monitor;
      hist.best_epoch = epoch;
      wait = 0;
      if (config.early_stopping) best_weights = model.params().snapshot();
    } else if (++wait >= config.patience && config.early_stopping) {
      hist.early_stopped = true;
      break;
    }
  }
  if (config.early_stopping && !best_weights.empty()) model.params().restore(best_weights);
  return hist;
}

std::vector<Index> shuffled_indices(Index n, std::uint64_t seed) {
  std::vector<Index> idx = iota(0, n);
  std::mt19937_64 rng(seed);
  for (Index i = n - 1; i > 0; --i) {
    const auto j = static_cast<Index>(uniform01(rng) * static_cast<double>(i + 1));
    std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(std::min(j, i))]);
  }
  return idx;
}

std::vector<CvFold> make_folds(Index n, int k, std::uint64_t seed) {
  if (k < 2) throw TrainConfigError("cv_folds must be >= 2");
  if (k > n) throw TrainConfigError("cv_folds exceeds the number of observations");
  const std::vector<Index> perm = shuffled_indices(n, seed);
  std::vector<CvFold> folds(static_cast<std::size_t>(k));
  for (int f = 0; f < k; ++f) {
    const Index lo = n * f / k, hi = n * (f + 1) / k;
    auto& fold = folds[static_cast<std::size_t>(f)];
    for (Index i = 0; i < n; ++i) (i >= lo && i < hi ? fold.test : fold.train).push_back(perm[static_cast<std::size_t>(i)]);
    std::sort(fold.train.begin(), fold.train.end());
    std::sort(fold.test.begin(), fold.test.end());
  }
  return folds;
}

void validate_folds(const std::vector<CvFold>& folds, Index n) {
  if (folds.size() < 2) throw TrainConfigError("cross-validation needs at least two folds");
  for (std::size_t f = 0; f < folds.size(); ++f) {
    const auto& fold = folds[f];
    const std::string tag = "fold " + std::to_string(f + 1);
    if (fold.train.empty() || fold.test.empty()) throw TrainConfigError(tag + " has an empty train or test set");
    std::set<Index> train;
    for (Index i : fold.train) {
      if (i < 0 || i >= n) throw TrainConfigError(tag + ": index " + std::to_string(i) + " out of range");
      train.insert(i);
    }
    for (Index i : fold.test) {
      if (i < 0 || i >= n) throw TrainConfigError(tag + ": index " + std::to_string(i) + " out of range");
      if (train.count(i)) throw TrainConfigError(tag + ": row " + std::to_string(i) + " is in both train and test");
    }
  }
}

CvResult cross_validate(const ModelSpec& spec, const DataFrame& data, const VectorXd& y,
                        const std::vector<CvFold>& folds, const TrainConfig& config) {
  config.validate();
  validate_folds(folds, y.size());
  CvResult res;
  res.folds.resize(folds.size());
  res.final_val_loss.resize(folds.size());
  parallel_for(folds.size(), [&](std::size_t f) {
    auto to_size = [](const std::vector<Index>& v) { return std::vector<std::size_t>(v.begin(), v.end()); };
    const auto train_rows = to_size(folds[f].train);
    const auto test_rows = to_size(folds[f].test);
    const DataFrame train = data.subset(train_rows);
    const DataFrame test = data.subset(test_rows);
    const VectorXd ytr = y(folds[f].train);
    const VectorXd yte = y(folds[f].test);
    Model m = Model::build(ytr, train, spec, config.seed);
    const DesignData test_design = m.design(test);
    TrainConfig cfg = config;
    cfg.validation_split = 0.0;
    res.folds[f] = fit(m, cfg, Validation{&test_design, &yte});
    res.final_val_loss[f] = res.folds[f].val_loss.back();
  });
  std::size_t common = std::numeric_limits<std::size_t>::max();
  for (const auto& h : res.folds) common = std::min(common, h.loss.size());
  res.mean_loss.assign(common, 0.0);
  res.mean_val_loss.assign(common, 0.0);
  for (const auto& h : res.folds)
    for (std::size_t e = 0; e < common; ++e) {
      res.mean_loss[e] += h.loss[e] / static_cast<double>(folds.size());
      res.mean_val_loss[e] += h.val_loss[e] / static_cast<double>(folds.size());
    }
  res.best_epoch = static_cast<int>(std::min_element(res.mean_val_loss.begin(), res.mean_val_loss.end()) -
                                    res.mean_val_loss.begin()) + 1;
  return res;
}

}  // namespace sddr
