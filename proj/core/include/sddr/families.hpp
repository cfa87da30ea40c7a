#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace sddr {

class FamilyError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// y outside the family's support; row is 0-based.
class SupportError : public FamilyError {
 public:
  SupportError(const std::string& what, Eigen::Index row) : FamilyError(what), row_(row) {}
  Eigen::Index row() const noexcept { return row_; }

 private:
  Eigen::Index row_;
};

enum class FamilyKind { Normal, Bernoulli, Poisson, Gamma, Beta };

// h maps a predictor to the parameter space; dh is its derivative.
struct ResponseFunction {
  std::string name;
  std::function<double(double)> h;
  std::function<double(double)> dh;
};

ResponseFunction identity_response();
// exp(min(eta, 30)) + 1e-12
ResponseFunction exp_response();

struct FamilySpec {
  std::string name;
  FamilyKind kind = FamilyKind::Normal;
  std::vector<std::string> param_names;
  std::vector<ResponseFunction> response;
  bool custom = false;

  int n_params() const { return static_cast<int>(param_names.size()); }
  bool discrete() const { return kind == FamilyKind::Bernoulli || kind == FamilyKind::Poisson; }
};

// normal(loc, scale), bernoulli(logits), poisson(rate), gamma(concentration, rate), beta(alpha, beta).
FamilySpec make_family(std::string_view name);

// Replaces the response functions; throws when the count differs from K.
FamilySpec custom_family(FamilySpec base, std::vector<ResponseFunction> trafos);

// Per-observation parameters theta (n x K), already on the parameter scale.
struct FittedDistribution {
  FamilySpec family;
  Eigen::MatrixXd theta;

  Eigen::Index size() const { return theta.rows(); }
  // Applies h_k column-wise to predictors eta (n x K).
  static FittedDistribution from_predictors(const FamilySpec& family, const Eigen::MatrixXd& eta);
};

Eigen::VectorXd log_prob(const FittedDistribution& dist, const Eigen::VectorXd& y);
// d log_prob / d theta, n x K.
Eigen::MatrixXd log_prob_grad_theta(const FittedDistribution& dist, const Eigen::VectorXd& y);
// d log_prob / d eta through the family's response functions, n x K.
Eigen::MatrixXd log_prob_grad_eta(const FamilySpec& family, const Eigen::MatrixXd& eta, const Eigen::VectorXd& y);

Eigen::VectorXd mean(const FittedDistribution& dist);
Eigen::VectorXd stddev(const FittedDistribution& dist);
Eigen::VectorXd cdf(const FittedDistribution& dist, const Eigen::VectorXd& y);
// Density (continuous) or mass (discrete); zero outside the support.
Eigen::VectorXd pdf(const FittedDistribution& dist, const Eigen::VectorXd& y);
// Generalized inverse cdf, p in (0, 1).
Eigen::VectorXd quantile(const FittedDistribution& dist, double p);

// n_draws x n matrix; column i holds draws for observation i.
Eigen::MatrixXd sample(const FittedDistribution& dist, int n_draws, std::uint64_t seed);

// Standard normal inverse cdf (rational approximation plus one Halley step).
double normal_quantile(double p);

struct MixtureDistribution {
  std::vector<FittedDistribution> components;
  Eigen::VectorXd weights;

  // Uniform weights over the components.
  static MixtureDistribution uniform(std::vector<FittedDistribution> components);
  void validate() const;
};

// log sum_j w_j exp(log_prob_j(y)), evaluated with log-sum-exp.
Eigen::VectorXd mixture_log_prob(const MixtureDistribution& mix, const Eigen::VectorXd& y);
Eigen::VectorXd mixture_mean(const MixtureDistribution& mix);
Eigen::VectorXd mixture_stddev(const MixtureDistribution& mix);
Eigen::VectorXd mixture_cdf(const MixtureDistribution& mix, const Eigen::VectorXd& y);
Eigen::VectorXd mixture_pdf(const MixtureDistribution& mix, const Eigen::VectorXd& y);
Eigen::VectorXd mixture_quantile(const MixtureDistribution& mix, double p);

}  // namespace sddr
