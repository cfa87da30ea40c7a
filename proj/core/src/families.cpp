#include "sddr/families.hpp"

#include <algorithm>
#include <boost/math/special_functions/beta.hpp>
#include <boost/math/special_functions/digamma.hpp>
#include <boost/math/special_functions/gamma.hpp>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>

#include "sddr/random.hpp"

namespace sddr {
namespace {

constexpr double kExpClamp = 30.0;
constexpr double kFloor = 1e-12;

double log1pexp(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }
double sigmoid(double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

bool is_count(double y) { return y >= 0 && std::floor(y) == y && std::isfinite(y); }

void check_support(FamilyKind kind, double y, Eigen::Index row) {
  bool ok = std::isfinite(y);
  const char* what = "a finite value";
  switch (kind) {
    case FamilyKind::Normal: break;
    case FamilyKind::Bernoulli: ok = y == 0.0 || y == 1.0; what = "0 or 1"; break;
    case FamilyKind::Poisson: ok = is_count(y); what = "a non-negative integer"; break;
    case FamilyKind::Gamma: ok = ok && y > 0; what = "> 0"; break;
    case FamilyKind::Beta: ok = ok && y > 0 && y < 1; what = "in (0, 1)"; break;
  }
  if (!ok)
    throw SupportError("response at row " + std::to_string(row) + " is outside the support (expected " + what + ")", row);
}

double logp_one(FamilyKind kind, const Eigen::Ref<const Eigen::RowVectorXd>& th, double y) {
  switch (kind) {
    case FamilyKind::Normal: {
      const double z = (y - th(0)) / th(1);
      return -0.5 * std::log(2.0 * std::numbers::pi) - std::log(th(1)) - 0.5 * z * z;
    }
    case FamilyKind::Bernoulli:
      return y * th(0) - log1pexp(th(0));
    case FamilyKind::Poisson:
      return y * std::log(th(0)) - th(0) - std::lgamma(y + 1.0);
    case FamilyKind::Gamma:
      return th(0) * std::log(th(1)) + (th(0) - 1.0) * std::log(y) - th(1) * y - std::lgamma(th(0));
    case FamilyKind::Beta:
      return (th(0) - 1.0) * std::log(y) + (th(1) - 1.0) * std::log1p(-y) -
             (std::lgamma(th(0)) + std::lgamma(th(1)) - std::lgamma(th(0) + th(1)));
  }
  return 0.0;
}

void grad_one(FamilyKind kind, const Eigen::Ref<const Eigen::RowVectorXd>& th, double y, Eigen::Ref<Eigen::RowVectorXd, 0, Eigen::InnerStride<>> g) {
  using boost::math::digamma;
  switch (kind) {
    case FamilyKind::Normal: {
      const double r = y - th(0), s2 = th(1) * th(1);
      g(0) = r / s2;
      g(1) = -1.0 / th(1) + r * r / (s2 * th(1));
      break;
    }
    case FamilyKind::Bernoulli:
      g(0) = y - sigmoid(th(0));
      break;
    case FamilyKind::Poisson:
      g(0) = y / th(0) - 1.0;
      break;
    case FamilyKind::Gamma:
      g(0) = std::log(th(1)) + std::log(y) - digamma(th(0));
      g(1) = th(0) / th(1) - y;
      break;
    case FamilyKind::Beta: {
      const double dab = digamma(th(0) + th(1));
      g(0) = std::log(y) - digamma(th(0)) + dab;
      g(1) = std::log1p(-y) - digamma(th(1)) + dab;
      break;
    }
  }
}

double cdf_one(FamilyKind kind, const Eigen::Ref<const Eigen::RowVectorXd>& th, double y) {
  switch (kind) {
    case FamilyKind::Normal:
      return 0.5 * std::erfc(-(y - th(0)) / (th(1) * std::numbers::sqrt2));
    case FamilyKind::Bernoulli:
      return y < 0 ? 0.0 : (y < 1 ? 1.0 - sigmoid(th(0)) : 1.0);
    case FamilyKind::Poisson:
      return y < 0 ? 0.0 : boost::math::gamma_q(std::floor(y) + 1.0, th(0));
    case FamilyKind::Gamma:
      return y <= 0 ? 0.0 : boost::math::gamma_p(th(0), th(1) * y);
    case FamilyKind::Beta:
      return y <= 0 ? 0.0 : (y >= 1 ? 1.0 : boost::math::ibeta(th(0), th(1), y));
  }
  return 0.0;
}

double pdf_one(FamilyKind kind, const Eigen::Ref<const Eigen::RowVectorXd>& th, double y) {
  switch (kind) {
    case FamilyKind::Normal: break;
    case FamilyKind::Bernoulli: if (y != 0.0 && y != 1.0) return 0.0; break;
    case FamilyKind::Poisson: if (!is_count(y)) return 0.0; break;
    case FamilyKind::Gamma: if (!(y > 0)) return 0.0; break;
    case FamilyKind::Beta: if (!(y > 0 && y < 1)) return 0.0; break;
  }
  return std::exp(logp_one(kind, th, y));
}

double mean_one(FamilyKind kind, const Eigen::Ref<const Eigen::RowVectorXd>& th) {
  switch (kind) {
    case FamilyKind::Normal: return th(0);
    case FamilyKind::Bernoulli: return sigmoid(th(0));
    case FamilyKind::Poisson: return th(0);
    case FamilyKind::Gamma: return th(0) / th(1);
    case FamilyKind::Beta: return th(0) / (th(0) + th(1));
  }
  return 0.0;
}

double var_one(FamilyKind kind, const Eigen::Ref<const Eigen::RowVectorXd>& th) {
  switch (kind) {
    case FamilyKind::Normal: return th(1) * th(1);
    case FamilyKind::Bernoulli: { const double p = sigmoid(th(0)); return p * (1.0 - p); }
    case FamilyKind::Poisson: return th(0);
    case FamilyKind::Gamma: return th(0) / (th(1) * th(1));
    case FamilyKind::Beta: {
      const double s = th(0) + th(1);
      return th(0) * th(1) / (s * s * (s + 1.0));
    }
  }
  return 0.0;
}

// Smallest value q with F(q) >= p, by bisection: reals for continuous laws,
// integers for discrete ones.
template <class Cdf>
double invert_cdf(Cdf&& F, double p, double lo, double hi, bool discrete) {
  if (discrete) {
    double a = std::floor(lo), b = std::ceil(hi);
    while (F(a) >= p && a > 0) a = std::max(0.0, a - std::max(1.0, 2.0 * (b - a)));
    while (F(b) < p) b = b + std::max(1.0, 2.0 * (b - a));
    if (F(a) >= p) return a;
    while (b - a > 1.0) {
      const double m = std::floor(0.5 * (a + b));
      (F(m) >= p ? b : a) = m;
    }
    return b;
  }
  double width = std::max(1.0, hi - lo);
  while (F(lo) > p) { lo -= width; width *= 2; }
  width = std::max(1.0, hi - lo);
  while (F(hi) < p) { hi += width; width *= 2; }
  for (int it = 0; it < 300; ++it) {
    const double m = 0.5 * (lo + hi);
    if (m <= lo || m >= hi) break;
    (F(m) >= p ? hi : lo) = m;
    if (hi - lo <= 1e-15 * std::max(1.0, std::abs(hi))) break;
  }
  return 0.5 * (lo + hi);
}

double quantile_one(FamilyKind kind, const Eigen::Ref<const Eigen::RowVectorXd>& th, double p) {
  switch (kind) {
    case FamilyKind::Normal: return th(0) + th(1) * normal_quantile(p);
    case FamilyKind::Bernoulli: return p <= 1.0 - sigmoid(th(0)) ? 0.0 : 1.0;
    case FamilyKind::Poisson: {
      const double sd = std::sqrt(th(0));
      return invert_cdf([&](double y) { return cdf_one(kind, th, y); }, p, std::max(0.0, th(0) - 10 * sd),
                        th(0) + 10 * sd + 10, true);
    }
    case FamilyKind::Gamma: {
      auto F = [&](double y) { return cdf_one(kind, th, y); };
      double hi = mean_one(kind, th) + 10 * std::sqrt(var_one(kind, th));
      while (F(hi) < p) hi *= 2;
      double lo = 0.0;
      for (int it = 0; it < 2000 && hi - lo > 1e-15 * hi; ++it) {
        const double m = 0.5 * (lo + hi);
        (F(m) >= p ? hi : lo) = m;
      }
      return 0.5 * (lo + hi);
    }
    case FamilyKind::Beta: {
      double lo = 0.0, hi = 1.0;
      for (int it = 0; it < 2000 && hi - lo > 1e-16; ++it) {
        const double m = 0.5 * (lo + hi);
        if (m <= lo || m >= hi) break;
        (cdf_one(kind, th, m) >= p ? hi : lo) = m;
      }
      return 0.5 * (lo + hi);
    }
  }
  return 0.0;
}

void check_prob(double p) {
  if (!(p > 0.0 && p < 1.0)) throw FamilyError("probability must lie in (0, 1)");
}

void check_length(const FittedDistribution& d, const Eigen::VectorXd& y) {
  if (y.size() != d.size())
    throw FamilyError("response length " + std::to_string(y.size()) + " does not match " + std::to_string(d.size()) +
                      " observations");
}

}  // namespace

ResponseFunction identity_response() {
  return {"identity", [](double x) { return x; }, [](double) { return 1.0; }};
}

ResponseFunction exp_response() {
  return {"exp", [](double x) { return std::exp(std::min(x, kExpClamp)) + kFloor; },
          [](double x) { return x < kExpClamp ? std::exp(x) : 0.0; }};
}

FamilySpec make_family(std::string_view name) {
  FamilySpec f;
  f.name = std::string(name);
  if (name == "normal") {
    f.kind = FamilyKind::Normal;
    f.param_names = {"loc", "scale"};
    f.response = {identity_response(), exp_response()};
  } else if (name == "bernoulli") {
    f.kind = FamilyKind::Bernoulli;
    f.param_names = {"logits"};
    f.response = {identity_response()};
  } else if (name == "poisson") {
    f.kind = FamilyKind::Poisson;
    f.param_names = {"rate"};
    f.response = {exp_response()};
  } else if (name == "gamma") {
    f.kind = FamilyKind::Gamma;
    f.param_names = {"concentration", "rate"};
    f.response = {exp_response(), exp_response()};
  } else if (name == "beta") {
    f.kind = FamilyKind::Beta;
    f.param_names = {"alpha", "beta"};
    f.response = {exp_response(), exp_response()};
  } else {
    throw FamilyError("unknown family '" + std::string(name) + "'");
  }
  return f;
}

FamilySpec custom_family(FamilySpec base, std::vector<ResponseFunction> trafos) {
  if (static_cast<int>(trafos.size()) != base.n_params())
    throw FamilyError("family '" + base.name + "' needs " + std::to_string(base.n_params()) +
                      " response functions, got " + std::to_string(trafos.size()));
  for (const auto& t : trafos)
    if (!t.h || !t.dh) throw FamilyError("custom response functions need both h and its derivative");
  base.response = std::move(trafos);
  base.custom = true;
  return base;
}

FittedDistribution FittedDistribution::from_predictors(const FamilySpec& family, const Eigen::MatrixXd& eta) {
  if (eta.cols() != family.n_params()) throw FamilyError("predictor matrix must have one column per parameter");
  FittedDistribution d{family, Eigen::MatrixXd(eta.rows(), eta.cols())};
  for (Eigen::Index k = 0; k < eta.cols(); ++k) {
    const auto& h = family.response[static_cast<std::size_t>(k)].h;
    for (Eigen::Index i = 0; i < eta.rows(); ++i) d.theta(i, k) = h(eta(i, k));
  }
  return d;
}

Eigen::VectorXd log_prob(const FittedDistribution& dist, const Eigen::VectorXd& y) {
  check_length(dist, y);
  Eigen::VectorXd out(y.size());
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    check_support(dist.family.kind, y(i), i);
    out(i) = logp_one(dist.family.kind, dist.theta.row(i), y(i));
  }
  return out;
}

Eigen::MatrixXd log_prob_grad_theta(const FittedDistribution& dist, const Eigen::VectorXd& y) {
  check_length(dist, y);
  Eigen::MatrixXd g(dist.theta.rows(), dist.theta.cols());
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    check_support(dist.family.kind, y(i), i);
    grad_one(dist.family.kind, dist.theta.row(i), y(i), g.row(i));
  }
  return g;
}

Eigen::MatrixXd log_prob_grad_eta(const FamilySpec& family, const Eigen::MatrixXd& eta, const Eigen::VectorXd& y) {
  const FittedDistribution d = FittedDistribution::from_predictors(family, eta);
  Eigen::MatrixXd g = log_prob_grad_theta(d, y);
  for (Eigen::Index k = 0; k < eta.cols(); ++k) {
    const auto& dh = family.response[static_cast<std::size_t>(k)].dh;
    for (Eigen::Index i = 0; i < eta.rows(); ++i) g(i, k) *= dh(eta(i, k));
  }
  return g;
}

Eigen::VectorXd mean(const FittedDistribution& dist) {
  Eigen::VectorXd out(dist.size());
  for (Eigen::Index i = 0; i < dist.size(); ++i) out(i) = mean_one(dist.family.kind, dist.theta.row(i));
  return out;
}

Eigen::VectorXd stddev(const FittedDistribution& dist) {
  Eigen::VectorXd out(dist.size());
  for (Eigen::Index i = 0; i < dist.size(); ++i) out(i) = std::sqrt(var_one(dist.family.kind, dist.theta.row(i)));
  return out;
}

Eigen::VectorXd cdf(const FittedDistribution& dist, const Eigen::VectorXd& y) {
  check_length(dist, y);
  Eigen::VectorXd out(y.size());
  for (Eigen::Index i = 0; i < y.size(); ++i) out(i) = cdf_one(dist.family.kind, dist.theta.row(i), y(i));
  return out;
}

Eigen::VectorXd pdf(const FittedDistribution& dist, const Eigen::VectorXd& y) {
  check_length(dist, y);
  Eigen::VectorXd out(y.size());
  for (Eigen::Index i = 0; i < y.size(); ++i) out(i) = pdf_one(dist.family.kind, dist.theta.row(i), y(i));
  return out;
}

Eigen::VectorXd quantile(const FittedDistribution& dist, double p) {
  check_prob(p);
  Eigen::VectorXd out(dist.size());
  for (Eigen::Index i = 0; i < dist.size(); ++i) out(i) = quantile_one(dist.family.kind, dist.theta.row(i), p);
  return out;
}

Eigen::MatrixXd sample(const FittedDistribution& dist, int n_draws, std::uint64_t seed) {
  if (n_draws < 0) throw FamilyError("number of draws must be >= 0");
  Eigen::MatrixXd out(n_draws, dist.size());
  for (Eigen::Index i = 0; i < dist.size(); ++i) {
    std::mt19937_64 rng(mix_seed(seed, static_cast<std::uint64_t>(i)));
    const auto th = dist.theta.row(i);
    for (int d = 0; d < n_draws; ++d) {
      double v = 0.0;
      switch (dist.family.kind) {
        case FamilyKind::Normal: v = std::normal_distribution<double>(th(0), th(1))(rng); break;
        case FamilyKind::Bernoulli: v = uniform01(rng) < sigmoid(th(0)) ? 1.0 : 0.0; break;
        case FamilyKind::Poisson: v = static_cast<double>(std::poisson_distribution<long long>(th(0))(rng)); break;
        case FamilyKind::Gamma: v = std::gamma_distribution<double>(th(0), 1.0 / th(1))(rng); break;
        case FamilyKind::Beta: {
          const double a = std::gamma_distribution<double>(th(0), 1.0)(rng);
          const double b = std::gamma_distribution<double>(th(1), 1.0)(rng);
          v = a / (a + b);
          break;
        }
      }
      out(d, i) = v;
    }
  }
  return out;
}

double normal_quantile(double p) {
  check_prob(p);
  // Acklam's rational approximation.
  static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
                                 1.383577518672690e+02,  -3.066479806614716e+01, 2.506628277459239e+00};
  static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
                                 6.680131188771972e+01,  -1.328068155288572e+01};
  static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
                                 -2.549732539343734e+00, 4.374664141464968e+00,  2.938163982698783e+00};
  static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
                                 3.754408661907416e+00};
  constexpr double p_low = 0.02425;
  double x;
  if (p < p_low) {
    const double q = std::sqrt(-2 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1);
  } else if (p <= 1 - p_low) {
    const double q = p - 0.5, r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1);
  } else {
    const double q = std::sqrt(-2 * std::log1p(-p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1);
  }
  // Halley refinement against the erfc-based cdf.
  const double e = 0.5 * std::erfc(-x / std::numbers::sqrt2) - p;
  const double u = e * std::sqrt(2 * std::numbers::pi) * std::exp(x * x / 2);
  return x - u / (1 + x * u / 2);
}

MixtureDistribution MixtureDistribution::uniform(std::vector<FittedDistribution> components) {
  const auto m = static_cast<Eigen::Index>(components.size());
  MixtureDistribution mix{std::move(components), Eigen::VectorXd::Constant(m, m ? 1.0 / static_cast<double>(m) : 0.0)};
  mix.validate();
  return mix;
}

void MixtureDistribution::validate() const {
  if (components.empty()) throw FamilyError("mixture has no components");
  if (weights.size() != static_cast<Eigen::Index>(components.size()))
    throw FamilyError("mixture needs one weight per component");
  if ((weights.array() < 0).any() || std::abs(weights.sum() - 1.0) > 1e-12)
    throw FamilyError("mixture weights must be non-negative and sum to 1");
  for (const auto& c : components) {
    if (c.family.kind != components.front().family.kind || c.size() != components.front().size())
      throw FamilyError("mixture components must share family and observations");
  }
}

Eigen::VectorXd mixture_log_prob(const MixtureDistribution& mix, const Eigen::VectorXd& y) {
  mix.validate();
  const auto m = static_cast<Eigen::Index>(mix.components.size());
  Eigen::MatrixXd lp(y.size(), m);
  for (Eigen::Index j = 0; j < m; ++j) lp.col(j) = log_prob(mix.components[static_cast<std::size_t>(j)], y);
  Eigen::VectorXd out(y.size());
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < m; ++j)
      if (mix.weights(j) > 0) mx = std::max(mx, lp(i, j));
    double s = 0.0;
    for (Eigen::Index j = 0; j < m; ++j)
      if (mix.weights(j) > 0) s += mix.weights(j) * std::exp(lp(i, j) - mx);
    out(i) = mx + std::log(s);
  }
  return out;
}

Eigen::VectorXd mixture_mean(const MixtureDistribution& mix) {
  mix.validate();
  Eigen::VectorXd out = Eigen::VectorXd::Zero(mix.components.front().size());
  for (std::size_t j = 0; j < mix.components.size(); ++j)
    out += mix.weights(static_cast<Eigen::Index>(j)) * mean(mix.components[j]);
  return out;
}

Eigen::VectorXd mixture_stddev(const MixtureDistribution& mix) {
  const Eigen::VectorXd mu = mixture_mean(mix);
  Eigen::VectorXd second = Eigen::VectorXd::Zero(mu.size());
  for (std::size_t j = 0; j < mix.components.size(); ++j) {
    const Eigen::VectorXd m = mean(mix.components[j]);
    const Eigen::VectorXd s = stddev(mix.components[j]);
    second += mix.weights(static_cast<Eigen::Index>(j)) * (s.array().square() + m.array().square()).matrix();
  }
  return (second.array() - mu.array().square()).max(0.0).sqrt();
}

Eigen::VectorXd mixture_cdf(const MixtureDistribution& mix, const Eigen::VectorXd& y) {
  mix.validate();
  Eigen::VectorXd out = Eigen::VectorXd::Zero(y.size());
  for (std::size_t j = 0; j < mix.components.size(); ++j)
    out += mix.weights(static_cast<Eigen::Index>(j)) * cdf(mix.components[j], y);
  return out;
}

Eigen::VectorXd mixture_pdf(const MixtureDistribution& mix, const Eigen::VectorXd& y) {
  mix.validate();
  Eigen::VectorXd out = Eigen::VectorXd::Zero(y.size());
  for (std::size_t j = 0; j < mix.components.size(); ++j)
    out += mix.weights(static_cast<Eigen::Index>(j)) * pdf(mix.components[j], y);
  return out;
}

Eigen::VectorXd mixture_quantile(const MixtureDistribution& mix, double p) {
  mix.validate();
  check_prob(p);
  const Eigen::Index n = mix.components.front().size();
  const FamilyKind kind = mix.components.front().family.kind;
  const bool discrete = mix.components.front().family.discrete();
  Eigen::VectorXd lo = quantile(mix.components.front(), p), hi = lo;
  for (std::size_t j = 1; j < mix.components.size(); ++j) {
    const Eigen::VectorXd q = quantile(mix.components[j], p);
    lo = lo.cwiseMin(q);
    hi = hi.cwiseMax(q);
  }
  Eigen::VectorXd out(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    auto F = [&](double y) {
      double s = 0.0;
      for (std::size_t j = 0; j < mix.components.size(); ++j)
        s += mix.weights(static_cast<Eigen::Index>(j)) * cdf_one(kind, mix.components[j].theta.row(i), y);
      return s;
    };
    if (lo(i) == hi(i)) {
      out(i) = lo(i);
      continue;
    }
    out(i) = invert_cdf(F, p, lo(i), hi(i), discrete);
  }
  return out;
}

}  // namespace sddr
