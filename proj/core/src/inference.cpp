#include "sddr/inference.hpp"

#include <algorithm>
#include <cmath>

#include "sddr/parallel.hpp"
#include "sddr/text.hpp"

namespace sddr {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

void check_param(const Model& model, int param) {
  if (param < 0 || param >= model.n_params())
    throw ModelError("parameter index " + std::to_string(param) + " out of range 0.." + std::to_string(model.n_params() - 1));
}

// Parts whose structured terms feed exactly this parameter.
std::vector<const FormulaPart*> parts_for(const Model& model, int param) {
  std::vector<const FormulaPart*> out;
  for (const auto& part : model.parts())
    if (part.params.size() == 1 && part.params.front() == param) out.push_back(&part);
  return out;
}

VectorXd linspace(double lo, double hi, int n) { return VectorXd::LinSpaced(n, lo, hi); }

std::vector<VectorXd> effect_grid(const DesignBlock& block, int n_1d, int n_2d) {
  const std::size_t d = block.var_names.size();
  if (d == 1) return {linspace(block.range[0].first, block.range[0].second, n_1d)};
  const VectorXd g0 = linspace(block.range[0].first, block.range[0].second, n_2d);
  const VectorXd g1 = linspace(block.range[1].first, block.range[1].second, n_2d);
  std::vector<VectorXd> grid(d, VectorXd(n_2d * n_2d));
  for (Index i = 0; i < n_2d; ++i)
    for (Index j = 0; j < n_2d; ++j) {
      grid[0](i * n_2d + j) = g0(i);
      grid[1](i * n_2d + j) = g1(j);
    }
  for (std::size_t v = 2; v < d; ++v) grid[v].setConstant(0.5 * (block.range[v].first + block.range[v].second));
  return grid;
}

MatrixXd block_design_on_grid(const DesignBlock& block, const std::vector<VectorXd>& grid) {
  std::vector<std::span<const double>> cols;
  for (const auto& g : grid) cols.emplace_back(g.data(), static_cast<std::size_t>(g.size()));
  return spline_design(block, cols);
}

}  // namespace

std::vector<NamedCoefficients> coef(const Model& model, CoefType type, int param) {
  check_param(model, param);
  std::vector<NamedCoefficients> out;
  for (const FormulaPart* part : parts_for(model, param))
    for (const auto& st : part->structured) {
      const bool smooth = st.kind == StructuredKind::Smooth;
      if (smooth != (type == CoefType::Smooth)) continue;
      NamedCoefficients c{st.block.term_id, {}, model.coefficients(st)};
      if (smooth)
        for (Index j = 0; j < c.values.size(); ++j) c.names.push_back(st.block.term_id + "." + std::to_string(j + 1));
      else
        c.names = st.block.coef_names;
      out.push_back(std::move(c));
    }
  return out;
}

std::vector<PartialEffectTable> partial_effects(const Model& model, int param, std::optional<std::size_t> which, int n_1d,
                                                int n_2d) {
  check_param(model, param);
  std::vector<const StructuredTerm*> smooths;
  for (const FormulaPart* part : parts_for(model, param))
    for (const auto& st : part->structured)
      if (st.kind == StructuredKind::Smooth) smooths.push_back(&st);
  if (which && *which >= smooths.size())
    throw ModelError("smooth index " + std::to_string(*which) + " out of range (" + std::to_string(smooths.size()) +
                     " smooth terms)");
  std::vector<PartialEffectTable> out;
  for (std::size_t s = 0; s < smooths.size(); ++s) {
    if (which && s != *which) continue;
    const auto& st = *smooths[s];
    out.push_back({st.block.term_id, st.block.var_names,
                   evaluate_partial_effect(st.block, model.coefficients(st), effect_grid(st.block, n_1d, n_2d))});
  }
  return out;
}

Statistic parse_statistic(std::string_view name) {
  if (name == "mean") return Statistic::Mean;
  if (name == "stddev") return Statistic::Stddev;
  if (name == "quantile") return Statistic::Quantile;
  throw std::invalid_argument("unknown statistic '" + std::string(name) + "' (expected mean, stddev or quantile)");
}

PredictionTable predict_stats(const Model& model, const DataFrame& data, Statistic statistic,
                              const std::vector<double>& probs) {
  const FittedDistribution dist = model.distribution(data);
  PredictionTable t;
  switch (statistic) {
    case Statistic::Mean:
      t.columns = {"mean"};
      t.values = mean(dist);
      break;
    case Statistic::Stddev:
      t.columns = {"stddev"};
      t.values = stddev(dist);
      break;
    case Statistic::Quantile:
      if (probs.empty()) throw std::invalid_argument("quantile prediction needs at least one probability");
      t.values.resize(dist.size(), static_cast<Index>(probs.size()));
      for (std::size_t j = 0; j < probs.size(); ++j) {
        t.columns.push_back("q" + format_number(probs[j]));
        t.values.col(static_cast<Index>(j)) = quantile(dist, probs[j]);
      }
      break;
  }
  return t;
}

DensityGrid density_grid(const FittedDistribution& dist, int points) {
  if (points < 2) throw std::invalid_argument("density grid needs at least two points");
  const Index n = dist.size();
  DensityGrid g;
  const VectorXd lo = quantile(dist, 1e-6);
  const VectorXd hi = quantile(dist, 1.0 - 1e-6);
  if (dist.family.discrete()) {
    Index width = 1;
    for (Index i = 0; i < n; ++i) width = std::max<Index>(width, static_cast<Index>(hi(i) - lo(i)) + 1);
    g.value.resize(n, width);
    for (Index i = 0; i < n; ++i)
      for (Index j = 0; j < width; ++j) g.value(i, j) = lo(i) + static_cast<double>(j);
  } else {
    g.value.resize(n, points);
    for (Index i = 0; i < n; ++i) g.value.row(i) = linspace(lo(i), hi(i), points).transpose();
  }
  g.density.resize(n, g.value.cols());
  for (Index j = 0; j < g.value.cols(); ++j) g.density.col(j) = pdf(dist, g.value.col(j));
  return g;
}

LogScore log_score(const Model& model, const DataFrame* data, const VectorXd* y) {
  if ((data == nullptr) != (y == nullptr)) throw std::invalid_argument("log_score needs both data and response, or neither");
  LogScore s;
  if (data) {
    s.per_observation = log_prob(model.distribution(*data), *y);
  } else {
    if (model.training_design().n == 0) throw ModelError("model carries no training data; pass data and response");
    s.per_observation = log_prob(model.distribution(model.training_design()), model.response());
  }
  s.sum = s.per_observation.sum();
  return s;
}

Ensemble ensemble(const ModelSpec& spec, const DataFrame& data, const VectorXd& y, int n_ensemble,
                  const TrainConfig& config, bool vary_seed) {
  if (n_ensemble < 2) throw TrainConfigError("n_ensemble must be >= 2");
  config.validate();
  const auto n = static_cast<std::size_t>(n_ensemble);
  std::vector<std::optional<Model>> members(n);
  std::vector<FitHistory> histories(n);
  parallel_for(n, [&](std::size_t i) {
    const std::string tag = "ensemble member " + std::to_string(i) + ": ";
    try {
      TrainConfig cfg = config;
      if (vary_seed) cfg.seed = config.seed + i;
      Model m = Model::build(y, data, spec, cfg.seed);
      histories[i] = fit(m, cfg);
      members[i].emplace(std::move(m));
    } catch (const NumericError& e) {
      throw NumericError(tag + e.what(), e.epoch(), e.batch());
    } catch (const DataError& e) {
      throw DataError(tag + e.what());
    } catch (const SupportError& e) {
      throw SupportError(tag + e.what(), e.row());
    } catch (const std::invalid_argument& e) {
      throw ModelError(tag + e.what());
    } catch (const std::exception& e) {
      throw std::runtime_error(tag + e.what());
    }
  });
  Ensemble ens;
  for (auto& m : members) ens.members.push_back(std::move(*m));
  ens.histories = std::move(histories);
  return ens;
}

MixtureDistribution get_ensemble_distribution(const std::vector<Model>& members, const DataFrame& data) {
  if (members.empty()) throw std::invalid_argument("empty ensemble");
  std::vector<FittedDistribution> comps;
  for (const auto& m : members) comps.push_back(m.distribution(data));
  return MixtureDistribution::uniform(std::move(comps));
}

RefitResult last_layer_refit(const Model& model, const DataFrame* data, const VectorXd* y, int n_grid) {
  if (model.family().kind != FamilyKind::Normal || model.family().custom)
    throw ModelError("last-layer refit supports the normal family only");
  if ((data == nullptr) != (y == nullptr)) throw std::invalid_argument("refit needs both data and response, or neither");
  DesignData owned;
  if (data) owned = model.design(*data);
  else if (model.training_design().n == 0) throw ModelError("model carries no training data; pass data and response");
  const DesignData& design = data ? owned : model.training_design();
  const VectorXd& resp = data ? *y : model.response();
  const Index n = design.n;
  if (resp.size() != n) throw ModelError("response length does not match the data");

  struct SmoothSlice {
    const StructuredTerm* term;
    Index start;
  };
  std::vector<MatrixXd> blocks;
  std::vector<MatrixXd> penalties;
  std::vector<SmoothSlice> smooth_cols;
  RefitResult r;
  Index col = 0;
  const auto& parts = model.parts();
  for (std::size_t f = 0; f < parts.size(); ++f) {
    const auto& part = parts[f];
    if (part.params.size() != 1 || part.params.front() != 0) continue;
    for (std::size_t t = 0; t < part.structured.size(); ++t) {
      const auto& st = part.structured[t];
      const Index p = st.block.p();
      blocks.push_back(design.X[f][t]);
      MatrixXd S = MatrixXd::Zero(p, p);
      if (st.kind == StructuredKind::Smooth) {
        S = st.block.lambda * st.block.P;
        smooth_cols.push_back({&st, col});
      } else if (st.kind == StructuredKind::Ridge) {
        S = st.la * MatrixXd::Identity(p, p);
      }
      penalties.push_back(S);
      if (st.kind == StructuredKind::Smooth)
        for (Index j = 0; j < p; ++j) r.names.push_back(st.block.term_id + "." + std::to_string(j + 1));
      else
        r.names.insert(r.names.end(), st.block.coef_names.begin(), st.block.coef_names.end());
      col += p;
    }
  }
  r.structured_columns = col;
  for (std::size_t f = 0; f < parts.size(); ++f) {
    const auto& part = parts[f];
    if (std::find(part.params.begin(), part.params.end(), 0) == part.params.end()) continue;
    for (std::size_t j = 0; j < part.networks.size(); ++j) {
      const auto& nt = part.networks[j];
      std::optional<OrthogonalProjector> proj;
      FeatureMap map;
      if (design.oz[f][j].cols() > 0) {
        proj.emplace(design.oz[f][j]);
        map = [&proj](const MatrixXd& U) { return proj->annihilate(U); };
      }
      MatrixXd U = nt.net.penultimate(model.params(), design.inputs[f][j], map ? &map : nullptr);
      for (Index c = 0; c < U.cols(); ++c) r.names.push_back(nt.spec.label() + ".latent" + std::to_string(c + 1));
      penalties.push_back(MatrixXd::Zero(U.cols(), U.cols()));
      col += U.cols();
      blocks.push_back(std::move(U));
    }
  }
  r.latent_columns = col - r.structured_columns;
  if (col == 0) throw ModelError("the location predictor has no terms to refit");

  r.design.resize(n, col);
  r.penalty = MatrixXd::Zero(col, col);
  Index at = 0;
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    r.design.middleCols(at, blocks[b].cols()) = blocks[b];
    r.penalty.block(at, at, blocks[b].cols(), blocks[b].cols()) = penalties[b];
    at += blocks[b].cols();
  }
  const VectorXd target = resp - design.offset.col(0);
  const MatrixXd XtX = r.design.transpose() * r.design;
  const MatrixXd A = XtX + r.penalty;
  MatrixXd A_inv;
  Eigen::LLT<MatrixXd> llt(A);
  if (llt.info() == Eigen::Success)
    A_inv = llt.solve(MatrixXd::Identity(col, col));
  else
    A_inv = A.completeOrthogonalDecomposition().pseudoInverse();
  A_inv = (0.5 * (A_inv + A_inv.transpose())).eval();
  r.coefficients = A_inv * (r.design.transpose() * target);
  r.edf = (A_inv * XtX).trace();
  const double rss = (target - r.design * r.coefficients).squaredNorm();
  const double dof = static_cast<double>(n) - r.edf;
  if (!(dof > 0.0)) throw ModelError("refit has no residual degrees of freedom");
  r.sigma2 = rss / dof;
  r.covariance = r.sigma2 * A_inv;

  for (const auto& sc : smooth_cols) {
    const auto& block = sc.term->block;
    const Index p = block.p();
    RefitBand band;
    band.term = block.term_id;
    band.grid = effect_grid(block, n_grid, 40);
    const MatrixXd B = block_design_on_grid(block, band.grid);
    band.fit = B * r.coefficients.segment(sc.start, p);
    const MatrixXd C = r.covariance.block(sc.start, sc.start, p, p);
    const VectorXd sd = ((B * C).cwiseProduct(B)).rowwise().sum().cwiseMax(0.0).cwiseSqrt();
    band.lower = band.fit - 2.0 * sd;
    band.upper = band.fit + 2.0 * sd;
    r.bands.push_back(std::move(band));
  }
  return r;
}

}  // namespace sddr
