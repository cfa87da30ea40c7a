#include "sddr/model.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "sddr/random.hpp"

namespace sddr {
namespace {

using Eigen::Index;
using Eigen::MatrixXd;

Eigen::Map<const Eigen::VectorXd> as_vector(std::span<const double> s) {
  return {s.data(), static_cast<Index>(s.size())};
}

std::span<const double> finite_numeric(const DataFrame& data, const std::string& var) {
  auto v = data.numeric(var);
  for (std::size_t i = 0; i < v.size(); ++i)
    if (!std::isfinite(v[i]))
      throw DataError("column '" + var + "' has a missing or non-finite value in row " + std::to_string(i));
  return v;
}

// Reference coding drops the first level; with no intercept the first factor
// of the formula keeps all of its levels.
void linear_columns(StructuredTerm& st, const DataFrame& data, bool has_intercept, bool& full_coding_used) {
  for (const auto& var : st.spec.vars) {
    const Column& col = data.column(var);
    if (!col.is_factor) {
      st.levels.emplace_back();
      st.columns.push_back({var, std::nullopt});
      st.block.coef_names.push_back(var);
      continue;
    }
    auto levels = factor_levels(col);
    if (levels.empty()) throw DataError("factor '" + var + "' has no observed levels");
    const bool full = !has_intercept && !full_coding_used;
    if (full) full_coding_used = true;
    for (std::size_t l = full ? 0 : 1; l < levels.size(); ++l) {
      st.columns.push_back({var, levels[l]});
      st.block.coef_names.push_back(var + levels[l]);
    }
    st.levels.push_back(std::move(levels));
  }
}

MatrixXd linear_design(const StructuredTerm& st, const DataFrame& data) {
  const Index n = static_cast<Index>(data.rows());
  for (std::size_t v = 0; v < st.spec.vars.size(); ++v) {
    const auto& var = st.spec.vars[v];
    const Column& col = data.column(var);
    const bool factor = !st.levels[v].empty();
    if (factor != col.is_factor)
      throw DataError("column '" + var + "' changed type: expected " + (factor ? "categorical" : "numeric"));
    if (!factor) continue;
    for (std::size_t r = 0; r < col.labels.size(); ++r) {
      const auto& lab = col.labels[r];
      if (lab.empty()) throw DataError("factor '" + var + "' has a missing value in row " + std::to_string(r));
      if (!std::binary_search(st.levels[v].begin(), st.levels[v].end(), lab)) {
        std::string known;
        for (const auto& l : st.levels[v]) known += (known.empty() ? "" : ", ") + l;
        throw DataError("factor '" + var + "' has unseen level '" + lab + "' (training levels: " + known + ")");
      }
    }
  }
  MatrixXd X(n, static_cast<Index>(st.columns.size()));
  for (std::size_t j = 0; j < st.columns.size(); ++j) {
    const auto& c = st.columns[j];
    if (c.level) {
      const auto& labels = data.column(c.var).labels;
      for (Index r = 0; r < n; ++r) X(r, static_cast<Index>(j)) = labels[static_cast<std::size_t>(r)] == *c.level;
    } else {
      X.col(static_cast<Index>(j)) = as_vector(finite_numeric(data, c.var));
    }
  }
  return X;
}

MatrixXd structured_design(const StructuredTerm& st, const DataFrame& data) {
  if (st.kind == StructuredKind::Intercept) return MatrixXd::Ones(static_cast<Index>(data.rows()), 1);
  if (st.kind != StructuredKind::Smooth) return linear_design(st, data);
  std::vector<std::span<const double>> cols;
  for (const auto& v : st.block.var_names) cols.push_back(finite_numeric(data, v));
  return spline_design(st.block, cols);
}

StructuredTerm compile_structured(const TermSpec& term, const DataFrame& data, bool has_intercept,
                                  bool& full_coding_used, const PenaltyOptions& pen) {
  StructuredTerm st;
  st.spec = term;
  st.block.term_id = term.label();
  switch (term.kind) {
    case TermKind::Intercept:
      st.kind = StructuredKind::Intercept;
      st.block.term_id = "(Intercept)";
      st.block.coef_names = {"(Intercept)"};
      st.block.X = MatrixXd::Ones(static_cast<Index>(data.rows()), 1);
      st.block.P = MatrixXd::Zero(1, 1);
      return st;
    case TermKind::Linear:
    case TermKind::Ridge:
    case TermKind::Lasso: {
      st.kind = term.kind == TermKind::Linear ? StructuredKind::Linear
                : term.kind == TermKind::Ridge ? StructuredKind::Ridge
                                               : StructuredKind::Lasso;
      if (st.kind != StructuredKind::Linear) {
        st.la = term.la.value_or(1.0);
        if (!(st.la >= 0.0) || !std::isfinite(st.la)) throw ModelError("penalty la must be a finite non-negative number in '" + term.label() + "'");
      }
      st.block.var_names = term.vars;
      linear_columns(st, data, has_intercept, full_coding_used);
      st.block.X = linear_design(st, data);
      const Index p = st.block.X.cols();
      st.block.P = st.kind == StructuredKind::Linear ? MatrixXd(MatrixXd::Zero(p, p)) : MatrixXd(MatrixXd::Identity(p, p));
      return st;
    }
    case TermKind::Smooth: {
      st.kind = StructuredKind::Smooth;
      if (term.vars.size() != 1) throw ModelError("s() takes a single variable; use te() for '" + term.label() + "'");
      SmoothConfig cfg;
      cfg.basis = term.basis;
      if (!term.k.empty()) cfg.k = term.k.front();
      cfg.hat1 = pen.hat1;
      const std::string id = st.block.term_id;
      st.block = build_smooth(finite_numeric(data, term.vars.front()), cfg, term.vars.front(), id);
      break;
    }
    case TermKind::TensorSmooth: {
      st.kind = StructuredKind::Smooth;
      if (term.vars.size() < 2) throw ModelError("tensor smooth needs at least two variables in '" + term.label() + "'");
      if (!term.k.empty() && term.k.size() != 1 && term.k.size() != term.vars.size())
        throw ModelError("k must have one entry per margin in '" + term.label() + "'");
      std::vector<DesignBlock> margins;
      for (std::size_t v = 0; v < term.vars.size(); ++v) {
        SmoothConfig cfg;
        cfg.basis = term.basis;
        cfg.k = term.k.empty() ? 5 : term.k.size() == 1 ? term.k.front() : term.k[v];
        cfg.sum_to_zero = false;
        margins.push_back(build_smooth(finite_numeric(data, term.vars[v]), cfg, term.vars[v]));
      }
      const std::string id = st.block.term_id;
      st.block = tensor_product(margins, true, id);
      break;
    }
    default:
      throw ModelError("term '" + term.label() + "' is not structured");
  }
  const double target = term.df.value_or(pen.df_default);
  if (!(target > 0.0)) throw ModelError("df must be positive in '" + term.label() + "'");
  st.block.df_target = target;
  st.block.lambda = target >= static_cast<double>(st.block.p()) ? 0.0 : df_to_lambda(st.block, target, pen.hat1);
  return st;
}

void register_coefficients(StructuredTerm& st, ParamStore& store, const std::string& prefix) {
  const Index p = st.block.p();
  if (st.kind == StructuredKind::Lasso) {
    st.coef = store.add(prefix + "/u", MatrixXd::Zero(p, 1));
    st.coef_v = store.add(prefix + "/v", MatrixXd::Ones(p, 1));
  } else {
    st.coef = store.add(prefix + "/coef", MatrixXd::Zero(p, 1));
  }
}

MatrixXd select_rows(const MatrixXd& m, const std::vector<Index>* rows) {
  if (!rows) return m;
  return m(*rows, Eigen::all);
}

}  // namespace

void drop_output_bias(NetworkSpec& spec) { spec.layers.back().use_bias = false; }

Model Model::build(const Eigen::VectorXd& y, const DataFrame& data, ModelSpec spec, std::uint64_t seed) {
  Model m;
  m.seed_ = seed;
  const int K = spec.family.n_params();
  try {
    spec.formulas.validate(K);
  } catch (const std::invalid_argument& e) {
    throw ModelError(e.what());
  }
  if (static_cast<std::size_t>(y.size()) != data.rows())
    throw ModelError("response has " + std::to_string(y.size()) + " rows, data has " + std::to_string(data.rows()));
  if (data.rows() == 0) throw DataError("no observations");
  if (!y.allFinite()) throw DataError("response has missing or non-finite values");
  for (auto& [name, net] : spec.networks) net.name = name;

  std::vector<OzPlan> plans;
  try {
    plans = build_oz_plans(spec.formulas, spec.orthog, [&](const std::string& c) { return data.has(c); });
  } catch (const std::invalid_argument& e) {
    throw DataError(e.what());
  }

  std::uint64_t net_counter = 0;
  const auto& fs = spec.formulas;
  for (std::size_t f = 0; f < fs.formulas.size(); ++f) {
    FormulaPart part;
    part.name = fs.names[f];
    part.formula = fs.formulas[f];
    part.params = fs.mapping[f];
    const auto& formula = part.formula;
    if (formula.terms.empty() && !formula.has_intercept)
      throw ModelError("predictor '" + part.name + "' has no terms");
    const bool multi = part.params.size() > 1;
    const bool explicit_intercept = std::any_of(formula.terms.begin(), formula.terms.end(),
                                                [](const TermSpec& t) { return t.kind == TermKind::Intercept; });
    std::vector<TermSpec> terms = formula.terms;
    if (formula.has_intercept && !explicit_intercept) terms.insert(terms.begin(), TermSpec{.kind = TermKind::Intercept});
    bool full_coding_used = false;
    std::size_t net_index = 0;
    for (const auto& term : terms) {
      if (term.is_structured()) {
        if (multi)
          throw ModelError("formula '" + part.name + "' feeds several parameters; only network terms are allowed there, got '" +
                           term.label() + "'");
        StructuredTerm st = compile_structured(term, data, formula.has_intercept, full_coding_used, spec.penalty);
        register_coefficients(st, m.params_, part.name + "/" + st.block.term_id);
        part.structured.push_back(std::move(st));
      } else if (term.kind == TermKind::Offset) {
        if (multi) throw ModelError("offset in formula '" + part.name + "' that feeds several parameters");
        for (const auto& v : term.vars) {
          finite_numeric(data, v);
          part.offsets.push_back(v);
        }
      } else {
        const auto it = spec.networks.find(term.name);
        if (it == spec.networks.end()) throw ModelError("no network named '" + term.name + "' (in '" + term.label() + "')");
        NetworkSpec ns = it->second;
        ns.inputs = term.vars;
        try {
          ns.validate();
        } catch (const GraphError& e) {
          throw ModelError(e.what());
        }
        if (ns.output_width() != static_cast<int>(part.params.size()))
          throw ModelError("network '" + ns.name + "' outputs " + std::to_string(ns.output_width()) + " columns but formula '" +
                           part.name + "' feeds " + std::to_string(part.params.size()) + " parameters");
        for (const auto& v : term.vars) finite_numeric(data, v);
        const std::string prefix = part.name + "/" + ns.name + "#" + std::to_string(net_index);
        std::vector<StructuredTerm> constraints;
        std::vector<OzOrigin> origins;
        const std::size_t t_index = static_cast<std::size_t>(&term - &terms.front()) -
                                    (formula.has_intercept && !explicit_intercept ? 1 : 0);
        for (const auto& plan : plans) {
          if (plan.formula != f || plan.term != t_index) continue;
          bool full = false;
          for (const auto& src : plan.sources) {
            constraints.push_back(compile_structured(src.term, data, formula.has_intercept, full, spec.penalty));
            origins.push_back(src.origin);
          }
        }
        if (!constraints.empty()) drop_output_bias(ns);
        NetworkTerm nt{term, Network(std::move(ns), m.params_, prefix, mix_seed(seed, net_counter++)),
                       std::move(constraints), std::move(origins)};
        part.networks.push_back(std::move(nt));
        ++net_index;
      }
    }
    m.parts_.push_back(std::move(part));
  }
  m.spec_ = std::move(spec);
  m.y_ = y;
  m.n_train_ = y.size();
  m.train_ = m.design(data);
  return m;
}

DesignData Model::design(const DataFrame& data) const {
  DesignData d;
  d.n = static_cast<Index>(data.rows());
  d.offset = MatrixXd::Zero(d.n, n_params());
  for (const auto& part : parts_) {
    auto& X = d.X.emplace_back();
    for (const auto& st : part.structured) X.push_back(structured_design(st, data));
    auto& inputs = d.inputs.emplace_back();
    auto& oz = d.oz.emplace_back();
    for (const auto& nt : part.networks) {
      MatrixXd in(d.n, static_cast<Index>(nt.spec.vars.size()));
      for (std::size_t v = 0; v < nt.spec.vars.size(); ++v)
        in.col(static_cast<Index>(v)) = as_vector(finite_numeric(data, nt.spec.vars[v]));
      inputs.push_back(std::move(in));
      std::vector<MatrixXd> blocks;
      Index width = 0;
      for (const auto& c : nt.constraints) {
        blocks.push_back(structured_design(c, data));
        width += blocks.back().cols();
      }
      MatrixXd Xoz(d.n, width);
      Index col = 0;
      for (const auto& b : blocks) {
        Xoz.middleCols(col, b.cols()) = b;
        col += b.cols();
      }
      oz.push_back(std::move(Xoz));
    }
    for (const auto& v : part.offsets) d.offset.col(part.params.front()) += as_vector(finite_numeric(data, v));
  }
  return d;
}

ForwardPass Model::forward(const DesignData& design, const std::vector<Index>* rows, bool training, std::uint64_t seed,
                           bool record) const {
  ForwardPass pass;
  if (rows) pass.rows = *rows;
  pass.eta = select_rows(design.offset, rows);
  for (std::size_t f = 0; f < parts_.size(); ++f) {
    const auto& part = parts_[f];
    auto& Xs = pass.X.emplace_back();
    auto& tapes = pass.tapes.emplace_back();
    for (std::size_t t = 0; t < part.structured.size(); ++t) {
      const auto& st = part.structured[t];
      MatrixXd X = select_rows(design.X[f][t], rows);
      const Eigen::VectorXd w = coefficients(st);
      pass.eta.col(part.params.front()).noalias() += X * w;
      if (record) Xs.push_back(std::move(X));
    }
    if (record) tapes.resize(part.networks.size());
    for (std::size_t j = 0; j < part.networks.size(); ++j) {
      const auto& nt = part.networks[j];
      const MatrixXd in = select_rows(design.inputs[f][j], rows);
      const FeatureMap* map = nullptr;
      if (design.oz[f][j].cols() > 0) {
        auto projector = std::make_shared<OrthogonalProjector>(select_rows(design.oz[f][j], rows));
        pass.maps.push_back(std::make_unique<FeatureMap>([projector](const MatrixXd& U) { return projector->annihilate(U); }));
        map = pass.maps.back().get();
      }
      const MatrixXd out = nt.net.forward(params_, in, training, mix_seed(seed, (f << 20) + j), record ? &tapes[j] : nullptr, map);
      for (std::size_t k = 0; k < part.params.size(); ++k) pass.eta.col(part.params[k]) += out.col(static_cast<Index>(k));
    }
  }
  return pass;
}

void Model::backward(ForwardPass& pass, const MatrixXd& d_eta) {
  if (pass.X.size() != parts_.size()) throw ModelError("backward() needs a recorded forward pass");
  for (std::size_t f = 0; f < parts_.size(); ++f) {
    const auto& part = parts_[f];
    if (pass.X[f].size() != part.structured.size() || pass.tapes[f].size() != part.networks.size())
      throw ModelError("backward() needs a recorded forward pass");
    for (std::size_t t = 0; t < part.structured.size(); ++t) {
      const auto& st = part.structured[t];
      const Eigen::VectorXd g = pass.X[f][t].transpose() * d_eta.col(part.params.front());
      if (st.coef_v) {
        params_[st.coef].grad += g.cwiseProduct(params_[*st.coef_v].value.col(0));
        params_[*st.coef_v].grad += g.cwiseProduct(params_[st.coef].value.col(0));
      } else {
        params_[st.coef].grad += g;
      }
    }
    for (std::size_t j = 0; j < part.networks.size(); ++j) {
      MatrixXd g(d_eta.rows(), static_cast<Index>(part.params.size()));
      for (std::size_t k = 0; k < part.params.size(); ++k) g.col(static_cast<Index>(k)) = d_eta.col(part.params[k]);
      part.networks[j].net.backward(pass.tapes[f][j], g, params_);
    }
  }
}

MatrixXd Model::predictors(const DesignData& design) const { return forward(design, nullptr, false, 0, false).eta; }

FittedDistribution Model::distribution(const DesignData& design) const {
  return FittedDistribution::from_predictors(spec_.family, predictors(design));
}

Eigen::VectorXd Model::coefficients(const StructuredTerm& term) const {
  const Eigen::VectorXd u = params_[term.coef].value.col(0);
  if (!term.coef_v) return u;
  return u.cwiseProduct(params_[*term.coef_v].value.col(0));
}

double Model::sp_scale() const {
  if (spec_.penalty.sp_scale) return *spec_.penalty.sp_scale;
  return n_train_ > 0 ? 1.0 / static_cast<double>(n_train_) : 1.0;
}

Index Model::max_constraint_columns() const {
  Index out = 0;
  for (const auto& part : parts_)
    for (const auto& nt : part.networks) {
      Index c = 0;
      for (const auto& st : nt.constraints) c += st.block.p();
      out = std::max(out, c);
    }
  return out;
}

std::vector<std::string> Model::used_columns() const {
  std::set<std::string> cols;
  auto add = [&](const std::vector<std::string>& vs) { cols.insert(vs.begin(), vs.end()); };
  for (const auto& part : parts_) {
    for (const auto& st : part.structured) add(st.spec.vars);
    for (const auto& nt : part.networks) {
      add(nt.spec.vars);
      for (const auto& c : nt.constraints) add(c.spec.vars);
    }
    add(part.offsets);
  }
  return {cols.begin(), cols.end()};
}

}  // namespace sddr
