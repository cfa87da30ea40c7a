#include "cli.hpp"

#include <CLI11.hpp>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <sstream>

#include "config.hpp"
#include "json.hpp"
#include "sddr/bundle.hpp"
#include "sddr/inference.hpp"
#include "sddr/text.hpp"

namespace sddr::cli {
namespace {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

struct Options {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::string model;
  std::string data;
  std::string statistic = "mean";
  std::vector<double> probs;
};

class Warnings {
 public:
  explicit Warnings(std::ostream& err) : err_(err) {}
  void operator()(const std::string& msg) {
    err_ << json{{"warning", msg}}.dump() << '\n';
    list_.push_back(msg);
  }
  const std::vector<std::string>& list() const { return list_; }

 private:
  std::ostream& err_;
  std::vector<std::string> list_;
};

void atomic_write(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write '" + tmp.string() + "'");
    out << content;
    out.flush();
    if (!out) throw std::runtime_error("failed writing '" + tmp.string() + "'");
  }
  fs::rename(tmp, path);
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) q += c == '"' ? std::string("\"\"") : std::string(1, c);
  return q + "\"";
}

std::string csv_header(const std::vector<std::string>& cols) {
  std::string line;
  for (std::size_t i = 0; i < cols.size(); ++i) line += (i ? "," : "") + csv_field(cols[i]);
  return line + "\n";
}

std::string file_stem(const std::string& s) {
  std::string out;
  for (char c : s) {
    const bool keep = std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.';
    if (keep)
      out += c;
    else if (!out.empty() && out.back() != '_')
      out += '_';
  }
  while (!out.empty() && (out.back() == '_' || out.back() == '.')) out.pop_back();
  return out.empty() ? "term" : out;
}

json number(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

json number_array(const std::vector<double>& v) {
  json a = json::array();
  for (double x : v) a.push_back(number(x));
  return a;
}

RunConfig config_for(const Options& o) {
  if (o.config.empty()) throw ConfigError("--config is required");
  RunConfig cfg = load_config(o.config);
  if (o.seed) {
    cfg.seed = *o.seed;
    cfg.train.seed = *o.seed;
  }
  if (!o.out.empty()) cfg.output_dir = o.out;
  return cfg;
}

std::string history_csv(const FitHistory& h) {
  std::string s = "epoch,loss,val_loss\n";
  for (std::size_t e = 0; e < h.loss.size(); ++e)
    s += std::to_string(e + 1) + "," + format_number(h.loss[e]) + "," +
         (e < h.val_loss.size() ? format_number(h.val_loss[e]) : "NA") + "\n";
  return s;
}

json coefficients_json(const Model& model) {
  json out = json::object();
  for (int k = 0; k < model.n_params(); ++k) {
    json lin = json::object(), sm = json::object();
    for (const auto& c : coef(model, CoefType::Linear, k))
      for (std::size_t i = 0; i < c.names.size(); ++i) lin[c.names[i]] = number(c.values(static_cast<Eigen::Index>(i)));
    for (const auto& c : coef(model, CoefType::Smooth, k))
      sm[c.term] = number_array(std::vector<double>(c.values.data(), c.values.data() + c.values.size()));
    out[model.family().param_names[static_cast<std::size_t>(k)]] = {{"linear", lin}, {"smooth", sm}};
  }
  return out;
}

void write_partial_effects(const Model& model, const fs::path& dir) {
  for (int k = 0; k < model.n_params(); ++k)
    for (const auto& t : partial_effects(model, k)) {
      std::vector<std::string> header = t.vars;
      header.push_back("effect");
      std::string s = csv_header(header);
      for (Eigen::Index r = 0; r < t.effect.effect.size(); ++r) {
        for (const auto& g : t.effect.grid) s += format_number(g(r)) + ",";
        s += format_number(t.effect.effect(r)) + "\n";
      }
      const std::string name = model.family().param_names[static_cast<std::size_t>(k)] + "_" + t.term;
      atomic_write(dir / "partial_effects" / (file_stem(name) + ".csv"), s);
    }
}

int cmd_fit(const Options& o, std::ostream& out, Warnings& warn) {
  const RunConfig cfg = config_for(o);
  const ModelSpec spec = make_spec(cfg);
  const LoadedData d = load_data(cfg, spec);
  if (d.dropped > 0) warn("dropped " + std::to_string(d.dropped) + " rows with missing values");
  Model model = Model::build(d.y, d.frame, spec, cfg.seed);
  const FitHistory h = fit(model, cfg.train);
  for (const auto& w : h.warnings) warn(w);
  const LossParts final_parts = assemble_loss(model, model.training_design(), model.response(), nullptr, false, 0, false);

  const fs::path dir = cfg.output_dir;
  atomic_write(dir / "model.json", save_bundle_string(model));
  atomic_write(dir / "history.csv", history_csv(h));
  atomic_write(dir / "coefficients.json", coefficients_json(model).dump(2) + "\n");
  write_partial_effects(model, dir);
  json summary{{"command", "fit"},
               {"n", d.frame.rows()},
               {"dropped_rows", d.dropped},
               {"K", model.n_params()},
               {"family", model.family().name},
               {"seed", cfg.seed},
               {"epochs_run", h.stop_epoch},
               {"best_epoch", h.best_epoch},
               {"early_stopped", h.early_stopped},
               {"final_loss", number(h.loss.back())},
               {"final_val_loss", h.val_loss.empty() ? json(nullptr) : number(h.val_loss.back())},
               {"final_nll", number(final_parts.nll)},
               {"final_penalty", number(final_parts.penalty)},
               {"log_score", number(log_score(model).sum)},
               {"warnings", warn.list()}};
  atomic_write(dir / "summary.json", summary.dump(2) + "\n");
  out << summary.dump() << '\n';
  return kOk;
}

int cmd_predict(const Options& o, std::ostream& out, Warnings&) {
  std::optional<RunConfig> cfg;
  if (!o.config.empty()) cfg = config_for(o);
  fs::path model_path = o.model;
  if (model_path.empty()) {
    if (!cfg) throw ConfigError("predict needs --model (or --config with an output_dir holding model.json)");
    model_path = cfg->output_dir / "model.json";
  }
  fs::path data_path = o.data;
  if (data_path.empty()) {
    if (!cfg) throw ConfigError("predict needs --data (or --config with data.csv_path)");
    data_path = cfg->csv_path;
  }
  fs::path dir = !o.out.empty() ? fs::path(o.out) : cfg ? cfg->output_dir : model_path.parent_path();
  const bool grid = o.statistic == "density_grid";
  const Statistic stat = grid ? Statistic::Mean : parse_statistic(o.statistic);
  if (stat == Statistic::Quantile) {
    if (o.probs.empty()) throw ConfigError("--statistic quantile needs --probs");
    for (double p : o.probs)
      if (!(p > 0.0 && p < 1.0)) throw ConfigError("--probs entries must lie in (0, 1)");
  }

  const Model model = load_bundle(model_path);
  const DataFrame data = read_csv(data_path);
  const PredictionTable t = predict_stats(model, data, stat, o.probs);
  std::vector<std::string> header{"row"};
  header.insert(header.end(), t.columns.begin(), t.columns.end());
  std::string s = csv_header(header);
  for (Eigen::Index r = 0; r < t.values.rows(); ++r) {
    s += std::to_string(r + 1);
    for (Eigen::Index c = 0; c < t.values.cols(); ++c) s += "," + format_number(t.values(r, c));
    s += "\n";
  }
  atomic_write(dir / "predictions.csv", s);
  if (grid) {
    const DensityGrid g = density_grid(model.distribution(data));
    std::string gs = "row,value,density\n";
    for (Eigen::Index r = 0; r < g.value.rows(); ++r)
      for (Eigen::Index c = 0; c < g.value.cols(); ++c)
        gs += std::to_string(r + 1) + "," + format_number(g.value(r, c)) + "," + format_number(g.density(r, c)) + "\n";
    atomic_write(dir / "density_grid.csv", gs);
  }
  json summary{{"command", "predict"}, {"model", model_path.string()}, {"data", data_path.string()},
               {"rows", data.rows()},  {"statistic", o.statistic},    {"columns", t.columns}};
  atomic_write(dir / "summary.json", summary.dump(2) + "\n");
  out << summary.dump() << '\n';
  return kOk;
}

int cmd_cv(const Options& o, std::ostream& out, Warnings& warn) {
  const RunConfig cfg = config_for(o);
  if (cfg.cv_folds < 2) throw ConfigError("train.cv_folds must be >= 2");
  const ModelSpec spec = make_spec(cfg);
  const LoadedData d = load_data(cfg, spec);
  if (d.dropped > 0) warn("dropped " + std::to_string(d.dropped) + " rows with missing values");
  if (cfg.cv_folds > d.y.size()) throw ConfigError("train.cv_folds exceeds the number of observations");
  const auto folds = make_folds(d.y.size(), cfg.cv_folds, cfg.seed);
  const CvResult res = cross_validate(spec, d.frame, d.y, folds, cfg.train);

  std::string s = "fold,epoch,loss,val_loss\n";
  for (std::size_t f = 0; f < res.folds.size(); ++f)
    for (std::size_t e = 0; e < res.folds[f].loss.size(); ++e)
      s += std::to_string(f + 1) + "," + std::to_string(e + 1) + "," + format_number(res.folds[f].loss[e]) + "," +
           format_number(res.folds[f].val_loss[e]) + "\n";
  const fs::path dir = cfg.output_dir;
  atomic_write(dir / "cv_history.csv", s);
  json cv{{"folds", res.folds.size()},
          {"best_epoch", res.best_epoch},
          {"mean_loss", number_array(res.mean_loss)},
          {"mean_val_loss", number_array(res.mean_val_loss)},
          {"final_val_loss", number_array(res.final_val_loss)},
          {"test_sizes", json::array()}};
  for (const auto& f : folds) cv["test_sizes"].push_back(f.test.size());
  atomic_write(dir / "cv_summary.json", cv.dump(2) + "\n");
  json summary{{"command", "cv"}, {"n", d.frame.rows()}, {"seed", cfg.seed}, {"folds", res.folds.size()},
               {"best_epoch", res.best_epoch}, {"warnings", warn.list()}};
  atomic_write(dir / "summary.json", summary.dump(2) + "\n");
  out << summary.dump() << '\n';
  return kOk;
}

int cmd_ensemble(const Options& o, std::ostream& out, Warnings& warn) {
  const RunConfig cfg = config_for(o);
  if (cfg.n_ensemble < 2) throw ConfigError("train.n_ensemble must be >= 2");
  const ModelSpec spec = make_spec(cfg);
  const LoadedData d = load_data(cfg, spec);
  if (d.dropped > 0) warn("dropped " + std::to_string(d.dropped) + " rows with missing values");
  const Ensemble ens = ensemble(spec, d.frame, d.y, cfg.n_ensemble, cfg.train);
  const fs::path dir = cfg.output_dir;
  json members = json::array();
  for (std::size_t i = 0; i < ens.members.size(); ++i) {
    const std::string file = "member_" + std::to_string(i) + ".json";
    atomic_write(dir / file, save_bundle_string(ens.members[i]));
    const auto& h = ens.histories[i];
    members.push_back({{"bundle", file},
                       {"seed", cfg.seed + i},
                       {"epochs_run", h.stop_epoch},
                       {"best_epoch", h.best_epoch},
                       {"final_loss", number(h.loss.back())},
                       {"final_val_loss", h.val_loss.empty() ? json(nullptr) : number(h.val_loss.back())}});
  }
  json ej{{"n_ensemble", ens.members.size()}, {"weights", "uniform"}, {"members", members}};
  if (cfg.mixture_predictions) {
    const MixtureDistribution mix = get_ensemble_distribution(ens.members, d.frame);
    const Eigen::VectorXd m = mixture_mean(mix), sd = mixture_stddev(mix), lp = mixture_log_prob(mix, d.y);
    std::string s = "row,mean,stddev,log_prob\n";
    for (Eigen::Index r = 0; r < m.size(); ++r)
      s += std::to_string(r + 1) + "," + format_number(m(r)) + "," + format_number(sd(r)) + "," + format_number(lp(r)) + "\n";
    atomic_write(dir / "ensemble_predictions.csv", s);
    ej["mixture_log_score"] = number(lp.sum());
  }
  atomic_write(dir / "ensemble.json", ej.dump(2) + "\n");
  json summary{{"command", "ensemble"}, {"n", d.frame.rows()}, {"seed", cfg.seed},
               {"n_ensemble", ens.members.size()}, {"warnings", warn.list()}};
  atomic_write(dir / "summary.json", summary.dump(2) + "\n");
  out << summary.dump() << '\n';
  return kOk;
}

json describe_term(const TermSpec& t) { return {{"term", t.label()}, {"vars", t.vars}}; }

int cmd_inspect(const Options& o, std::ostream& out, Warnings&) {
  json report;
  if (!o.model.empty()) {
    const Model model = load_bundle(o.model);
    report["family"] = model.family().name;
    report["n_train"] = model.n_train();
    std::size_t weights = 0;
    for (const auto& p : model.params()) weights += static_cast<std::size_t>(p.value.size());
    report["weights"] = weights;
    report["parts"] = json::array();
    for (const auto& part : model.parts()) {
      json pj{{"name", part.name}, {"formula", canonical_format(part.formula)}, {"params", part.params},
              {"structured", json::array()}, {"networks", json::array()}};
      for (const auto& st : part.structured) {
        json sj{{"term", st.block.term_id}, {"columns", st.block.Z.size() ? st.block.Z.cols() : static_cast<Eigen::Index>(st.columns.size())}};
        if (st.kind == StructuredKind::Smooth) {
          sj["lambda"] = st.block.lambda;
          if (st.block.df_target) sj["df"] = *st.block.df_target;
        }
        pj["structured"].push_back(sj);
      }
      for (const auto& nt : part.networks) {
        json constraints = json::array();
        for (const auto& c : nt.constraints) constraints.push_back(c.block.term_id);
        pj["networks"].push_back({{"term", nt.spec.label()}, {"orthogonal_to", constraints}});
      }
      report["parts"].push_back(pj);
    }
  } else {
    const RunConfig cfg = config_for(o);
    const ModelSpec spec = make_spec(cfg);
    report["family"] = spec.family.name;
    report["parameters"] = spec.family.param_names;
    report["columns"] = referenced_columns(spec);
    report["formulas"] = json::array();
    for (std::size_t f = 0; f < spec.formulas.formulas.size(); ++f) {
      const auto& formula = spec.formulas.formulas[f];
      json fj{{"name", spec.formulas.names[f]}, {"canonical", canonical_format(formula)},
              {"params", spec.formulas.mapping[f]}, {"terms", json::array()}, {"orthogonalization", json::array()}};
      for (const auto& t : formula.terms) fj["terms"].push_back(describe_term(t));
      fj["orthogonalization"] = json::array();
      for (const auto& plan : build_oz_plans(spec.formulas, spec.orthog))
        if (plan.formula == f) {
          json sources = json::array();
          for (const auto& s : plan.sources) sources.push_back(s.term.label());
          fj["orthogonalization"].push_back({{"network", formula.terms[plan.term].label()}, {"against", sources}});
        }
      report["formulas"].push_back(fj);
    }
  }
  out << report.dump(2) << '\n';
  return kOk;
}

int fail(std::ostream& err, int code, const char* kind, const std::string& msg) {
  err << json{{"error", {{"code", code}, {"kind", kind}, {"message", msg}}}}.dump() << '\n';
  return code;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Semi-structured distributional regression"};
  app.require_subcommand(1);
  Options o;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "JSON run configuration");
    sub->add_option("--out", o.out, "output directory (overrides output_dir)");
    sub->add_option("--seed", o.seed, "random seed (overrides seed)");
  };
  auto* fit_cmd = app.add_subcommand("fit", "fit a model and write its artifacts");
  auto* predict_cmd = app.add_subcommand("predict", "predict from a saved model");
  auto* cv_cmd = app.add_subcommand("cv", "k-fold cross-validation");
  auto* ens_cmd = app.add_subcommand("ensemble", "train a deep ensemble");
  auto* inspect_cmd = app.add_subcommand("inspect", "describe a config or saved model");
  for (auto* sub : {fit_cmd, predict_cmd, cv_cmd, ens_cmd, inspect_cmd}) add_common(sub);
  predict_cmd->add_option("--model", o.model, "model bundle (model.json)");
  predict_cmd->add_option("--data", o.data, "CSV with the predictor columns");
  predict_cmd->add_option("--statistic", o.statistic, "mean, stddev, quantile or density_grid");
  predict_cmd->add_option("--probs", o.probs, "quantile levels")->delimiter(',');
  inspect_cmd->add_option("--model", o.model, "model bundle to describe");

  Warnings warn(err);
  try {
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(rev);
    if (fit_cmd->parsed()) return cmd_fit(o, out, warn);
    if (predict_cmd->parsed()) return cmd_predict(o, out, warn);
    if (cv_cmd->parsed()) return cmd_cv(o, out, warn);
    if (ens_cmd->parsed()) return cmd_ensemble(o, out, warn);
    return cmd_inspect(o, out, warn);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    return fail(err, kConfigError, "usage", e.what());
  } catch (const ConfigError& e) {
    return fail(err, kConfigError, "config", e.what());
  } catch (const FormulaError& e) {
    return fail(err, kConfigError, "formula", e.what());
  } catch (const SupportError& e) {
    return fail(err, kDataError, "data", e.what());
  } catch (const DataError& e) {
    return fail(err, kDataError, "data", e.what());
  } catch (const BundleError& e) {
    return fail(err, kDataError, "bundle", e.what());
  } catch (const BasisError& e) {
    return fail(err, kDataError, "data", e.what());
  } catch (const NumericError& e) {
    return fail(err, kNumericError, "numeric", e.what());
  } catch (const std::invalid_argument& e) {
    return fail(err, kConfigError, "config", e.what());
  } catch (const GraphError& e) {
    return fail(err, kConfigError, "config", e.what());
  } catch (const std::exception& e) {
    return fail(err, kFailure, "internal", e.what());
  }
}

}  // namespace sddr::cli
