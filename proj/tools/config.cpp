#include "config.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace sddr::cli {
namespace {

using json = nlohmann::ordered_json;

void allow_keys(const json& j, const std::string& where, std::initializer_list<const char*> keys) {
  if (!j.is_object()) throw ConfigError("'" + where + "' must be an object");
  for (const auto& [k, v] : j.items()) {
    bool ok = false;
    for (const char* key : keys) ok = ok || k == key;
    if (!ok) throw ConfigError("unknown key '" + k + "' in " + where);
  }
}

template <class T>
T get(const json& j, const char* key, const std::string& where, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError("'" + where + "." + key + "' has the wrong type");
  }
}

json parse_strict(const std::string& text) {
  std::vector<std::set<std::string>> seen;
  std::string duplicate;
  auto cb = [&](int, json::parse_event_t ev, json& parsed) {
    switch (ev) {
      case json::parse_event_t::object_start: seen.emplace_back(); break;
      case json::parse_event_t::object_end: seen.pop_back(); break;
      case json::parse_event_t::key: {
        const auto k = parsed.get<std::string>();
        if (!seen.back().insert(k).second && duplicate.empty()) duplicate = k;
        break;
      }
      default: break;
    }
    return true;
  };
  json j;
  try {
    j = json::parse(text, cb);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!duplicate.empty()) throw ConfigError("duplicate key '" + duplicate + "' in config");
  return j;
}

NetworkSpec parse_network(const std::string& name, const json& layers) {
  const std::string where = "networks." + name;
  if (!layers.is_array() || layers.empty()) throw ConfigError("'" + where + "' must be a non-empty list of layers");
  NetworkSpec ns;
  ns.name = name;
  for (const auto& l : layers) {
    allow_keys(l, where, {"type", "units", "activation", "use_bias", "rate"});
    const auto type = get<std::string>(l, "type", where, "dense");
    if (type == "dropout") {
      const double rate = get<double>(l, "rate", where, 0.0);
      if (!(rate >= 0.0 && rate < 1.0)) throw ConfigError("dropout rate must lie in [0, 1) in " + where);
      ns.layers.push_back(LayerSpec::dropout(rate));
    } else if (type == "dense") {
      const int units = get<int>(l, "units", where, 0);
      if (units < 1) throw ConfigError("dense layers need units >= 1 in " + where);
      Activation act;
      try {
        act = parse_activation(get<std::string>(l, "activation", where, "linear"));
      } catch (const std::exception& e) {
        throw ConfigError(std::string(e.what()) + " in " + where);
      }
      ns.layers.push_back(LayerSpec::dense(units, act, get<bool>(l, "use_bias", where, true)));
    } else {
      throw ConfigError("unknown layer type '" + type + "' in " + where);
    }
  }
  return ns;
}

void parse_optimizer(const json& j, OptimizerConfig& opt) {
  if (j.is_string()) {
    opt.kind = sddr::parse_optimizer(j.get<std::string>());
    return;
  }
  const std::string where = "train.optimizer";
  allow_keys(j, where, {"name", "lr", "decay", "momentum", "beta1", "beta2", "rho", "epsilon"});
  opt.kind = sddr::parse_optimizer(get<std::string>(j, "name", where, "adam"));
  if (j.contains("lr")) opt.lr = get<double>(j, "lr", where, 0.0);
  opt.decay = get<double>(j, "decay", where, opt.decay);
  opt.momentum = get<double>(j, "momentum", where, opt.momentum);
  opt.beta1 = get<double>(j, "beta1", where, opt.beta1);
  opt.beta2 = get<double>(j, "beta2", where, opt.beta2);
  if (j.contains("rho")) opt.rho = get<double>(j, "rho", where, 0.0);
  opt.epsilon = get<double>(j, "epsilon", where, opt.epsilon);
}

void collect_vars(const TermSpec& t, std::set<std::string>& out) {
  out.insert(t.vars.begin(), t.vars.end());
  for (const auto& a : t.against) collect_vars(a, out);
}

}  // namespace

RunConfig parse_config(const std::string& text, const std::filesystem::path& base_dir) {
  const json j = parse_strict(text);
  allow_keys(j, "config", {"data", "family", "formulas", "networks", "mapping", "train", "penalty", "orthog", "output_dir", "seed"});
  RunConfig cfg;

  if (!j.contains("data")) throw ConfigError("config needs a 'data' section");
  const auto& d = j["data"];
  allow_keys(d, "data", {"csv_path", "response", "response_transform"});
  const auto csv = get<std::string>(d, "csv_path", "data", "");
  if (csv.empty()) throw ConfigError("data.csv_path is required");
  cfg.csv_path = std::filesystem::path(csv).is_absolute() ? std::filesystem::path(csv) : base_dir / csv;
  cfg.response = get<std::string>(d, "response", "data", "");
  if (cfg.response.empty()) throw ConfigError("data.response is required");
  cfg.response_transform = get<std::string>(d, "response_transform", "data", "none");
  if (cfg.response_transform != "none" && cfg.response_transform != "log")
    throw ConfigError("data.response_transform must be 'none' or 'log'");

  cfg.family = get<std::string>(j, "family", "config", "normal");

  if (!j.contains("formulas")) throw ConfigError("config needs 'formulas'");
  const auto& f = j["formulas"];
  if (f.is_object()) {
    for (const auto& [name, text2] : f.items()) {
      if (!text2.is_string()) throw ConfigError("formula '" + name + "' must be a string");
      cfg.formulas.emplace_back(name, text2.get<std::string>());
    }
  } else if (f.is_array()) {
    for (const auto& e : f) {
      allow_keys(e, "formulas[]", {"name", "formula"});
      cfg.formulas.emplace_back(get<std::string>(e, "name", "formulas[]", ""), get<std::string>(e, "formula", "formulas[]", ""));
    }
  } else {
    throw ConfigError("'formulas' must be an object or a list");
  }
  if (cfg.formulas.empty()) throw ConfigError("'formulas' is empty");

  if (j.contains("networks")) {
    if (!j["networks"].is_object()) throw ConfigError("'networks' must be an object");
    for (const auto& [name, layers] : j["networks"].items()) cfg.networks[name] = parse_network(name, layers);
  }
  if (j.contains("mapping")) {
    try {
      cfg.mapping = j["mapping"].get<std::vector<std::vector<int>>>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError("'mapping' must be a list of lists of parameter indices");
    }
  }

  if (j.contains("train")) {
    const auto& t = j["train"];
    allow_keys(t, "train", {"epochs", "batch_size", "optimizer", "validation_split", "early_stopping", "patience",
                            "shuffle", "cv_folds", "n_ensemble", "mixture_predictions"});
    cfg.train.epochs = get<int>(t, "epochs", "train", cfg.train.epochs);
    cfg.train.batch_size = get<int>(t, "batch_size", "train", cfg.train.batch_size);
    cfg.train.validation_split = get<double>(t, "validation_split", "train", cfg.train.validation_split);
    cfg.train.early_stopping = get<bool>(t, "early_stopping", "train", cfg.train.early_stopping);
    cfg.train.patience = get<int>(t, "patience", "train", cfg.train.patience);
    cfg.train.shuffle = get<bool>(t, "shuffle", "train", cfg.train.shuffle);
    cfg.cv_folds = get<int>(t, "cv_folds", "train", cfg.cv_folds);
    cfg.n_ensemble = get<int>(t, "n_ensemble", "train", cfg.n_ensemble);
    cfg.mixture_predictions = get<bool>(t, "mixture_predictions", "train", cfg.mixture_predictions);
    if (t.contains("optimizer")) parse_optimizer(t["optimizer"], cfg.train.optimizer);
  }
  if (j.contains("penalty")) {
    const auto& p = j["penalty"];
    allow_keys(p, "penalty", {"df_default", "hat1", "sp_scale"});
    cfg.penalty.df_default = get<double>(p, "df_default", "penalty", cfg.penalty.df_default);
    cfg.penalty.hat1 = get<bool>(p, "hat1", "penalty", cfg.penalty.hat1);
    if (p.contains("sp_scale")) {
      cfg.penalty.sp_scale = get<double>(p, "sp_scale", "penalty", 0.0);
      if (!(*cfg.penalty.sp_scale >= 0.0)) throw ConfigError("penalty.sp_scale must be >= 0");
    }
    if (!(cfg.penalty.df_default > 0.0)) throw ConfigError("penalty.df_default must be positive");
  }
  if (j.contains("orthog")) {
    const auto& o = j["orthog"];
    allow_keys(o, "orthog", {"orthogonalize", "identify_intercept"});
    cfg.orthog.orthogonalize = get<bool>(o, "orthogonalize", "orthog", cfg.orthog.orthogonalize);
    cfg.orthog.identify_intercept = get<bool>(o, "identify_intercept", "orthog", cfg.orthog.identify_intercept);
  }
  if (j.contains("output_dir")) {
    const std::filesystem::path out = get<std::string>(j, "output_dir", "config", "");
    cfg.output_dir = out.is_absolute() ? out : base_dir / out;
  } else {
    cfg.output_dir = base_dir / cfg.output_dir;
  }
  cfg.seed = get<std::uint64_t>(j, "seed", "config", 0);
  cfg.train.seed = cfg.seed;
  try {
    cfg.train.validate();
  } catch (const TrainConfigError& e) {
    throw ConfigError(e.what());
  }
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config '" + path.string() + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str(), path.parent_path());
}

ModelSpec make_spec(const RunConfig& cfg) {
  ModelSpec spec;
  spec.family = make_family(cfg.family);
  spec.formulas = FormulaSet::from_strings(cfg.formulas, cfg.mapping);
  spec.formulas.validate(spec.family.n_params());
  spec.networks = cfg.networks;
  spec.penalty = cfg.penalty;
  spec.orthog = cfg.orthog;
  for (const auto& formula : spec.formulas.formulas)
    for (const auto& t : formula.terms)
      if (t.is_network() && !spec.networks.count(t.name))
        throw ConfigError("formula uses network '" + t.name + "' but 'networks' does not define it");
  return spec;
}

std::vector<std::string> referenced_columns(const ModelSpec& spec) {
  std::set<std::string> cols;
  for (const auto& f : spec.formulas.formulas)
    for (const auto& t : f.terms) collect_vars(t, cols);
  return {cols.begin(), cols.end()};
}

LoadedData load_data(const RunConfig& cfg, const ModelSpec& spec) {
  const DataFrame raw = read_csv(cfg.csv_path);
  std::vector<std::string> used = referenced_columns(spec);
  used.push_back(cfg.response);
  for (const auto& c : used)
    if (!raw.has(c)) throw DataError("missing column '" + c + "' in '" + cfg.csv_path.string() + "'");
  LoadedData out;
  out.frame = raw.drop_missing(used, &out.dropped);
  const auto yv = out.frame.numeric(cfg.response);
  out.y = Eigen::Map<const Eigen::VectorXd>(yv.data(), static_cast<Eigen::Index>(yv.size()));
  if (cfg.response_transform == "log") {
    if ((out.y.array() <= 0.0).any()) throw DataError("response_transform 'log' needs a positive response");
    out.y = out.y.array().log();
  }
  if (out.frame.rows() == 0) throw DataError("no complete rows left after dropping missing values");
  return out;
}

}  // namespace sddr::cli
