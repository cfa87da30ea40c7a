#include "sddr/bundle.hpp"

#include <bit>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace sddr {

using nlohmann::json;
using Eigen::Index;
using Eigen::MatrixXd;

std::string base64_encode(std::span<const std::uint8_t> bytes) {
  static constexpr char table[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 2 < bytes.size(); i += 3) {
    const std::uint32_t v = (bytes[i] << 16) | (bytes[i + 1] << 8) | bytes[i + 2];
    out += table[(v >> 18) & 63];
    out += table[(v >> 12) & 63];
    out += table[(v >> 6) & 63];
    out += table[v & 63];
  }
  if (i < bytes.size()) {
    std::uint32_t v = bytes[i] << 16;
    if (i + 1 < bytes.size()) v |= bytes[i + 1] << 8;
    out += table[(v >> 18) & 63];
    out += table[(v >> 12) & 63];
    out += i + 1 < bytes.size() ? table[(v >> 6) & 63] : '=';
    out += '=';
  }
  return out;
}

std::vector<std::uint8_t> base64_decode(std::string_view text) {
  auto value = [](char c) -> int {
    if (c >= 'A' && c <= 'Z') return c - 'A';
    if (c >= 'a' && c <= 'z') return c - 'a' + 26;
    if (c >= '0' && c <= '9') return c - '0' + 52;
    if (c == '+') return 62;
    if (c == '/') return 63;
    return -1;
  };
  if (text.size() % 4 != 0) throw BundleError("base64 length is not a multiple of 4");
  std::vector<std::uint8_t> out;
  out.reserve(text.size() / 4 * 3);
  for (std::size_t i = 0; i < text.size(); i += 4) {
    int v[4];
    int pad = 0;
    for (int j = 0; j < 4; ++j) {
      const char c = text[i + static_cast<std::size_t>(j)];
      if (c == '=' && i + 4 == text.size() && j >= 2) {
        v[j] = 0;
        ++pad;
      } else if ((v[j] = value(c)) < 0 || pad > 0) {
        throw BundleError("invalid base64 character");
      }
    }
    const std::uint32_t w = (v[0] << 18) | (v[1] << 12) | (v[2] << 6) | v[3];
    out.push_back(static_cast<std::uint8_t>(w >> 16));
    if (pad < 2) out.push_back(static_cast<std::uint8_t>(w >> 8));
    if (pad < 1) out.push_back(static_cast<std::uint8_t>(w));
  }
  return out;
}

class BundleCodec {
 public:
  static json encode(const Model& m);
  static Model decode(const json& j);
};

namespace {

json matrix_json(const MatrixXd& m) {
  std::vector<std::uint8_t> bytes;
  bytes.reserve(static_cast<std::size_t>(m.size()) * 8);
  for (Index i = 0; i < m.size(); ++i) {
    const auto bits = std::bit_cast<std::uint64_t>(m.data()[i]);
    for (int b = 0; b < 8; ++b) bytes.push_back(static_cast<std::uint8_t>(bits >> (8 * b)));
  }
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"f64le", base64_encode(bytes)}};
}

MatrixXd matrix_from(const json& j) {
  const Index rows = j.at("rows").get<Index>(), cols = j.at("cols").get<Index>();
  if (rows < 0 || cols < 0) throw BundleError("negative matrix dimension");
  const auto bytes = base64_decode(j.at("f64le").get<std::string>());
  if (bytes.size() != static_cast<std::size_t>(rows * cols) * 8) throw BundleError("matrix payload has the wrong length");
  MatrixXd m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) {
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(bytes[static_cast<std::size_t>(i * 8 + b)]) << (8 * b);
    m.data()[i] = std::bit_cast<double>(bits);
  }
  return m;
}

const char* kind_name(TermKind k) {
  switch (k) {
    case TermKind::Intercept: return "intercept";
    case TermKind::Linear: return "linear";
    case TermKind::Ridge: return "ridge";
    case TermKind::Lasso: return "lasso";
    case TermKind::Offset: return "offset";
    case TermKind::Smooth: return "smooth";
    case TermKind::TensorSmooth: return "tensor";
    case TermKind::Network: return "network";
    case TermKind::Orthogonalized: return "orthogonalized";
  }
  return "";
}

TermKind kind_from(const std::string& s) {
  for (TermKind k : {TermKind::Intercept, TermKind::Linear, TermKind::Ridge, TermKind::Lasso, TermKind::Offset,
                     TermKind::Smooth, TermKind::TensorSmooth, TermKind::Network, TermKind::Orthogonalized})
    if (s == kind_name(k)) return k;
  throw BundleError("unknown term kind '" + s + "'");
}

json term_json(const TermSpec& t) {
  json j{{"kind", kind_name(t.kind)}, {"vars", t.vars}, {"name", t.name},
         {"basis", t.basis == BasisTag::PSpline ? "ps" : "tp"}, {"k", t.k}};
  if (t.la) j["la"] = *t.la;
  if (t.df) j["df"] = *t.df;
  if (!t.against.empty()) {
    j["against"] = json::array();
    for (const auto& a : t.against) j["against"].push_back(term_json(a));
  }
  return j;
}

TermSpec term_from(const json& j) {
  TermSpec t;
  t.kind = kind_from(j.at("kind").get<std::string>());
  t.vars = j.at("vars").get<std::vector<std::string>>();
  t.name = j.at("name").get<std::string>();
  t.basis = j.at("basis").get<std::string>() == "tp" ? BasisTag::ThinPlate : BasisTag::PSpline;
  t.k = j.at("k").get<std::vector<int>>();
  if (j.contains("la")) t.la = j["la"].get<double>();
  if (j.contains("df")) t.df = j["df"].get<double>();
  if (j.contains("against"))
    for (const auto& a : j["against"]) t.against.push_back(term_from(a));
  return t;
}

const char* structured_kind_name(StructuredKind k) {
  switch (k) {
    case StructuredKind::Intercept: return "intercept";
    case StructuredKind::Linear: return "linear";
    case StructuredKind::Ridge: return "ridge";
    case StructuredKind::Lasso: return "lasso";
    case StructuredKind::Smooth: return "smooth";
  }
  return "";
}

StructuredKind structured_kind_from(const std::string& s) {
  for (StructuredKind k : {StructuredKind::Intercept, StructuredKind::Linear, StructuredKind::Ridge, StructuredKind::Lasso,
                           StructuredKind::Smooth})
    if (s == structured_kind_name(k)) return k;
  throw BundleError("unknown structured term kind '" + s + "'");
}

json block_json(const DesignBlock& b) {
  json j{{"P", matrix_json(b.P)},
         {"Z", matrix_json(b.Z)},
         {"lambda", b.lambda},
         {"term_id", b.term_id},
         {"coef_names", b.coef_names},
         {"var_names", b.var_names},
         {"range", b.range},
         {"basis", b.basis == BasisTag::PSpline ? "ps" : "tp"},
         {"knots", json::array()},
         {"margin_Z", json::array()}};
  if (b.df_target) j["df_target"] = *b.df_target;
  for (const auto& k : b.knots) j["knots"].push_back({{"knots", k.knots}, {"degree", k.degree}});
  for (const auto& z : b.margin_Z) j["margin_Z"].push_back(matrix_json(z));
  return j;
}

DesignBlock block_from(const json& j) {
  DesignBlock b;
  b.P = matrix_from(j.at("P"));
  b.Z = matrix_from(j.at("Z"));
  b.lambda = j.at("lambda").get<double>();
  if (j.contains("df_target")) b.df_target = j["df_target"].get<double>();
  b.term_id = j.at("term_id").get<std::string>();
  b.coef_names = j.at("coef_names").get<std::vector<std::string>>();
  b.var_names = j.at("var_names").get<std::vector<std::string>>();
  b.range = j.at("range").get<std::vector<std::pair<double, double>>>();
  b.basis = j.at("basis").get<std::string>() == "tp" ? BasisTag::ThinPlate : BasisTag::PSpline;
  for (const auto& k : j.at("knots")) {
    KnotVector kv{k.at("knots").get<std::vector<double>>(), k.at("degree").get<int>()};
    try {
      kv.validate();
    } catch (const BasisError& e) {
      throw BundleError(std::string("invalid knots in bundle: ") + e.what());
    }
    b.knots.push_back(std::move(kv));
  }
  for (const auto& z : j.at("margin_Z")) b.margin_Z.push_back(matrix_from(z));
  // No training rows are stored; keep the column count so p() stays valid.
  b.X.resize(0, b.Z.size() ? b.Z.cols() : static_cast<Index>(b.coef_names.size()));
  return b;
}

json structured_json(const StructuredTerm& st, const ParamStore& params) {
  json cols = json::array();
  for (const auto& c : st.columns) {
    json cj{{"var", c.var}};
    if (c.level) cj["level"] = *c.level;
    cols.push_back(cj);
  }
  json j{{"spec", term_json(st.spec)}, {"kind", structured_kind_name(st.kind)}, {"block", block_json(st.block)},
         {"columns", cols},          {"levels", st.levels},                   {"la", st.la},
         {"coef", params[st.coef].name}};
  if (st.coef_v) j["coef_v"] = params[*st.coef_v].name;
  return j;
}

std::size_t param_slot(const ParamStore& params, const std::string& name) {
  const auto slot = params.find(name);
  if (!slot) throw BundleError("bundle references unknown parameter '" + name + "'");
  return *slot;
}

StructuredTerm structured_from(const json& j, const ParamStore* params) {
  StructuredTerm st;
  st.spec = term_from(j.at("spec"));
  st.kind = structured_kind_from(j.at("kind").get<std::string>());
  st.block = block_from(j.at("block"));
  for (const auto& c : j.at("columns")) {
    LinearColumn lc{c.at("var").get<std::string>(), std::nullopt};
    if (c.contains("level")) lc.level = c["level"].get<std::string>();
    st.columns.push_back(std::move(lc));
  }
  st.levels = j.at("levels").get<std::vector<std::vector<std::string>>>();
  st.la = j.at("la").get<double>();
  if (params) {
    st.coef = param_slot(*params, j.at("coef").get<std::string>());
    if (j.contains("coef_v")) st.coef_v = param_slot(*params, j["coef_v"].get<std::string>());
    if ((*params)[st.coef].value.rows() != st.block.Z.cols() && st.kind == StructuredKind::Smooth)
      throw BundleError("coefficient '" + j["coef"].get<std::string>() + "' does not match its basis");
  }
  return st;
}

json layer_json(const LayerSpec& l) {
  if (l.kind == LayerSpec::Kind::Dropout) return {{"type", "dropout"}, {"rate", l.rate}};
  return {{"type", "dense"}, {"units", l.units}, {"activation", activation_name(l.activation)}, {"use_bias", l.use_bias}};
}

LayerSpec layer_from(const json& j) {
  const auto type = j.at("type").get<std::string>();
  if (type == "dropout") return LayerSpec::dropout(j.at("rate").get<double>());
  if (type != "dense") throw BundleError("unknown layer type '" + type + "'");
  return LayerSpec::dense(j.at("units").get<int>(), parse_activation(j.at("activation").get<std::string>()),
                          j.at("use_bias").get<bool>());
}

int origin_code(OzOrigin o) { return static_cast<int>(o); }

}  // namespace

json BundleCodec::encode(const Model& m) {
  if (m.spec_.family.custom) throw BundleError("models with custom response functions cannot be saved");
  if (m.spec_.custom_penalty) throw BundleError("models with a custom penalty cannot be saved");
  json j;
  j["schema_version"] = kBundleSchemaVersion;
  j["family"] = m.spec_.family.name;
  j["formulas"] = json::array();
  const auto& fs = m.spec_.formulas;
  for (std::size_t f = 0; f < fs.formulas.size(); ++f)
    j["formulas"].push_back({{"name", fs.names[f]}, {"formula", canonical_format(fs.formulas[f])}});
  j["mapping"] = fs.mapping;
  j["networks"] = json::object();
  for (const auto& [name, ns] : m.spec_.networks) {
    json layers = json::array();
    for (const auto& l : ns.layers) layers.push_back(layer_json(l));
    j["networks"][name] = {{"layers", layers}};
  }
  const auto& pen = m.spec_.penalty;
  j["penalty"] = {{"df_default", pen.df_default}, {"hat1", pen.hat1}};
  if (pen.sp_scale) j["penalty"]["sp_scale"] = *pen.sp_scale;
  j["orthog"] = {{"orthogonalize", m.spec_.orthog.orthogonalize}, {"identify_intercept", m.spec_.orthog.identify_intercept}};
  j["seed"] = m.seed_;
  j["n_train"] = m.n_train_;

  j["params"] = json::array();
  for (const auto& p : m.params_) j["params"].push_back({{"name", p.name}, {"value", matrix_json(p.value)}});

  j["parts"] = json::array();
  for (const auto& part : m.parts_) {
    json pj{{"name", part.name}, {"params", part.params}, {"offsets", part.offsets}};
    pj["structured"] = json::array();
    for (const auto& st : part.structured) pj["structured"].push_back(structured_json(st, m.params_));
    pj["networks"] = json::array();
    for (const auto& nt : part.networks) {
      const auto& slots = nt.net.slots();
      std::string prefix;
      for (const auto& s : slots)
        if (s) {
          const std::string& kname = m.params_[s->kernel].name;
          prefix = kname.substr(0, kname.rfind("/dense_"));
          break;
        }
      json nj{{"spec", term_json(nt.spec)}, {"prefix", prefix}, {"constraints", json::array()}, {"origins", json::array()}};
      for (const auto& c : nt.constraints) nj["constraints"].push_back(structured_json(c, m.params_));
      for (auto o : nt.origins) nj["origins"].push_back(origin_code(o));
      pj["networks"].push_back(nj);
    }
    j["parts"].push_back(pj);
  }
  return j;
}

Model BundleCodec::decode(const json& j) {
  if (!j.is_object() || !j.contains("schema_version")) throw BundleError("not a model bundle (no schema_version)");
  const int version = j["schema_version"].get<int>();
  if (version != kBundleSchemaVersion)
    throw BundleError("unsupported bundle schema_version " + std::to_string(version) + " (expected " +
                      std::to_string(kBundleSchemaVersion) + ")");
  Model m;
  auto& spec = m.spec_;
  spec.family = make_family(j.at("family").get<std::string>());
  std::vector<std::pair<std::string, std::string>> named;
  for (const auto& f : j.at("formulas")) named.emplace_back(f.at("name").get<std::string>(), f.at("formula").get<std::string>());
  spec.formulas = FormulaSet::from_strings(named, j.at("mapping").get<std::vector<std::vector<int>>>());
  spec.formulas.validate(spec.family.n_params());
  for (const auto& [name, nj] : j.at("networks").items()) {
    NetworkSpec ns;
    ns.name = name;
    for (const auto& l : nj.at("layers")) ns.layers.push_back(layer_from(l));
    spec.networks[name] = std::move(ns);
  }
  const auto& pj = j.at("penalty");
  spec.penalty.df_default = pj.at("df_default").get<double>();
  spec.penalty.hat1 = pj.at("hat1").get<bool>();
  if (pj.contains("sp_scale")) spec.penalty.sp_scale = pj["sp_scale"].get<double>();
  spec.orthog.orthogonalize = j.at("orthog").at("orthogonalize").get<bool>();
  spec.orthog.identify_intercept = j.at("orthog").at("identify_intercept").get<bool>();
  m.seed_ = j.at("seed").get<std::uint64_t>();
  m.n_train_ = j.at("n_train").get<Index>();

  for (const auto& p : j.at("params")) m.params_.add(p.at("name").get<std::string>(), matrix_from(p.at("value")));

  const auto& parts = j.at("parts");
  if (parts.size() != spec.formulas.formulas.size()) throw BundleError("bundle parts do not match its formulas");
  for (std::size_t f = 0; f < parts.size(); ++f) {
    const auto& pj2 = parts[f];
    FormulaPart part;
    part.name = pj2.at("name").get<std::string>();
    part.formula = spec.formulas.formulas[f];
    part.params = pj2.at("params").get<std::vector<int>>();
    part.offsets = pj2.at("offsets").get<std::vector<std::string>>();
    for (const auto& s : pj2.at("structured")) part.structured.push_back(structured_from(s, &m.params_));
    for (const auto& nj : pj2.at("networks")) {
      const TermSpec term = term_from(nj.at("spec"));
      const auto it = spec.networks.find(term.name);
      if (it == spec.networks.end()) throw BundleError("bundle network '" + term.name + "' has no layer stack");
      NetworkSpec ns = it->second;
      ns.inputs = term.vars;
      std::vector<StructuredTerm> constraints;
      std::vector<OzOrigin> origins;
      for (const auto& c : nj.at("constraints")) constraints.push_back(structured_from(c, nullptr));
      for (const auto& o : nj.at("origins")) {
        const int code = o.get<int>();
        if (code < 0 || code > 2) throw BundleError("invalid orthogonalization origin");
        origins.push_back(static_cast<OzOrigin>(code));
      }
      if (!constraints.empty()) drop_output_bias(ns);
      NetworkTerm nt{term, Network(std::move(ns), m.params_, nj.at("prefix").get<std::string>()), std::move(constraints),
                     std::move(origins)};
      part.networks.push_back(std::move(nt));
    }
    m.parts_.push_back(std::move(part));
  }
  return m;
}

std::string save_bundle_string(const Model& model) { return BundleCodec::encode(model).dump(1); }

Model load_bundle_string(std::string_view text) {
  try {
    return BundleCodec::decode(json::parse(text));
  } catch (const json::exception& e) {
    throw BundleError(std::string("malformed model bundle: ") + e.what());
  } catch (const GraphError& e) {
    throw BundleError(std::string("model bundle weights do not match its networks: ") + e.what());
  } catch (const FormulaError& e) {
    throw BundleError(std::string("model bundle has an invalid formula: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw BundleError(std::string("invalid model bundle: ") + e.what());
  }
}

void save_bundle(const Model& model, const std::filesystem::path& path) {
  const std::string text = save_bundle_string(model);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw std::runtime_error("failed writing '" + path.string() + "'");
}

Model load_bundle(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw BundleError("cannot open model bundle '" + path.string() + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return load_bundle_string(buf.str());
}

}  // namespace sddr
