#include "sddr/formula.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <set>

#include "sddr/text.hpp"

namespace sddr {
namespace {

enum class Tok { Tilde, Plus, Minus, LParen, RParen, Comma, Equals, Ident, Number, String, Oz, End };

struct Token {
  Tok type;
  std::string text;
  double number = 0.0;
  std::size_t offset = 0;
};

bool ident_start(char c) { return std::isalpha(static_cast<unsigned char>(c)) || c == '_' || c == '.'; }
bool ident_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '.'; }

std::vector<Token> tokenize(std::string_view src) {
  std::vector<Token> out;
  std::size_t i = 0;
  while (i < src.size()) {
    const char c = src[i];
    if (std::isspace(static_cast<unsigned char>(c))) {
      ++i;
      continue;
    }
    const std::size_t start = i;
    switch (c) {
      case '~': out.push_back({Tok::Tilde, "~", 0, start}); ++i; continue;
      case '+': out.push_back({Tok::Plus, "+", 0, start}); ++i; continue;
      case '-': out.push_back({Tok::Minus, "-", 0, start}); ++i; continue;
      case '(': out.push_back({Tok::LParen, "(", 0, start}); ++i; continue;
      case ')': out.push_back({Tok::RParen, ")", 0, start}); ++i; continue;
      case ',': out.push_back({Tok::Comma, ",", 0, start}); ++i; continue;
      case '=': out.push_back({Tok::Equals, "=", 0, start}); ++i; continue;
      default: break;
    }
    if (c == '%') {
      if (src.substr(i, 4) != "%OZ%") throw FormulaError("unknown infix operator", start);
      out.push_back({Tok::Oz, "%OZ%", 0, start});
      i += 4;
      continue;
    }
    if (c == '"' || c == '\'') {
      const std::size_t close = src.find(c, i + 1);
      if (close == std::string_view::npos) throw FormulaError("unterminated string", start);
      out.push_back({Tok::String, std::string(src.substr(i + 1, close - i - 1)), 0, start});
      i = close + 1;
      continue;
    }
    if (std::isdigit(static_cast<unsigned char>(c))) {
      std::size_t j = i;
      while (j < src.size() && (std::isdigit(static_cast<unsigned char>(src[j])) || src[j] == '.' ||
                                src[j] == 'e' || src[j] == 'E' ||
                                ((src[j] == '-' || src[j] == '+') && (src[j - 1] == 'e' || src[j - 1] == 'E'))))
        ++j;
      double v = 0.0;
      auto [ptr, ec] = std::from_chars(src.data() + i, src.data() + j, v);
      if (ec != std::errc{} || ptr != src.data() + j) throw FormulaError("malformed number", start);
      out.push_back({Tok::Number, std::string(src.substr(i, j - i)), v, start});
      i = j;
      continue;
    }
    if (ident_start(c)) {
      std::size_t j = i + 1;
      while (j < src.size() && ident_char(src[j])) ++j;
      out.push_back({Tok::Ident, std::string(src.substr(i, j - i)), 0, start});
      i = j;
      continue;
    }
    throw FormulaError(std::string("unexpected character '") + c + "'", start);
  }
  out.push_back({Tok::End, "", 0, src.size()});
  return out;
}

struct CallArg {
  std::string key;  // empty for positional
  Token value;
  std::vector<double> vector_value;  // c(...) literal
  bool is_vector = false;
};

class Parser {
 public:
  explicit Parser(std::string_view src) : tokens_(tokenize(src)) {}

  ParameterFormula parse() {
    ParameterFormula f;
    expect(Tok::Tilde, "formula must start with '~'");
    bool seen_intercept_directive = false;
    parse_term_into(f, seen_intercept_directive);
    while (peek().type == Tok::Plus) {
      advance();
      parse_term_into(f, seen_intercept_directive);
    }
    if (peek().type != Tok::End) throw FormulaError("expected '+' or end of formula", peek().offset);
    return f;
  }

 private:
  const Token& peek(std::size_t ahead = 0) const {
    return tokens_[std::min(pos_ + ahead, tokens_.size() - 1)];
  }
  const Token& advance() { return tokens_[pos_++]; }
  const Token& expect(Tok t, const char* msg) {
    if (peek().type != t) throw FormulaError(msg, peek().offset);
    return advance();
  }

  void parse_term_into(ParameterFormula& f, bool& seen_directive) {
    const Token& t = peek();
    if (t.type == Tok::Minus) {
      advance();
      const Token& one = expect(Tok::Number, "only '-1' may follow '-'");
      if (one.number != 1.0) throw FormulaError("only '-1' may follow '-'", one.offset);
      intercept_directive(f, seen_directive, false, t.offset);
      return;
    }
    if (t.type == Tok::Number) {
      advance();
      if (t.number == 0.0)
        intercept_directive(f, seen_directive, false, t.offset);
      else if (t.number == 1.0)
        intercept_directive(f, seen_directive, true, t.offset);
      else
        throw FormulaError("numeric term must be 0 or 1", t.offset);
      return;
    }
    TermSpec term = parse_primary();
    if (peek().type == Tok::Oz) {
      const Token& oz = advance();
      if (term.kind != TermKind::Network)
        throw FormulaError("%OZ% requires a network term on its left side", oz.offset);
      term.kind = TermKind::Orthogonalized;
      term.against = parse_oz_rhs();
    }
    f.terms.push_back(std::move(term));
  }

  void intercept_directive(ParameterFormula& f, bool& seen, bool include, std::size_t offset) {
    if (seen) throw FormulaError("duplicate intercept directive", offset);
    seen = true;
    f.has_intercept = include;
    if (include) f.terms.push_back(TermSpec{.kind = TermKind::Intercept});
  }

  std::vector<TermSpec> parse_oz_rhs() {
    std::vector<TermSpec> out;
    auto one = [&] {
      const Token& t = peek();
      if (t.type == Tok::Number && t.number == 1.0) {
        advance();
        out.push_back(TermSpec{.kind = TermKind::Intercept});
        return;
      }
      TermSpec s = parse_primary();
      if (!s.is_structured()) throw FormulaError("%OZ% right side must contain structured terms only", t.offset);
      out.push_back(std::move(s));
    };
    if (peek().type == Tok::LParen) {
      advance();
      one();
      while (peek().type == Tok::Plus) {
        advance();
        one();
      }
      expect(Tok::RParen, "expected ')' closing %OZ% term list");
    } else {
      one();
    }
    return out;
  }

  TermSpec parse_primary() {
    const Token& id = expect(Tok::Ident, "expected a term");
    if (peek().type != Tok::LParen) return TermSpec{.kind = TermKind::Linear, .vars = {id.text}};
    advance();
    std::vector<CallArg> args;
    if (peek().type != Tok::RParen) {
      args.push_back(parse_arg());
      while (peek().type == Tok::Comma) {
        advance();
        args.push_back(parse_arg());
      }
    }
    expect(Tok::RParen, "expected ')'");
    return make_call(id, args);
  }

  CallArg parse_arg() {
    CallArg a;
    if (peek().type == Tok::Ident && peek(1).type == Tok::Equals) {
      a.key = advance().text;
      advance();
    }
    if (peek().type == Tok::Ident && peek().text == "c" && peek(1).type == Tok::LParen) {
      a.value = advance();
      advance();
      a.is_vector = true;
      a.vector_value.push_back(expect(Tok::Number, "expected number in c(...)").number);
      while (peek().type == Tok::Comma) {
        advance();
        a.vector_value.push_back(expect(Tok::Number, "expected number in c(...)").number);
      }
      expect(Tok::RParen, "expected ')' closing c(...)");
      return a;
    }
    const Token& v = peek();
    if (v.type != Tok::Ident && v.type != Tok::Number && v.type != Tok::String)
      throw FormulaError("expected argument", v.offset);
    a.value = advance();
    return a;
  }

  static double positive_number(const CallArg& a, const char* what) {
    if (a.value.type != Tok::Number || a.is_vector)
      throw FormulaError(std::string(what) + " must be a number", a.value.offset);
    return a.value.number;
  }

  static int basis_dim(double v, std::size_t offset) {
    if (v != static_cast<int>(v) || v < 3) throw FormulaError("k must be an integer >= 3", offset);
    return static_cast<int>(v);
  }

  TermSpec make_call(const Token& fn, const std::vector<CallArg>& args) {
    const std::string& name = fn.text;
    TermSpec t;
    std::vector<const CallArg*> named;
    for (const auto& a : args) {
      if (a.key.empty()) {
        if (a.value.type != Tok::Ident || a.is_vector)
          throw FormulaError("positional arguments must be variable names", a.value.offset);
        t.vars.push_back(a.value.text);
      } else {
        named.push_back(&a);
      }
    }
    auto require_vars = [&](std::size_t lo, std::size_t hi) {
      if (t.vars.size() < lo || t.vars.size() > hi)
        throw FormulaError(name + "() has the wrong number of variables", fn.offset);
    };
    auto reject_named = [&](std::initializer_list<std::string_view> allowed) {
      for (const CallArg* a : named)
        if (std::find(allowed.begin(), allowed.end(), a->key) == allowed.end())
          throw FormulaError("unknown argument '" + a->key + "' in " + name + "()", a->value.offset);
    };

    if (name == "s" || name == "te" || name == "ti") {
      const bool tensor = name != "s";
      t.kind = tensor ? TermKind::TensorSmooth : TermKind::Smooth;
      if (tensor) {
        t.name = name;
        require_vars(2, 16);
      } else {
        require_vars(1, 1);
      }
      reject_named({"bs", "df", "k"});
      for (const CallArg* a : named) {
        if (a->key == "bs") {
          if (a->value.type != Tok::String && a->value.type != Tok::Ident)
            throw FormulaError("bs must be a basis tag", a->value.offset);
          if (a->value.text == "ps")
            t.basis = BasisTag::PSpline;
          else if (a->value.text == "tp")
            t.basis = BasisTag::ThinPlate;
          else
            throw FormulaError("unsupported basis '" + a->value.text + "'", a->value.offset);
        } else if (a->key == "df") {
          const double df = positive_number(*a, "df");
          if (!(df > 0)) throw FormulaError("df must be > 0", a->value.offset);
          t.df = df;
        } else {  // k
          if (a->is_vector) {
            if (!tensor || a->vector_value.size() != t.vars.size())
              throw FormulaError("k vector must have one entry per margin", a->value.offset);
            for (double v : a->vector_value) t.k.push_back(basis_dim(v, a->value.offset));
          } else {
            const int k = basis_dim(positive_number(*a, "k"), a->value.offset);
            t.k.assign(t.vars.size(), k);
          }
        }
      }
      return t;
    }
    if (name == "lin") {
      t.kind = TermKind::Linear;
      require_vars(1, 1024);
      reject_named({});
      return t;
    }
    if (name == "ridge" || name == "lasso") {
      t.kind = name == "ridge" ? TermKind::Ridge : TermKind::Lasso;
      require_vars(1, 1024);
      reject_named({"la"});
      for (const CallArg* a : named) {
        const double la = positive_number(*a, "la");
        if (!(la >= 0)) throw FormulaError("la must be >= 0", a->value.offset);
        t.la = la;
      }
      return t;
    }
    if (name == "offset") {
      t.kind = TermKind::Offset;
      require_vars(1, 1);
      reject_named({});
      return t;
    }
    // Anything else is a network; resolved against the registry at build time.
    t.kind = TermKind::Network;
    t.name = name;
    require_vars(1, 1024);
    reject_named({});
    return t;
  }

  std::vector<Token> tokens_;
  std::size_t pos_ = 0;
};

std::string join_vars(const std::vector<std::string>& vars) {
  std::string out;
  for (std::size_t i = 0; i < vars.size(); ++i) {
    if (i) out += ", ";
    out += vars[i];
  }
  return out;
}

std::set<std::string> variable_set(const TermSpec& t) { return {t.vars.begin(), t.vars.end()}; }

}  // namespace

TermSpec TermSpec::network_part() const {
  TermSpec n = *this;
  n.kind = TermKind::Network;
  n.against.clear();
  return n;
}

std::string TermSpec::label() const {
  switch (kind) {
    case TermKind::Intercept:
      return "1";
    case TermKind::Linear:
      return vars.size() == 1 ? vars.front() : "lin(" + join_vars(vars) + ")";
    case TermKind::Ridge:
    case TermKind::Lasso: {
      std::string s = (kind == TermKind::Ridge ? "ridge(" : "lasso(") + join_vars(vars);
      if (la) s += ", la=" + format_number(*la);
      return s + ")";
    }
    case TermKind::Offset:
      return "offset(" + vars.front() + ")";
    case TermKind::Smooth:
    case TermKind::TensorSmooth: {
      std::string s = (kind == TermKind::Smooth ? std::string("s") : name) + "(" + join_vars(vars);
      s += basis == BasisTag::PSpline ? ", bs=\"ps\"" : ", bs=\"tp\"";
      if (df) s += ", df=" + format_number(*df);
      if (!k.empty()) {
        if (kind == TermKind::Smooth) {
          s += ", k=" + std::to_string(k.front());
        } else {
          s += ", k=c(";
          for (std::size_t i = 0; i < k.size(); ++i) s += (i ? ", " : "") + std::to_string(k[i]);
          s += ")";
        }
      }
      return s + ")";
    }
    case TermKind::Network:
      return name + "(" + join_vars(vars) + ")";
    case TermKind::Orthogonalized: {
      std::string s = name + "(" + join_vars(vars) + ") %OZ% (";
      for (std::size_t i = 0; i < against.size(); ++i) s += (i ? " + " : "") + against[i].label();
      return s + ")";
    }
  }
  return {};
}

ParameterFormula parse_formula(std::string_view text) {
  ParameterFormula f = Parser(text).parse();
  f.source_text = std::string(text);
  return f;
}

std::string canonical_format(const ParameterFormula& formula) {
  std::string out = "~ ";
  bool first = true;
  auto emit = [&](const std::string& s) {
    if (!first) out += " + ";
    out += s;
    first = false;
  };
  if (!formula.has_intercept) emit("0");
  for (const auto& t : formula.terms) emit(t.label());
  return out;
}

std::vector<Overlap> detect_overlap(const ParameterFormula& formula, bool identify_intercept) {
  std::vector<Overlap> out;
  for (const auto& term : formula.terms) {
    if (!term.is_network()) continue;
    const auto inputs = variable_set(term);
    Overlap ov{term.network_part(), {}};
    if (identify_intercept && formula.has_intercept) ov.structured.push_back(TermSpec{.kind = TermKind::Intercept});
    for (const auto& other : formula.terms) {
      if (!other.is_structured() || other.kind == TermKind::Intercept) continue;
      const auto vars = variable_set(other);
      const bool shared = std::any_of(vars.begin(), vars.end(), [&](const auto& v) { return inputs.count(v) > 0; });
      if (shared) ov.structured.push_back(other);
    }
    if (!ov.structured.empty()) out.push_back(std::move(ov));
  }
  return out;
}

FormulaSet FormulaSet::from_strings(const std::vector<std::pair<std::string, std::string>>& named,
                                    std::vector<std::vector<int>> mapping) {
  FormulaSet set;
  for (const auto& [name, text] : named) {
    set.names.push_back(name);
    set.formulas.push_back(parse_formula(text));
  }
  set.mapping = std::move(mapping);
  return set;
}

void FormulaSet::validate(int n_params) {
  if (mapping.empty()) {
    if (static_cast<int>(formulas.size()) != n_params)
      throw std::invalid_argument("expected " + std::to_string(n_params) + " formulas, got " +
                                  std::to_string(formulas.size()) + " (supply a mapping to share formulas)");
    for (int i = 0; i < n_params; ++i) mapping.push_back({i});
  }
  if (mapping.size() != formulas.size())
    throw std::invalid_argument("mapping must have one entry per formula");
  std::vector<bool> covered(static_cast<std::size_t>(n_params), false);
  for (const auto& m : mapping) {
    if (m.empty()) throw std::invalid_argument("mapping entries must name at least one parameter");
    for (int k : m) {
      if (k < 0 || k >= n_params) throw std::invalid_argument("mapping index out of range");
      covered[static_cast<std::size_t>(k)] = true;
    }
  }
  for (int k = 0; k < n_params; ++k)
    if (!covered[static_cast<std::size_t>(k)])
      throw std::invalid_argument("parameter " + std::to_string(k) + " has no formula");
}

}  // namespace sddr
