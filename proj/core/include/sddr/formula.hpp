#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace sddr {

// Additive predictor terms. Intercept removal ("0", "-1") is not a term; it
// clears ParameterFormula::has_intercept instead.
enum class TermKind {
  Intercept,
  Linear,
  Ridge,
  Lasso,
  Offset,
  Smooth,
  TensorSmooth,
  Network,
  Orthogonalized,
};

enum class BasisTag { PSpline, ThinPlate };

struct TermSpec {
  TermKind kind = TermKind::Linear;
  std::vector<std::string> vars;
  // Network name for Network/Orthogonalized, "te" or "ti" for tensor smooths.
  std::string name;
  BasisTag basis = BasisTag::PSpline;
  std::optional<double> la;
  std::optional<double> df;
  // Basis dimension, one entry per margin for tensor smooths. Empty = default.
  std::vector<int> k;
  // Orthogonalized only: the structured terms the network is projected against.
  std::vector<TermSpec> against;

  bool operator==(const TermSpec&) const = default;

  bool is_network() const {
    return kind == TermKind::Network || kind == TermKind::Orthogonalized;
  }
  bool is_structured() const {
    return kind == TermKind::Intercept || kind == TermKind::Linear || kind == TermKind::Ridge ||
           kind == TermKind::Lasso || kind == TermKind::Smooth || kind == TermKind::TensorSmooth;
  }
  // The plain network call inside an Orthogonalized term (or the term itself).
  TermSpec network_part() const;
  // Canonical source text of this single term.
  std::string label() const;
};

struct ParameterFormula {
  std::vector<TermSpec> terms;
  bool has_intercept = true;
  std::string source_text;

  // Structural equality; source_text is not compared.
  friend bool operator==(const ParameterFormula& a, const ParameterFormula& b) {
    return a.has_intercept == b.has_intercept && a.terms == b.terms;
  }
};

class FormulaError : public std::runtime_error {
 public:
  FormulaError(const std::string& what, std::size_t offset)
      : std::runtime_error(what + " (at byte " + std::to_string(offset) + ")"), offset_(offset) {}
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

ParameterFormula parse_formula(std::string_view text);

std::string canonical_format(const ParameterFormula& formula);

struct Overlap {
  TermSpec network;
  std::vector<TermSpec> structured;
  bool operator==(const Overlap&) const = default;
};

// Structured terms of the same formula sharing input variables with each
// network term. With identify_intercept the intercept is added to every
// network's list when the formula has one.
std::vector<Overlap> detect_overlap(const ParameterFormula& formula, bool identify_intercept = false);

// Formulas plus the distributional parameters each one feeds (0-based).
struct FormulaSet {
  std::vector<std::string> names;
  std::vector<ParameterFormula> formulas;
  std::vector<std::vector<int>> mapping;

  // Identity mapping when `mapping` is empty.
  static FormulaSet from_strings(const std::vector<std::pair<std::string, std::string>>& named,
                                 std::vector<std::vector<int>> mapping = {});
  // Checks mapping indices against the parameter count; fills the identity
  // mapping when unset.
  void validate(int n_params);
};

}  // namespace sddr
