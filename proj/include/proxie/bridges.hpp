#pragma once

#include "proxie/dataset.hpp"
#include "proxie/moments.hpp"

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace proxie {

// A basis or instrument term: the product of its factor columns. No factors
// is the intercept; at most two factors (declared pairwise interactions).
struct BasisTerm {
  std::vector<std::string> factors;

  static BasisTerm intercept() { return {}; }
  static BasisTerm column(std::string name) { return {{std::move(name)}}; }
  static BasisTerm product(std::string a, std::string b) {
    return {{std::move(a), std::move(b)}};
  }
  // "1", "W1", "A*Z1"
  static BasisTerm parse(const std::string& text);
  std::string to_string() const;
  bool involves(const std::string& column) const;

  bool operator==(const BasisTerm&) const = default;
};

std::vector<BasisTerm> parse_terms(const std::vector<std::string>& texts);
std::vector<std::string> term_strings(const std::vector<BasisTerm>& terms);

enum class Link { identity, logit, log };

std::string to_string(Link link);
Link parse_link(const std::string& text);

// Exponents are clamped to +-kExpClamp before exponentiation.
inline constexpr double kExpClamp = 700.0;

// h(W, A, X; eta) = link^-1(basis . eta)
struct OutcomeBridgeSpec {
  Link link = Link::identity;
  std::vector<BasisTerm> basis;
  VectorXd eta;  // aligned with basis; may be empty before fitting
  // Appended to the default instruments (1, Z..., A, X...); factors from
  // Z, A, X. Any extra instrument makes the system overidentified unless
  // the basis grows to match.
  std::vector<BasisTerm> extra_instruments;

  // (1, W..., A, X...)
  static OutcomeBridgeSpec linear_default(const ColumnRoles& roles);
  // Basis has the intercept and A; factors drawn from W, A, X.
  void validate(const ColumnRoles& roles) const;
};

// q(Z, A, X; phi) = 1 + exp((-1)^(1-A) basis . phi)
struct TreatmentBridgeSpec {
  std::vector<BasisTerm> basis;
  VectorXd phi;
  // Appended to the default instruments (1, W..., A, X...); factors from
  // W, A, X.
  std::vector<BasisTerm> extra_instruments;

  // (1, Z..., A, X...)
  static TreatmentBridgeSpec linear_default(const ColumnRoles& roles);
  // Factors drawn from Z, A, X.
  void validate(const ColumnRoles& roles) const;
};

// Default instruments: (1, Z..., A, X...) for the outcome bridge,
// (1, W..., A, X...) for the treatment bridge, then `extra`.
std::vector<BasisTerm> outcome_instruments(const ColumnRoles& roles,
                                           const std::vector<BasisTerm>& extra = {});
std::vector<BasisTerm> treatment_instruments(const ColumnRoles& roles,
                                             const std::vector<BasisTerm>& extra = {});

// Basis terms resolved against a column layout for fast row evaluation.
class CompiledBasis {
 public:
  CompiledBasis(const std::vector<BasisTerm>& terms, const std::vector<std::string>& columns,
                const std::string& treatment);

  Index size() const { return static_cast<Index>(terms_.size()); }
  void eval(Row row, Eigen::Ref<VectorXd> out) const;
  // Same, with the treatment column replaced by `a`.
  void eval_at(Row row, double a, Eigen::Ref<VectorXd> out) const;
  // Whether term j contains the treatment as a factor.
  bool involves_treatment(Index j) const;

 private:
  struct Term {
    int f1 = -1, f2 = -1;  // column indices, -1 when absent
  };
  std::vector<Term> terms_;
  int treatment_ = -1;
};

// Columns referenced by a set of terms plus `always`, deduplicated, in
// first-seen order.
std::vector<std::string> layout_columns(const std::vector<std::string>& always,
                                        const std::vector<std::vector<BasisTerm>>& term_sets);

using NamedRow = std::map<std::string, double>;

double eval_h(const OutcomeBridgeSpec& spec, const NamedRow& row);
double eval_h(const OutcomeBridgeSpec& spec, const Dataset& data, Index row);

// `clamp_events`, when given, is incremented whenever the exponent is
// clamped. Requires the treatment column to be named `treatment`.
double eval_q(const TreatmentBridgeSpec& spec, const NamedRow& row, const std::string& treatment,
              std::size_t* clamp_events = nullptr);
double eval_q(const TreatmentBridgeSpec& spec, const Dataset& data, Index row,
              std::size_t* clamp_events = nullptr);

// Every row at once; `a`, when given, replaces the treatment value.
VectorXd eval_h_all(const OutcomeBridgeSpec& spec, const Dataset& data,
                    std::optional<double> a = std::nullopt);
VectorXd eval_q_all(const TreatmentBridgeSpec& spec, const Dataset& data,
                    std::size_t* clamp_events = nullptr);

// (Y - h(W, A, X; eta)) k(Z, A, X). With stack_ate a last parameter tau and
// moment tau - (h(W, 1, X) - h(W, 0, X)) are appended.
MomentSystem outcome_bridge_moments(const OutcomeBridgeSpec& spec, const ColumnRoles& roles,
                                    bool stack_ate = false);

// (-1)^(1-A) q(Z, A, X; phi) k(W, A, X) - k(W, 1, X) [k involves A]. For the
// default instruments the subtracted vector is the indicator of the A slot.
// With stack_ate the moment tau - (-1)^(1-A) Y q is appended.
MomentSystem treatment_bridge_moments(const TreatmentBridgeSpec& spec, const ColumnRoles& roles,
                                      bool stack_ate = false);

}  // namespace proxie
