#include "proxie/bridges.hpp"

#include "proxie/errors.hpp"

#include <algorithm>
#include <cmath>

namespace proxie {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

bool contains(const std::vector<std::string>& v, const std::string& s) {
  return std::find(v.begin(), v.end(), s) != v.end();
}

void check_factors(const std::vector<BasisTerm>& terms, const std::vector<std::string>& allowed,
                   const std::string& what) {
  for (const auto& t : terms)
    for (const auto& f : t.factors)
      if (!contains(allowed, f))
        throw ConfigError(what + " term '" + t.to_string() + "' uses column '" + f +
                          "', which is not one of its allowed roles");
}

std::vector<std::string> concat(std::initializer_list<std::vector<std::string>> parts) {
  std::vector<std::string> out;
  for (const auto& p : parts) out.insert(out.end(), p.begin(), p.end());
  return out;
}

// Stack-allocated scratch for per-row evaluation.
constexpr Index kMaxTerms = 64;
using SmallVec = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, kMaxTerms, 1>;

void check_size(Index terms, const std::string& what) {
  if (terms > kMaxTerms)
    throw ConfigError(what + " has " + std::to_string(terms) + " terms; at most " +
                      std::to_string(kMaxTerms) + " are supported");
}

double inv_link(Link link, double eta) {
  switch (link) {
    case Link::identity: return eta;
    case Link::logit: return 1.0 / (1.0 + std::exp(-std::clamp(eta, -kExpClamp, kExpClamp)));
    case Link::log: return std::exp(std::clamp(eta, -kExpClamp, kExpClamp));
  }
  return eta;
}

// d h / d(linear predictor)
double inv_link_slope(Link link, double eta, double h) {
  switch (link) {
    case Link::identity: return 1.0;
    case Link::logit: return std::abs(eta) > kExpClamp ? 0.0 : h * (1.0 - h);
    case Link::log: return std::abs(eta) > kExpClamp ? 0.0 : h;
  }
  return 1.0;
}

}  // namespace

BasisTerm BasisTerm::parse(const std::string& text) {
  const std::string t = trim(text);
  if (t.empty()) throw ConfigError("empty basis term");
  if (t == "1") return intercept();
  const auto star = t.find('*');
  if (star == std::string::npos) return column(t);
  const std::string a = trim(t.substr(0, star));
  const std::string b = trim(t.substr(star + 1));
  if (a.empty() || b.empty() || b.find('*') != std::string::npos)
    throw ConfigError("basis term '" + t + "' must be '1', a column, or a pairwise product 'C1*C2'");
  return product(a, b);
}

std::string BasisTerm::to_string() const {
  if (factors.empty()) return "1";
  std::string s = factors[0];
  for (std::size_t i = 1; i < factors.size(); ++i) s += "*" + factors[i];
  return s;
}

bool BasisTerm::involves(const std::string& column) const { return contains(factors, column); }

std::vector<BasisTerm> parse_terms(const std::vector<std::string>& texts) {
  std::vector<BasisTerm> out;
  for (const auto& t : texts) out.push_back(BasisTerm::parse(t));
  return out;
}

std::vector<std::string> term_strings(const std::vector<BasisTerm>& terms) {
  std::vector<std::string> out;
  for (const auto& t : terms) out.push_back(t.to_string());
  return out;
}

std::string to_string(Link link) {
  switch (link) {
    case Link::identity: return "identity";
    case Link::logit: return "logit";
    case Link::log: return "log";
  }
  return "identity";
}

Link parse_link(const std::string& text) {
  if (text == "identity") return Link::identity;
  if (text == "logit") return Link::logit;
  if (text == "log") return Link::log;
  throw ConfigError("unknown link '" + text + "' (expected identity, logit or log)");
}

OutcomeBridgeSpec OutcomeBridgeSpec::linear_default(const ColumnRoles& roles) {
  OutcomeBridgeSpec s;
  s.basis.push_back(BasisTerm::intercept());
  for (const auto& w : roles.outcome_proxies) s.basis.push_back(BasisTerm::column(w));
  s.basis.push_back(BasisTerm::column(roles.treatment));
  for (const auto& x : roles.covariates) s.basis.push_back(BasisTerm::column(x));
  return s;
}

void OutcomeBridgeSpec::validate(const ColumnRoles& roles) const {
  if (std::find(basis.begin(), basis.end(), BasisTerm::intercept()) == basis.end())
    throw ConfigError("outcome bridge basis must include the intercept '1'");
  if (std::find(basis.begin(), basis.end(), BasisTerm::column(roles.treatment)) == basis.end())
    throw ConfigError("outcome bridge basis must include the treatment '" + roles.treatment + "'");
  check_factors(basis, concat({roles.outcome_proxies, {roles.treatment}, roles.covariates}),
                "outcome bridge");
  if (eta.size() != 0 && eta.size() != static_cast<Index>(basis.size()))
    throw ConfigError("outcome bridge eta has " + std::to_string(eta.size()) +
                      " entries for a basis of " + std::to_string(basis.size()));
}

TreatmentBridgeSpec TreatmentBridgeSpec::linear_default(const ColumnRoles& roles) {
  TreatmentBridgeSpec s;
  s.basis.push_back(BasisTerm::intercept());
  for (const auto& z : roles.treatment_proxies) s.basis.push_back(BasisTerm::column(z));
  s.basis.push_back(BasisTerm::column(roles.treatment));
  for (const auto& x : roles.covariates) s.basis.push_back(BasisTerm::column(x));
  return s;
}

void TreatmentBridgeSpec::validate(const ColumnRoles& roles) const {
  if (basis.empty()) throw ConfigError("treatment bridge basis is empty");
  check_factors(basis, concat({roles.treatment_proxies, {roles.treatment}, roles.covariates}),
                "treatment bridge");
  if (phi.size() != 0 && phi.size() != static_cast<Index>(basis.size()))
    throw ConfigError("treatment bridge phi has " + std::to_string(phi.size()) +
                      " entries for a basis of " + std::to_string(basis.size()));
}

std::vector<BasisTerm> outcome_instruments(const ColumnRoles& roles,
                                           const std::vector<BasisTerm>& extra) {
  std::vector<BasisTerm> k{BasisTerm::intercept()};
  for (const auto& z : roles.treatment_proxies) k.push_back(BasisTerm::column(z));
  k.push_back(BasisTerm::column(roles.treatment));
  for (const auto& x : roles.covariates) k.push_back(BasisTerm::column(x));
  check_factors(extra, concat({roles.treatment_proxies, {roles.treatment}, roles.covariates}),
                "outcome bridge instrument");
  k.insert(k.end(), extra.begin(), extra.end());
  return k;
}

std::vector<BasisTerm> treatment_instruments(const ColumnRoles& roles,
                                             const std::vector<BasisTerm>& extra) {
  std::vector<BasisTerm> k{BasisTerm::intercept()};
  for (const auto& w : roles.outcome_proxies) k.push_back(BasisTerm::column(w));
  k.push_back(BasisTerm::column(roles.treatment));
  for (const auto& x : roles.covariates) k.push_back(BasisTerm::column(x));
  check_factors(extra, concat({roles.outcome_proxies, {roles.treatment}, roles.covariates}),
                "treatment bridge instrument");
  k.insert(k.end(), extra.begin(), extra.end());
  return k;
}

std::vector<std::string> layout_columns(const std::vector<std::string>& always,
                                        const std::vector<std::vector<BasisTerm>>& term_sets) {
  std::vector<std::string> out;
  auto add = [&](const std::string& c) {
    if (!contains(out, c)) out.push_back(c);
  };
  for (const auto& c : always) add(c);
  for (const auto& set : term_sets)
    for (const auto& t : set)
      for (const auto& f : t.factors) add(f);
  return out;
}

CompiledBasis::CompiledBasis(const std::vector<BasisTerm>& terms,
                             const std::vector<std::string>& columns,
                             const std::string& treatment) {
  auto index = [&](const std::string& name) {
    auto it = std::find(columns.begin(), columns.end(), name);
    if (it == columns.end()) throw SchemaError("missing column: " + name);
    return static_cast<int>(it - columns.begin());
  };
  for (const auto& t : terms) {
    if (t.factors.size() > 2)
      throw ConfigError("basis term '" + t.to_string() + "' has more than two factors");
    Term c;
    if (t.factors.size() >= 1) c.f1 = index(t.factors[0]);
    if (t.factors.size() == 2) c.f2 = index(t.factors[1]);
    terms_.push_back(c);
  }
  auto it = std::find(columns.begin(), columns.end(), treatment);
  if (it != columns.end()) treatment_ = static_cast<int>(it - columns.begin());
}

void CompiledBasis::eval(Row row, Eigen::Ref<VectorXd> out) const {
  for (std::size_t j = 0; j < terms_.size(); ++j) {
    const Term& t = terms_[j];
    double v = 1.0;
    if (t.f1 >= 0) v *= row[static_cast<std::size_t>(t.f1)];
    if (t.f2 >= 0) v *= row[static_cast<std::size_t>(t.f2)];
    out(static_cast<Index>(j)) = v;
  }
}

void CompiledBasis::eval_at(Row row, double a, Eigen::Ref<VectorXd> out) const {
  auto value = [&](int idx) { return idx == treatment_ ? a : row[static_cast<std::size_t>(idx)]; };
  for (std::size_t j = 0; j < terms_.size(); ++j) {
    const Term& t = terms_[j];
    double v = 1.0;
    if (t.f1 >= 0) v *= value(t.f1);
    if (t.f2 >= 0) v *= value(t.f2);
    out(static_cast<Index>(j)) = v;
  }
}

bool CompiledBasis::involves_treatment(Index j) const {
  const Term& t = terms_[static_cast<std::size_t>(j)];
  return treatment_ >= 0 && (t.f1 == treatment_ || t.f2 == treatment_);
}

namespace {

double term_value(const BasisTerm& t, const NamedRow& row) {
  double v = 1.0;
  for (const auto& f : t.factors) {
    auto it = row.find(f);
    if (it == row.end()) throw SchemaError("missing column: " + f);
    v *= it->second;
  }
  return v;
}

NamedRow named_row(const Dataset& data, Index i) {
  NamedRow row;
  for (Index j = 0; j < data.num_columns(); ++j)
    row[data.names()[static_cast<std::size_t>(j)]] = data.values()(i, j);
  return row;
}

double q_from_exponent(double s, std::size_t* clamp_events) {
  if (s > kExpClamp || s < -kExpClamp) {
    if (clamp_events) ++*clamp_events;
    s = std::clamp(s, -kExpClamp, kExpClamp);
  }
  return 1.0 + std::exp(s);
}

}  // namespace

double eval_h(const OutcomeBridgeSpec& spec, const NamedRow& row) {
  if (spec.eta.size() != static_cast<Index>(spec.basis.size()))
    throw ConfigError("outcome bridge eta does not match its basis");
  double lin = 0.0;
  for (std::size_t j = 0; j < spec.basis.size(); ++j)
    lin += spec.eta(static_cast<Index>(j)) * term_value(spec.basis[j], row);
  return inv_link(spec.link, lin);
}

double eval_h(const OutcomeBridgeSpec& spec, const Dataset& data, Index row) {
  return eval_h(spec, named_row(data, row));
}

double eval_q(const TreatmentBridgeSpec& spec, const NamedRow& row, const std::string& treatment,
              std::size_t* clamp_events) {
  if (spec.phi.size() != static_cast<Index>(spec.basis.size()))
    throw ConfigError("treatment bridge phi does not match its basis");
  auto it = row.find(treatment);
  if (it == row.end()) throw SchemaError("missing column: " + treatment);
  const double sign = it->second == 1.0 ? 1.0 : -1.0;
  double lin = 0.0;
  for (std::size_t j = 0; j < spec.basis.size(); ++j)
    lin += spec.phi(static_cast<Index>(j)) * term_value(spec.basis[j], row);
  return q_from_exponent(sign * lin, clamp_events);
}

double eval_q(const TreatmentBridgeSpec& spec, const Dataset& data, Index row,
              std::size_t* clamp_events) {
  return eval_q(spec, named_row(data, row), data.roles().treatment, clamp_events);
}

VectorXd eval_h_all(const OutcomeBridgeSpec& spec, const Dataset& data, std::optional<double> a) {
  if (spec.eta.size() != static_cast<Index>(spec.basis.size()))
    throw ConfigError("outcome bridge eta does not match its basis");
  const ColumnRoles& roles = data.roles();
  const auto columns = layout_columns({roles.treatment}, {spec.basis});
  const RowMajorMatrix rows = gather_rows(data, columns);
  const CompiledBasis basis(spec.basis, columns, roles.treatment);
  VectorXd b(basis.size()), out(data.n());
  for (Index i = 0; i < data.n(); ++i) {
    if (a)
      basis.eval_at(row_of(rows, i), *a, b);
    else
      basis.eval(row_of(rows, i), b);
    out(i) = inv_link(spec.link, b.dot(spec.eta));
  }
  return out;
}

VectorXd eval_q_all(const TreatmentBridgeSpec& spec, const Dataset& data,
                    std::size_t* clamp_events) {
  if (spec.phi.size() != static_cast<Index>(spec.basis.size()))
    throw ConfigError("treatment bridge phi does not match its basis");
  const ColumnRoles& roles = data.roles();
  const auto columns = layout_columns({roles.treatment}, {spec.basis});
  const RowMajorMatrix rows = gather_rows(data, columns);
  const CompiledBasis basis(spec.basis, columns, roles.treatment);
  VectorXd b(basis.size()), out(data.n());
  for (Index i = 0; i < data.n(); ++i) {
    const Row row = row_of(rows, i);
    basis.eval(row, b);
    const double sign = row[0] == 1.0 ? 1.0 : -1.0;
    out(i) = q_from_exponent(sign * b.dot(spec.phi), clamp_events);
  }
  return out;
}

MomentSystem outcome_bridge_moments(const OutcomeBridgeSpec& spec, const ColumnRoles& roles,
                                    bool stack_ate) {
  spec.validate(roles);
  const auto instruments = outcome_instruments(roles, spec.extra_instruments);
  const Index p = static_cast<Index>(spec.basis.size());
  const Index m = static_cast<Index>(instruments.size());

  MomentSystem sys;
  sys.label = std::string("outcome_bridge[") + to_string(spec.link) + "]";
  sys.dim_theta = p + (stack_ate ? 1 : 0);
  sys.dim_moments = m + (stack_ate ? 1 : 0);
  sys.columns = layout_columns({roles.outcome, roles.treatment}, {spec.basis, instruments});
  sys.linear = spec.link == Link::identity;
  sys.check_identified();
  check_size(p, "outcome bridge basis");
  check_size(m, "outcome bridge instrument set");

  const CompiledBasis h_basis(spec.basis, sys.columns, roles.treatment);
  const CompiledBasis k_basis(instruments, sys.columns, roles.treatment);
  const Link link = spec.link;

  // Row layout puts Y first.
  sys.residual = [=](Row row, const VectorXd& theta, Eigen::Ref<VectorXd> out) {
    SmallVec b(p), k(m);
    h_basis.eval(row, b);
    k_basis.eval(row, k);
    const auto eta = theta.head(p);
    const double h = inv_link(link, b.dot(eta));
    out.head(m) = (row[0] - h) * k;
    if (stack_ate) {
      SmallVec b1(p), b0(p);
      h_basis.eval_at(row, 1.0, b1);
      h_basis.eval_at(row, 0.0, b0);
      out(m) = theta(p) - (inv_link(link, b1.dot(eta)) - inv_link(link, b0.dot(eta)));
    }
  };
  sys.jacobian = [=](Row row, const VectorXd& theta, Eigen::Ref<MatrixXd> out) {
    SmallVec b(p), k(m);
    h_basis.eval(row, b);
    k_basis.eval(row, k);
    const auto eta = theta.head(p);
    const double lin = b.dot(eta);
    const double h = inv_link(link, lin);
    out.setZero();
    out.topLeftCorner(m, p).noalias() = -inv_link_slope(link, lin, h) * k * b.transpose();
    if (stack_ate) {
      SmallVec b1(p), b0(p);
      h_basis.eval_at(row, 1.0, b1);
      h_basis.eval_at(row, 0.0, b0);
      const double l1 = b1.dot(eta), l0 = b0.dot(eta);
      const double s1 = inv_link_slope(link, l1, inv_link(link, l1));
      const double s0 = inv_link_slope(link, l0, inv_link(link, l0));
      out.block(m, 0, 1, p) = -(s1 * b1 - s0 * b0).transpose();
      out(m, p) = 1.0;
    }
  };
  return sys;
}

MomentSystem treatment_bridge_moments(const TreatmentBridgeSpec& spec, const ColumnRoles& roles,
                                      bool stack_ate) {
  spec.validate(roles);
  const auto instruments = treatment_instruments(roles, spec.extra_instruments);
  const Index p = static_cast<Index>(spec.basis.size());
  const Index m = static_cast<Index>(instruments.size());

  MomentSystem sys;
  sys.label = "treatment_bridge";
  sys.dim_theta = p + (stack_ate ? 1 : 0);
  sys.dim_moments = m + (stack_ate ? 1 : 0);
  sys.columns = layout_columns({roles.outcome, roles.treatment}, {spec.basis, instruments});
  sys.linear = false;
  sys.check_identified();
  check_size(p, "treatment bridge basis");
  check_size(m, "treatment bridge instrument set");

  const CompiledBasis q_basis(spec.basis, sys.columns, roles.treatment);
  const CompiledBasis k_basis(instruments, sys.columns, roles.treatment);
  std::vector<bool> a_terms(static_cast<std::size_t>(m));
  for (Index j = 0; j < m; ++j) a_terms[static_cast<std::size_t>(j)] = k_basis.involves_treatment(j);

  // Row layout: Y at 0, A at 1.
  sys.residual = [=](Row row, const VectorXd& theta, Eigen::Ref<VectorXd> out) {
    SmallVec b(p), k(m), k1(m);
    q_basis.eval(row, b);
    k_basis.eval(row, k);
    k_basis.eval_at(row, 1.0, k1);
    const double sign = row[1] == 1.0 ? 1.0 : -1.0;
    const double e = std::clamp(sign * b.dot(theta.head(p)), -kExpClamp, kExpClamp);
    const double q = 1.0 + std::exp(e);
    for (Index j = 0; j < m; ++j)
      out(j) = sign * q * k(j) - (a_terms[static_cast<std::size_t>(j)] ? k1(j) : 0.0);
    if (stack_ate) out(m) = theta(p) - sign * row[0] * q;
  };
  sys.jacobian = [=](Row row, const VectorXd& theta, Eigen::Ref<MatrixXd> out) {
    SmallVec b(p), k(m);
    q_basis.eval(row, b);
    k_basis.eval(row, k);
    const double sign = row[1] == 1.0 ? 1.0 : -1.0;
    const double raw = sign * b.dot(theta.head(p));
    // d/dphi [sign q] = sign * exp(e) * sign * b = exp(e) b
    const double slope = std::abs(raw) > kExpClamp ? 0.0 : std::exp(raw);
    out.setZero();
    out.topLeftCorner(m, p).noalias() = slope * k * b.transpose();
    if (stack_ate) {
      out.block(m, 0, 1, p) = -(row[0] * slope) * b.transpose();
      out(m, p) = 1.0;
    }
  };
  return sys;
}

}  // namespace proxie
