#include "proxie/estimators.hpp"

#include "proxie/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <sstream>

namespace proxie {

void EstimateResult::set_wald(double standard_error) {
  se = standard_error;
  ci_low = ate_hat - kNormalQuantile975 * standard_error;
  ci_high = ate_hat + kNormalQuantile975 * standard_error;
}

void BootstrapConfig::validate() const {
  if (replicates < 1) throw ConfigError("bootstrap replicates must be >= 1");
}

namespace {

constexpr double kRankCondition = 1e12;
constexpr double kPositivityEps = 1e-6;

constexpr Index kMaxDim = 64;
using SmallVec = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, kMaxDim, 1>;

double expit(double v) { return 1.0 / (1.0 + std::exp(-std::clamp(v, -kExpClamp, kExpClamp))); }

std::vector<std::string> concat(std::initializer_list<std::vector<std::string>> parts) {
  std::vector<std::string> out;
  for (const auto& p : parts) out.insert(out.end(), p.begin(), p.end());
  return out;
}

// Design matrix with a leading column of ones.
MatrixXd design(const Dataset& data, const std::vector<std::string>& cols) {
  MatrixXd d(data.n(), static_cast<Index>(cols.size()) + 1);
  d.col(0).setOnes();
  for (std::size_t j = 0; j < cols.size(); ++j) d.col(static_cast<Index>(j) + 1) = data.column(cols[j]);
  return d;
}

struct OlsFit {
  VectorXd beta;
  MatrixXd vcov;  // HC0 sandwich
  VectorXd resid;
};

OlsFit ols(const MatrixXd& x, const VectorXd& y, const std::string& what) {
  if (x.rows() <= x.cols())
    throw PreconditionError(what + ": needs more rows than regressors (" +
                            std::to_string(x.rows()) + " <= " + std::to_string(x.cols()) + ")");
  const double cond = condition_number(x);
  if (!(cond < kRankCondition))
    throw RankDeficiencyError(what + ": design matrix is rank deficient (condition " +
                                  std::to_string(cond) + ")",
                              cond);
  OlsFit f;
  const MatrixXd xtx = x.transpose() * x;
  const Eigen::LDLT<MatrixXd> ldlt(xtx);
  f.beta = ldlt.solve(x.transpose() * y);
  f.resid = y - x * f.beta;
  const MatrixXd xe = x.array().colwise() * f.resid.array();
  const MatrixXd meat = xe.transpose() * xe;
  const MatrixXd inv = ldlt.solve(MatrixXd::Identity(x.cols(), x.cols()));
  f.vcov = inv * meat * inv;
  return f;
}

double safe_sqrt(double v) { return v > 0.0 ? std::sqrt(v) : 0.0; }

bool is_binary(Eigen::Ref<const VectorXd> v) {
  return (v.array() == 0.0 || v.array() == 1.0).all();
}

// Logistic propensity on (1, X) stacked with the Horvitz-Thompson mean.
// Row layout: Y, A, X...
MomentSystem ipw_moments(const ColumnRoles& roles) {
  const Index k = static_cast<Index>(roles.covariates.size()) + 1;
  if (k > kMaxDim) throw ConfigError("naive_ipw: too many covariates");
  MomentSystem sys;
  sys.label = "naive_ipw";
  sys.dim_theta = k + 1;
  sys.dim_moments = k + 1;
  sys.columns = concat({{roles.outcome, roles.treatment}, roles.covariates});
  auto covariates = [k](Row row, SmallVec& c) {
    c(0) = 1.0;
    for (Index j = 1; j < k; ++j) c(j) = row[static_cast<std::size_t>(j + 1)];
  };
  sys.residual = [=](Row row, const VectorXd& theta, Eigen::Ref<VectorXd> out) {
    SmallVec c(k);
    covariates(row, c);
    const double e = expit(c.dot(theta.head(k)));
    const double y = row[0], a = row[1];
    out.head(k) = (a - e) * c;
    out(k) = theta(k) - (a * y / e - (1.0 - a) * y / (1.0 - e));
  };
  sys.jacobian = [=](Row row, const VectorXd& theta, Eigen::Ref<MatrixXd> out) {
    SmallVec c(k);
    covariates(row, c);
    const double e = expit(c.dot(theta.head(k)));
    const double y = row[0], a = row[1];
    out.setZero();
    out.topLeftCorner(k, k).noalias() = -e * (1.0 - e) * c * c.transpose();
    out.block(k, 0, 1, k) =
        (a * y * (1.0 - e) / e + (1.0 - a) * y * e / (1.0 - e)) * c.transpose();
    out(k, k) = 1.0;
  };
  return sys;
}

void add_gmm_diagnostics(EstimateResult& r, const GmmResult& g, const std::string& prefix) {
  r.diagnostics[prefix + "iterations"] = g.iterations;
  r.diagnostics[prefix + "condition"] = g.condition;
  r.diagnostics[prefix + "objective"] = g.objective;
  r.diagnostics[prefix + "converged"] = g.converged ? 1.0 : 0.0;
}

void set_se_from_vcov(EstimateResult& r, const MatrixXd& vcov, Index idx) {
  const double v = vcov(idx, idx);
  if (std::isfinite(v))
    r.set_wald(safe_sqrt(v));
  else
    r.warnings.push_back("sandwich variance is not finite; standard error omitted");
}

void require_binary_outcome(const Dataset& data, const OutcomeBridgeSpec& h, const std::string& who) {
  if (h.link == Link::logit && !is_binary(data.y()))
    throw PreconditionError(who + ": logit link requires a binary outcome");
}

void add_weight_diagnostics(EstimateResult& r, const VectorXd& q, Eigen::Ref<const VectorXd> a,
                            std::size_t clamps) {
  const double n = static_cast<double>(q.size());
  r.diagnostics["q_min"] = q.minCoeff();
  r.diagnostics["q_max"] = q.maxCoeff();
  r.diagnostics["clamp_events"] = static_cast<double>(clamps);
  r.diagnostics["mean_A_q"] = (a.array() * q.array()).sum() / n;
  r.diagnostics["mean_1mA_q"] = ((1.0 - a.array()) * q.array()).sum() / n;
  if (clamps > 0)
    r.warnings.push_back(std::to_string(clamps) + " treatment-bridge exponents were clamped");
}

}  // namespace

MomentSystem naive_ipw_moments(const ColumnRoles& roles) { return ipw_moments(roles); }

EstimateResult naive_or(const Dataset& data) {
  const ColumnRoles& roles = data.roles();
  const MatrixXd x = design(data, concat({{roles.treatment}, roles.covariates}));
  const OlsFit fit = ols(x, data.y(), "naive_or");
  EstimateResult r;
  r.estimator = "naive_or";
  r.ate_hat = fit.beta(1);
  r.set_wald(safe_sqrt(fit.vcov(1, 1)));
  return r;
}

EstimateResult naive_ipw(const Dataset& data) {
  const ColumnRoles& roles = data.roles();
  if (condition_number(design(data, roles.covariates)) >= kRankCondition)
    throw RankDeficiencyError("naive_ipw: propensity design is rank deficient", kRankCondition);
  const MomentSystem sys = ipw_moments(roles);
  const RowMajorMatrix rows = gather_rows(data, sys.columns);
  GmmConfig cfg;
  cfg.solver = Solver::gauss_newton;
  cfg.tol = 1e-10;
  const GmmResult g = solve_gmm(rows, sys, cfg);

  EstimateResult r;
  r.estimator = "naive_ipw";
  r.ate_hat = g.theta_hat(sys.dim_theta - 1);
  r.converged = g.converged;
  add_gmm_diagnostics(r, g, "");

  const Index k = sys.dim_theta - 1;
  const MatrixXd c = design(data, roles.covariates);
  const VectorXd e = (c * g.theta_hat.head(k)).unaryExpr([](double v) { return expit(v); });
  r.diagnostics["propensity_min"] = e.minCoeff();
  r.diagnostics["propensity_max"] = e.maxCoeff();
  if (e.minCoeff() <= kPositivityEps || e.maxCoeff() >= 1.0 - kPositivityEps)
    r.warnings.push_back("fitted propensities reach the positivity bound 1e-6");
  if (!r.converged) r.warnings.push_back("propensity fit did not converge");
  set_se_from_vcov(r, g.vcov, k);
  return r;
}

EstimateResult naive_aipw(const Dataset& data) {
  const ColumnRoles& roles = data.roles();
  const MatrixXd x = design(data, concat({{roles.treatment}, roles.covariates}));
  const OlsFit fit = ols(x, data.y(), "naive_aipw outcome model");
  const MatrixXd c = design(data, roles.covariates);
  const MomentSystem sys = ipw_moments(roles);
  GmmConfig cfg;
  cfg.solver = Solver::gauss_newton;
  cfg.tol = 1e-10;
  const GmmResult g = solve_gmm(data, sys, cfg);
  const Index k = c.cols();
  const VectorXd e = (c * g.theta_hat.head(k)).unaryExpr([](double v) { return expit(v); });

  const auto y = data.y();
  const auto a = data.a();
  const VectorXd m = x * fit.beta;
  const double tau_or = fit.beta(1);
  VectorXd psi(data.n());
  for (Index i = 0; i < data.n(); ++i) {
    const double res = y(i) - m(i);
    psi(i) = tau_or + a(i) * res / e(i) - (1.0 - a(i)) * res / (1.0 - e(i));
  }
  EstimateResult r;
  r.estimator = "naive_aipw";
  r.ate_hat = psi.mean();
  r.converged = g.converged;
  const double var = (psi.array() - r.ate_hat).square().mean();
  r.set_wald(std::sqrt(var / static_cast<double>(data.n())));
  r.diagnostics["propensity_min"] = e.minCoeff();
  r.diagnostics["propensity_max"] = e.maxCoeff();
  if (e.minCoeff() <= kPositivityEps || e.maxCoeff() >= 1.0 - kPositivityEps)
    r.warnings.push_back("fitted propensities reach the positivity bound 1e-6");
  return r;
}

EstimateResult proximal_g(const Dataset& data, const OutcomeBridgeSpec& h_spec,
                          const GmmConfig& config) {
  require_binary_outcome(data, h_spec, "proximal_g");
  const MomentSystem sys = outcome_bridge_moments(h_spec, data.roles(), true);
  const GmmResult g = solve_gmm(data, sys, config);
  const Index p = sys.dim_theta - 1;

  EstimateResult r;
  r.estimator = "proximal_g";
  r.ate_hat = g.theta_hat(p);
  r.converged = g.converged;
  add_gmm_diagnostics(r, g, "");
  if (!r.converged) r.warnings.push_back("outcome bridge GMM did not converge");
  set_se_from_vcov(r, g.vcov, p);
  return r;
}

MomentSystem two_stage_moments(const ColumnRoles& roles) {
  roles.validate();
  const Index nz = static_cast<Index>(roles.treatment_proxies.size());
  const Index nw = static_cast<Index>(roles.outcome_proxies.size());
  const Index nx = static_cast<Index>(roles.covariates.size());
  const Index k1 = 2 + nz + nx;  // (1, Z, A, X)
  const Index k2 = 2 + nw + nx;  // (1, W_hat, A, X)
  if (k1 > kMaxDim || k2 > kMaxDim) throw ConfigError("two_stage_linear: too many columns");

  MomentSystem sys;
  sys.label = "two_stage_linear";
  sys.dim_theta = nw * k1 + k2;
  sys.dim_moments = sys.dim_theta;
  // Row layout: Y, A, Z..., X..., W...
  sys.columns = concat({{roles.outcome, roles.treatment}, roles.treatment_proxies,
                        roles.covariates, roles.outcome_proxies});

  auto stage1 = [=](Row row, SmallVec& d1) {
    d1(0) = 1.0;
    for (Index j = 0; j < nz; ++j) d1(1 + j) = row[static_cast<std::size_t>(2 + j)];
    d1(1 + nz) = row[1];
    for (Index j = 0; j < nx; ++j) d1(2 + nz + j) = row[static_cast<std::size_t>(2 + nz + j)];
  };
  auto stage2 = [=](Row row, const SmallVec& d1, const VectorXd& theta, SmallVec& d2) {
    d2(0) = 1.0;
    for (Index j = 0; j < nw; ++j) d2(1 + j) = d1.dot(theta.segment(j * k1, k1));
    d2(1 + nw) = row[1];
    for (Index j = 0; j < nx; ++j) d2(2 + nw + j) = row[static_cast<std::size_t>(2 + nz + j)];
  };
  auto w_at = [=](Row row, Index j) { return row[static_cast<std::size_t>(2 + nz + nx + j)]; };

  sys.residual = [=](Row row, const VectorXd& theta, Eigen::Ref<VectorXd> out) {
    SmallVec d1(k1), d2(k2);
    stage1(row, d1);
    stage2(row, d1, theta, d2);
    for (Index j = 0; j < nw; ++j) out.segment(j * k1, k1) = (w_at(row, j) - d2(1 + j)) * d1;
    const double res = row[0] - d2.dot(theta.tail(k2));
    out.tail(k2) = res * d2;
  };
  sys.jacobian = [=](Row row, const VectorXd& theta, Eigen::Ref<MatrixXd> out) {
    SmallVec d1(k1), d2(k2);
    stage1(row, d1);
    stage2(row, d1, theta, d2);
    const auto eta = theta.tail(k2);
    const double res = row[0] - d2.dot(eta);
    const Index off = nw * k1;
    out.setZero();
    for (Index j = 0; j < nw; ++j) {
      out.block(j * k1, j * k1, k1, k1).noalias() = -d1 * d1.transpose();
      // d(res * d2) / d theta_j = d2 (-eta_{1+j} d1^T) + res e_{1+j} d1^T
      auto blk = out.block(off, j * k1, k2, k1);
      blk.noalias() = -eta(1 + j) * d2 * d1.transpose();
      blk.row(1 + j) += res * d1.transpose();
    }
    out.block(off, off, k2, k2).noalias() = -d2 * d2.transpose();
  };
  return sys;
}

EstimateResult two_stage_linear(const Dataset& data) {
  const ColumnRoles& roles = data.roles();
  const MatrixXd d1 = design(data, concat({roles.treatment_proxies, {roles.treatment}, roles.covariates}));
  const Index nw = static_cast<Index>(roles.outcome_proxies.size());
  const Index k1 = d1.cols();

  double cond = condition_number(d1);
  if (!(cond < kRankCondition))
    throw RankDeficiencyError("two_stage_linear stage 1: design (1, Z, A, X) is rank deficient "
                              "(condition " + std::to_string(cond) + ")",
                              cond);
  if (data.n() <= k1)
    throw PreconditionError("two_stage_linear stage 1: needs more rows than regressors");
  const Eigen::LDLT<MatrixXd> ldlt1(d1.transpose() * d1);
  const MatrixXd w = data.columns(roles.outcome_proxies);
  const MatrixXd theta1 = ldlt1.solve(d1.transpose() * w);  // k1 x nw
  const MatrixXd w_hat = d1 * theta1;

  MatrixXd d2(data.n(), 2 + nw + static_cast<Index>(roles.covariates.size()));
  d2.col(0).setOnes();
  d2.middleCols(1, nw) = w_hat;
  d2.col(1 + nw) = data.a();
  for (std::size_t j = 0; j < roles.covariates.size(); ++j)
    d2.col(2 + nw + static_cast<Index>(j)) = data.column(roles.covariates[j]);
  cond = condition_number(d2);
  if (!(cond < kRankCondition))
    throw RankDeficiencyError("two_stage_linear stage 2: design (1, W_hat, A, X) is rank deficient "
                              "(condition " + std::to_string(cond) + ")",
                              cond);
  const VectorXd eta = (d2.transpose() * d2).ldlt().solve(d2.transpose() * data.y());

  const MomentSystem sys = two_stage_moments(roles);
  VectorXd theta(sys.dim_theta);
  for (Index j = 0; j < nw; ++j) theta.segment(j * k1, k1) = theta1.col(j);
  theta.tail(eta.size()) = eta;

  EstimateResult r;
  r.estimator = "two_stage_linear";
  r.ate_hat = eta(1 + nw);
  const MatrixXd vcov = sandwich_vcov(data, sys, theta);
  set_se_from_vcov(r, vcov, nw * k1 + 1 + nw);
  return r;
}

EstimateResult proximal_ipw(const Dataset& data, const TreatmentBridgeSpec& q_spec,
                            const GmmConfig& config) {
  const MomentSystem sys = treatment_bridge_moments(q_spec, data.roles(), true);
  const GmmResult g = solve_gmm(data, sys, config);
  const Index p = sys.dim_theta - 1;

  EstimateResult r;
  r.estimator = "proximal_ipw";
  r.ate_hat = g.theta_hat(p);
  r.converged = g.converged;
  add_gmm_diagnostics(r, g, "");

  TreatmentBridgeSpec fitted = q_spec;
  fitted.phi = g.theta_hat.head(p);
  std::size_t clamps = 0;
  const VectorXd q = eval_q_all(fitted, data, &clamps);
  add_weight_diagnostics(r, q, data.a(), clamps);
  if (!r.converged) r.warnings.push_back("treatment bridge GMM did not converge");
  set_se_from_vcov(r, g.vcov, p);
  return r;
}

EstimateResult proximal_dr(const Dataset& data, const OutcomeBridgeSpec& h_spec,
                           const TreatmentBridgeSpec& q_spec, const GmmConfig& config) {
  require_binary_outcome(data, h_spec, "proximal_dr");
  const ColumnRoles& roles = data.roles();
  const MomentSystem h_sys = outcome_bridge_moments(h_spec, roles);
  const MomentSystem q_sys = treatment_bridge_moments(q_spec, roles);
  const GmmResult gh = solve_gmm(data, h_sys, config);
  const GmmResult gq = solve_gmm(data, q_sys, config);

  OutcomeBridgeSpec h = h_spec;
  h.eta = gh.theta_hat;
  TreatmentBridgeSpec q = q_spec;
  q.phi = gq.theta_hat;

  std::size_t clamps = 0;
  const VectorXd qv = eval_q_all(q, data, &clamps);
  const VectorXd hv = eval_h_all(h, data);
  const VectorXd h1 = eval_h_all(h, data, 1.0);
  const VectorXd h0 = eval_h_all(h, data, 0.0);
  const auto y = data.y();
  const auto a = data.a();

  VectorXd psi(data.n());
  for (Index i = 0; i < data.n(); ++i) {
    const double sign = a(i) == 1.0 ? 1.0 : -1.0;
    psi(i) = sign * qv(i) * (y(i) - hv(i)) + h1(i) - h0(i);
  }

  EstimateResult r;
  r.estimator = "proximal_dr";
  r.ate_hat = psi.mean();
  r.converged = gh.converged && gq.converged;
  add_gmm_diagnostics(r, gh, "h_");
  add_gmm_diagnostics(r, gq, "q_");
  add_weight_diagnostics(r, qv, a, clamps);
  if (!gh.converged) r.warnings.push_back("outcome bridge GMM did not converge");
  if (!gq.converged) r.warnings.push_back("treatment bridge GMM did not converge");
  const double var = (psi.array() - r.ate_hat).square().mean();
  if (std::isfinite(var))
    r.set_wald(std::sqrt(var / static_cast<double>(data.n())));
  else
    r.warnings.push_back("influence summand variance is not finite; standard error omitted");
  return r;
}

Eigen::Vector2d solve_saturated_cell(const Eigen::Matrix2d& psi, const Eigen::Vector2d& y) {
  const double det = psi.determinant();
  if (!(std::abs(det) >= 1e-8)) {
    std::ostringstream os;
    os << "saturated bridge matrix is near singular (det " << det
       << "); the proxies carry no usable variation in this stratum";
    throw NearSingularityError(os.str(), det);
  }
  Eigen::Matrix2d inv;
  inv << psi(1, 1), -psi(0, 1), -psi(1, 0), psi(0, 0);
  return inv * y / det;
}

namespace {

struct SaturatedLayout {
  VectorXd y, a, z, w;
  std::vector<unsigned> x;  // bit-packed covariate pattern per row
};

SaturatedLayout saturated_layout(const Dataset& data) {
  const ColumnRoles& roles = data.roles();
  if (roles.treatment_proxies.size() != 1 || roles.outcome_proxies.size() != 1)
    throw PreconditionError("saturated_binary requires exactly one Z and one W column");
  if (roles.covariates.size() > 16)
    throw PreconditionError("saturated_binary supports at most 16 binary covariates");
  auto check = [&](const std::string& col) {
    if (!is_binary(data.column(col)))
      throw PreconditionError("saturated_binary requires binary columns; '" + col +
                              "' has values other than 0 and 1");
  };
  for (const auto& c : roles.observed_columns()) check(c);

  SaturatedLayout l;
  l.y = data.y();
  l.a = data.a();
  l.z = data.column(roles.treatment_proxies[0]);
  l.w = data.column(roles.outcome_proxies[0]);
  l.x.assign(static_cast<std::size_t>(data.n()), 0u);
  for (std::size_t j = 0; j < roles.covariates.size(); ++j) {
    const auto col = data.column(roles.covariates[j]);
    for (Index i = 0; i < data.n(); ++i)
      if (col(i) == 1.0) l.x[static_cast<std::size_t>(i)] |= 1u << j;
  }
  return l;
}

std::string pattern_string(unsigned x, std::size_t p) {
  std::string s;
  for (std::size_t j = 0; j < p; ++j) s += ((x >> j) & 1u) ? '1' : '0';
  return p == 0 ? "-" : s;
}

}  // namespace

SaturatedFit fit_saturated(const Dataset& data) {
  const SaturatedLayout l = saturated_layout(data);
  const std::size_t p = data.roles().covariates.size();

  // counts[(a, x)][z] and sums of Y and W within each cell
  struct Acc {
    double n[2] = {0, 0}, y[2] = {0, 0}, w[2] = {0, 0};
  };
  std::map<std::pair<int, unsigned>, Acc> acc;
  std::set<unsigned> patterns;
  for (Index i = 0; i < data.n(); ++i) {
    const auto ui = static_cast<std::size_t>(i);
    patterns.insert(l.x[ui]);
    Acc& c = acc[{static_cast<int>(l.a(i)), l.x[ui]}];
    const int z = static_cast<int>(l.z(i));
    c.n[z] += 1.0;
    c.y[z] += l.y(i);
    c.w[z] += l.w(i);
  }

  std::vector<std::string> missing;
  for (unsigned x : patterns)
    for (int a = 0; a < 2; ++a)
      for (int z = 0; z < 2; ++z) {
        auto it = acc.find({a, x});
        if (it == acc.end() || it->second.n[z] == 0.0)
          missing.push_back("(A=" + std::to_string(a) + ", X=" + pattern_string(x, p) +
                            ", Z=" + std::to_string(z) + ")");
      }
  if (!missing.empty()) {
    std::string msg = "saturated_binary: empty cells";
    for (std::size_t i = 0; i < missing.size(); ++i) msg += (i ? ", " : ": ") + missing[i];
    throw CellSupportError(msg);
  }

  SaturatedFit fit;
  for (const auto& [key, c] : acc) {
    SaturatedCell cell;
    for (int z = 0; z < 2; ++z) {
      const double pw1 = c.w[z] / c.n[z];
      cell.psi(z, 0) = 1.0 - pw1;
      cell.psi(z, 1) = pw1;
      cell.y(z) = c.y[z] / c.n[z];
    }
    try {
      cell.h = solve_saturated_cell(cell.psi, cell.y);
    } catch (const NearSingularityError& e) {
      throw NearSingularityError("saturated_binary stratum (A=" + std::to_string(key.first) +
                                     ", X=" + pattern_string(key.second, p) + "): " + e.what(),
                                 e.det());
    }
    fit.cells[key] = cell;
  }
  return fit;
}

EstimateResult saturated_binary(const Dataset& data, const std::optional<BootstrapConfig>& boot) {
  if (boot) {
    return bootstrap(data, [](const Dataset& d) { return saturated_binary(d); }, *boot);
  }
  const SaturatedFit fit = fit_saturated(data);
  const SaturatedLayout l = saturated_layout(data);
  double sum = 0.0;
  double min_det = std::numeric_limits<double>::infinity();
  for (const auto& [key, cell] : fit.cells) min_det = std::min(min_det, std::abs(cell.psi.determinant()));
  for (Index i = 0; i < data.n(); ++i) {
    const unsigned x = l.x[static_cast<std::size_t>(i)];
    const int w = static_cast<int>(l.w(i));
    sum += fit.cells.at({1, x}).h(w) - fit.cells.at({0, x}).h(w);
  }
  EstimateResult r;
  r.estimator = "saturated_binary";
  r.ate_hat = sum / static_cast<double>(data.n());
  r.diagnostics["strata"] = static_cast<double>(fit.cells.size());
  r.diagnostics["min_abs_det"] = min_det;
  return r;
}

}  // namespace proxie
