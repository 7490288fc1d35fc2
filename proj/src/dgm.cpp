#include "proxie/dgm.hpp"

#include "proxie/errors.hpp"
#include "proxie/rng.hpp"

#include <cmath>
#include <random>

namespace proxie {

namespace {

double expit(double x) { return 1.0 / (1.0 + std::exp(-x)); }

void require_finite(double v, const char* name) {
  if (!std::isfinite(v)) throw ConfigError(std::string("parameter ") + name + " is not finite");
}

void require_positive(double v, const char* name) {
  require_finite(v, name);
  if (!(v > 0.0)) throw ConfigError(std::string("parameter ") + name + " must be > 0");
}

void require_open_unit(double p, const std::string& name) {
  if (!(p > 0.0 && p < 1.0))
    throw ConfigError("probability " + name + " = " + std::to_string(p) +
                      " is outside (0, 1)");
}

std::string cell(const char* table, int u, int a, int x) {
  std::string s = std::string(table) + "[u=" + std::to_string(u);
  if (a >= 0) s += ",a=" + std::to_string(a);
  return s + ",x=" + std::to_string(x) + "]";
}

using Status = AssumptionStatus;

Status holds_if(bool b) { return b ? Status::holds : Status::violated; }

// Standard normal draws for one row of a Gaussian model.
struct NormalSource {
  Rng& rng;
  std::normal_distribution<double> normal{0.0, 1.0};
  double operator()() { return normal(rng); }
};

}  // namespace

std::string to_string(AssumptionStatus s) {
  switch (s) {
    case AssumptionStatus::holds: return "holds";
    case AssumptionStatus::violated: return "violated";
    case AssumptionStatus::not_applicable: return "not-applicable";
  }
  return "unknown";
}

const std::map<std::string, std::string>& assumption_names() {
  static const std::map<std::string, std::string> names = {
      {"A.1", "consistency"},
      {"A.2", "positivity"},
      {"A.3", "unconfoundedness"},
      {"A.4", "latent positivity"},
      {"A.5", "Z conditional independence"},
      {"A.6", "W conditional independence"},
      {"A.7", "latent unconfoundedness"},
      {"A.8", "outcome bridge exists"},
      {"A.9", "Z complete for U"},
      {"A.10", "treatment bridge exists"},
      {"A.11", "W complete for U"},
  };
  return names;
}

// ---------------------------------------------------------------------------
// LinearGaussianDgm

void LinearGaussianDgm::validate() const {
  for (auto [v, name] : {std::pair{alpha0, "alpha0"}, {alpha_x, "alpha_x"}, {mu0, "mu0"},
                         {mu_a, "mu_a"}, {mu_x, "mu_x"}, {theta0, "theta0"},
                         {theta_a, "theta_a"}, {theta_u, "theta_u"}, {theta_x, "theta_x"},
                         {omega0, "omega0"}, {omega_a, "omega_a"}, {omega_u, "omega_u"},
                         {omega_x, "omega_x"}, {sigma_zw, "sigma_zw"}, {beta0, "beta0"},
                         {beta_a, "beta_a"}, {beta_u, "beta_u"}, {beta_x, "beta_x"},
                         {beta_z, "beta_z"}, {beta_w, "beta_w"}, {alpha_u, "alpha_u"},
                         {alpha_z, "alpha_z"}, {alpha_w, "alpha_w"}})
    require_finite(v, name);
  require_positive(sigma_u, "sigma_u");
  require_positive(sigma_z, "sigma_z");
  require_positive(sigma_w, "sigma_w");
  require_positive(sigma_y, "sigma_y");
  // 2x2 covariance is positive definite iff |sigma_zw| < sigma_z sigma_w.
  if (!(std::abs(sigma_zw) < sigma_z * sigma_w))
    throw ConfigError("(Z, W) residual covariance is not positive definite: |sigma_zw| >= sigma_z * sigma_w");
  if (treatment_conditioning == TreatmentConditioning::on_X_only &&
      (alpha_u != 0.0 || alpha_z != 0.0 || alpha_w != 0.0))
    throw ConfigError("alpha_u, alpha_z, alpha_w require treatment_conditioning = on_UZWX");
}

bool LinearGaussianDgm::is_valid_pci() const {
  const bool a_confounded = treatment_conditioning == TreatmentConditioning::on_X_only
                                ? mu_a != 0.0
                                : alpha_u != 0.0;
  return sigma_zw == 0.0 && omega_a == 0.0 && beta_z == 0.0 && alpha_w == 0.0 &&
         theta_u != 0.0 && omega_u != 0.0 && a_confounded && beta_u != 0.0;
}

Dataset sample_linear_gaussian(const LinearGaussianDgm& s, Index n, std::uint64_t seed) {
  s.validate();
  if (n < 1) throw ConfigError("sample size must be >= 1");
  Rng rng = substream(seed, 0);
  NormalSource draw{rng};
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  const double rho = s.sigma_zw / (s.sigma_z * s.sigma_w);
  const double w_resid = s.sigma_w * std::sqrt(1.0 - rho * rho);
  const bool downstream = s.treatment_conditioning == TreatmentConditioning::on_X_only;

  // Columns: Y, A, X1, Z1, W1, U1
  MatrixXd m(n, 6);
  for (Index i = 0; i < n; ++i) {
    const double x = draw();
    double a = 0.0;
    if (downstream) a = unif(rng) < expit(s.alpha0 + s.alpha_x * x) ? 1.0 : 0.0;
    const double u = (downstream ? s.mu0 + s.mu_a * a + s.mu_x * x : s.mu0 + s.mu_x * x) +
                     s.sigma_u * draw();
    const double e1 = draw();
    const double e2 = draw();
    const double ta = downstream ? s.theta_a * a : 0.0;
    const double oa = downstream ? s.omega_a * a : 0.0;
    const double z = s.theta0 + ta + s.theta_u * u + s.theta_x * x + s.sigma_z * e1;
    const double w = s.omega0 + oa + s.omega_u * u + s.omega_x * x +
                     rho * s.sigma_w * e1 + w_resid * e2;
    if (!downstream)
      a = unif(rng) < expit(s.alpha0 + s.alpha_x * x + s.alpha_u * u + s.alpha_z * z +
                            s.alpha_w * w)
              ? 1.0
              : 0.0;
    const double y = s.beta0 + s.beta_a * a + s.beta_u * u + s.beta_x * x + s.beta_z * z +
                     s.beta_w * w + s.sigma_y * draw();
    m.row(i) << y, a, x, z, w, u;
  }
  return Dataset({"Y", "A", "X1", "Z1", "W1", "U1"}, std::move(m),
                 ColumnRoles::standard(1, 1, 1, 1));
}

OracleEstimate interventional_oracle(const LinearGaussianDgm& s, Index draws,
                                     std::uint64_t seed) {
  s.validate();
  Rng rng = substream(seed, 0);
  NormalSource draw{rng};
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const double rho = s.sigma_zw / (s.sigma_z * s.sigma_w);
  const double w_resid = s.sigma_w * std::sqrt(1.0 - rho * rho);
  const bool downstream = s.treatment_conditioning == TreatmentConditioning::on_X_only;

  double mean = 0.0, m2 = 0.0;
  for (Index i = 0; i < draws; ++i) {
    const double x = draw();
    const double a_obs = unif(rng) < expit(s.alpha0 + s.alpha_x * x) ? 1.0 : 0.0;
    const double u = (downstream ? s.mu0 + s.mu_a * a_obs + s.mu_x * x : s.mu0 + s.mu_x * x) +
                     s.sigma_u * draw();
    const double e1 = draw(), e2 = draw(), ey = draw();
    auto outcome = [&](double a) {
      const double ta = downstream ? s.theta_a * a : 0.0;
      const double oa = downstream ? s.omega_a * a : 0.0;
      const double z = s.theta0 + ta + s.theta_u * u + s.theta_x * x + s.sigma_z * e1;
      const double w = s.omega0 + oa + s.omega_u * u + s.omega_x * x +
                       rho * s.sigma_w * e1 + w_resid * e2;
      return s.beta0 + s.beta_a * a + s.beta_u * u + s.beta_x * x + s.beta_z * z +
             s.beta_w * w + s.sigma_y * ey;
    };
    const double d = outcome(1.0) - outcome(0.0);
    const double delta = d - mean;
    mean += delta / static_cast<double>(i + 1);
    m2 += delta * (d - mean);
  }
  const double var = draws > 1 ? m2 / static_cast<double>(draws - 1) : 0.0;
  return {mean, std::sqrt(var / static_cast<double>(draws))};
}

TruthRecord true_ate(const LinearGaussianDgm& s) {
  s.validate();
  TruthRecord t;
  const bool downstream = s.treatment_conditioning == TreatmentConditioning::on_X_only;
  if (downstream) {
    // do(A = a) shifts Z and W through theta_a and omega_a; U is held fixed.
    t.true_ate = s.beta_a + s.beta_z * s.theta_a + s.beta_w * s.omega_a;
    t.method = "closed_form";
  } else {
    const auto o = interventional_oracle(s, 200000, 0x5eed);
    t.true_ate = o.mean;
    t.oracle_se = o.se;
    t.method = "interventional_mc";
  }
  const bool confounded = (downstream ? s.mu_a != 0.0 : s.alpha_u != 0.0) && s.beta_u != 0.0;
  const bool a5 = s.beta_z == 0.0;
  const bool a6 = s.sigma_zw == 0.0 && s.omega_a == 0.0 && s.alpha_w == 0.0;
  auto& f = t.assumption_flags;
  f["A.1"] = Status::holds;
  f["A.2"] = Status::holds;
  f["A.3"] = holds_if(!confounded);
  f["A.4"] = Status::holds;
  f["A.5"] = holds_if(a5);
  f["A.6"] = holds_if(a6);
  f["A.7"] = Status::holds;
  f["A.8"] = holds_if(a5 && a6 && s.theta_u != 0.0 && s.omega_u != 0.0);
  f["A.9"] = holds_if(s.theta_u != 0.0);
  f["A.10"] = holds_if(a5 && a6 && s.theta_u != 0.0 && s.omega_u != 0.0);
  f["A.11"] = holds_if(s.omega_u != 0.0);
  return t;
}

// ---------------------------------------------------------------------------
// BinaryDgm

void BinaryDgm::validate() const {
  double total = 0.0;
  for (int u = 0; u < 2; ++u)
    for (int x = 0; x < 2; ++x) {
      if (!(p_ux[u][x] > 0.0 && p_ux[u][x] < 1.0))
        throw ConfigError("probability " + cell("p_ux", u, -1, x) + " is outside (0, 1)");
      total += p_ux[u][x];
      require_open_unit(p_a[u][x], cell("p_a", u, -1, x));
      require_open_unit(p_w[u][x], cell("p_w", u, -1, x));
      for (int a = 0; a < 2; ++a) {
        require_open_unit(p_z[u][a][x], cell("p_z", u, a, x));
        require_open_unit(p_y[u][a][x], cell("p_y", u, a, x));
      }
    }
  if (std::abs(total - 1.0) > 1e-12)
    throw ConfigError("P(U, X) cells sum to " + std::to_string(total) + ", not 1");
  for (int x = 0; x < 2; ++x) {
    if (std::abs(p_w[1][x] - p_w[0][x]) < 1e-12)
      throw ConfigError("W is not U-relevant at x=" + std::to_string(x));
    for (int a = 0; a < 2; ++a)
      if (std::abs(p_z[1][a][x] - p_z[0][a][x]) < 1e-12)
        throw ConfigError("Z is not U-relevant at a=" + std::to_string(a) +
                          ", x=" + std::to_string(x));
  }
}

Dataset sample_binary(const BinaryDgm& s, Index n, std::uint64_t seed) {
  s.validate();
  if (n < 1) throw ConfigError("sample size must be >= 1");
  Rng rng = substream(seed, 0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  auto bern = [&](double p) { return unif(rng) < p ? 1 : 0; };

  MatrixXd m(n, 6);
  for (Index i = 0; i < n; ++i) {
    // (U, X) from the joint table, cells in order (0,0), (0,1), (1,0), (1,1).
    const double r = unif(rng);
    int u = 1, x = 1;
    double acc = 0.0;
    for (int c = 0; c < 4; ++c) {
      acc += s.p_ux[c / 2][c % 2];
      if (r < acc) {
        u = c / 2;
        x = c % 2;
        break;
      }
    }
    const int a = bern(s.p_a[u][x]);
    const int z = bern(s.p_z[u][a][x]);
    const int w = bern(s.p_w[u][x]);
    const int y = bern(s.p_y[u][a][x]);
    m.row(i) << y, a, x, z, w, u;
  }
  return Dataset({"Y", "A", "X1", "Z1", "W1", "U1"}, std::move(m),
                 ColumnRoles::standard(1, 1, 1, 1));
}

double enumerate_binary_ate(const BinaryDgm& s) {
  double mass = 0.0;
  for (int u = 0; u < 2; ++u)
    for (int x = 0; x < 2; ++x) mass += s.p_ux[u][x];
  double ate = 0.0;
  for (int u = 0; u < 2; ++u)
    for (int x = 0; x < 2; ++x)
      ate += (s.p_ux[u][x] / mass) * (s.p_y[u][1][x] - s.p_y[u][0][x]);
  return ate;
}

TruthRecord true_ate(const BinaryDgm& s) {
  s.validate();
  TruthRecord t;
  t.true_ate = enumerate_binary_ate(s);
  t.method = "enumeration";
  bool confounded = false;
  for (int x = 0; x < 2; ++x) {
    bool a_dep = s.p_a[1][x] != s.p_a[0][x];
    bool y_dep = s.p_y[1][0][x] != s.p_y[0][0][x] || s.p_y[1][1][x] != s.p_y[0][1][x];
    confounded = confounded || (a_dep && y_dep);
  }
  auto& f = t.assumption_flags;
  for (const auto& [id, _] : assumption_names()) f[id] = Status::holds;
  f["A.3"] = holds_if(!confounded);
  return t;
}

// ---------------------------------------------------------------------------
// CompletenessFailureDgm

void CompletenessFailureDgm::validate() const {
  if (theta1 == 0.0 || theta2 == 0.0)
    throw ConfigError("completeness-failure DGM requires theta1 != 0 and theta2 != 0");
  for (auto [v, name] :
       {std::pair{alpha0, "alpha0"}, {alpha_x, "alpha_x"}, {theta0, "theta0"},
        {theta_a, "theta_a"}, {theta1, "theta1"}, {theta2, "theta2"}, {theta_x, "theta_x"},
        {omega0, "omega0"}, {omega_x, "omega_x"}, {beta0, "beta0"}, {beta_a, "beta_a"},
        {beta_x, "beta_x"}, {beta_w, "beta_w"}, {mu0[0], "mu0[0]"}, {mu0[1], "mu0[1]"},
        {mu_a[0], "mu_a[0]"}, {mu_a[1], "mu_a[1]"}, {mu_x[0], "mu_x[0]"},
        {mu_x[1], "mu_x[1]"}, {omega_u[0], "omega_u[0]"}, {omega_u[1], "omega_u[1]"},
        {beta_u[0], "beta_u[0]"}, {beta_u[1], "beta_u[1]"}})
    require_finite(v, name);
  require_positive(sigma_z, "sigma_z");
  require_positive(sigma_w, "sigma_w");
  require_positive(sigma_y, "sigma_y");
}

Dataset sample_completeness_failure(const CompletenessFailureDgm& s, Index n,
                                    std::uint64_t seed) {
  s.validate();
  if (n < 1) throw ConfigError("sample size must be >= 1");
  Rng rng = substream(seed, 0);
  NormalSource draw{rng};
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  // Columns: Y, A, X1, Z1, W1, U1, U2
  MatrixXd m(n, 7);
  for (Index i = 0; i < n; ++i) {
    const double x = draw();
    const double a = unif(rng) < expit(s.alpha0 + s.alpha_x * x) ? 1.0 : 0.0;
    const double u1 = s.mu0[0] + s.mu_a[0] * a + s.mu_x[0] * x + draw();
    const double u2 = s.mu0[1] + s.mu_a[1] * a + s.mu_x[1] * x + draw();
    const double z = s.theta0 + s.theta_a * a + s.theta1 * u1 + s.theta2 * u2 +
                     s.theta_x * x + s.sigma_z * draw();
    const double w = s.omega0 + s.omega_u[0] * u1 + s.omega_u[1] * u2 + s.omega_x * x +
                     s.sigma_w * draw();
    const double y = s.beta0 + s.beta_a * a + s.beta_u[0] * u1 + s.beta_u[1] * u2 +
                     s.beta_x * x + s.beta_w * w + s.sigma_y * draw();
    m.row(i) << y, a, x, z, w, u1, u2;
  }
  return Dataset({"Y", "A", "X1", "Z1", "W1", "U1", "U2"}, std::move(m),
                 ColumnRoles::standard(1, 1, 1, 2));
}

OracleEstimate interventional_oracle(const CompletenessFailureDgm& s, Index draws,
                                     std::uint64_t seed) {
  s.validate();
  Rng rng = substream(seed, 0);
  NormalSource draw{rng};
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  double mean = 0.0, m2 = 0.0;
  for (Index i = 0; i < draws; ++i) {
    const double x = draw();
    const double a_obs = unif(rng) < expit(s.alpha0 + s.alpha_x * x) ? 1.0 : 0.0;
    const double u1 = s.mu0[0] + s.mu_a[0] * a_obs + s.mu_x[0] * x + draw();
    const double u2 = s.mu0[1] + s.mu_a[1] * a_obs + s.mu_x[1] * x + draw();
    const double ew = draw(), ey = draw();
    const double w = s.omega0 + s.omega_u[0] * u1 + s.omega_u[1] * u2 + s.omega_x * x +
                     s.sigma_w * ew;
    auto outcome = [&](double a) {
      return s.beta0 + s.beta_a * a + s.beta_u[0] * u1 + s.beta_u[1] * u2 + s.beta_x * x +
             s.beta_w * w + s.sigma_y * ey;
    };
    const double d = outcome(1.0) - outcome(0.0);
    const double delta = d - mean;
    mean += delta / static_cast<double>(i + 1);
    m2 += delta * (d - mean);
  }
  const double var = draws > 1 ? m2 / static_cast<double>(draws - 1) : 0.0;
  return {mean, std::sqrt(var / static_cast<double>(draws))};
}

TruthRecord true_ate(const CompletenessFailureDgm& s) {
  s.validate();
  TruthRecord t;
  const auto o = interventional_oracle(s, 200000, 0x5eed);
  t.true_ate = o.mean;
  t.oracle_se = o.se;
  t.method = "interventional_mc";
  const bool confounded =
      (s.mu_a[0] != 0.0 && s.beta_u[0] != 0.0) || (s.mu_a[1] != 0.0 && s.beta_u[1] != 0.0);
  auto& f = t.assumption_flags;
  for (const auto& [id, _] : assumption_names()) f[id] = Status::holds;
  f["A.3"] = holds_if(!confounded);
  // dim(Z) = dim(W) = 1 < dim(U) = 2.
  f["A.9"] = Status::violated;
  f["A.11"] = Status::violated;
  return t;
}

// ---------------------------------------------------------------------------

Dataset sample(const DgmSpec& spec, Index n, std::uint64_t seed) {
  return std::visit(
      [&](const auto& s) -> Dataset {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, LinearGaussianDgm>)
          return sample_linear_gaussian(s, n, seed);
        else if constexpr (std::is_same_v<T, BinaryDgm>)
          return sample_binary(s, n, seed);
        else
          return sample_completeness_failure(s, n, seed);
      },
      spec);
}

TruthRecord true_ate(const DgmSpec& spec) {
  return std::visit([](const auto& s) { return true_ate(s); }, spec);
}

LinearGaussianDgm reference_valid_pci() {
  LinearGaussianDgm s;
  s.alpha0 = 0.0;
  s.alpha_x = 0.5;
  s.mu0 = 0.0;
  s.mu_a = 1.0;
  s.mu_x = 0.5;
  s.sigma_u = 1.0;
  s.theta0 = 0.0;
  s.theta_a = 0.5;
  s.theta_u = 1.0;
  s.theta_x = 0.5;
  s.sigma_z = 1.0;
  s.omega0 = 0.0;
  s.omega_a = 0.0;
  s.omega_u = 1.0;
  s.omega_x = 0.5;
  s.sigma_w = 1.0;
  s.sigma_zw = 0.0;
  s.beta0 = 0.0;
  s.beta_a = 0.7;
  s.beta_u = 1.0;
  s.beta_x = 1.0;
  s.beta_z = 0.0;
  s.beta_w = 0.0;
  s.sigma_y = 1.0;
  return s;
}

BinaryDgm reference_binary() {
  BinaryDgm s;
  s.p_ux = {{{0.3, 0.2}, {0.2, 0.3}}};
  for (int u = 0; u < 2; ++u)
    for (int x = 0; x < 2; ++x) {
      s.p_a[u][x] = 0.3 + 0.4 * u + 0.1 * x;
      s.p_w[u][x] = 0.2 + 0.55 * u + 0.05 * x;
      for (int a = 0; a < 2; ++a) {
        s.p_z[u][a][x] = 0.2 + 0.5 * u + 0.1 * a + 0.05 * x;
        s.p_y[u][a][x] = 0.15 + 0.3 * a + 0.35 * u + 0.1 * x;
      }
    }
  return s;
}

CompletenessFailureDgm reference_completeness_failure() {
  CompletenessFailureDgm s;
  s.alpha0 = 0.0;
  s.alpha_x = 0.5;
  s.mu0 = {0.0, 0.0};
  s.mu_a = {1.0, 0.0};
  s.mu_x = {0.5, 0.0};
  s.theta0 = 0.0;
  s.theta_a = 0.0;
  s.theta1 = 1.0;
  s.theta2 = 1.0;
  s.theta_x = 0.5;
  s.sigma_z = 1.0;
  s.omega0 = 0.0;
  s.omega_u = {1.0, 1.0};
  s.omega_x = 0.5;
  s.sigma_w = 1.0;
  s.beta0 = 0.0;
  s.beta_a = 0.7;
  s.beta_u = {1.0, 0.2};
  s.beta_x = 0.5;
  s.beta_w = 0.0;
  s.sigma_y = 1.0;
  return s;
}

}  // namespace proxie
