#include "proxie/dgm.hpp"
#include "proxie/errors.hpp"
#include "proxie/estimators.hpp"
#include "proxie/rng.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

using namespace proxie;

namespace {

// Columns Y, A, X1, Z1, W1 with the standard roles.
Dataset frame(const VectorXd& y, const VectorXd& a, const VectorXd& x, const VectorXd& z,
              const VectorXd& w) {
  MatrixXd m(y.size(), 5);
  m << y, a, x, z, w;
  return Dataset({"Y", "A", "X1", "Z1", "W1"}, m, ColumnRoles::standard(1, 1, 1, 0));
}

Dataset permuted(const Dataset& d, std::uint64_t seed) {
  std::vector<Index> perm(static_cast<std::size_t>(d.n()));
  std::iota(perm.begin(), perm.end(), Index{0});
  Rng rng = substream(seed, 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  return d.take_rows(perm);
}

// Exactly identified linear IV solve (K^T B) eta = K^T Y, written out
// independently of the moment engine.
VectorXd iv_solve(const MatrixXd& k, const MatrixXd& b, const VectorXd& y) {
  return (k.transpose() * b).fullPivLu().solve(k.transpose() * y);
}

bool close(double a, double b, double tol) { return std::abs(a - b) <= tol; }

}  // namespace

TEST_CASE("naive_or without confounding recovers beta_a") {
  LinearGaussianDgm s = reference_valid_pci();
  s.beta_u = 0.0;
  const Dataset d = sample_linear_gaussian(s, 20000, 1);
  const auto r = naive_or(d);
  REQUIRE(r.se);
  CHECK(std::abs(r.ate_hat - s.beta_a) <= 3.0 * *r.se);
  CHECK(*r.ci_low <= r.ate_hat);
  CHECK(r.ate_hat <= *r.ci_high);
}

TEST_CASE("naive_or on a constant outcome") {
  const Dataset base = sample_linear_gaussian(reference_valid_pci(), 100, 2);
  const Dataset d = frame(VectorXd::Constant(100, 3.0), base.a(), base.column("X1"),
                          base.column("Z1"), base.column("W1"));
  const auto r = naive_or(d);
  CHECK(std::abs(r.ate_hat) <= 1e-12);
  CHECK(*r.se <= 1e-12);
}

TEST_CASE("naive_ipw equals the difference in means under exact balance") {
  // Each X value appears once per arm, so the fitted propensity is exactly 1/2.
  const Index m = 500;
  Rng rng = substream(3, 0);
  std::normal_distribution<double> nd;
  VectorXd y(2 * m), a(2 * m), x(2 * m), z(2 * m), w(2 * m);
  for (Index j = 0; j < m; ++j) {
    const double xv = nd(rng);
    for (Index arm = 0; arm < 2; ++arm) {
      const Index i = 2 * j + arm;
      a(i) = static_cast<double>(arm);
      x(i) = xv;
      y(i) = 1.0 + 0.4 * a(i) + xv + nd(rng);
      z(i) = nd(rng);
      w(i) = nd(rng);
    }
  }
  const Dataset d = frame(y, a, x, z, w);
  double s1 = 0.0, s0 = 0.0;
  for (Index i = 0; i < 2 * m; ++i) (a(i) == 1.0 ? s1 : s0) += y(i);
  const double dim = s1 / static_cast<double>(m) - s0 / static_cast<double>(m);
  const auto r = naive_ipw(d);
  CHECK(r.converged);
  CHECK(close(r.ate_hat, dim, 1e-6));
  CHECK(close(r.diagnostics.at("propensity_min"), 0.5, 1e-8));
  CHECK(close(naive_aipw(d).ate_hat, naive_or(d).ate_hat, 1e-6));
}

TEST_CASE("naive comparators are unbiased without confounding") {
  LinearGaussianDgm s = reference_valid_pci();
  s.beta_u = 0.0;
  const Dataset d = sample_linear_gaussian(s, 20000, 4);
  for (const auto& r : {naive_ipw(d), naive_aipw(d)}) {
    REQUIRE(r.se);
    CHECK(std::abs(r.ate_hat - s.beta_a) <= 3.0 * *r.se);
  }
}

TEST_CASE("proximal_g equals the independent IV solve and eta_a") {
  const Dataset d = sample_linear_gaussian(reference_valid_pci(), 5000, 5);
  const Index n = d.n();
  MatrixXd k(n, 4), b(n, 4);
  k << VectorXd::Ones(n), d.column("Z1"), d.a(), d.column("X1");
  b << VectorXd::Ones(n), d.column("W1"), d.a(), d.column("X1");
  const VectorXd eta = iv_solve(k, b, d.y());
  const auto r = proximal_g(d, OutcomeBridgeSpec::linear_default(d.roles()));
  CHECK(r.converged);
  CHECK(close(r.ate_hat, eta(2), 1e-10));
  REQUIRE(r.se);
  CHECK(*r.se > 0.0);
}

TEST_CASE("proximal_g reduces to regression when the proxies coincide") {
  // With Z = W the instruments equal the regressors, so the bridge solve is
  // least squares of Y on (1, W, A, X).
  const Dataset s = sample_linear_gaussian(reference_valid_pci(), 3000, 6);
  const Dataset d = frame(s.y(), s.a(), s.column("X1"), s.column("W1"), s.column("W1"));
  MatrixXd xm(d.n(), 4);
  xm << VectorXd::Ones(d.n()), d.column("W1"), d.a(), d.column("X1");
  const VectorXd beta = (xm.transpose() * xm).ldlt().solve(xm.transpose() * d.y());
  const auto r = proximal_g(d, OutcomeBridgeSpec::linear_default(d.roles()));
  CHECK(close(r.ate_hat, beta(2), 1e-8));
}

TEST_CASE("proximal_g with all-zero proxies is rank deficient") {
  LinearGaussianDgm s = reference_valid_pci();
  s.beta_u = 0.0;
  const Dataset base = sample_linear_gaussian(s, 1000, 7);
  const VectorXd zero = VectorXd::Zero(1000);
  const Dataset d = frame(base.y(), base.a(), base.column("X1"), zero, zero);
  CHECK_THROWS_AS(proximal_g(d, OutcomeBridgeSpec::linear_default(d.roles())), RankDeficiencyError);
  CHECK_NOTHROW(naive_or(d));
}

TEST_CASE("two_stage_linear matches proximal_g") {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const Dataset d = sample_linear_gaussian(reference_valid_pci(), 2000, seed);
    const auto g = proximal_g(d, OutcomeBridgeSpec::linear_default(d.roles()));
    const auto t = two_stage_linear(d);
    CHECK(close(t.ate_hat, g.ate_hat, 1e-8));
    CHECK(close(*t.se, *g.se, 1e-8));
  }
  const Dataset b = sample_binary(reference_binary(), 4000, 9);
  CHECK(close(two_stage_linear(b).ate_hat,
              proximal_g(b, OutcomeBridgeSpec::linear_default(b.roles())).ate_hat, 1e-8));
}

TEST_CASE("two_stage_linear names the failing stage") {
  const Dataset s = sample_linear_gaussian(reference_valid_pci(), 500, 10);
  MatrixXd m(500, 6);
  m << s.y(), s.a(), s.column("X1"), s.column("Z1"), s.column("Z1"), s.column("W1");
  ColumnRoles roles{"Y", "A", {"X1"}, {"Z1", "Z2"}, {"W1"}, {}};
  const Dataset d({"Y", "A", "X1", "Z1", "Z2", "W1"}, m, roles);
  try {
    two_stage_linear(d);
    FAIL("expected a rank error");
  } catch (const RankDeficiencyError& e) {
    CHECK(std::string(e.what()).find("stage 1") != std::string::npos);
  }
}

TEST_CASE("stacked two-stage Jacobian is exact") {
  const Dataset d = sample_linear_gaussian(reference_valid_pci(), 20, 11);
  const auto sys = two_stage_moments(d.roles());
  const auto rows = gather_rows(d, sys.columns);
  Rng rng = substream(11, 1);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  VectorXd theta(sys.dim_theta);
  for (Index j = 0; j < theta.size(); ++j) theta(j) = u(rng);
  for (Index i = 0; i < 10; ++i) CHECK(check_jacobian(sys, row_of(rows, i), theta) <= 1e-6);
}

TEST_CASE("proximal_ipw plug-in with q fixed at two") {
  const Dataset d = sample_linear_gaussian(reference_valid_pci(), 400, 12);
  const auto spec = TreatmentBridgeSpec::linear_default(d.roles());
  const auto sys = treatment_bridge_moments(spec, d.roles(), true);
  const auto rows = gather_rows(d, sys.columns);
  double plug = 0.0;
  for (Index i = 0; i < d.n(); ++i)
    plug += 2.0 * (d.a()(i) * d.y()(i) - (1.0 - d.a()(i)) * d.y()(i));
  plug /= static_cast<double>(d.n());
  VectorXd theta = VectorXd::Zero(sys.dim_theta);
  theta(sys.dim_theta - 1) = plug;
  const auto avg = average_moments(rows, sys, theta);
  CHECK(std::abs(avg.g(sys.dim_moments - 1)) <= 1e-12);
}

TEST_CASE("q equal to two gives the difference in means under exact balance") {
  // n/2 treated: 2 P_n[A Y - (1-A) Y] = mean(Y | A=1) - mean(Y | A=0).
  const VectorXd y{{1.0, 4.0, 2.0, 7.0}}, a{{1.0, 1.0, 0.0, 0.0}};
  double plug = 0.0;
  for (Index i = 0; i < 4; ++i) plug += 2.0 * (a(i) * y(i) - (1.0 - a(i)) * y(i)) / 4.0;
  CHECK(plug == (1.0 + 4.0) / 2.0 - (2.0 + 7.0) / 2.0);
}

TEST_CASE("proximal estimators on one large valid dataset") {
  const auto s = reference_valid_pci();
  const Dataset d = sample_linear_gaussian(s, 50000, 13);
  const auto h = OutcomeBridgeSpec::linear_default(d.roles());
  const auto q = TreatmentBridgeSpec::linear_default(d.roles());
  const auto g = proximal_g(d, h);
  const auto p = proximal_ipw(d, q);
  const auto dr = proximal_dr(d, h, q);
  for (const auto* r : {&g, &p, &dr}) {
    CHECK(r->converged);
    REQUIRE(r->se);
    CHECK(std::abs(r->ate_hat - s.beta_a) <= 4.0 * *r->se);
  }
  CHECK(p.diagnostics.at("q_min") > 1.0);
  CHECK(p.diagnostics.at("clamp_events") == 0.0);
  CHECK(std::abs(naive_or(d).ate_hat - s.beta_a) > 0.5);
}

TEST_CASE("proximal_dr summand is computed from the separately fitted bridges") {
  const Dataset d = sample_linear_gaussian(reference_valid_pci(), 3000, 14);
  auto h = OutcomeBridgeSpec::linear_default(d.roles());
  auto q = TreatmentBridgeSpec::linear_default(d.roles());
  const auto dr = proximal_dr(d, h, q);
  h.eta = solve_gmm(d, outcome_bridge_moments(h, d.roles()), GmmConfig{}).theta_hat;
  q.phi = solve_gmm(d, treatment_bridge_moments(q, d.roles()), GmmConfig{}).theta_hat;
  VectorXd psi(d.n());
  for (Index i = 0; i < d.n(); ++i) {
    const double a = d.a()(i);
    const double sgn = a == 1.0 ? 1.0 : -1.0;
    // linear h: h(W,1,X) - h(W,0,X) = eta_a
    const double hv = h.eta(0) + h.eta(1) * d.column("W1")(i) + h.eta(2) * a +
                      h.eta(3) * d.column("X1")(i);
    const double e = sgn * (q.phi(0) + q.phi(1) * d.column("Z1")(i) + q.phi(2) * a +
                            q.phi(3) * d.column("X1")(i));
    psi(i) = sgn * (1.0 + std::exp(e)) * (d.y()(i) - hv) + h.eta(2);
  }
  const double mean = psi.mean();
  const double se = std::sqrt((psi.array() - mean).square().sum() / static_cast<double>(d.n()) /
                              static_cast<double>(d.n()));
  CHECK(close(dr.ate_hat, mean, 1e-9));
  CHECK(close(*dr.se, se, 1e-9));
}

TEST_CASE("logit link requires a binary outcome") {
  const Dataset d = sample_linear_gaussian(reference_valid_pci(), 200, 15);
  auto h = OutcomeBridgeSpec::linear_default(d.roles());
  h.link = Link::logit;
  CHECK_THROWS_AS(proximal_g(d, h), PreconditionError);
  const Dataset b = sample_binary(reference_binary(), 5000, 15);
  const auto r = proximal_g(b, h);
  CHECK(std::isfinite(r.ate_hat));
}

TEST_CASE("estimators are invariant to row order") {
  const Dataset d = sample_linear_gaussian(reference_valid_pci(), 3000, 16);
  const Dataset p = permuted(d, 99);
  const auto h = OutcomeBridgeSpec::linear_default(d.roles());
  const auto q = TreatmentBridgeSpec::linear_default(d.roles());
  const std::vector<Estimator> all = {
      naive_or, naive_ipw, naive_aipw, two_stage_linear,
      [&](const Dataset& x) { return proximal_g(x, h); },
      [&](const Dataset& x) { return proximal_ipw(x, q); },
      [&](const Dataset& x) { return proximal_dr(x, h, q); }};
  for (const auto& est : all) {
    const auto a = est(d), b = est(p);
    CHECK(close(a.ate_hat, b.ate_hat, 1e-9 * std::max(1.0, std::abs(a.ate_hat))));
    CHECK(close(*a.se, *b.se, 1e-9));
  }
  const Dataset bd = sample_binary(reference_binary(), 3000, 16);
  CHECK(close(saturated_binary(bd).ate_hat, saturated_binary(permuted(bd, 5)).ate_hat, 1e-12));
}

TEST_CASE("saturated cell solve") {
  Eigen::Matrix2d psi;
  psi << 0.7, 0.3, 0.4, 0.6;
  const Eigen::Vector2d h = solve_saturated_cell(psi, Eigen::Vector2d(1.0, 2.0));
  // det = 0.42 - 0.12 = 0.30; h = (0.6 - 0.6, -0.4 + 1.4) / 0.3
  CHECK(close(h(0), 0.0, 1e-14));
  CHECK(close(h(1), 10.0 / 3.0, 1e-14));
  psi << 0.5, 0.5, 0.5, 0.5;
  CHECK_THROWS_AS(solve_saturated_cell(psi, Eigen::Vector2d(1.0, 2.0)), NearSingularityError);
}

TEST_CASE("saturated estimator on the binary model") {
  const auto s = reference_binary();
  const Dataset d = sample_binary(s, 100000, 17);
  BootstrapConfig bc;
  bc.replicates = 100;
  bc.seed = 3;
  const auto r = saturated_binary(d, bc);
  REQUIRE(r.se);
  CHECK(std::abs(r.ate_hat - true_ate(s).true_ate) <= 3.0 * *r.se);
  CHECK(r.diagnostics.at("strata") == 4.0);
}

TEST_CASE("saturated estimator flags proxies with no usable variation") {
  // W is independent of Z in every stratum, so both psi rows are (1/2, 1/2).
  MatrixXd m(8, 6);
  // Y, A, X1, Z1, W1, U1
  m << 0, 0, 0, 0, 0, 0,
       1, 0, 0, 0, 1, 0,
       0, 0, 0, 1, 0, 0,
       1, 0, 0, 1, 1, 0,
       0, 1, 0, 0, 0, 0,
       1, 1, 0, 0, 1, 0,
       0, 1, 0, 1, 0, 0,
       1, 1, 0, 1, 1, 0;
  const Dataset flat({"Y", "A", "X1", "Z1", "W1", "U1"}, m, ColumnRoles::standard(1, 1, 1, 1));
  CHECK_THROWS_AS(saturated_binary(flat), NearSingularityError);
}

TEST_CASE("saturated estimator reports empty cells") {
  MatrixXd m(6, 5);
  m << 0, 0, 0, 0, 0,
       1, 0, 0, 1, 1,
       0, 1, 0, 0, 1,
       1, 1, 0, 1, 0,
       0, 0, 1, 0, 0,
       1, 1, 1, 1, 1;
  const Dataset d({"Y", "A", "X1", "Z1", "W1"}, m, ColumnRoles::standard(1, 1, 1, 0));
  try {
    saturated_binary(d);
    FAIL("expected a cell-support error");
  } catch (const CellSupportError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("(A=0, X=1, Z=1)") != std::string::npos);
    CHECK(msg.find("(A=1, X=1, Z=0)") != std::string::npos);
  }
  MatrixXd c = m;
  c(0, 3) = 0.5;
  CHECK_THROWS_AS(saturated_binary(Dataset({"Y", "A", "X1", "Z1", "W1"}, c,
                                           ColumnRoles::standard(1, 1, 1, 0))),
                  PreconditionError);
}

TEST_CASE("bootstrap of a constant estimator") {
  const Dataset d = sample_linear_gaussian(reference_valid_pci(), 100, 19);
  BootstrapConfig bc;
  bc.replicates = 50;
  const auto r = bootstrap(d, [](const Dataset&) {
    EstimateResult e;
    e.estimator = "const";
    e.ate_hat = 1.5;
    return e;
  }, bc);
  CHECK(*r.se == 0.0);
  CHECK(*r.ci_low == 1.5);
  CHECK(*r.ci_high == 1.5);
}

TEST_CASE("bootstrap SE of the sample mean") {
  const Index n = 10000;
  Rng rng = substream(20, 0);
  std::normal_distribution<double> nd;
  VectorXd y(n), a(n), x(n), z(n), w(n);
  for (Index i = 0; i < n; ++i) {
    y(i) = nd(rng);
    a(i) = static_cast<double>(i % 2);
    x(i) = z(i) = w(i) = 0.0;
  }
  const Dataset d = frame(y, a, x, z, w);
  const Estimator mean = [](const Dataset& s) {
    EstimateResult e;
    e.estimator = "mean";
    e.ate_hat = s.y().mean();
    return e;
  };
  BootstrapConfig bc;
  bc.replicates = 1000;
  bc.seed = 42;
  const auto r = bootstrap(d, mean, bc);
  CHECK(std::abs(*r.se / 0.01 - 1.0) <= 0.15);
  CHECK(*r.ci_low < r.ate_hat);
  CHECK(r.ate_hat < *r.ci_high);
  const auto again = bootstrap(d, mean, bc);
  CHECK(*again.se == *r.se);
  CHECK(*again.ci_low == *r.ci_low);
  bc.ci_method = CiMethod::normal;
  const auto normal = bootstrap(d, mean, bc);
  CHECK(close(*normal.ci_high - normal.ate_hat, kNormalQuantile975 * *normal.se, 1e-15));
  bc.replicates = 0;
  CHECK_THROWS_AS(bootstrap(d, mean, bc), ConfigError);
}

TEST_CASE("bootstrap with many failing replicates is unreliable") {
  const Dataset d = sample_linear_gaussian(reference_valid_pci(), 200, 21);
  BootstrapConfig bc;
  bc.replicates = 100;
  // About a third of the outcomes are negative.
  const Estimator flaky = [](const Dataset& s) {
    EstimateResult e;
    e.estimator = "flaky";
    e.ate_hat = s.y().mean();
    e.converged = s.y()(0) > 0.0;
    return e;
  };
  CHECK_THROWS_AS(bootstrap(d, flaky, bc), InferenceUnreliableError);
  std::vector<double> ys(d.y().begin(), d.y().end());
  std::sort(ys.begin(), ys.end());
  const double cut = ys[ys.size() * 19 / 20];
  const Estimator few = [cut](const Dataset& s) {
    EstimateResult e;
    e.estimator = "few";
    e.ate_hat = s.y().mean();
    if (s.y()(0) > cut) throw PreconditionError("rare failure");
    return e;
  };
  const auto r = bootstrap(d, few, bc);
  CHECK(r.diagnostics.at("bootstrap_failed") > 0.0);
  CHECK(r.diagnostics.at("bootstrap_failed") <= 20.0);
  CHECK(r.warnings.size() == 1);
  CHECK(r.diagnostics.at("bootstrap_replicates") == 100.0);
}
