#include "proxie/bridges.hpp"
#include "proxie/dgm.hpp"
#include "proxie/errors.hpp"
#include "proxie/rng.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

using namespace proxie;

namespace {

const ColumnRoles kRoles = ColumnRoles::standard(1, 1, 1, 0);

VectorXd random_theta(Rng& rng, Index k, double scale) {
  std::uniform_real_distribution<double> u(-scale, scale);
  VectorXd t(k);
  for (Index j = 0; j < k; ++j) t(j) = u(rng);
  return t;
}

}  // namespace

TEST_CASE("basis term parsing") {
  CHECK(BasisTerm::parse("1") == BasisTerm::intercept());
  CHECK(BasisTerm::parse("W1") == BasisTerm::column("W1"));
  CHECK(BasisTerm::parse("A*Z1") == BasisTerm::product("A", "Z1"));
  CHECK(BasisTerm::parse("A*Z1").to_string() == "A*Z1");
  CHECK(BasisTerm::parse("A*Z1").involves("Z1"));
  CHECK_THROWS_AS(BasisTerm::parse("A*Z1*X1"), ConfigError);
  CHECK_THROWS_AS(BasisTerm::parse(""), ConfigError);
  CHECK(parse_link("logit") == Link::logit);
  CHECK_THROWS_AS(parse_link("probit"), ConfigError);
}

TEST_CASE("eval_h for each link") {
  OutcomeBridgeSpec s = OutcomeBridgeSpec::linear_default(kRoles);
  REQUIRE(term_strings(s.basis) == std::vector<std::string>{"1", "W1", "A", "X1"});
  s.eta = VectorXd{{1.0, 0.5, 2.0, 0.0}};
  const NamedRow row{{"W1", 2.0}, {"A", 1.0}, {"X1", 3.0}};
  CHECK(eval_h(s, row) == 4.0);
  s.link = Link::logit;
  s.eta.setZero();
  CHECK(eval_h(s, row) == 0.5);
  s.link = Link::log;
  CHECK(eval_h(s, row) == 1.0);
  CHECK_THROWS_AS(eval_h(s, NamedRow{{"A", 1.0}, {"X1", 3.0}}), SchemaError);
}

TEST_CASE("eval_q values and clamping") {
  TreatmentBridgeSpec s;
  s.basis = {BasisTerm::intercept()};
  s.phi = VectorXd::Zero(1);
  CHECK(eval_q(s, NamedRow{{"A", 1.0}}, "A") == 2.0);
  CHECK(eval_q(s, NamedRow{{"A", 0.0}}, "A") == 2.0);
  s.phi(0) = std::log(3.0);
  CHECK(eval_q(s, NamedRow{{"A", 1.0}}, "A") == doctest::Approx(4.0).epsilon(1e-15));
  CHECK(eval_q(s, NamedRow{{"A", 0.0}}, "A") == doctest::Approx(1.0 + 1.0 / 3.0).epsilon(1e-15));
  s.phi(0) = 1000.0;
  std::size_t clamps = 0;
  const double big = eval_q(s, NamedRow{{"A", 1.0}}, "A", &clamps);
  CHECK(clamps == 1);
  CHECK(std::isfinite(big));
  CHECK(big == 1.0 + std::exp(700.0));
  const double small = eval_q(s, NamedRow{{"A", 0.0}}, "A", &clamps);
  CHECK(clamps == 2);
  // 1 + exp(-700) rounds to 1 in double precision.
  CHECK(small == 1.0);
}

TEST_CASE("q exceeds one and weights alternate in sign") {
  const Dataset d = sample_linear_gaussian(reference_valid_pci(), 500, 4);
  TreatmentBridgeSpec s = TreatmentBridgeSpec::linear_default(d.roles());
  Rng rng = substream(1, 1);
  s.phi = random_theta(rng, 4, 3.0);
  const VectorXd q = eval_q_all(s, d);
  CHECK((q.array() > 1.0).all());
  for (Index i = 0; i < d.n(); ++i) CHECK(q(i) == doctest::Approx(eval_q(s, d, i)).epsilon(1e-13));
}

TEST_CASE("outcome bridge system has the worked dimensions") {
  const auto s = OutcomeBridgeSpec::linear_default(kRoles);
  const auto sys = outcome_bridge_moments(s, kRoles);
  CHECK(sys.dim_theta == 4);
  CHECK(sys.dim_moments == 4);
  CHECK(sys.linear);
  CHECK(term_strings(outcome_instruments(kRoles)) ==
        std::vector<std::string>{"1", "Z1", "A", "X1"});
  CHECK(term_strings(treatment_instruments(kRoles)) ==
        std::vector<std::string>{"1", "W1", "A", "X1"});
}

TEST_CASE("outcome bridge with a two-dimensional W basis is underidentified") {
  const ColumnRoles roles = ColumnRoles::standard(1, 1, 2, 0);
  const auto s = OutcomeBridgeSpec::linear_default(roles);
  REQUIRE(s.basis.size() == 5);
  CHECK_THROWS_AS(outcome_bridge_moments(s, roles), IdentificationError);
  try {
    outcome_bridge_moments(s, roles);
  } catch (const IdentificationError& e) {
    CHECK(e.deficit() == 1);
  }
}

TEST_CASE("adding an interaction and its instrument keeps exact identification") {
  auto s = OutcomeBridgeSpec::linear_default(kRoles);
  s.basis.push_back(BasisTerm::product("A", "W1"));
  s.extra_instruments.push_back(BasisTerm::product("A", "Z1"));
  const auto sys = outcome_bridge_moments(s, kRoles);
  CHECK(sys.dim_theta == sys.dim_moments);
  auto bad = OutcomeBridgeSpec::linear_default(kRoles);
  bad.extra_instruments.push_back(BasisTerm::column("W1"));
  CHECK_THROWS_AS(outcome_bridge_moments(bad, kRoles), ConfigError);
}

TEST_CASE("basis validation") {
  OutcomeBridgeSpec s;
  s.basis = {BasisTerm::column("A"), BasisTerm::column("W1")};
  CHECK_THROWS_AS(s.validate(kRoles), ConfigError);
  s.basis = {BasisTerm::intercept(), BasisTerm::column("W1")};
  CHECK_THROWS_AS(s.validate(kRoles), ConfigError);
  s.basis = {BasisTerm::intercept(), BasisTerm::column("A"), BasisTerm::column("Z1")};
  CHECK_THROWS_AS(s.validate(kRoles), ConfigError);
  TreatmentBridgeSpec t;
  t.basis = {BasisTerm::intercept(), BasisTerm::column("W1")};
  CHECK_THROWS_AS(t.validate(kRoles), ConfigError);
}

TEST_CASE("identity-link Jacobian is constant in eta") {
  const Dataset d = sample_linear_gaussian(reference_valid_pci(), 50, 8);
  const auto sys = outcome_bridge_moments(OutcomeBridgeSpec::linear_default(d.roles()), d.roles(), true);
  const auto rows = gather_rows(d, sys.columns);
  Rng rng = substream(3, 3);
  MatrixXd j0(sys.dim_moments, sys.dim_theta), j1(sys.dim_moments, sys.dim_theta);
  for (Index i = 0; i < 10; ++i) {
    sys.jacobian(row_of(rows, i), random_theta(rng, sys.dim_theta, 5.0), j0);
    sys.jacobian(row_of(rows, i), random_theta(rng, sys.dim_theta, 5.0), j1);
    CHECK(j0 == j1);
  }
}

TEST_CASE("analytic Jacobians match finite differences") {
  const Dataset d = sample_linear_gaussian(reference_valid_pci(), 200, 12);
  const auto& roles = d.roles();
  Rng rng = substream(4, 4);
  auto check_all = [&](const MomentSystem& sys, double scale) {
    const auto rows = gather_rows(d, sys.columns);
    double worst = 0.0;
    for (Index i = 0; i < 50; ++i)
      worst = std::max(worst, check_jacobian(sys, row_of(rows, i),
                                             random_theta(rng, sys.dim_theta, scale)));
    return worst;
  };
  for (Link link : {Link::identity, Link::logit, Link::log}) {
    auto h = OutcomeBridgeSpec::linear_default(roles);
    h.link = link;
    CHECK(check_all(outcome_bridge_moments(h, roles, false), 0.5) <= 1e-6);
    CHECK(check_all(outcome_bridge_moments(h, roles, true), 0.5) <= 1e-6);
  }
  auto q = TreatmentBridgeSpec::linear_default(roles);
  CHECK(check_all(treatment_bridge_moments(q, roles, false), 0.5) <= 1e-6);
  CHECK(check_all(treatment_bridge_moments(q, roles, true), 0.5) <= 1e-6);
  q.basis.push_back(BasisTerm::product("A", "Z1"));
  q.extra_instruments.push_back(BasisTerm::product("A", "W1"));
  CHECK(check_all(treatment_bridge_moments(q, roles, true), 0.5) <= 1e-6);
}

TEST_CASE("treatment bridge residual on a balanced two-row dataset") {
  MatrixXd m(2, 5);
  m << 0.0, 0.0, 0.0, 0.0, 0.0,
       0.0, 1.0, 0.0, 0.0, 0.0;
  const Dataset d({"Y", "A", "X1", "Z1", "W1"}, m, kRoles);
  const auto sys = treatment_bridge_moments(TreatmentBridgeSpec::linear_default(kRoles), kRoles);
  const auto avg = average_moments(gather_rows(d, sys.columns), sys, VectorXd::Zero(4));
  // Instruments (1, W, A, X): rows contribute (-2, 0, 0 - 1, 0) and (2, 0, 2 - 1, 0).
  CHECK(avg.g(0) == 0.0);
  CHECK(avg.g(1) == 0.0);
  CHECK(avg.g(2) == 0.0);
  CHECK(avg.g(3) == 0.0);
  // P_n[(-1)^(1-A) 2 A] = 1, the A-slot target.
  double a_slot = 0.0;
  for (Index i = 0; i < 2; ++i) {
    const double a = m(i, 1);
    a_slot += (a == 1.0 ? 1.0 : -1.0) * 2.0 * a / 2.0;
  }
  CHECK(a_slot == 1.0);
}

TEST_CASE("fitted treatment bridge balances both arms") {
  const Index n = 100000;
  const Dataset d = sample_linear_gaussian(reference_valid_pci(), n, 21);
  const auto spec = TreatmentBridgeSpec::linear_default(d.roles());
  const auto sys = treatment_bridge_moments(spec, d.roles());
  const auto r = solve_gmm(d, sys, GmmConfig{});
  REQUIRE(r.converged);
  TreatmentBridgeSpec fitted = spec;
  fitted.phi = r.theta_hat;
  const VectorXd q = eval_q_all(fitted, d);
  const VectorXd a = d.a();
  const VectorXd aq = a.cwiseProduct(q);
  const VectorXd bq = (1.0 - a.array()).matrix().cwiseProduct(q);
  auto mc_se = [n](const VectorXd& v) {
    const double mean = v.mean();
    return std::sqrt((v.array() - mean).square().sum() / static_cast<double>(n - 1) /
                     static_cast<double>(n));
  };
  CHECK(std::abs(aq.mean() - 1.0) <= 4.0 * mc_se(aq));
  CHECK(std::abs(bq.mean() - 1.0) <= 4.0 * mc_se(bq));
}

TEST_CASE("layout and evaluation helpers agree") {
  const Dataset d = sample_linear_gaussian(reference_valid_pci(), 20, 2);
  auto h = OutcomeBridgeSpec::linear_default(d.roles());
  h.eta = VectorXd{{0.1, 0.2, 0.3, 0.4}};
  const VectorXd all = eval_h_all(h, d);
  const VectorXd at1 = eval_h_all(h, d, 1.0);
  for (Index i = 0; i < d.n(); ++i) {
    CHECK(all(i) == doctest::Approx(eval_h(h, d, i)).epsilon(1e-15));
    CHECK(at1(i) - all(i) == doctest::Approx(0.3 * (1.0 - d.a()(i))).epsilon(1e-12));
  }
  CHECK(layout_columns({"Y"}, {{BasisTerm::column("W1"), BasisTerm::product("A", "W1")}}) ==
        std::vector<std::string>{"Y", "W1", "A"});
}
