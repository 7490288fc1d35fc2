#pragma once

#include "proxie/dataset.hpp"

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <variant>

namespace proxie {

enum class TreatmentConditioning {
  on_X_only,  // A | X logistic; U, Z, W generated downstream of A
  on_UZWX,    // (U, Z, W) | X jointly normal; A | U, Z, W, X logistic
};

// Scalar-per-role Gaussian model with logistic treatment:
//   X ~ N(0,1)
//   A | X ~ Bernoulli(expit(alpha0 + alpha_x X))
//   U | A, X ~ N(mu0 + mu_a A + mu_x X, sigma_u^2)
//   (Z, W) | U, A, X ~ MVN((theta0 + theta_a A + theta_u U + theta_x X,
//                           omega0 + omega_a A + omega_u U + omega_x X),
//                          [[sigma_z^2, sigma_zw], [sigma_zw, sigma_w^2]])
//   Y = beta0 + beta_a A + beta_u U + beta_x X + beta_z Z + beta_w W + sigma_y e
// With on_UZWX the A terms of U, Z, W are dropped and treatment becomes
// logistic in (X, U, Z, W) through alpha_x, alpha_u, alpha_z, alpha_w.
struct LinearGaussianDgm {
  double alpha0 = 0.0, alpha_x = 0.0;
  double mu0 = 0.0, mu_a = 0.0, mu_x = 0.0, sigma_u = 1.0;
  double theta0 = 0.0, theta_a = 0.0, theta_u = 0.0, theta_x = 0.0, sigma_z = 1.0;
  double omega0 = 0.0, omega_a = 0.0, omega_u = 0.0, omega_x = 0.0, sigma_w = 1.0;
  double sigma_zw = 0.0;
  double beta0 = 0.0, beta_a = 0.0, beta_u = 0.0, beta_x = 0.0, beta_z = 0.0,
         beta_w = 0.0, sigma_y = 1.0;

  TreatmentConditioning treatment_conditioning = TreatmentConditioning::on_X_only;
  double alpha_u = 0.0, alpha_z = 0.0, alpha_w = 0.0;  // on_UZWX only

  // Finite parameters, positive sds, positive definite (Z, W) covariance.
  void validate() const;
  // sigma_zw = 0, omega_a = 0, beta_z = 0, theta_u != 0, omega_u != 0,
  // mu_a != 0 and beta_u != 0.
  bool is_valid_pci() const;
};

// All-binary model; tables are indexed [u][x], [u][a][x], ...
struct BinaryDgm {
  std::array<std::array<double, 2>, 2> p_ux{};                   // P(U=u, X=x)
  std::array<std::array<double, 2>, 2> p_a{};                    // P(A=1 | u, x)
  std::array<std::array<std::array<double, 2>, 2>, 2> p_z{};     // P(Z=1 | u, a, x)
  std::array<std::array<double, 2>, 2> p_w{};                    // P(W=1 | u, x)
  std::array<std::array<std::array<double, 2>, 2>, 2> p_y{};     // P(Y=1 | u, a, x)

  // Cells sum to one, conditionals inside (0, 1), Z and W U-relevant in
  // every stratum.
  void validate() const;
};

// Two-dimensional U with a scalar treatment proxy, so Z cannot be complete
// for U:
//   U | A, X ~ N(mu0 + mu_a A + mu_x X, I_2)
//   Z = theta0 + theta_a A + theta1 U1 + theta2 U2 + theta_x X + sigma_z e
//   W = omega0 + omega_u . U + omega_x X + sigma_w e
//   Y = beta0 + beta_a A + beta_u . U + beta_x X + beta_w W + sigma_y e
// The function g(U) = theta2 U1 - theta1 U2 has E[g(U) | Z, A, X] = 0
// without being zero.
struct CompletenessFailureDgm {
  double alpha0 = 0.0, alpha_x = 0.0;
  std::array<double, 2> mu0{}, mu_a{}, mu_x{};
  double theta0 = 0.0, theta_a = 0.0, theta1 = 1.0, theta2 = 1.0, theta_x = 0.0,
         sigma_z = 1.0;
  double omega0 = 0.0, omega_x = 0.0, sigma_w = 1.0;
  std::array<double, 2> omega_u{};
  double beta0 = 0.0, beta_a = 0.0, beta_x = 0.0, beta_w = 0.0, sigma_y = 1.0;
  std::array<double, 2> beta_u{};

  void validate() const;
};

using DgmSpec = std::variant<LinearGaussianDgm, BinaryDgm, CompletenessFailureDgm>;

enum class AssumptionStatus { holds, violated, not_applicable };

std::string to_string(AssumptionStatus s);

// Assumption identifiers, in order:
//   A.1 consistency               A.7  latent unconfoundedness
//   A.2 positivity                A.8  outcome bridge exists
//   A.3 unconfoundedness          A.9  Z complete for U
//   A.4 latent positivity         A.10 treatment bridge exists
//   A.5 Z conditional independence   A.11 W complete for U
//   A.6 W conditional independence
const std::map<std::string, std::string>& assumption_names();

struct TruthRecord {
  double true_ate = 0.0;
  // Zero for closed-form truths; Monte Carlo standard error otherwise.
  double oracle_se = 0.0;
  std::string method;  // "closed_form", "enumeration", "interventional_mc"
  std::map<std::string, AssumptionStatus> assumption_flags;
};

struct OracleEstimate {
  double mean = 0.0;
  double se = 0.0;
};

Dataset sample_linear_gaussian(const LinearGaussianDgm& spec, Index n, std::uint64_t seed);
Dataset sample_binary(const BinaryDgm& spec, Index n, std::uint64_t seed);
Dataset sample_completeness_failure(const CompletenessFailureDgm& spec, Index n,
                                    std::uint64_t seed);
Dataset sample(const DgmSpec& spec, Index n, std::uint64_t seed);

// Draws (X, A, U, noise) from the observational law, then evaluates the
// structural Y with A set to 1 and to 0 on the same draw.
OracleEstimate interventional_oracle(const LinearGaussianDgm& spec, Index draws,
                                     std::uint64_t seed);
OracleEstimate interventional_oracle(const CompletenessFailureDgm& spec, Index draws,
                                     std::uint64_t seed);

// Exact enumeration over (u, x).
double enumerate_binary_ate(const BinaryDgm& spec);

TruthRecord true_ate(const LinearGaussianDgm& spec);
TruthRecord true_ate(const BinaryDgm& spec);
TruthRecord true_ate(const CompletenessFailureDgm& spec);
TruthRecord true_ate(const DgmSpec& spec);

// Reference configurations shipped with the repository. They are
// illustrative choices, not reproductions of any published simulation.
LinearGaussianDgm reference_valid_pci();
BinaryDgm reference_binary();
CompletenessFailureDgm reference_completeness_failure();

}  // namespace proxie
