#pragma once

#include "proxie/bridges.hpp"
#include "proxie/dataset.hpp"
#include "proxie/moments.hpp"

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace proxie {

inline constexpr double kNormalQuantile975 = 1.959963984540054;

struct EstimateResult {
  std::string estimator;
  double ate_hat = 0.0;
  std::optional<double> se;
  std::optional<double> ci_low;
  std::optional<double> ci_high;
  bool converged = true;
  std::map<std::string, double> diagnostics;
  std::vector<std::string> warnings;

  // Sets se and the symmetric 95% Wald interval.
  void set_wald(double standard_error);
};

enum class CiMethod { percentile, normal };

struct BootstrapConfig {
  int replicates = 200;
  std::uint64_t seed = 0;
  CiMethod ci_method = CiMethod::percentile;

  void validate() const;
};

using Estimator = std::function<EstimateResult(const Dataset&)>;

// Comparators that assume no unmeasured confounding given X.

// A coefficient of the least-squares fit of Y on (1, A, X); sandwich SE.
EstimateResult naive_or(const Dataset& data);
// Horvitz-Thompson with a logistic propensity on (1, X). SE from the
// stacked (propensity, ATE) estimating equations.
EstimateResult naive_ipw(const Dataset& data);
// Logistic propensity on (1, X) stacked with the Horvitz-Thompson ATE;
// parameters (propensity coefficients, tau).
MomentSystem naive_ipw_moments(const ColumnRoles& roles);
// Augmented IPW with the naive_or outcome model and naive_ipw propensity;
// SE from the empirical variance of the influence summand.
EstimateResult naive_aipw(const Dataset& data);

// Proximal g-computation: solves the outcome-bridge moments stacked with
// tau - (h(W,1,X) - h(W,0,X)); SE from the stacked sandwich.
EstimateResult proximal_g(const Dataset& data, const OutcomeBridgeSpec& h_spec,
                          const GmmConfig& config = {});

// Stage 1 regresses each W on (1, Z, A, X); stage 2 regresses Y on
// (1, W_hat, A, X). SE from both stages stacked.
EstimateResult two_stage_linear(const Dataset& data);

// Both regression stages as one exactly identified system, parameters
// ordered (stage-1 coefficients per W column, stage-2 coefficients).
MomentSystem two_stage_moments(const ColumnRoles& roles);

// Proximal inverse weighting with the treatment bridge:
// tau = P_n[(-1)^(1-A) Y q(Z, A, X; phi_hat)].
EstimateResult proximal_ipw(const Dataset& data, const TreatmentBridgeSpec& q_spec,
                            const GmmConfig& config = {});

// Doubly robust combination of both bridges. SE = sqrt(var_n(psi) / n) for
// the plug-in summand psi.
EstimateResult proximal_dr(const Dataset& data, const OutcomeBridgeSpec& h_spec,
                           const TreatmentBridgeSpec& q_spec, const GmmConfig& config = {});

// Fully binary saturated bridge. For stratum (a, x):
//   y_ax = (E[Y | Z=0, a, x], E[Y | Z=1, a, x])
//   psi_ax[z][w] = P(W = w | Z = z, a, x)
//   h_ax = psi_ax^-1 y_ax
struct SaturatedCell {
  Eigen::Matrix2d psi;
  Eigen::Vector2d y;
  Eigen::Vector2d h;
};

struct SaturatedFit {
  // Keyed by (a, x-pattern); the x-pattern packs binary covariates as bits.
  std::map<std::pair<int, unsigned>, SaturatedCell> cells;
};

// Throws NearSingularityError when |det psi| < 1e-8.
Eigen::Vector2d solve_saturated_cell(const Eigen::Matrix2d& psi, const Eigen::Vector2d& y);

SaturatedFit fit_saturated(const Dataset& data);

// Point estimate from fit_saturated; SE only when `bootstrap` is given.
EstimateResult saturated_binary(const Dataset& data,
                                const std::optional<BootstrapConfig>& bootstrap = std::nullopt);

// Row-resampling bootstrap around `estimator`. Replicate r uses substream r
// of config.seed. Non-converged or failing replicates are dropped and
// counted; more than 20% dropped raises InferenceUnreliableError.
EstimateResult bootstrap(const Dataset& data, const Estimator& estimator,
                         const BootstrapConfig& config);

}  // namespace proxie
