#pragma once

#include "proxie/bridges.hpp"
#include "proxie/dataset.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace proxie {

inline constexpr const char* kProxyCaveat =
    "These association checks are not sufficient to establish U-relevance, and completeness "
    "itself cannot be tested from observed data. Proxies were not selected on a held-out "
    "sample; the consequences of choosing proxies on the estimation dataset are unknown.";

enum class RelevanceFlag { relevant_evidence, weak, none };
std::string to_string(RelevanceFlag flag);

struct RelevanceThresholds {
  double relevant = 0.01;  // p below this: relevant_evidence
  double weak = 0.10;      // p below this: weak
};

struct ProxyTest {
  std::string id;  // e.g. "Z1-Y|A,X"
  std::string first, second;
  std::vector<std::string> conditioning;
  // Bears on U-relevance under the proxy independence assumptions; the
  // others are only suggestive.
  bool informative = false;
  std::optional<double> partial_corr;
  std::optional<double> z_stat;
  std::optional<double> p_value;
  std::string skipped_reason;  // non-empty when the test was not run
};

struct ProxyCheckReport {
  std::vector<ProxyTest> tests;
  // One entry per Z and W column, from its informative tests.
  std::map<std::string, RelevanceFlag> flags;
  std::string caveat = kProxyCaveat;

  std::string to_text() const;
  void write_csv(const std::filesystem::path& path) const;
};

// Correlation of the residuals of x and y after least-squares projection on
// (1, conditioning).
double partial_correlation(Eigen::Ref<const VectorXd> x, Eigen::Ref<const VectorXd> y,
                           const MatrixXd& conditioning);

// Two-sided Fisher z-test with n - k - 3 degrees of freedom, k the size of
// the conditioning set. Returns (z, p).
std::pair<double, double> fisher_z_test(double r, Index n, Index k);

// Tests, per proxy column: Z-Y | A,X; W-A | X; Z-W | A,X; Z-A | X; W-Y | A,X.
ProxyCheckReport proxy_checks(const Dataset& data, const RelevanceThresholds& thresholds = {});

enum class ScreenVerdict { necessary_condition_met, violated };
std::string to_string(ScreenVerdict v);

struct DimensionalityScreen {
  std::size_t declared_u_dim = 0;
  std::size_t z_dim = 0;
  std::size_t w_dim = 0;
  ScreenVerdict outcome_bridge = ScreenVerdict::necessary_condition_met;    // needs z_dim >= u
  ScreenVerdict treatment_bridge = ScreenVerdict::necessary_condition_met;  // needs w_dim >= u
  ScreenVerdict overall = ScreenVerdict::necessary_condition_met;

  std::string to_text() const;
};

DimensionalityScreen dimensionality_screen(const ColumnRoles& roles, std::size_t declared_u_dim);

struct ArmWeights {
  Index count = 0;
  double min = 0.0, max = 0.0, mean = 0.0;
  double ess = 0.0;  // (sum w)^2 / sum w^2
};

struct WeightSummary {
  ArmWeights treated, control;
  std::size_t clamp_events = 0;

  std::string to_text() const;
};

// q evaluated at spec.phi, which must be filled in.
WeightSummary weight_diagnostics(const Dataset& data, const TreatmentBridgeSpec& q_spec);
WeightSummary weight_summary(const VectorXd& q, Eigen::Ref<const VectorXd> a,
                             std::size_t clamp_events = 0);

}  // namespace proxie
