#pragma once

#include "proxie/config.hpp"

#include <optional>
#include <string>
#include <vector>

namespace proxie {

// One estimator on one simulated dataset.
struct ReplicationResult {
  double ate_hat = 0.0;
  std::optional<double> se, ci_low, ci_high;
  bool converged = false;
  std::string error;  // non-empty when the estimator threw
};

struct BenchmarkRow {
  std::string estimator;
  int replications = 0;
  int used = 0;  // converged replications entering the summaries
  double mean_bias = 0.0;
  std::optional<double> mc_se;         // empirical_sd / sqrt(used); absent when used < 2
  std::optional<double> empirical_sd;  // n - 1 divisor; absent when used < 2
  std::optional<double> mean_se;       // over replications reporting an SE
  std::optional<double> coverage;      // over replications reporting a CI
  double convergence_rate = 0.0;
  int failures = 0;
};

struct BenchmarkTable {
  double true_ate = 0.0;
  std::string truth_method;
  std::uint64_t master_seed = 0;
  Index n = 0;
  std::vector<BenchmarkRow> rows;
  // [replication][estimator]
  std::vector<std::vector<ReplicationResult>> replications;
  std::vector<std::uint64_t> seeds;

  std::string to_csv(const std::string& config_line) const;
  std::string replications_csv(const std::vector<std::string>& labels) const;
  std::string to_text() const;
};

// Replication r samples with seed derive_seed(settings.seed, r). Results do
// not depend on `threads`.
BenchmarkTable run_benchmark(const DgmSpec& dgm, const std::vector<EstimatorConfig>& estimators,
                             const BenchmarkSettings& settings, int threads);

// Summary of one estimator's replications against the truth.
BenchmarkRow summarize(const std::string& label, const std::vector<ReplicationResult>& reps,
                       double true_ate);

}  // namespace proxie
