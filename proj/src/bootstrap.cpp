#include "proxie/errors.hpp"
#include "proxie/estimators.hpp"
#include "proxie/rng.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace proxie {

namespace {

// Hyndman-Fan type 7 quantile of sorted values.
double quantile7(const std::vector<double>& sorted, double prob) {
  const double h = (static_cast<double>(sorted.size()) - 1.0) * prob;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

}  // namespace

EstimateResult bootstrap(const Dataset& data, const Estimator& estimator,
                         const BootstrapConfig& config) {
  config.validate();
  EstimateResult r = estimator(data);
  r.se.reset();
  r.ci_low.reset();
  r.ci_high.reset();

  const Index n = data.n();
  std::vector<double> estimates;
  estimates.reserve(static_cast<std::size_t>(config.replicates));
  std::vector<Index> idx(static_cast<std::size_t>(n));
  int failed = 0;
  for (int b = 0; b < config.replicates; ++b) {
    Rng rng = substream(config.seed, static_cast<std::uint64_t>(b));
    std::uniform_int_distribution<Index> pick(0, n - 1);
    for (auto& i : idx) i = pick(rng);
    try {
      const EstimateResult rep = estimator(data.take_rows(idx));
      if (rep.converged && std::isfinite(rep.ate_hat))
        estimates.push_back(rep.ate_hat);
      else
        ++failed;
    } catch (const Error&) {
      ++failed;
    }
  }
  r.diagnostics["bootstrap_replicates"] = config.replicates;
  r.diagnostics["bootstrap_failed"] = failed;
  if (failed > 0.2 * config.replicates)
    throw InferenceUnreliableError(r.estimator + ": " + std::to_string(failed) + " of " +
                                   std::to_string(config.replicates) +
                                   " bootstrap replicates failed or did not converge");
  if (failed > 0)
    r.warnings.push_back(std::to_string(failed) + " bootstrap replicates excluded");

  const double m = static_cast<double>(estimates.size());
  double mean = 0.0;
  for (double e : estimates) mean += e;
  mean /= m;
  double ss = 0.0;
  for (double e : estimates) ss += (e - mean) * (e - mean);
  const double sd = estimates.size() > 1 ? std::sqrt(ss / (m - 1.0)) : 0.0;

  if (config.ci_method == CiMethod::normal) {
    r.set_wald(sd);
  } else {
    std::sort(estimates.begin(), estimates.end());
    r.se = sd;
    r.ci_low = quantile7(estimates, 0.025);
    r.ci_high = quantile7(estimates, 0.975);
  }
  return r;
}

}  // namespace proxie
