#include "proxie/benchmark.hpp"

#include "proxie/errors.hpp"
#include "proxie/rng.hpp"

#include <atomic>
#include <cmath>
#include <exception>
#include <iomanip>
#include <mutex>
#include <sstream>
#include <thread>

namespace proxie {

BenchmarkRow summarize(const std::string& label, const std::vector<ReplicationResult>& reps,
                       double true_ate) {
  BenchmarkRow row;
  row.estimator = label;
  row.replications = static_cast<int>(reps.size());
  double sum = 0.0, se_sum = 0.0;
  int se_count = 0, ci_count = 0, covered = 0;
  for (const auto& r : reps) {
    if (!r.error.empty()) ++row.failures;
    if (!r.error.empty() || !r.converged || !std::isfinite(r.ate_hat)) continue;
    ++row.used;
    sum += r.ate_hat;
    if (r.se) {
      se_sum += *r.se;
      ++se_count;
    }
    if (r.ci_low && r.ci_high) {
      ++ci_count;
      if (*r.ci_low <= true_ate && true_ate <= *r.ci_high) ++covered;
    }
  }
  row.convergence_rate = reps.empty() ? 0.0 : static_cast<double>(row.used) / static_cast<double>(reps.size());
  if (row.used == 0) {
    row.mean_bias = std::numeric_limits<double>::quiet_NaN();
    return row;
  }
  const double mean = sum / row.used;
  row.mean_bias = mean - true_ate;
  if (row.used > 1) {
    double ss = 0.0;
    for (const auto& r : reps)
      if (r.error.empty() && r.converged && std::isfinite(r.ate_hat))
        ss += (r.ate_hat - mean) * (r.ate_hat - mean);
    row.empirical_sd = std::sqrt(ss / (row.used - 1));
    row.mc_se = *row.empirical_sd / std::sqrt(static_cast<double>(row.used));
  }
  if (se_count > 0) row.mean_se = se_sum / se_count;
  if (ci_count > 0) row.coverage = static_cast<double>(covered) / ci_count;
  return row;
}

BenchmarkTable run_benchmark(const DgmSpec& dgm, const std::vector<EstimatorConfig>& estimators,
                             const BenchmarkSettings& settings, int threads) {
  if (estimators.empty()) throw ConfigError("benchmark needs at least one estimator");
  if (settings.replications < 1) throw ConfigError("benchmark replications must be >= 1");
  const TruthRecord truth = true_ate(dgm);

  BenchmarkTable table;
  table.true_ate = truth.true_ate;
  table.truth_method = truth.method;
  table.master_seed = settings.seed;
  table.n = settings.n;
  const auto reps = static_cast<std::size_t>(settings.replications);
  table.replications.assign(reps, std::vector<ReplicationResult>(estimators.size()));
  table.seeds.resize(reps);
  for (std::size_t r = 0; r < reps; ++r) table.seeds[r] = derive_seed(settings.seed, r);

  std::atomic<std::size_t> next{0};
  std::exception_ptr fatal;
  std::mutex fatal_mutex;
  auto worker = [&]() {
    for (std::size_t r = next++; r < reps; r = next++) {
      try {
        const Dataset data = sample(dgm, settings.n, table.seeds[r]).without_hidden();
        for (std::size_t e = 0; e < estimators.size(); ++e) {
          ReplicationResult& out = table.replications[r][e];
          try {
            const EstimateResult res = run_estimator(estimators[e], data);
            out.ate_hat = res.ate_hat;
            out.se = res.se;
            out.ci_low = res.ci_low;
            out.ci_high = res.ci_high;
            out.converged = res.converged;
          } catch (const Error& err) {
            out.error = err.what();
          }
        }
      } catch (...) {
        std::lock_guard<std::mutex> lock(fatal_mutex);
        if (!fatal) fatal = std::current_exception();
      }
    }
  };
  const int k = std::max(1, std::min<int>(threads, settings.replications));
  if (k == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < k; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (fatal) std::rethrow_exception(fatal);

  for (std::size_t e = 0; e < estimators.size(); ++e) {
    std::vector<ReplicationResult> column;
    column.reserve(reps);
    for (std::size_t r = 0; r < reps; ++r) column.push_back(table.replications[r][e]);
    table.rows.push_back(summarize(estimators[e].label, column, table.true_ate));
  }
  return table;
}

namespace {

std::string opt(const std::optional<double>& v) { return v ? format_double(*v) : std::string(); }

std::string csv_text(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c == '\n' ? ' ' : c;
  }
  return out + "\"";
}

}  // namespace

std::string BenchmarkTable::to_csv(const std::string& config_line) const {
  std::ostringstream os;
  os << "# config: " << config_line << "\n";
  os << "# true_ate: " << format_double(true_ate) << " (" << truth_method << ")\n";
  os << "estimator,true_ate,replications,used,mean_bias,mc_se,empirical_sd,mean_se,coverage,"
        "convergence_rate,failures\n";
  for (const auto& r : rows) {
    os << csv_text(r.estimator) << "," << format_double(true_ate) << "," << r.replications << ","
       << r.used << "," << format_double(r.mean_bias) << "," << opt(r.mc_se) << ","
       << opt(r.empirical_sd) << "," << opt(r.mean_se) << "," << opt(r.coverage) << ","
       << format_double(r.convergence_rate) << "," << r.failures << "\n";
  }
  return os.str();
}

std::string BenchmarkTable::replications_csv(const std::vector<std::string>& labels) const {
  std::ostringstream os;
  os << "replication,seed,estimator,ate_hat,se,ci_low,ci_high,converged,error\n";
  for (std::size_t r = 0; r < replications.size(); ++r)
    for (std::size_t e = 0; e < replications[r].size(); ++e) {
      const auto& x = replications[r][e];
      os << r << "," << seeds[r] << "," << csv_text(labels[e]) << ","
         << (x.error.empty() ? format_double(x.ate_hat) : "") << "," << opt(x.se) << ","
         << opt(x.ci_low) << "," << opt(x.ci_high) << "," << (x.converged ? 1 : 0) << ","
         << csv_text(x.error) << "\n";
    }
  return os.str();
}

std::string BenchmarkTable::to_text() const {
  std::ostringstream os;
  const int reps = rows.empty() ? 0 : rows.front().replications;
  os << "Benchmark: " << reps << " replications, n = " << n << ", master seed " << master_seed
     << "\nTrue ATE " << std::setprecision(6) << true_ate << " (" << truth_method << ")\n\n";
  auto cell = [](const std::optional<double>& v, int prec) {
    std::ostringstream c;
    if (v)
      c << std::fixed << std::setprecision(prec) << *v;
    else
      c << "-";
    return c.str();
  };
  os << std::left << std::setw(22) << "estimator" << std::right << std::setw(11) << "bias"
     << std::setw(10) << "mc_se" << std::setw(9) << "z" << std::setw(10) << "emp_sd"
     << std::setw(10) << "mean_se" << std::setw(10) << "coverage" << std::setw(10) << "conv"
     << "\n";
  for (const auto& r : rows) {
    std::optional<double> z;
    if (r.mc_se && *r.mc_se > 0.0) z = r.mean_bias / *r.mc_se;
    os << std::left << std::setw(22) << r.estimator << std::right << std::setw(11)
       << cell(r.mean_bias, 5) << std::setw(10) << cell(r.mc_se, 5) << std::setw(9) << cell(z, 2)
       << std::setw(10) << cell(r.empirical_sd, 5) << std::setw(10) << cell(r.mean_se, 5)
       << std::setw(10) << cell(r.coverage, 3) << std::setw(10) << cell(r.convergence_rate, 3)
       << "\n";
  }
  os << "\nz = bias / mc_se; mc_se = emp_sd / sqrt(converged replications).\n";
  return os.str();
}

}  // namespace proxie
