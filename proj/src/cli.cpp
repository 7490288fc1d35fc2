#include "proxie/cli.hpp"

#include "proxie/benchmark.hpp"
#include "proxie/config.hpp"
#include "proxie/diagnostics.hpp"
#include "proxie/errors.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <utility>

namespace proxie {

namespace {

namespace fs = std::filesystem;

struct Options {
  std::string config;
  std::string out;
  std::optional<int> threads;
  std::optional<std::uint64_t> seed;
};

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  f << text;
  if (!f) throw IoError("failed writing " + path.string());
}

fs::path prepare_out(const Options& o, const RunConfig& c) {
  const fs::path dir = o.out.empty() ? c.out_dir : fs::path(o.out);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory " + dir.string() + ": " + ec.message());
  return dir;
}

int resolve_threads(const Options& o, const RunConfig& c) {
  if (o.threads) return *o.threads;
  if (const char* env = std::getenv("PROXIE_THREADS")) {
    try {
      const int k = std::stoi(env);
      if (k >= 1) return k;
    } catch (const std::exception&) {
    }
    throw ConfigError(std::string("PROXIE_THREADS must be a positive integer, got '") + env + "'");
  }
  return c.benchmark.parallelism;
}

std::string config_line(const RunConfig& c) { return c.to_json().dump(); }

// The dataset a run works on, plus the seed that produced it if simulated.
std::pair<Dataset, std::optional<std::uint64_t>> load_data(const RunConfig& c) {
  if (c.data) return {read_csv(c.data->csv, c.data->roles), std::nullopt};
  return {sample(*c.dgm, c.simulate.n, c.simulate.seed).without_hidden(), c.simulate.seed};
}

std::string opt(const std::optional<double>& v) { return v ? format_double(*v) : std::string(); }

std::string csv_text(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out += '"';
    out += ch == '\n' ? ' ' : ch;
  }
  return out + "\"";
}

int cmd_simulate(const Options& o, RunConfig& c, std::ostream& out) {
  if (!c.dgm) throw ConfigError("simulate needs a 'dgm' block");
  const fs::path dir = prepare_out(o, c);
  const Dataset data = sample(*c.dgm, c.simulate.n, c.simulate.seed);
  const TruthRecord truth = true_ate(*c.dgm);
  write_csv(data, dir / "simulated.csv", c.simulate.include_hidden);

  Json flags = Json::object();
  for (const auto& [id, status] : truth.assumption_flags) flags[id] = to_string(status);
  const Json t{{"true_ate", truth.true_ate},
               {"oracle_se", truth.oracle_se},
               {"method", truth.method},
               {"assumption_flags", flags},
               {"config", c.to_json()}};
  write_file(dir / "truth.json", t.dump(2) + "\n");

  out << "true_ate: " << format_double(truth.true_ate) << " (" << truth.method << ")\n";
  for (const auto& [id, status] : truth.assumption_flags)
    out << "  " << id << " " << assumption_names().at(id) << ": " << to_string(status) << "\n";
  out << "wrote " << (dir / "simulated.csv").string() << " (" << data.n() << " rows)\n";
  return kExitOk;
}

int cmd_estimate(const Options& o, RunConfig& c, std::ostream& out, std::ostream& err) {
  if (c.estimators.empty()) throw ConfigError("estimate needs a non-empty 'estimators' list");
  const fs::path dir = prepare_out(o, c);
  const auto [data, seed] = load_data(c);

  std::ostringstream csv;
  csv << "# config: " << config_line(c) << "\n";
  csv << "estimator,ate_hat,se,ci_low,ci_high,converged,n,seed,error\n";
  const std::string seed_text = seed ? std::to_string(*seed) : std::string();
  int failures = 0;
  for (const auto& e : c.estimators) {
    try {
      const EstimateResult r = run_estimator(e, data);
      csv << csv_text(e.label) << "," << format_double(r.ate_hat) << "," << opt(r.se) << ","
          << opt(r.ci_low) << "," << opt(r.ci_high) << "," << (r.converged ? 1 : 0) << ","
          << data.n() << "," << seed_text << ",\n";
      out << std::left << std::setw(22) << e.label << " ate_hat " << std::setprecision(6)
          << r.ate_hat;
      if (r.se) out << "  se " << *r.se;
      if (!r.converged) out << "  (not converged)";
      out << "\n";
      for (const auto& w : r.warnings) out << "    warning: " << w << "\n";
    } catch (const Error& ex) {
      ++failures;
      csv << csv_text(e.label) << ",,,,,0," << data.n() << "," << seed_text << ","
          << csv_text(ex.what()) << "\n";
      err << e.label << ": " << ex.what() << "\n";
    }
  }
  write_file(dir / "results.csv", csv.str());
  out << "wrote " << (dir / "results.csv").string() << "\n";
  return failures == static_cast<int>(c.estimators.size()) ? kExitAllFailed : kExitOk;
}

int cmd_benchmark(const Options& o, RunConfig& c, std::ostream& out) {
  if (!c.dgm) throw ConfigError("benchmark needs a 'dgm' block");
  if (c.estimators.empty()) throw ConfigError("benchmark needs a non-empty 'estimators' list");
  const fs::path dir = prepare_out(o, c);
  const int threads = resolve_threads(o, c);
  const BenchmarkTable table = run_benchmark(*c.dgm, c.estimators, c.benchmark, threads);
  std::vector<std::string> labels;
  for (const auto& e : c.estimators) labels.push_back(e.label);

  write_file(dir / "benchmark.csv", table.to_csv(config_line(c)));
  write_file(dir / "benchmark_replications.csv", table.replications_csv(labels));
  const std::string text = table.to_text();
  write_file(dir / "benchmark.txt", text);
  out << text;
  return kExitOk;
}

int cmd_diagnose(const Options& o, RunConfig& c, std::ostream& out) {
  const fs::path dir = prepare_out(o, c);
  const auto [data, seed] = load_data(c);
  const ProxyCheckReport report = proxy_checks(data, c.diagnose.thresholds);
  const DimensionalityScreen screen = dimensionality_screen(data.roles(), c.diagnose.declared_u_dim);

  std::ostringstream text;
  text << report.to_text() << "\n" << screen.to_text();
  // Weight summary for the first configured treatment bridge, or the linear
  // default when none is configured.
  TreatmentBridgeSpec q = TreatmentBridgeSpec::linear_default(data.roles());
  for (const auto& e : c.estimators)
    if (e.uses_q()) {
      q = e.q_spec();
      break;
    }
  try {
    const auto fit = solve_gmm(data, treatment_bridge_moments(q, data.roles()), GmmConfig{});
    q.phi = fit.theta_hat;
    text << "\n" << weight_diagnostics(data, q).to_text();
    if (!fit.converged) text << "  (treatment bridge fit did not converge)\n";
  } catch (const Error& ex) {
    text << "\nTreatment-bridge weights unavailable: " << ex.what() << "\n";
  }

  report.write_csv(dir / "proxy_checks.csv");
  write_file(dir / "diagnostics.txt", text.str());
  out << text.str();
  return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Proximal causal inference estimators and simulation harness", "proxie"};
  app.require_subcommand(1);
  Options o;
  std::string command;
  const std::pair<const char*, const char*> commands[] = {
      {"simulate", "draw a dataset from the configured model and record its truth"},
      {"estimate", "run the configured estimators on simulated or CSV data"},
      {"benchmark", "repeat simulation and estimation, summarise bias and coverage"},
      {"diagnose", "proxy-relevance checks, dimensionality screen and weight summaries"}};
  for (const auto& [name, help] : commands) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--config", o.config, "JSON run configuration")->required();
    sub->add_option("--out", o.out, "output directory");
    sub->add_option("--threads", o.threads, "worker threads for benchmark")
        ->check(CLI::PositiveNumber);
    sub->add_option("--seed", o.seed, "master seed; overrides the config");
    sub->callback([&command, name] { command = name; });
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n" << app.help();
    return kExitConfig;
  }

  try {
    RunConfig c = load_run_config(o.config);
    if (o.seed) {
      c.simulate.seed = *o.seed;
      c.benchmark.seed = *o.seed;
    }
    if (command == "simulate") return cmd_simulate(o, c, out);
    if (command == "estimate") return cmd_estimate(o, c, out, err);
    if (command == "benchmark") return cmd_benchmark(o, c, out);
    return cmd_diagnose(o, c, out);
  } catch (const IoError& e) {
    err << "I/O error: " << e.what() << "\n";
    return kExitIo;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitConfig;
  }
}

}  // namespace proxie
