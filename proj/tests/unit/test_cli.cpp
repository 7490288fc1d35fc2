#include "proxie/cli.hpp"
#include "proxie/config.hpp"
#include "proxie/dataset.hpp"
#include "proxie/dgm.hpp"
#include "proxie/errors.hpp"

#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

using namespace proxie;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code = 0;
  std::string out, err;
};

Run cli(std::vector<std::string> args) {
  args.insert(args.begin(), "proxie");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("proxie_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

fs::path write_config(const fs::path& dir, const std::string& json) {
  const fs::path p = dir / "config.json";
  std::ofstream(p) << json;
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> v;
  std::istringstream in(text);
  for (std::string l; std::getline(in, l);) v.push_back(l);
  return v;
}

// Data rows of a results or benchmark CSV, keyed by the first field.
std::map<std::string, std::vector<std::string>> table(const fs::path& p) {
  std::map<std::string, std::vector<std::string>> t;
  bool header = true;
  for (const auto& l : lines(slurp(p))) {
    if (l.rfind("#", 0) == 0) continue;
    if (header) {
      header = false;
      continue;
    }
    auto f = split_csv_line(l);
    t[f[0]] = f;
  }
  return t;
}

const char* kValid = R"({
  "dgm": {"kind": "linear_gaussian"},
  "estimators": [{"name": "proximal_g"}, {"name": "two_stage_linear"}],
  "simulate": {"n": 100, "seed": 9},
  "benchmark": {"replications": 1, "n": 500, "seed": 4}
})";

int run_binary(const std::string& args) {
  const std::string cmd = std::string(PROXIE_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("simulate writes the dataset and truth") {
  const fs::path dir = scratch("simulate");
  const fs::path cfg = write_config(dir, kValid);
  const Run r = cli({"simulate", "--config", cfg.string(), "--out", (dir / "a").string()});
  CHECK(r.code == kExitOk);
  CHECK(r.out.find("true_ate: 0.7") != std::string::npos);
  CHECK(r.out.find("A.5") != std::string::npos);
  const auto csv = lines(slurp(dir / "a" / "simulated.csv"));
  CHECK(csv.size() == 101);
  CHECK(csv[0] == "Y,A,X1,Z1,W1,U1");
  const auto truth = Json::parse(slurp(dir / "a" / "truth.json"));
  CHECK(truth["true_ate"].get<double>() == 0.7);
  CHECK(truth["config"]["simulate"]["n"].get<int>() == 100);

  // Same seed, same bytes; a different --seed changes them.
  cli({"simulate", "--config", cfg.string(), "--out", (dir / "b").string()});
  CHECK(slurp(dir / "a" / "simulated.csv") == slurp(dir / "b" / "simulated.csv"));
  cli({"simulate", "--config", cfg.string(), "--out", (dir / "c").string(), "--seed", "10"});
  CHECK(slurp(dir / "a" / "simulated.csv") != slurp(dir / "c" / "simulated.csv"));
}

TEST_CASE("invalid parameters are schema errors with a JSON path") {
  const fs::path dir = scratch("schema");
  const fs::path cfg = write_config(
      dir, R"({"dgm": {"kind": "linear_gaussian", "params": {"sigma_u": -1}}})");
  const Run r = cli({"simulate", "--config", cfg.string(), "--out", dir.string()});
  CHECK(r.code == kExitConfig);
  CHECK(r.err.find("/dgm/params") != std::string::npos);
  CHECK(r.err.find("sigma_u") != std::string::npos);

  const fs::path unknown = write_config(dir, R"({"dgm": {"kind": "binary"}, "bogus": 1})");
  const Run u = cli({"simulate", "--config", unknown.string(), "--out", dir.string()});
  CHECK(u.code == kExitConfig);
  CHECK(u.err.find("bogus") != std::string::npos);

  const fs::path both = write_config(
      dir, R"({"dgm": {"kind": "binary"}, "data": {"csv": "x.csv", "roles": {}}})");
  CHECK(cli({"simulate", "--config", both.string()}).code == kExitConfig);

  const fs::path bad_est = write_config(
      dir, R"({"dgm": {"kind": "binary"}, "estimators": [{"name": "magic"}]})");
  const Run e = cli({"estimate", "--config", bad_est.string(), "--out", dir.string()});
  CHECK(e.code == kExitConfig);
  CHECK(e.err.find("/estimators/0/name") != std::string::npos);
}

TEST_CASE("configuration round trip materializes defaults") {
  const RunConfig c = parse_run_config(Json::parse(kValid), ".");
  const Json j = c.to_json();
  CHECK(j["dgm"]["params"]["beta_a"].get<double>() == 0.7);
  CHECK(j["estimators"][0]["gmm"]["max_iter"].get<int>() == 200);
  const RunConfig again = parse_run_config(j, ".");
  CHECK(again.to_json() == j);
}

TEST_CASE("programmatic estimator configs default unset bases") {
  const Dataset d = sample_linear_gaussian(reference_valid_pci(), 2000, 5).without_hidden();
  for (const char* name : {"proximal_g", "proximal_ipw", "proximal_dr"}) {
    EstimatorConfig c;
    c.name = name;
    EstimatorConfig explicit_bases = c;
    explicit_bases.h_basis = OutcomeBridgeSpec::linear_default(d.roles()).basis;
    explicit_bases.q_basis = TreatmentBridgeSpec::linear_default(d.roles()).basis;
    const EstimateResult r = run_estimator(c, d);
    CHECK(r.estimator == name);
    CHECK(r.ate_hat == run_estimator(explicit_bases, d).ate_hat);
  }
}

TEST_CASE("estimate writes one row per estimator") {
  const fs::path dir = scratch("estimate");
  const fs::path cfg = write_config(dir, kValid);
  const Run r = cli({"estimate", "--config", cfg.string(), "--out", dir.string()});
  CHECK(r.code == kExitOk);
  const auto text = lines(slurp(dir / "results.csv"));
  REQUIRE(text.size() == 4);
  CHECK(text[0].rfind("# config: {", 0) == 0);
  CHECK(text[1] == "estimator,ate_hat,se,ci_low,ci_high,converged,n,seed,error");
  const auto t = table(dir / "results.csv");
  const double g = std::stod(t.at("proximal_g")[1]);
  const double s = std::stod(t.at("two_stage_linear")[1]);
  CHECK(std::abs(g - s) <= 1e-8);
  CHECK(t.at("proximal_g")[6] == "100");
  CHECK(t.at("proximal_g")[7] == "9");
}

TEST_CASE("estimator failures become error rows") {
  const fs::path dir = scratch("failures");
  const fs::path cfg = write_config(dir, R"({
    "dgm": {"kind": "linear_gaussian"},
    "estimators": [{"name": "saturated_binary"}, {"name": "naive_or"}],
    "simulate": {"n": 200, "seed": 1}
  })");
  const Run r = cli({"estimate", "--config", cfg.string(), "--out", dir.string()});
  CHECK(r.code == kExitOk);
  const auto t = table(dir / "results.csv");
  CHECK(t.at("saturated_binary")[1].empty());
  CHECK(t.at("saturated_binary")[8].find("binary") != std::string::npos);
  CHECK(t.at("naive_or")[8].empty());

  const fs::path all = write_config(dir, R"({
    "dgm": {"kind": "linear_gaussian"},
    "estimators": [{"name": "saturated_binary"}],
    "simulate": {"n": 200, "seed": 1}
  })");
  CHECK(cli({"estimate", "--config", all.string(), "--out", dir.string()}).code == kExitAllFailed);
}

TEST_CASE("estimate reads a CSV relative to the config") {
  const fs::path dir = scratch("csv");
  // The treatment bridge often has no finite solution on bootstrap
  // resamples of very small datasets, so simulate a moderate n.
  const fs::path cfg = write_config(dir, R"({"dgm": {"kind": "linear_gaussian"},
                                            "simulate": {"n": 1000, "seed": 9}})");
  cli({"simulate", "--config", cfg.string(), "--out", (dir / "sim").string()});
  const fs::path from = write_config(dir, R"({
    "data": {"csv": "sim/simulated.csv",
             "roles": {"outcome": "Y", "treatment": "A", "covariates": ["X1"],
                       "treatment_proxies": ["Z1"], "outcome_proxies": ["W1"]}},
    "estimators": [{"name": "naive_or"}, {"name": "proximal_dr", "label": "dr_boot",
                    "bootstrap": {"replicates": 20, "seed": 2}}]
  })");
  const Run r = cli({"estimate", "--config", from.string(), "--out", (dir / "est").string()});
  CHECK(r.code == kExitOk);
  const auto t = table(dir / "est" / "results.csv");
  CHECK(t.size() == 2);
  CHECK_FALSE(t.at("dr_boot")[2].empty());
  CHECK(t.at("naive_or")[7].empty());

  const fs::path missing = write_config(dir, R"({
    "data": {"csv": "nope.csv",
             "roles": {"outcome": "Y", "treatment": "A",
                       "treatment_proxies": ["Z1"], "outcome_proxies": ["W1"]}},
    "estimators": [{"name": "naive_or"}]
  })");
  CHECK(cli({"estimate", "--config", missing.string(), "--out", dir.string()}).code == kExitIo);
}

TEST_CASE("benchmark with a single replication") {
  const fs::path dir = scratch("bench1");
  const fs::path cfg = write_config(dir, kValid);
  const Run r = cli({"benchmark", "--config", cfg.string(), "--out", dir.string()});
  CHECK(r.code == kExitOk);
  const auto t = table(dir / "benchmark.csv");
  for (const auto& [name, row] : t) {
    CHECK(row[5].empty());  // mc_se
    CHECK(row[6].empty());  // empirical_sd
    CHECK((row[8] == "0" || row[8] == "1"));
  }
  CHECK(lines(slurp(dir / "benchmark_replications.csv")).size() == 3);
  CHECK(fs::exists(dir / "benchmark.txt"));
}

TEST_CASE("benchmark output does not depend on the thread count") {
  const fs::path dir = scratch("bench_threads");
  const fs::path cfg = write_config(dir, R"({
    "dgm": {"kind": "linear_gaussian"},
    "estimators": [{"name": "naive_or"}, {"name": "proximal_ipw"}],
    "benchmark": {"replications": 12, "n": 400, "seed": 77}
  })");
  CHECK(cli({"benchmark", "--config", cfg.string(), "--out", (dir / "t1").string(),
             "--threads", "1"}).code == kExitOk);
  CHECK(cli({"benchmark", "--config", cfg.string(), "--out", (dir / "t8").string(),
             "--threads", "8"}).code == kExitOk);
  for (const char* f : {"benchmark.csv", "benchmark_replications.csv", "benchmark.txt"})
    CHECK(slurp(dir / "t1" / f) == slurp(dir / "t8" / f));
  CHECK(cli({"benchmark", "--config", cfg.string(), "--threads", "0"}).code == kExitConfig);
}

TEST_CASE("diagnose reports checks and the dimensionality screen") {
  const fs::path dir = scratch("diagnose");
  const fs::path cfg = write_config(dir, R"({
    "dgm": {"kind": "linear_gaussian"},
    "simulate": {"n": 20000, "seed": 3},
    "diagnose": {"declared_u_dim": 2}
  })");
  const Run r = cli({"diagnose", "--config", cfg.string(), "--out", dir.string()});
  CHECK(r.code == kExitOk);
  const std::string text = slurp(dir / "diagnostics.txt");
  CHECK(text.find("overall: violated") != std::string::npos);
  CHECK(text.find("not sufficient") != std::string::npos);
  CHECK(text.find("Treatment-bridge weights") != std::string::npos);
  const auto t = table(dir / "proxy_checks.csv");
  CHECK(std::stod(t.at("Z1-W1|A,X1")[7]) < 0.001);

  // Constant Z column.
  MatrixXd m(50, 5);
  for (Index i = 0; i < 50; ++i)
    m.row(i) << static_cast<double>(i % 7), static_cast<double>(i % 2), static_cast<double>(i % 5),
        1.0, static_cast<double>(i % 3);
  write_csv(Dataset({"Y", "A", "X1", "Z1", "W1"}, m, ColumnRoles::standard(1, 1, 1, 0)),
            dir / "const.csv", false);
  const fs::path c2 = write_config(dir, R"({
    "data": {"csv": "const.csv",
             "roles": {"outcome": "Y", "treatment": "A", "covariates": ["X1"],
                       "treatment_proxies": ["Z1"], "outcome_proxies": ["W1"]}}
  })");
  const Run r2 = cli({"diagnose", "--config", c2.string(), "--out", (dir / "c").string()});
  CHECK(r2.code == kExitOk);
  CHECK(r2.out.find("skipped: column Z1 is constant") != std::string::npos);
}

TEST_CASE("thread count from the environment") {
  const fs::path dir = scratch("env");
  const fs::path cfg = write_config(dir, kValid);
  setenv("PROXIE_THREADS", "zero", 1);
  CHECK(cli({"benchmark", "--config", cfg.string(), "--out", dir.string()}).code == kExitConfig);
  setenv("PROXIE_THREADS", "2", 1);
  CHECK(cli({"benchmark", "--config", cfg.string(), "--out", dir.string()}).code == kExitOk);
  unsetenv("PROXIE_THREADS");
}

TEST_CASE("usage errors") {
  CHECK(cli({}).code == kExitConfig);
  CHECK(cli({"simulate"}).code == kExitConfig);
  CHECK(cli({"frobnicate", "--config", "x"}).code == kExitConfig);
  CHECK(cli({"simulate", "--config", "/nonexistent/config.json"}).code == kExitIo);
  CHECK(cli({"--help"}).code == kExitOk);
}

TEST_CASE("installed binary exit codes") {
  const fs::path dir = scratch("binary");
  const fs::path cfg = write_config(dir, kValid);
  CHECK(run_binary("simulate --config " + cfg.string() + " --out " + dir.string()) == 0);
  CHECK(run_binary("simulate --config /nonexistent.json") == 3);
  CHECK(run_binary("simulate") == 1);
}

TEST_CASE("shipped configurations parse") {
  const fs::path configs = fs::path(PROXIE_SOURCE_DIR) / "configs";
  int seen = 0;
  for (const auto& entry : fs::directory_iterator(configs)) {
    if (entry.path().extension() != ".json") continue;
    ++seen;
    CHECK_NOTHROW(load_run_config(entry.path()));
  }
  CHECK(seen >= 4);
}
