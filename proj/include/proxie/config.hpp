#pragma once

#include "proxie/bridges.hpp"
#include "proxie/dgm.hpp"
#include "proxie/diagnostics.hpp"
#include "proxie/estimators.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace proxie {

using Json = nlohmann::ordered_json;

// One requested estimator. Bridge fields apply only to the estimators that
// use them; unset bases default to the linear bases for the run's roles.
struct EstimatorConfig {
  std::string name;   // naive_or, naive_ipw, naive_aipw, proximal_g, two_stage_linear,
                      // proximal_ipw, proximal_dr, saturated_binary
  std::string label;  // row label in outputs; defaults to name
  Link h_link = Link::identity;
  std::vector<BasisTerm> h_basis;
  std::vector<BasisTerm> h_extra_instruments;
  std::vector<BasisTerm> q_basis;
  std::vector<BasisTerm> q_extra_instruments;
  int max_iter = 200;
  double tol = 1e-9;
  std::optional<BootstrapConfig> bootstrap;

  OutcomeBridgeSpec h_spec() const;
  TreatmentBridgeSpec q_spec() const;
  GmmConfig gmm() const;
  bool uses_h() const;
  bool uses_q() const;
};

const std::vector<std::string>& estimator_names();

// Runs the configured estimator, wrapped in the bootstrap when requested.
EstimateResult run_estimator(const EstimatorConfig& config, const Dataset& data);

struct DataSource {
  std::filesystem::path csv;
  ColumnRoles roles;
};

struct BenchmarkSettings {
  int replications = 200;
  Index n = 1000;
  std::uint64_t seed = 20240501;
  int parallelism = 1;  // overridden by --threads / PROXIE_THREADS
};

struct SimulateSettings {
  Index n = 1000;
  std::uint64_t seed = 20240501;
  bool include_hidden = true;
};

struct DiagnoseSettings {
  std::size_t declared_u_dim = 1;
  RelevanceThresholds thresholds;
};

struct RunConfig {
  std::optional<DgmSpec> dgm;
  std::optional<DataSource> data;
  std::vector<EstimatorConfig> estimators;
  BenchmarkSettings benchmark;
  SimulateSettings simulate;
  DiagnoseSettings diagnose;
  std::filesystem::path out_dir = ".";

  // Roles of the simulated data or of the input CSV.
  ColumnRoles roles() const;
  // Every field with defaults filled in. Thread count is left out so that
  // outputs do not depend on it.
  Json to_json() const;
};

std::string dgm_kind(const DgmSpec& spec);
Json dgm_to_json(const DgmSpec& spec);
// Parameters absent from `params` keep their reference values.
DgmSpec dgm_from_json(const Json& block, const std::string& path = "/dgm");

// Throws SchemaError naming the offending JSON path. Relative CSV paths are
// resolved against `base_dir`.
RunConfig parse_run_config(const Json& doc, const std::filesystem::path& base_dir = ".");
RunConfig load_run_config(const std::filesystem::path& path);

}  // namespace proxie
