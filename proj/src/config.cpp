#include "proxie/config.hpp"

#include "proxie/errors.hpp"

#include <algorithm>
#include <fstream>
#include <set>

namespace proxie {

namespace {

// Typed access to a JSON object that remembers its path and rejects keys it
// was never asked about.
class ObjectReader {
 public:
  ObjectReader(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) fail(path_, "expected an object");
  }

  [[noreturn]] static void fail(const std::string& path, const std::string& msg) {
    throw SchemaError(path + ": " + msg);
  }

  std::string at(const std::string& key) const { return path_ + "/" + key; }
  bool has(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key) && !j_.at(key).is_null();
  }
  const Json& raw(const std::string& key) {
    seen_.insert(key);
    if (!j_.contains(key)) fail(at(key), "missing required field");
    return j_.at(key);
  }

  double number(const std::string& key) {
    const Json& v = raw(key);
    if (!v.is_number()) fail(at(key), "expected a number");
    return v.get<double>();
  }
  void number(const std::string& key, double& out) {
    if (has(key)) out = number(key);
  }
  std::int64_t integer(const std::string& key) {
    const Json& v = raw(key);
    if (!v.is_number_integer()) fail(at(key), "expected an integer");
    return v.get<std::int64_t>();
  }
  std::uint64_t unsigned_integer(const std::string& key) {
    const Json& v = raw(key);
    if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0))
      fail(at(key), "expected a non-negative integer");
    return v.get<std::uint64_t>();
  }
  std::string string(const std::string& key) {
    const Json& v = raw(key);
    if (!v.is_string()) fail(at(key), "expected a string");
    return v.get<std::string>();
  }
  bool boolean(const std::string& key) {
    const Json& v = raw(key);
    if (!v.is_boolean()) fail(at(key), "expected true or false");
    return v.get<bool>();
  }
  std::vector<std::string> strings(const std::string& key) {
    const Json& v = raw(key);
    if (!v.is_array()) fail(at(key), "expected an array of strings");
    std::vector<std::string> out;
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (!v[i].is_string()) fail(at(key) + "/" + std::to_string(i), "expected a string");
      out.push_back(v[i].get<std::string>());
    }
    return out;
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) fail(at(it.key()), "unknown field");
  }

  const std::string& path() const { return path_; }

 private:
  const Json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

template <std::size_t N>
void read_array(ObjectReader& r, const std::string& key, std::array<double, N>& out) {
  if (!r.has(key)) return;
  const Json& v = r.raw(key);
  if (!v.is_array() || v.size() != N)
    ObjectReader::fail(r.at(key), "expected an array of " + std::to_string(N) + " numbers");
  for (std::size_t i = 0; i < N; ++i) {
    if (!v[i].is_number()) ObjectReader::fail(r.at(key) + "/" + std::to_string(i), "expected a number");
    out[i] = v[i].get<double>();
  }
}

template <typename T>
void read_nested(const Json& v, const std::string& path, T& out) {
  if constexpr (std::is_same_v<T, double>) {
    if (!v.is_number()) ObjectReader::fail(path, "expected a number");
    out = v.get<double>();
  } else {
    if (!v.is_array() || v.size() != out.size())
      ObjectReader::fail(path, "expected an array of " + std::to_string(out.size()));
    for (std::size_t i = 0; i < out.size(); ++i) read_nested(v[i], path + "/" + std::to_string(i), out[i]);
  }
}

template <typename T>
void read_table(ObjectReader& r, const std::string& key, T& out) {
  if (r.has(key)) read_nested(r.raw(key), r.at(key), out);
}

std::string conditioning_name(TreatmentConditioning c) {
  return c == TreatmentConditioning::on_UZWX ? "on_UZWX" : "on_X_only";
}

#define PROXIE_LG_FIELDS(F)                                                                 \
  F(alpha0) F(alpha_x) F(mu0) F(mu_a) F(mu_x) F(sigma_u) F(theta0) F(theta_a) F(theta_u)    \
  F(theta_x) F(sigma_z) F(omega0) F(omega_a) F(omega_u) F(omega_x) F(sigma_w) F(sigma_zw)   \
  F(beta0) F(beta_a) F(beta_u) F(beta_x) F(beta_z) F(beta_w) F(sigma_y) F(alpha_u)          \
  F(alpha_z) F(alpha_w)

#define PROXIE_CF_SCALARS(F)                                                                \
  F(alpha0) F(alpha_x) F(theta0) F(theta_a) F(theta1) F(theta2) F(theta_x) F(sigma_z)       \
  F(omega0) F(omega_x) F(sigma_w) F(beta0) F(beta_a) F(beta_x) F(beta_w) F(sigma_y)

#define PROXIE_CF_ARRAYS(F) F(mu0) F(mu_a) F(mu_x) F(omega_u) F(beta_u)

#define PROXIE_BIN_TABLES(F) F(p_ux) F(p_a) F(p_z) F(p_w) F(p_y)

template <typename Spec>
void validate_at(const Spec& spec, const std::string& path) {
  try {
    spec.validate();
  } catch (const ConfigError& e) {
    ObjectReader::fail(path, e.what());
  }
}

std::vector<BasisTerm> read_terms(ObjectReader& r, const std::string& key) {
  try {
    return parse_terms(r.strings(key));
  } catch (const ConfigError& e) {
    ObjectReader::fail(r.at(key), e.what());
  }
}

ColumnRoles read_roles(const Json& j, const std::string& path) {
  ObjectReader r(j, path);
  ColumnRoles roles;
  roles.outcome = r.string("outcome");
  roles.treatment = r.string("treatment");
  if (r.has("covariates")) roles.covariates = r.strings("covariates");
  roles.treatment_proxies = r.strings("treatment_proxies");
  roles.outcome_proxies = r.strings("outcome_proxies");
  if (r.has("hidden")) roles.hidden = r.strings("hidden");
  r.finish();
  try {
    roles.validate();
  } catch (const SchemaError& e) {
    ObjectReader::fail(path, e.what());
  }
  return roles;
}

Json roles_to_json(const ColumnRoles& r) {
  return Json{{"outcome", r.outcome},
              {"treatment", r.treatment},
              {"covariates", r.covariates},
              {"treatment_proxies", r.treatment_proxies},
              {"outcome_proxies", r.outcome_proxies},
              {"hidden", r.hidden}};
}

std::string ci_method_name(CiMethod m) { return m == CiMethod::normal ? "normal" : "percentile"; }

EstimatorConfig read_estimator(const Json& j, const std::string& path, const ColumnRoles& roles) {
  ObjectReader r(j, path);
  EstimatorConfig e;
  e.name = r.string("name");
  const auto& names = estimator_names();
  if (std::find(names.begin(), names.end(), e.name) == names.end())
    ObjectReader::fail(r.at("name"), "unknown estimator '" + e.name + "'");
  e.label = r.has("label") ? r.string("label") : e.name;

  e.h_basis = OutcomeBridgeSpec::linear_default(roles).basis;
  e.q_basis = TreatmentBridgeSpec::linear_default(roles).basis;
  if (r.has("h")) {
    ObjectReader h(r.raw("h"), r.at("h"));
    if (h.has("link")) {
      try {
        e.h_link = parse_link(h.string("link"));
      } catch (const ConfigError& err) {
        ObjectReader::fail(h.at("link"), err.what());
      }
    }
    if (h.has("basis")) e.h_basis = read_terms(h, "basis");
    if (h.has("extra_instruments")) e.h_extra_instruments = read_terms(h, "extra_instruments");
    h.finish();
    try {
      e.h_spec().validate(roles);
      outcome_instruments(roles, e.h_extra_instruments);
    } catch (const ConfigError& err) {
      ObjectReader::fail(h.path(), err.what());
    }
  }
  if (r.has("q")) {
    ObjectReader q(r.raw("q"), r.at("q"));
    if (q.has("basis")) e.q_basis = read_terms(q, "basis");
    if (q.has("extra_instruments")) e.q_extra_instruments = read_terms(q, "extra_instruments");
    q.finish();
    try {
      e.q_spec().validate(roles);
      treatment_instruments(roles, e.q_extra_instruments);
    } catch (const ConfigError& err) {
      ObjectReader::fail(q.path(), err.what());
    }
  }
  if (r.has("gmm")) {
    ObjectReader g(r.raw("gmm"), r.at("gmm"));
    if (g.has("max_iter")) e.max_iter = static_cast<int>(g.integer("max_iter"));
    g.number("tol", e.tol);
    g.finish();
    if (e.max_iter < 1) ObjectReader::fail(g.at("max_iter"), "must be >= 1");
    if (!(e.tol > 0.0)) ObjectReader::fail(g.at("tol"), "must be > 0");
  }
  if (r.has("bootstrap")) {
    ObjectReader b(r.raw("bootstrap"), r.at("bootstrap"));
    BootstrapConfig bc;
    if (b.has("replicates")) bc.replicates = static_cast<int>(b.integer("replicates"));
    if (b.has("seed")) bc.seed = b.unsigned_integer("seed");
    if (b.has("ci_method")) {
      const std::string m = b.string("ci_method");
      if (m == "percentile")
        bc.ci_method = CiMethod::percentile;
      else if (m == "normal")
        bc.ci_method = CiMethod::normal;
      else
        ObjectReader::fail(b.at("ci_method"), "expected 'percentile' or 'normal'");
    }
    b.finish();
    if (bc.replicates < 1) ObjectReader::fail(b.at("replicates"), "must be >= 1");
    e.bootstrap = bc;
  }
  r.finish();
  return e;
}

Json estimator_to_json(const EstimatorConfig& e) {
  Json j{{"name", e.name}, {"label", e.label}};
  if (e.uses_h())
    j["h"] = Json{{"link", to_string(e.h_link)},
                  {"basis", term_strings(e.h_basis)},
                  {"extra_instruments", term_strings(e.h_extra_instruments)}};
  if (e.uses_q())
    j["q"] = Json{{"basis", term_strings(e.q_basis)},
                  {"extra_instruments", term_strings(e.q_extra_instruments)}};
  if (e.uses_h() || e.uses_q()) j["gmm"] = Json{{"max_iter", e.max_iter}, {"tol", e.tol}};
  if (e.bootstrap)
    j["bootstrap"] = Json{{"replicates", e.bootstrap->replicates},
                          {"seed", e.bootstrap->seed},
                          {"ci_method", ci_method_name(e.bootstrap->ci_method)}};
  return j;
}

}  // namespace

const std::vector<std::string>& estimator_names() {
  static const std::vector<std::string> names{
      "naive_or",     "naive_ipw",   "naive_aipw", "proximal_g", "two_stage_linear",
      "proximal_ipw", "proximal_dr", "saturated_binary"};
  return names;
}

OutcomeBridgeSpec EstimatorConfig::h_spec() const {
  OutcomeBridgeSpec s;
  s.link = h_link;
  s.basis = h_basis;
  s.extra_instruments = h_extra_instruments;
  return s;
}

TreatmentBridgeSpec EstimatorConfig::q_spec() const {
  TreatmentBridgeSpec s;
  s.basis = q_basis;
  s.extra_instruments = q_extra_instruments;
  return s;
}

GmmConfig EstimatorConfig::gmm() const {
  GmmConfig g;
  g.max_iter = max_iter;
  g.tol = tol;
  return g;
}

bool EstimatorConfig::uses_h() const { return name == "proximal_g" || name == "proximal_dr"; }
bool EstimatorConfig::uses_q() const { return name == "proximal_ipw" || name == "proximal_dr"; }

EstimateResult run_estimator(const EstimatorConfig& config, const Dataset& data) {
  EstimatorConfig c = config;
  if (c.h_basis.empty()) c.h_basis = OutcomeBridgeSpec::linear_default(data.roles()).basis;
  if (c.q_basis.empty()) c.q_basis = TreatmentBridgeSpec::linear_default(data.roles()).basis;
  if (c.label.empty()) c.label = c.name;
  Estimator run;
  if (c.name == "naive_or") {
    run = [](const Dataset& d) { return naive_or(d); };
  } else if (c.name == "naive_ipw") {
    run = [](const Dataset& d) { return naive_ipw(d); };
  } else if (c.name == "naive_aipw") {
    run = [](const Dataset& d) { return naive_aipw(d); };
  } else if (c.name == "proximal_g") {
    run = [h = c.h_spec(), g = c.gmm()](const Dataset& d) { return proximal_g(d, h, g); };
  } else if (c.name == "two_stage_linear") {
    run = [](const Dataset& d) { return two_stage_linear(d); };
  } else if (c.name == "proximal_ipw") {
    run = [q = c.q_spec(), g = c.gmm()](const Dataset& d) { return proximal_ipw(d, q, g); };
  } else if (c.name == "proximal_dr") {
    run = [h = c.h_spec(), q = c.q_spec(), g = c.gmm()](const Dataset& d) {
      return proximal_dr(d, h, q, g);
    };
  } else if (c.name == "saturated_binary") {
    run = [](const Dataset& d) { return saturated_binary(d); };
  } else {
    throw ConfigError("unknown estimator '" + c.name + "'");
  }
  EstimateResult r = c.bootstrap ? bootstrap(data, run, *c.bootstrap) : run(data);
  r.estimator = c.label;
  return r;
}

std::string dgm_kind(const DgmSpec& spec) {
  switch (spec.index()) {
    case 0: return "linear_gaussian";
    case 1: return "binary";
    default: return "completeness_failure";
  }
}

Json dgm_to_json(const DgmSpec& spec) {
  Json params;
  Json block{{"kind", dgm_kind(spec)}};
  if (const auto* s = std::get_if<LinearGaussianDgm>(&spec)) {
#define F(name) params[#name] = s->name;
    PROXIE_LG_FIELDS(F)
#undef F
    block["treatment_conditioning"] = conditioning_name(s->treatment_conditioning);
  } else if (const auto* s = std::get_if<BinaryDgm>(&spec)) {
#define F(name) params[#name] = s->name;
    PROXIE_BIN_TABLES(F)
#undef F
  } else if (const auto* s = std::get_if<CompletenessFailureDgm>(&spec)) {
#define F(name) params[#name] = s->name;
    PROXIE_CF_SCALARS(F)
    PROXIE_CF_ARRAYS(F)
#undef F
  }
  block["params"] = params;
  return block;
}

DgmSpec dgm_from_json(const Json& j, const std::string& path) {
  ObjectReader r(j, path);
  const std::string kind = r.string("kind");
  static const Json empty = Json::object();
  const Json& pj = r.has("params") ? r.raw("params") : empty;
  ObjectReader p(pj, r.at("params"));
  DgmSpec out;
  if (kind == "linear_gaussian") {
    LinearGaussianDgm s = reference_valid_pci();
#define F(name) p.number(#name, s.name);
    PROXIE_LG_FIELDS(F)
#undef F
    if (r.has("treatment_conditioning")) {
      const std::string c = r.string("treatment_conditioning");
      if (c == "on_X_only")
        s.treatment_conditioning = TreatmentConditioning::on_X_only;
      else if (c == "on_UZWX")
        s.treatment_conditioning = TreatmentConditioning::on_UZWX;
      else
        ObjectReader::fail(r.at("treatment_conditioning"), "expected 'on_X_only' or 'on_UZWX'");
    }
    p.finish();
    validate_at(s, p.path());
    out = s;
  } else if (kind == "binary") {
    BinaryDgm s = reference_binary();
#define F(name) read_table(p, #name, s.name);
    PROXIE_BIN_TABLES(F)
#undef F
    p.finish();
    validate_at(s, p.path());
    out = s;
  } else if (kind == "completeness_failure") {
    CompletenessFailureDgm s = reference_completeness_failure();
#define F(name) p.number(#name, s.name);
    PROXIE_CF_SCALARS(F)
#undef F
#define F(name) read_array(p, #name, s.name);
    PROXIE_CF_ARRAYS(F)
#undef F
    p.finish();
    validate_at(s, p.path());
    out = s;
  } else {
    ObjectReader::fail(r.at("kind"), "unknown DGM kind '" + kind +
                                         "' (expected linear_gaussian, binary or completeness_failure)");
  }
  r.finish();
  return out;
}

ColumnRoles RunConfig::roles() const {
  if (data) return data->roles;
  if (dgm) return ColumnRoles::standard(1, 1, 1, dgm->index() == 2 ? 2 : 1);
  throw ConfigError("configuration has neither a dgm nor a data block");
}

Json RunConfig::to_json() const {
  Json j;
  if (dgm) j["dgm"] = dgm_to_json(*dgm);
  if (data) j["data"] = Json{{"csv", data->csv.string()}, {"roles", roles_to_json(data->roles)}};
  Json est = Json::array();
  for (const auto& e : estimators) est.push_back(estimator_to_json(e));
  j["estimators"] = est;
  j["benchmark"] = Json{{"replications", benchmark.replications},
                        {"n", benchmark.n},
                        {"seed", benchmark.seed}};
  j["simulate"] = Json{{"n", simulate.n}, {"seed", simulate.seed}, {"include_hidden", simulate.include_hidden}};
  j["diagnose"] = Json{{"declared_u_dim", diagnose.declared_u_dim},
                       {"relevant_threshold", diagnose.thresholds.relevant},
                       {"weak_threshold", diagnose.thresholds.weak}};
  return j;
}

RunConfig parse_run_config(const Json& doc, const std::filesystem::path& base_dir) {
  ObjectReader r(doc, "");
  RunConfig c;
  const bool has_dgm = r.has("dgm");
  const bool has_data = r.has("data");
  if (has_dgm == has_data) ObjectReader::fail("/", "exactly one of 'dgm' or 'data' is required");
  if (has_dgm) c.dgm = dgm_from_json(r.raw("dgm"), "/dgm");
  if (has_data) {
    ObjectReader d(r.raw("data"), "/data");
    DataSource src;
    src.csv = d.string("csv");
    if (src.csv.is_relative()) src.csv = base_dir / src.csv;
    src.roles = read_roles(d.raw("roles"), "/data/roles");
    d.finish();
    c.data = src;
  }
  const ColumnRoles roles = c.roles();

  if (r.has("estimators")) {
    const Json& list = r.raw("estimators");
    if (!list.is_array()) ObjectReader::fail("/estimators", "expected an array");
    std::set<std::string> labels;
    for (std::size_t i = 0; i < list.size(); ++i) {
      const std::string path = "/estimators/" + std::to_string(i);
      c.estimators.push_back(read_estimator(list[i], path, roles));
      if (!labels.insert(c.estimators.back().label).second)
        ObjectReader::fail(path, "duplicate estimator label '" + c.estimators.back().label + "'");
    }
  }
  if (r.has("benchmark")) {
    ObjectReader b(r.raw("benchmark"), "/benchmark");
    if (b.has("replications")) c.benchmark.replications = static_cast<int>(b.integer("replications"));
    if (b.has("n")) c.benchmark.n = static_cast<Index>(b.integer("n"));
    if (b.has("seed")) c.benchmark.seed = b.unsigned_integer("seed");
    if (b.has("parallelism")) c.benchmark.parallelism = static_cast<int>(b.integer("parallelism"));
    b.finish();
    if (c.benchmark.replications < 1) ObjectReader::fail("/benchmark/replications", "must be >= 1");
    if (c.benchmark.n < 1) ObjectReader::fail("/benchmark/n", "must be >= 1");
    if (c.benchmark.parallelism < 1) ObjectReader::fail("/benchmark/parallelism", "must be >= 1");
  }
  if (r.has("simulate")) {
    ObjectReader s(r.raw("simulate"), "/simulate");
    if (s.has("n")) c.simulate.n = static_cast<Index>(s.integer("n"));
    if (s.has("seed")) c.simulate.seed = s.unsigned_integer("seed");
    if (s.has("include_hidden")) c.simulate.include_hidden = s.boolean("include_hidden");
    s.finish();
    if (c.simulate.n < 1) ObjectReader::fail("/simulate/n", "must be >= 1");
  }
  if (r.has("diagnose")) {
    ObjectReader d(r.raw("diagnose"), "/diagnose");
    if (d.has("declared_u_dim")) {
      const auto u = d.integer("declared_u_dim");
      if (u < 1) ObjectReader::fail("/diagnose/declared_u_dim", "must be >= 1");
      c.diagnose.declared_u_dim = static_cast<std::size_t>(u);
    }
    d.number("relevant_threshold", c.diagnose.thresholds.relevant);
    d.number("weak_threshold", c.diagnose.thresholds.weak);
    d.finish();
    const auto& t = c.diagnose.thresholds;
    if (!(t.relevant > 0.0 && t.relevant <= t.weak && t.weak < 1.0))
      ObjectReader::fail("/diagnose", "thresholds must satisfy 0 < relevant <= weak < 1");
  }
  if (r.has("out_dir")) {
    c.out_dir = r.string("out_dir");
  }
  r.finish();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  Json doc;
  try {
    doc = Json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw SchemaError(path.string() + ": invalid JSON: " + e.what());
  }
  return parse_run_config(doc, path.parent_path().empty() ? "." : path.parent_path());
}

}  // namespace proxie
