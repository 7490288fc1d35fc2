#include "proxie/diagnostics.hpp"

#include "proxie/errors.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace proxie {

std::string to_string(RelevanceFlag flag) {
  switch (flag) {
    case RelevanceFlag::relevant_evidence: return "relevant_evidence";
    case RelevanceFlag::weak: return "weak";
    case RelevanceFlag::none: return "none";
  }
  return "none";
}

std::string to_string(ScreenVerdict v) {
  return v == ScreenVerdict::violated ? "violated" : "necessary-condition-met";
}

double partial_correlation(Eigen::Ref<const VectorXd> x, Eigen::Ref<const VectorXd> y,
                           const MatrixXd& conditioning) {
  MatrixXd d(x.size(), conditioning.cols() + 1);
  d.col(0).setOnes();
  d.rightCols(conditioning.cols()) = conditioning;
  const Eigen::ColPivHouseholderQR<MatrixXd> qr(d);
  const VectorXd rx = x - d * qr.solve(VectorXd(x));
  const VectorXd ry = y - d * qr.solve(VectorXd(y));
  const double denom = std::sqrt(rx.squaredNorm() * ry.squaredNorm());
  if (!(denom > 0.0)) return std::numeric_limits<double>::quiet_NaN();
  return std::clamp(rx.dot(ry) / denom, -1.0, 1.0);
}

std::pair<double, double> fisher_z_test(double r, Index n, Index k) {
  const double df = static_cast<double>(n - k - 3);
  if (df <= 0.0) throw PreconditionError("Fisher z-test needs n > |conditioning set| + 3");
  const double rc = std::clamp(r, -1.0 + 1e-15, 1.0 - 1e-15);
  const double z = std::atanh(rc) * std::sqrt(df);
  const double p = std::erfc(std::abs(z) / std::sqrt(2.0));
  return {z, std::clamp(p, 0.0, 1.0)};
}

namespace {

std::string quoted(const std::string& s) {
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out += '"';
    out += ch;
  }
  return out + "\"";
}

bool is_constant(Eigen::Ref<const VectorXd> v) { return v.maxCoeff() == v.minCoeff(); }

std::string join(const std::vector<std::string>& v, const std::string& sep) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? sep : "") + v[i];
  return s;
}

ProxyTest run_test(const Dataset& data, const std::string& a, const std::string& b,
                   std::vector<std::string> cond, bool informative) {
  ProxyTest t;
  t.first = a;
  t.second = b;
  t.conditioning = std::move(cond);
  t.informative = informative;
  t.id = a + "-" + b + (t.conditioning.empty() ? "" : "|" + join(t.conditioning, ","));
  for (const auto& c : {a, b}) {
    if (is_constant(data.column(c))) {
      t.skipped_reason = "column " + c + " is constant";
      return t;
    }
  }
  const double r = partial_correlation(data.column(a), data.column(b), data.columns(t.conditioning));
  if (!std::isfinite(r)) {
    t.skipped_reason = "residual of " + a + " or " + b + " is zero after conditioning";
    return t;
  }
  const auto [z, p] = fisher_z_test(r, data.n(), static_cast<Index>(t.conditioning.size()));
  t.partial_corr = r;
  t.z_stat = z;
  t.p_value = p;
  return t;
}

std::vector<std::string> with(std::vector<std::string> head, const std::vector<std::string>& tail) {
  head.insert(head.end(), tail.begin(), tail.end());
  return head;
}

}  // namespace

ProxyCheckReport proxy_checks(const Dataset& data, const RelevanceThresholds& thresholds) {
  const ColumnRoles& r = data.roles();
  const auto p = static_cast<Index>(r.covariates.size());
  const auto q = static_cast<Index>(r.treatment_proxies.size());
  const auto nw = static_cast<Index>(r.outcome_proxies.size());
  if (data.n() <= p + q + nw + 5)
    throw PreconditionError("proxy_checks needs n > p + q + r + 5 rows");

  const auto ax = with({r.treatment}, r.covariates);
  ProxyCheckReport rep;
  for (const auto& z : r.treatment_proxies) rep.tests.push_back(run_test(data, z, r.outcome, ax, true));
  for (const auto& w : r.outcome_proxies)
    rep.tests.push_back(run_test(data, w, r.treatment, r.covariates, true));
  for (const auto& z : r.treatment_proxies)
    for (const auto& w : r.outcome_proxies) rep.tests.push_back(run_test(data, z, w, ax, true));
  for (const auto& z : r.treatment_proxies)
    rep.tests.push_back(run_test(data, z, r.treatment, r.covariates, false));
  for (const auto& w : r.outcome_proxies) rep.tests.push_back(run_test(data, w, r.outcome, ax, false));

  for (const auto& proxy : with(r.treatment_proxies, r.outcome_proxies)) {
    double best = 1.0;
    for (const auto& t : rep.tests)
      if (t.informative && t.p_value && (t.first == proxy || t.second == proxy))
        best = std::min(best, *t.p_value);
    rep.flags[proxy] = best < thresholds.relevant ? RelevanceFlag::relevant_evidence
                       : best < thresholds.weak   ? RelevanceFlag::weak
                                                  : RelevanceFlag::none;
  }
  return rep;
}

std::string ProxyCheckReport::to_text() const {
  std::ostringstream os;
  os << "Proxy association checks\n\n";
  os << std::left << std::setw(28) << "test" << std::setw(14) << "kind" << std::right
     << std::setw(12) << "partial_r" << std::setw(12) << "z" << std::setw(14) << "p_value" << "\n";
  for (const auto& t : tests) {
    os << std::left << std::setw(28) << t.id << std::setw(14)
       << (t.informative ? "informative" : "suggestive") << std::right;
    if (!t.skipped_reason.empty()) {
      os << "  skipped: " << t.skipped_reason << "\n";
      continue;
    }
    os << std::setw(12) << std::setprecision(4) << std::fixed << *t.partial_corr << std::setw(12)
       << std::setprecision(3) << *t.z_stat << std::setw(14) << std::setprecision(6)
       << std::scientific << *t.p_value << std::defaultfloat << "\n";
  }
  os << "\nProxy flags\n";
  for (const auto& [proxy, flag] : flags) os << "  " << proxy << ": " << to_string(flag) << "\n";
  os << "\n" << caveat << "\n";
  return os.str();
}

void ProxyCheckReport::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << "test,first,second,conditioning,kind,partial_corr,z,p_value,skipped\n";
  auto opt = [](const std::optional<double>& v) { return v ? format_double(*v) : std::string(); };
  for (const auto& t : tests) {
    out << quoted(t.id) << "," << t.first << "," << t.second << "," << join(t.conditioning, ";")
        << "," << (t.informative ? "informative" : "suggestive") << "," << opt(t.partial_corr)
        << "," << opt(t.z_stat) << "," << opt(t.p_value) << "," << quoted(t.skipped_reason) << "\n";
  }
  if (!out) throw IoError("failed writing " + path.string());
}

DimensionalityScreen dimensionality_screen(const ColumnRoles& roles, std::size_t declared_u_dim) {
  if (declared_u_dim < 1) throw ConfigError("declared_u_dim must be >= 1");
  DimensionalityScreen s;
  s.declared_u_dim = declared_u_dim;
  s.z_dim = roles.treatment_proxies.size();
  s.w_dim = roles.outcome_proxies.size();
  s.outcome_bridge = s.z_dim < declared_u_dim ? ScreenVerdict::violated
                                              : ScreenVerdict::necessary_condition_met;
  s.treatment_bridge = s.w_dim < declared_u_dim ? ScreenVerdict::violated
                                                : ScreenVerdict::necessary_condition_met;
  s.overall = (s.outcome_bridge == ScreenVerdict::violated ||
               s.treatment_bridge == ScreenVerdict::violated)
                  ? ScreenVerdict::violated
                  : ScreenVerdict::necessary_condition_met;
  return s;
}

std::string DimensionalityScreen::to_text() const {
  std::ostringstream os;
  os << "Dimensionality screen\n"
     << "  declared dim(U): " << declared_u_dim << "\n"
     << "  dim(Z): " << z_dim << "  outcome-bridge path: " << to_string(outcome_bridge) << "\n"
     << "  dim(W): " << w_dim << "  treatment-bridge path: " << to_string(treatment_bridge) << "\n"
     << "  overall: " << to_string(overall) << "\n"
     << "Having at least as many proxy dimensions as U is necessary, not sufficient; "
        "completeness cannot be tested.\n";
  return os.str();
}

WeightSummary weight_summary(const VectorXd& q, Eigen::Ref<const VectorXd> a,
                             std::size_t clamp_events) {
  WeightSummary s;
  s.clamp_events = clamp_events;
  for (int arm = 0; arm < 2; ++arm) {
    ArmWeights& w = arm == 1 ? s.treated : s.control;
    double sum = 0.0, sum2 = 0.0;
    w.min = std::numeric_limits<double>::infinity();
    w.max = -std::numeric_limits<double>::infinity();
    for (Index i = 0; i < q.size(); ++i) {
      if (a(i) != static_cast<double>(arm)) continue;
      ++w.count;
      sum += q(i);
      sum2 += q(i) * q(i);
      w.min = std::min(w.min, q(i));
      w.max = std::max(w.max, q(i));
    }
    if (w.count > 0) {
      w.mean = sum / static_cast<double>(w.count);
      w.ess = sum * sum / sum2;
    } else {
      w.min = w.max = 0.0;
    }
  }
  return s;
}

WeightSummary weight_diagnostics(const Dataset& data, const TreatmentBridgeSpec& q_spec) {
  std::size_t clamps = 0;
  const VectorXd q = eval_q_all(q_spec, data, &clamps);
  return weight_summary(q, data.a(), clamps);
}

std::string WeightSummary::to_text() const {
  std::ostringstream os;
  os << "Treatment-bridge weights\n";
  for (int arm = 1; arm >= 0; --arm) {
    const ArmWeights& w = arm == 1 ? treated : control;
    os << "  A=" << arm << ": n=" << w.count << " min=" << w.min << " max=" << w.max
       << " mean=" << w.mean << " ess=" << w.ess << "\n";
  }
  os << "  clamped exponents: " << clamp_events << "\n";
  return os.str();
}

}  // namespace proxie
