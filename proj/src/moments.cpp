#include "proxie/moments.hpp"

#include "proxie/errors.hpp"

#include <cmath>
#include <limits>

namespace proxie {

void MomentSystem::check_identified() const {
  if (dim_moments < dim_theta)
    throw IdentificationError(label + ": " + std::to_string(dim_theta) + " parameters but only " +
                                  std::to_string(dim_moments) + " moment conditions (deficit " +
                                  std::to_string(dim_theta - dim_moments) + ")",
                              static_cast<long>(dim_theta - dim_moments));
}

void GmmConfig::validate(Index dim_moments) const {
  if (!(tol > 0.0)) throw ConfigError("GMM tolerance must be > 0");
  if (max_iter < 1) throw ConfigError("GMM max_iter must be >= 1");
  if (weighting == Weighting::custom) {
    if (weight.rows() != dim_moments || weight.cols() != dim_moments)
      throw ConfigError("custom weighting matrix must be " + std::to_string(dim_moments) + " x " +
                        std::to_string(dim_moments));
    if (!weight.isApprox(weight.transpose(), 1e-12))
      throw ConfigError("custom weighting matrix is not symmetric");
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(weight);
    if (es.eigenvalues().minCoeff() < -1e-12 * std::max(1.0, es.eigenvalues().cwiseAbs().maxCoeff()))
      throw ConfigError("custom weighting matrix is not positive semidefinite");
  }
}

RowMajorMatrix gather_rows(const Dataset& data, const std::vector<std::string>& columns) {
  RowMajorMatrix out(data.n(), static_cast<Index>(columns.size()));
  for (std::size_t j = 0; j < columns.size(); ++j)
    out.col(static_cast<Index>(j)) = data.column(columns[j]);
  return out;
}

MomentAverages average_moments(const RowMajorMatrix& rows, const MomentSystem& system,
                               const VectorXd& theta) {
  const Index n = rows.rows();
  MomentAverages avg{VectorXd::Zero(system.dim_moments),
                     MatrixXd::Zero(system.dim_moments, system.dim_theta)};
  VectorXd f(system.dim_moments);
  MatrixXd jac(system.dim_moments, system.dim_theta);
  for (Index i = 0; i < n; ++i) {
    const Row row = row_of(rows, i);
    system.residual(row, theta, f);
    system.jacobian(row, theta, jac);
    avg.g += f;
    avg.j += jac;
  }
  if (!avg.g.allFinite())
    throw EvaluationError(system.label + ": non-finite moment average");
  avg.g /= static_cast<double>(n);
  avg.j /= static_cast<double>(n);
  return avg;
}

namespace {

VectorXd average_residual(const RowMajorMatrix& rows, const MomentSystem& system,
                          const VectorXd& theta) {
  VectorXd g = VectorXd::Zero(system.dim_moments);
  VectorXd f(system.dim_moments);
  for (Index i = 0; i < rows.rows(); ++i) {
    system.residual(row_of(rows, i), theta, f);
    g += f;
  }
  return g / static_cast<double>(rows.rows());
}

}  // namespace

MatrixXd moment_outer(const RowMajorMatrix& rows, const MomentSystem& system,
                      const VectorXd& theta) {
  MatrixXd b = MatrixXd::Zero(system.dim_moments, system.dim_moments);
  VectorXd f(system.dim_moments);
  for (Index i = 0; i < rows.rows(); ++i) {
    system.residual(row_of(rows, i), theta, f);
    b.selfadjointView<Eigen::Lower>().rankUpdate(f);
  }
  b = b.selfadjointView<Eigen::Lower>();
  return b / static_cast<double>(rows.rows());
}

double condition_number(const MatrixXd& m) {
  if (m.size() == 0) return 1.0;
  Eigen::JacobiSVD<MatrixXd> svd(m);
  const auto& s = svd.singularValues();
  const double smax = s(0);
  const double smin = s(s.size() - 1);
  if (smax == 0.0 || smin == 0.0) return std::numeric_limits<double>::infinity();
  return smax / smin;
}

namespace {

constexpr double kRankCondition = 1e12;
constexpr double kStationaryStep = 1e-8;

MatrixXd weight_matrix(const GmmConfig& config, Index m) {
  return config.weighting == Weighting::custom ? config.weight : MatrixXd::Identity(m, m);
}

// Sandwich for a GMM estimate; reduces to A^-1 B A^-T when A is square.
MatrixXd gmm_vcov(const MatrixXd& j, const MatrixXd& b, const MatrixXd& w, Index n) {
  if (j.rows() == j.cols()) {
    Eigen::FullPivLU<MatrixXd> lu(j);
    const MatrixXd ainv = lu.inverse();
    return ainv * b * ainv.transpose() / static_cast<double>(n);
  }
  const MatrixXd jtw = j.transpose() * w;
  const MatrixXd h = (jtw * j).inverse();
  return h * jtw * b * jtw.transpose() * h / static_cast<double>(n);
}

void finish(GmmResult& r, const RowMajorMatrix& rows, const MomentSystem& system,
            const MatrixXd& w) {
  const auto avg = average_moments(rows, system, r.theta_hat);
  r.objective = avg.g.dot(w * avg.g);
  r.bread = avg.j;
  r.meat = moment_outer(rows, system, r.theta_hat);
  r.condition = condition_number(avg.j.transpose() * w * avg.j);
  if (std::isfinite(r.condition))
    r.vcov = gmm_vcov(avg.j, r.meat, w, rows.rows());
  else
    r.vcov = MatrixXd::Constant(system.dim_theta, system.dim_theta,
                                std::numeric_limits<double>::quiet_NaN());
}

GmmResult solve_direct(const RowMajorMatrix& rows, const MomentSystem& system,
                       const MatrixXd& w) {
  const VectorXd zero = VectorXd::Zero(system.dim_theta);
  const auto avg = average_moments(rows, system, zero);
  const MatrixXd& j = avg.j;
  GmmResult r;
  if (j.rows() == j.cols()) {
    const double cond = condition_number(j);
    if (!(cond < kRankCondition))
      throw RankDeficiencyError(system.label + ": moment Jacobian is rank deficient (condition " +
                                    std::to_string(cond) + ")",
                                cond);
    r.theta_hat = j.fullPivLu().solve(-avg.g);
  } else {
    const MatrixXd jtw = j.transpose() * w;
    const MatrixXd normal = jtw * j;
    const double cond = condition_number(normal);
    if (!(cond < kRankCondition * kRankCondition))
      throw RankDeficiencyError(system.label + ": GMM normal equations are rank deficient (condition " +
                                    std::to_string(cond) + ")",
                                cond);
    r.theta_hat = normal.ldlt().solve(-jtw * avg.g);
  }
  r.iterations = 1;
  r.converged = true;
  finish(r, rows, system, w);
  r.objective_trace = {r.objective};
  return r;
}

GmmResult solve_gauss_newton(const RowMajorMatrix& rows, const MomentSystem& system,
                             const GmmConfig& config, const MatrixXd& w) {
  GmmResult r;
  VectorXd theta = config.theta0.value_or(VectorXd::Zero(system.dim_theta));
  if (theta.size() != system.dim_theta)
    throw ConfigError(system.label + ": theta0 has length " + std::to_string(theta.size()) +
                      ", expected " + std::to_string(system.dim_theta));
  auto avg = average_moments(rows, system, theta);
  double q = avg.g.dot(w * avg.g);
  r.objective_trace.push_back(q);
  // Rounding floor: the step is tiny relative to theta, or the decrease it
  // predicts is below what the objective can resolve in floating point.
  auto negligible = [&](const VectorXd& step, const VectorXd& grad) {
    const double predicted = -grad.dot(step);
    return step.norm() <= kStationaryStep * (1.0 + theta.norm()) ||
           predicted <= 64.0 * std::numeric_limits<double>::epsilon() * q;
  };
  int it = 0;
  for (; it < config.max_iter; ++it) {
    const MatrixXd jtw = avg.j.transpose() * w;
    const VectorXd grad = jtw * avg.g;
    if (grad.norm() <= config.tol) {
      r.converged = true;
      break;
    }
    const MatrixXd normal = jtw * avg.j;
    const bool well_posed = condition_number(normal) <= kRankCondition;
    const VectorXd step = well_posed ? VectorXd(normal.ldlt().solve(-grad)) : VectorXd(-grad);
    if (well_posed && negligible(step, grad)) {
      r.converged = true;
      break;
    }
    double t = 1.0;
    bool accepted = false;
    for (int halving = 0; halving < 40; ++halving, t *= 0.5) {
      const VectorXd candidate = theta + t * step;
      const VectorXd g = average_residual(rows, system, candidate);
      if (!g.allFinite()) continue;
      const double qc = g.dot(w * g);
      if (qc < q) {
        theta = candidate;
        accepted = true;
        break;
      }
    }
    if (!accepted) break;
    avg = average_moments(rows, system, theta);
    q = avg.g.dot(w * avg.g);
    r.objective_trace.push_back(q);
  }
  if (it == config.max_iter) {
    const VectorXd grad = avg.j.transpose() * w * avg.g;
    r.converged = grad.norm() <= config.tol;
  }
  r.iterations = it;
  r.theta_hat = theta;
  finish(r, rows, system, w);
  return r;
}

}  // namespace

GmmResult solve_gmm(const RowMajorMatrix& rows, const MomentSystem& system,
                    const GmmConfig& config) {
  system.check_identified();
  config.validate(system.dim_moments);
  if (rows.rows() < 1) throw ValidationError(system.label + ": empty dataset");
  const MatrixXd w = weight_matrix(config, system.dim_moments);
  Solver solver = config.solver;
  if (solver == Solver::automatic)
    solver = system.linear ? Solver::direct_linear : Solver::gauss_newton;
  if (solver == Solver::direct_linear) {
    if (!system.linear)
      throw ConfigError(system.label + ": direct_linear solver requires a system linear in theta");
    return solve_direct(rows, system, w);
  }
  return solve_gauss_newton(rows, system, config, w);
}

GmmResult solve_gmm(const Dataset& data, const MomentSystem& system, const GmmConfig& config) {
  return solve_gmm(gather_rows(data, system.columns), system, config);
}

MatrixXd sandwich_vcov(const RowMajorMatrix& rows, const MomentSystem& system,
                       const VectorXd& theta_hat) {
  if (system.dim_moments != system.dim_theta)
    throw IdentificationError(system.label + ": sandwich_vcov requires an exactly identified system",
                              static_cast<long>(system.dim_theta - system.dim_moments));
  const auto avg = average_moments(rows, system, theta_hat);
  const double cond = condition_number(avg.j);
  if (!(cond < kRankCondition))
    throw RankDeficiencyError(system.label + ": bread matrix is singular (condition " +
                                  std::to_string(cond) + ")",
                              cond);
  const MatrixXd b = moment_outer(rows, system, theta_hat);
  return gmm_vcov(avg.j, b, MatrixXd::Identity(system.dim_moments, system.dim_moments),
                  rows.rows());
}

MatrixXd sandwich_vcov(const Dataset& data, const MomentSystem& system,
                       const VectorXd& theta_hat) {
  return sandwich_vcov(gather_rows(data, system.columns), system, theta_hat);
}

double check_jacobian(const MomentSystem& system, Row row, const VectorXd& theta) {
  const Index m = system.dim_moments;
  const Index p = system.dim_theta;
  VectorXd f(m);
  system.residual(row, theta, f);
  if (!f.allFinite()) throw EvaluationError(system.label + ": residual is not finite at theta");
  MatrixXd analytic(m, p);
  system.jacobian(row, theta, analytic);

  const double h0 = std::cbrt(std::numeric_limits<double>::epsilon());
  MatrixXd numeric(m, p);
  VectorXd fp(m), fm(m);
  for (Index j = 0; j < p; ++j) {
    const double h = h0 * std::max(1.0, std::abs(theta(j)));
    VectorXd tp = theta, tm = theta;
    tp(j) += h;
    tm(j) -= h;
    system.residual(row, tp, fp);
    system.residual(row, tm, fm);
    if (!fp.allFinite() || !fm.allFinite())
      throw EvaluationError(system.label + ": residual is not finite near theta");
    numeric.col(j) = (fp - fm) / (tp(j) - tm(j));
  }
  double worst = 0.0;
  for (Index i = 0; i < m; ++i)
    for (Index j = 0; j < p; ++j)
      worst = std::max(worst, std::abs(analytic(i, j) - numeric(i, j)) /
                                  std::max(1.0, std::abs(numeric(i, j))));
  return worst;
}

}  // namespace proxie
