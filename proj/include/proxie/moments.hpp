#pragma once

#include "proxie/dataset.hpp"

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace proxie {

using RowMajorMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// One observation as seen by a moment system: the values of
// MomentSystem::columns, in that order.
using Row = std::span<const double>;

// Stacked estimating functions f(D_i, theta) with an analytic Jacobian.
// residual writes dim_moments values; jacobian writes a
// dim_moments x dim_theta matrix.
struct MomentSystem {
  std::string label;
  Index dim_theta = 0;
  Index dim_moments = 0;
  std::vector<std::string> columns;
  // f(theta) = f(0) + J theta with J independent of the row's theta.
  bool linear = false;
  std::function<void(Row, const VectorXd&, Eigen::Ref<VectorXd>)> residual;
  std::function<void(Row, const VectorXd&, Eigen::Ref<MatrixXd>)> jacobian;

  // Throws IdentificationError when dim_moments < dim_theta.
  void check_identified() const;
};

// Row-major copy of the columns a system reads, one observation per row.
RowMajorMatrix gather_rows(const Dataset& data, const std::vector<std::string>& columns);

inline Row row_of(const RowMajorMatrix& rows, Index i) {
  return Row(rows.data() + i * rows.cols(), static_cast<std::size_t>(rows.cols()));
}

enum class Weighting { identity, custom };
enum class Solver {
  automatic,  // direct_linear for linear systems, gauss_newton otherwise
  direct_linear,
  gauss_newton,
};

struct GmmConfig {
  Weighting weighting = Weighting::identity;
  MatrixXd weight;  // used when weighting == custom
  Solver solver = Solver::automatic;
  int max_iter = 200;
  double tol = 1e-9;  // on the gradient norm of the GMM objective
  std::optional<VectorXd> theta0;

  void validate(Index dim_moments) const;
};

struct GmmResult {
  VectorXd theta_hat;
  double objective = 0.0;
  bool converged = false;
  int iterations = 0;
  MatrixXd bread;  // mean Jacobian, dim_moments x dim_theta
  MatrixXd meat;   // mean of f f^T
  MatrixXd vcov;
  double condition = 0.0;  // of the normal-equation matrix at theta_hat
  std::vector<double> objective_trace;  // accepted iterates, in order
};

// Sample mean of the residuals and of the Jacobian at theta.
struct MomentAverages {
  VectorXd g;  // dim_moments
  MatrixXd j;  // dim_moments x dim_theta
};

MomentAverages average_moments(const RowMajorMatrix& rows, const MomentSystem& system,
                               const VectorXd& theta);

// Mean of f f^T at theta.
MatrixXd moment_outer(const RowMajorMatrix& rows, const MomentSystem& system,
                      const VectorXd& theta);

GmmResult solve_gmm(const Dataset& data, const MomentSystem& system, const GmmConfig& config);
GmmResult solve_gmm(const RowMajorMatrix& rows, const MomentSystem& system,
                    const GmmConfig& config);

// A^-1 B A^-T / n for an exactly identified system, A the mean Jacobian and
// B the mean of f f^T (1/n divisor).
MatrixXd sandwich_vcov(const Dataset& data, const MomentSystem& system, const VectorXd& theta_hat);
MatrixXd sandwich_vcov(const RowMajorMatrix& rows, const MomentSystem& system,
                       const VectorXd& theta_hat);

// Worst relative error between the analytic Jacobian and central finite
// differences with step cbrt(eps) * max(1, |theta_j|). The relative error of
// entry (i, j) is |analytic - numeric| / max(1, |numeric|).
double check_jacobian(const MomentSystem& system, Row row, const VectorXd& theta);

// 2-norm condition number via SVD; +inf for an exactly singular matrix.
double condition_number(const MatrixXd& m);

}  // namespace proxie
