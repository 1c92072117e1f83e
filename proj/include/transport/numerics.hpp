#pragma once

#include <Eigen/Dense>
#include <functional>
#include <limits>
#include <span>
#include <utility>

namespace transport {

struct NewtonConfig {
  double grad_tol = 1e-10;        // infinity norm threshold on the gradient
  int max_iter = 100;
  double backtrack_ratio = 0.5;   // in (0,1)
  double armijo_c = 1e-4;         // in (0,1)
  double divergence_norm = 1e6;   // iterate norm beyond which sustained growth
                                  // is treated as an unbounded objective
};

struct SolveReport {
  bool converged = false;
  int iterations = 0;
  double final_grad_norm = std::numeric_limits<double>::quiet_NaN();
  double objective = std::numeric_limits<double>::quiet_NaN();
};

// Evaluates the objective at x; fills grad, and hess when hess != nullptr.
// Returns the objective value. The objective is maximized, so hess must be
// (negative semi)definite at interior points.
using NewtonObjective = std::function<double(
    const Eigen::VectorXd& x, Eigen::VectorXd& grad, Eigen::MatrixXd* hess)>;

// log(sum_i exp(v_i)) computed as max + log(sum exp(v_i - max)).
double log_sum_exp(std::span<const double> v);

// Maximizes a smooth concave objective with ridge-repaired Newton steps and
// Armijo backtracking. Throws SolverError on an irreparably singular Hessian
// ("ill-conditioned system") or on a diverging objective ("unbounded
// objective"). An exhausted iteration budget returns a non-converged report.
std::pair<Eigen::VectorXd, SolveReport> newton_maximize(
    const NewtonObjective& objective, Eigen::VectorXd x0,
    const NewtonConfig& cfg = NewtonConfig{});

// P(chi^2_df > x). df = 0 is a point mass at zero.
double chi2_sf(double x, int df);

// Inverse standard normal CDF, absolute error below 1e-9 on (0,1).
double normal_quantile(double p);

// Solves A x = b for symmetric positive definite A, escalating a Levenberg
// ridge tau*I (tau from 1e-10 relative, growing x10) when the factorization
// fails. Throws SolverError("ill-conditioned system") beyond repair.
Eigen::VectorXd solve_spd_ridge(const Eigen::MatrixXd& A, const Eigen::VectorXd& b);

// Symmetrizes and floors the eigenvalues of A at floor_rel * max eigenvalue,
// then inverts. Used where a consistent covariance estimate may be
// numerically semidefinite.
Eigen::MatrixXd invert_psd_floored(const Eigen::MatrixXd& A, double floor_rel = 1e-12);

struct BfgsResult {
  Eigen::VectorXd x;
  bool converged = false;
  int iterations = 0;
  double grad_norm = std::numeric_limits<double>::quiet_NaN();
  double value = std::numeric_limits<double>::quiet_NaN();
};

// Minimizes a smooth function given value+gradient, BFGS with Armijo
// backtracking. Infinite values returned by fg are treated as out-of-domain
// and rejected by the line search.
BfgsResult bfgs_minimize(
    const std::function<double(const Eigen::VectorXd&, Eigen::VectorXd&)>& fg,
    Eigen::VectorXd x0, double grad_tol, int max_iter);

}  // namespace transport
