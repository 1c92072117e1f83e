#pragma once

#include <Eigen/Dense>
#include <vector>

#include "transport/numerics.hpp"
#include "transport/types.hpp"

namespace transport {

// Shift-model design: log pi(x; alpha) = alpha_0 + T.row(i) . alpha_tail.
struct ShiftDesign {
  Eigen::MatrixXd T;  // n x (d_alpha - 1)

  Eigen::VectorXd pi(const Eigen::VectorXd& alpha) const;
  // rows: dpi_i/dalpha = pi_i * (1, T.row(i))
  Eigen::MatrixXd dpi_dalpha(const Eigen::VectorXd& alpha) const;
};

ShiftDesign shift_design(const ShiftModel& model, const SourceDataset& data);

// Stacked estimating-function rows h(x_i; alpha, phi) =
// (pi_i - 1, pi_i (Phi(x_i) - phi)')' with the pi values cached.
struct HStack {
  Eigen::MatrixXd H;   // n x (K+1)
  Eigen::VectorXd pi;  // n
};

HStack make_hstack(const Eigen::Ref<const Eigen::MatrixXd>& B,
                   const Eigen::Ref<const Eigen::MatrixXd>& D,
                   const Eigen::VectorXd& alpha, const Eigen::VectorXd& phi);

// n^-1 sum_i h(x_i; alpha, phi)
Eigen::VectorXd h_n(const SourceDataset& data, const ShiftModel& model,
                    const BasisSpec& basis, const Eigen::VectorXd& alpha,
                    const Eigen::VectorXd& phi);

// Gauss-Newton minimizer of |h_n(alpha, phi_hat)|^2 in standardized
// coordinates, with random restarts if stationarity fails. Throws
// SolverError("initial estimator failed") when no restart reaches it.
Eigen::VectorXd initial_alpha(const SourceDataset& data, const ShiftModel& model,
                              const BasisSpec& basis, const TargetSummary& summary);

// Sigma^(0) = n^-1 sum_i pi(x_i; alpha0) Phi_i Phi_i' - phi_hat phi_hat',
// ridge-repaired to positive definite. The model is needed to evaluate pi.
Eigen::MatrixXd initial_sigma(const SourceDataset& data, const ShiftModel& model,
                              const BasisSpec& basis, const Eigen::VectorXd& alpha0,
                              const TargetSummary& summary);

struct ProfiledEval {
  double value = 0.0;  // ell_V at the inner maximizer
  Eigen::VectorXd grad_alpha;
  Eigen::VectorXd grad_phi;
  Eigen::VectorXd eta;  // inner maximizer
  Eigen::VectorXd q;    // weights at the inner maximizer
  SolveReport inner_report;
};

// Value and envelope gradient of ell_V(eta*(alpha,phi), alpha, phi).
// Throws SolverError("inner maximization failed") when the inner problem
// cannot be solved at this point.
ProfiledEval profiled_objective(const Eigen::VectorXd& alpha,
                                const Eigen::VectorXd& phi,
                                const SourceDataset& data, const ShiftModel& model,
                                const BasisSpec& basis, const TargetSummary& summary,
                                const Eigen::MatrixXd& V,
                                const Eigen::VectorXd* eta_warm = nullptr);

struct SaddlePoint {
  Eigen::VectorXd eta;    // K+1
  Eigen::VectorXd alpha;  // d_alpha
  Eigen::VectorXd phi;    // K
  Eigen::VectorXd q;      // n
  SolveReport report;
};

// min over (alpha, phi), max over eta of ell_V, started from eta = 0,
// alpha = alpha0, phi = phi_hat. Quasi-Newton outer phase on the profiled
// objective followed by Newton refinement of the joint stationarity system.
SaddlePoint saddle_solve(const SourceDataset& data, const ShiftModel& model,
                         const BasisSpec& basis, const TargetSummary& summary,
                         const Eigen::MatrixXd& V, const Eigen::VectorXd& alpha0);
// Same, computing the initial estimator internally.
SaddlePoint saddle_solve(const SourceDataset& data, const ShiftModel& model,
                         const BasisSpec& basis, const TargetSummary& summary,
                         const Eigen::MatrixXd& V);

// Full pipeline: initial estimators, saddle solve with V = Sigma^(0),
// mu = sum_i q_i pi(x_i; alpha) y_i. Variance fields are filled by
// flex_variance.
FlexFit flex_estimate(const SourceDataset& data, const ShiftModel& model,
                      const BasisSpec& basis, const TargetSummary& summary);

// Sigma = sum_i q_i pi_i Phi_i Phi_i' - phi phi', ridge-repaired.
Eigen::MatrixXd update_sigma(const FlexFit& fit, const SourceDataset& data,
                             const BasisSpec& basis);

struct FlexVariance {
  double sigma2 = 0.0;
  double se = 0.0;
  double sigma2_w = 0.0;        // leading var{w(X) Y} term
  bool correction_nonneg = true;  // subtracted quadratic form was >= 0
};

FlexVariance flex_variance(const FlexFit& fit, const SourceDataset& data,
                           const ShiftModel& model, const BasisSpec& basis,
                           const TargetSummary& summary);

// Convenience: estimate plus variance.
FlexFit flex_fit(const SourceDataset& data, const ShiftModel& model,
                 const BasisSpec& basis, const TargetSummary& summary);

}  // namespace transport
