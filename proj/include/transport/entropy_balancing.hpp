#pragma once

#include <Eigen/Dense>
#include <vector>

#include "transport/numerics.hpp"
#include "transport/types.hpp"

namespace transport {

struct DualEval {
  double value;
  Eigen::VectorXd gradient;
  Eigen::MatrixXd hessian;
};

// Dual of the entropy balancing problem at lambda:
//   value    = -n log sum_i exp[lambda' (B_i - phi_hat)]
//   gradient = -n sum_i w_i (B_i - phi_hat)
//   hessian  = -n [ sum_i w_i (B_i - phi_hat)^o2 - (sum_i w_i (B_i - phi_hat))^o2 ]
// with w the soft-max weights of lambda' (B_i - phi_hat).
DualEval eb_dual_objective(const Eigen::VectorXd& lambda,
                           const Eigen::Ref<const Eigen::MatrixXd>& B,
                           const Eigen::Ref<const Eigen::VectorXd>& phi_hat);

struct EBWeights {
  Eigen::VectorXd lambda;  // original basis scale
  Eigen::VectorXd p;       // positive, sums to one
  SolveReport report;
  std::vector<std::string> warnings;
};

// Solves the dual on internally standardized basis columns and maps lambda
// back. Throws SolverError("infeasible calibration ...") when the target
// moments sit outside the convex hull of the source basis values, and
// SolverError("ill-conditioned basis ...") when standardized columns are
// collinear beyond ridge repair.
EBWeights solve_eb_weights(const Eigen::Ref<const Eigen::MatrixXd>& B,
                           const Eigen::Ref<const Eigen::VectorXd>& phi_hat,
                           const NewtonConfig& cfg = NewtonConfig{});
EBWeights solve_eb_weights(const SourceDataset& data, const BasisSpec& basis,
                           const TargetSummary& summary);

// Point estimate mu = sum_i p_i y_i. Variance fields are left empty; see
// eb_variance.
EBFit eb_estimate(const SourceDataset& data, const BasisSpec& basis,
                  const TargetSummary& summary);

struct EBVariance {
  Eigen::MatrixXd Sigma_EB;  // weighted second-moment estimate of Sigma*
  Eigen::VectorXd omega;
  double sigma2 = 0.0;
  double se = 0.0;
};

EBVariance eb_variance(const EBFit& fit, const SourceDataset& data,
                       const BasisSpec& basis, const TargetSummary& summary);
EBVariance eb_variance_components(const Eigen::Ref<const Eigen::VectorXd>& p,
                                  double mu,
                                  const Eigen::Ref<const Eigen::MatrixXd>& B,
                                  const Eigen::Ref<const Eigen::VectorXd>& y,
                                  const Eigen::Ref<const Eigen::VectorXd>& phi_hat,
                                  double n_over_m);

// Convenience: estimate, variance, and the reporting fields in one call.
EBFit eb_fit(const SourceDataset& data, const BasisSpec& basis,
             const TargetSummary& summary);

// Variant that augments the objective with the summary log-likelihood and
// optimizes the matched moment vector jointly with the weights.
struct AugEBFit {
  Eigen::VectorXd lambda_eb;
  Eigen::VectorXd phi_eb;
  Eigen::VectorXd p;
  double mu = 0.0;
  SolveReport report;
};

AugEBFit augmented_eb_estimate(const SourceDataset& data, const BasisSpec& basis,
                               const TargetSummary& summary,
                               const Eigen::MatrixXd& V);

EstimateReport make_estimate_report(double estimate, double se, std::int64_t n,
                                    std::int64_t m, std::string method,
                                    FitDiagnostics diagnostics);
FitDiagnostics weight_diagnostics(const Eigen::VectorXd& w, const SolveReport& report,
                                  const std::vector<std::string>& warnings);

}  // namespace transport
