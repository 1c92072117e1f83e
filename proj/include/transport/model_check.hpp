#pragma once

#include <Eigen/Dense>

#include "transport/types.hpp"

namespace transport {

// W_rho estimate: Sigma_h + (n/m) J_phi Sigma J_phi', with Sigma_h and J_phi
// evaluated at (alpha_hat, phi_hat_star) and Sigma the updated covariance
// estimate from the fit.
Eigen::MatrixXd w_rho_hat(const FlexFit& fit, const SourceDataset& data,
                          const ShiftModel& model, const BasisSpec& basis,
                          const TargetSummary& summary);

// T = n h_n(alpha_hat, phi_hat_star)' Wrho^-1 h_n(alpha_hat, phi_hat_star),
// chi-squared with K+1-d_alpha degrees of freedom under a correctly
// specified shift model. df = 0 yields p_value 1 with a warning.
ModelCheckResult specification_test(const FlexFit& fit, const SourceDataset& data,
                                    const ShiftModel& model, const BasisSpec& basis,
                                    const TargetSummary& summary);

}  // namespace transport
