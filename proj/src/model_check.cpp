#include "transport/model_check.hpp"

#include "transport/basis_dsl.hpp"
#include "transport/errors.hpp"
#include "transport/flexible_reweighting.hpp"
#include "transport/kernels.hpp"
#include "transport/numerics.hpp"

namespace transport {

Eigen::MatrixXd w_rho_hat(const FlexFit& fit, const SourceDataset& data,
                          const ShiftModel& model, const BasisSpec& basis,
                          const TargetSummary& summary) {
  if (!fit.report.converged)
    throw SolverError("w_rho_hat requires a converged fit");
  const Eigen::Index n = data.n();
  const double nn = static_cast<double>(n);
  const int K = basis.K();

  const Eigen::MatrixXd B = evaluate_basis(basis, data);
  const Eigen::MatrixXd T = evaluate_terms(model.terms, data.X, data.var_names);
  Eigen::MatrixXd D(n, model.d_alpha());
  D.col(0).setOnes();
  D.rightCols(model.d_alpha() - 1) = T;

  // evaluated at the reported summary, not the optimized phi
  const HStack hs = make_hstack(B, D, fit.alpha, summary.phi_hat);
  const Eigen::VectorXd unif = Eigen::VectorXd::Constant(n, 1.0 / nn);
  const Eigen::MatrixXd sigma_h = kernels::weighted_gram(hs.H, unif);

  Eigen::MatrixXd j_phi = Eigen::MatrixXd::Zero(K + 1, K);
  j_phi.bottomRows(K).diagonal().setConstant(
      -kernels::sum({hs.pi.data(), static_cast<size_t>(hs.pi.size())}) / nn);

  const Eigen::MatrixXd sigma_upd =
      fit.Sigma_upd.size() ? fit.Sigma_upd : update_sigma(fit, data, basis);
  const double ratio = nn / static_cast<double>(summary.m);
  Eigen::MatrixXd w = sigma_h + ratio * j_phi * sigma_upd * j_phi.transpose();
  return 0.5 * (w + w.transpose());
}

ModelCheckResult specification_test(const FlexFit& fit, const SourceDataset& data,
                                    const ShiftModel& model, const BasisSpec& basis,
                                    const TargetSummary& summary) {
  const Eigen::MatrixXd w = w_rho_hat(fit, data, model, basis, summary);
  const Eigen::VectorXd hn =
      h_n(data, model, basis, fit.alpha, summary.phi_hat);
  Eigen::MatrixXd w_inv;
  try {
    w_inv = invert_psd_floored(w);
  } catch (const SolverError&) {
    throw SolverError("degenerate test weighting");
  }
  ModelCheckResult res;
  res.T = static_cast<double>(data.n()) * hn.dot(w_inv * hn);
  res.df = basis.K() + 1 - model.d_alpha();
  if (res.df == 0) {
    res.p_value = 1.0;
    res.warnings.push_back("just-identified: test uninformative");
  } else {
    res.p_value = chi2_sf(res.T, res.df);
  }
  return res;
}

}  // namespace transport
