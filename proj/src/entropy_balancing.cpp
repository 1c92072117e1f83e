#include "transport/entropy_balancing.hpp"

#include <cmath>
#include <cstring>
#include <string>

#include "transport/basis_dsl.hpp"
#include "transport/errors.hpp"
#include "transport/kernels.hpp"

namespace transport {

namespace {

std::span<const double> as_span(const Eigen::VectorXd& v) {
  return {v.data(), static_cast<size_t>(v.size())};
}

// Soft-max weights of the scores s, in place. Returns log sum exp(s).
double softmax(Eigen::VectorXd& s) {
  const double m = kernels::max_value(as_span(s));
  const double total = kernels::sum_exp_shifted(as_span(s), m);
  const Eigen::Index n = s.size();
#pragma omp parallel for schedule(static)
  for (Eigen::Index i = 0; i < n; ++i) s(i) = std::exp(s(i) - m) / total;
  return m + std::log(total);
}

struct Standardization {
  Eigen::VectorXd center;  // source column means
  Eigen::VectorXd scale;   // source column SDs, constant columns pinned to 1
};

Standardization standardize_columns(const Eigen::Ref<const Eigen::MatrixXd>& B) {
  const Eigen::Index n = B.rows();
  const Eigen::Index k = B.cols();
  Standardization st;
  const Eigen::VectorXd ones = Eigen::VectorXd::Constant(n, 1.0 / static_cast<double>(n));
  st.center = kernels::weighted_column_sum(B, ones);
  st.scale.resize(k);
  for (Eigen::Index j = 0; j < k; ++j) {
    const Eigen::VectorXd centered = B.col(j).array() - st.center(j);
    const double var = kernels::dot(as_span(centered), as_span(centered)) /
                       static_cast<double>(n);
    st.scale(j) = var > 1e-24 ? std::sqrt(var) : 1.0;
  }
  return st;
}

// Dual solve in standardized coordinates. Z must hold rows (B_i - phi_hat)
// already divided by the column scales. The objective is normalized by n so
// the gradient equals the balance residual sum_i w_i z_i directly.
struct DualSolution {
  Eigen::VectorXd lambda_std;
  Eigen::VectorXd p;
  SolveReport report;
};

DualSolution solve_dual_standardized(const Eigen::MatrixXd& Z, const NewtonConfig& cfg) {
  const Eigen::Index n = Z.rows();
  const Eigen::Index k = Z.cols();
  Eigen::VectorXd scores(n), weights(n);
  auto objective = [&](const Eigen::VectorXd& lam, Eigen::VectorXd& grad,
                       Eigen::MatrixXd* hess) -> double {
    kernels::row_products(Z, lam, scores);
    weights = scores;
    const double lse = softmax(weights);
    grad = -kernels::weighted_column_sum(Z, weights);
    if (hess) {
      const Eigen::VectorXd mean_z = -grad;
      *hess = -(kernels::weighted_gram(Z, weights) - mean_z * mean_z.transpose());
    }
    return -lse;
  };

  DualSolution sol;
  try {
    auto [lam, report] = newton_maximize(objective, Eigen::VectorXd::Zero(k), cfg);
    sol.lambda_std = std::move(lam);
    sol.report = report;
  } catch (const SolverError& err) {
    if (std::strstr(err.what(), "unbounded") != nullptr)
      throw SolverError(
          "infeasible calibration: target moments outside the convex hull of the "
          "source basis values");
    if (std::strstr(err.what(), "ill-conditioned") != nullptr)
      throw SolverError("ill-conditioned basis: standardized columns are collinear");
    throw;
  }
  kernels::row_products(Z, sol.lambda_std, scores);
  sol.p = scores;
  softmax(sol.p);
  return sol;
}

}  // namespace

DualEval eb_dual_objective(const Eigen::VectorXd& lambda,
                           const Eigen::Ref<const Eigen::MatrixXd>& B,
                           const Eigen::Ref<const Eigen::VectorXd>& phi_hat) {
  const Eigen::Index n = B.rows();
  if (B.cols() != lambda.size() || B.cols() != phi_hat.size())
    throw InputError("eb_dual_objective: dimension mismatch");
  const double nn = static_cast<double>(n);
  const Eigen::MatrixXd Z = B.rowwise() - phi_hat.transpose();
  Eigen::VectorXd scores(n);
  kernels::row_products(Z, lambda, scores);
  Eigen::VectorXd w = scores;
  const double lse = softmax(w);
  DualEval eval;
  eval.value = -nn * lse;
  const Eigen::VectorXd mean_z = kernels::weighted_column_sum(Z, w);
  eval.gradient = -nn * mean_z;
  eval.hessian = -nn * (kernels::weighted_gram(Z, w) - mean_z * mean_z.transpose());
  return eval;
}

EBWeights solve_eb_weights(const Eigen::Ref<const Eigen::MatrixXd>& B,
                           const Eigen::Ref<const Eigen::VectorXd>& phi_hat,
                           const NewtonConfig& cfg) {
  const Eigen::Index n = B.rows();
  const Eigen::Index k = B.cols();
  if (phi_hat.size() != k) throw InputError("solve_eb_weights: dimension mismatch");

  EBWeights out;
  if (n <= k)
    out.warnings.push_back("balance constraints >= observations (n <= K)");

  const Standardization st = standardize_columns(B);
  Eigen::MatrixXd Z(n, k);
  for (Eigen::Index j = 0; j < k; ++j)
    Z.col(j) = (B.col(j).array() - phi_hat(j)) / st.scale(j);

  DualSolution sol = solve_dual_standardized(Z, cfg);
  out.lambda = sol.lambda_std.cwiseQuotient(st.scale);
  out.p = std::move(sol.p);
  out.report = sol.report;
  return out;
}

EBWeights solve_eb_weights(const SourceDataset& data, const BasisSpec& basis,
                           const TargetSummary& summary) {
  validate_pairing(basis, summary);
  const Eigen::MatrixXd B = evaluate_basis(basis, data);
  return solve_eb_weights(B, summary.phi_hat);
}

EBFit eb_estimate(const SourceDataset& data, const BasisSpec& basis,
                  const TargetSummary& summary) {
  validate_pairing(basis, summary);
  const Eigen::MatrixXd B = evaluate_basis(basis, data);
  EBWeights w = solve_eb_weights(B, summary.phi_hat);
  if (!w.report.converged)
    throw SolverError("entropy balancing did not converge within the iteration budget");
  EBFit fit;
  fit.lambda = std::move(w.lambda);
  fit.p = std::move(w.p);
  fit.report = w.report;
  fit.warnings = std::move(w.warnings);
  fit.mu = kernels::dot({fit.p.data(), static_cast<size_t>(fit.p.size())},
                        {data.y.data(), static_cast<size_t>(data.y.size())});
  return fit;
}

EBVariance eb_variance_components(const Eigen::Ref<const Eigen::VectorXd>& p,
                                  double mu,
                                  const Eigen::Ref<const Eigen::MatrixXd>& B,
                                  const Eigen::Ref<const Eigen::VectorXd>& y,
                                  const Eigen::Ref<const Eigen::VectorXd>& phi_hat,
                                  double n_over_m) {
  const Eigen::Index n = B.rows();
  const double nn = static_cast<double>(n);
  EBVariance out;
  out.Sigma_EB = kernels::weighted_gram(B, p) - phi_hat * phi_hat.transpose();

  const Eigen::MatrixXd C = B.rowwise() - phi_hat.transpose();
  const Eigen::MatrixXd balanced_cov = kernels::weighted_gram(C, p);
  Eigen::LLT<Eigen::MatrixXd> llt(balanced_cov);
  if (llt.info() != Eigen::Success)
    throw SolverError("degenerate balanced covariance");
  const Eigen::VectorXd py = p.cwiseProduct(y);
  out.omega = llt.solve(kernels::weighted_column_sum(C, py));

  Eigen::VectorXd cw(n);
  kernels::row_products(C, out.omega, cw);
  Eigen::VectorXd u(n);
#pragma omp parallel for schedule(static)
  for (Eigen::Index i = 0; i < n; ++i) {
    const double pi_i = nn * p(i);
    u(i) = pi_i * y(i) - mu - mu * (pi_i - 1.0) - pi_i * cw(i);
  }
  const double u_bar = kernels::sum(as_span(u)) / nn;
  Eigen::VectorXd uc = u.array() - u_bar;
  const double var_u = kernels::dot(as_span(uc), as_span(uc)) / nn;
  out.sigma2 = var_u + n_over_m * out.omega.dot(out.Sigma_EB * out.omega);
  out.se = std::sqrt(out.sigma2 / nn);
  return out;
}

EBVariance eb_variance(const EBFit& fit, const SourceDataset& data,
                       const BasisSpec& basis, const TargetSummary& summary) {
  if (!fit.report.converged) throw SolverError("eb_variance requires a converged fit");
  const Eigen::MatrixXd B = evaluate_basis(basis, data);
  const double n_over_m = static_cast<double>(data.n()) / static_cast<double>(summary.m);
  return eb_variance_components(fit.p, fit.mu, B, data.y, summary.phi_hat, n_over_m);
}

EBFit eb_fit(const SourceDataset& data, const BasisSpec& basis,
             const TargetSummary& summary) {
  EBFit fit = eb_estimate(data, basis, summary);
  EBVariance var = eb_variance(fit, data, basis, summary);
  fit.Sigma_EB = std::move(var.Sigma_EB);
  fit.omega = std::move(var.omega);
  fit.sigma2 = var.sigma2;
  return fit;
}

AugEBFit augmented_eb_estimate(const SourceDataset& data, const BasisSpec& basis,
                               const TargetSummary& summary, const Eigen::MatrixXd& V) {
  validate_pairing(basis, summary);
  const Eigen::MatrixXd B = evaluate_basis(basis, data);
  const Eigen::Index n = B.rows();
  const Eigen::Index k = B.cols();
  if (V.rows() != k || V.cols() != k) throw InputError("augmented_eb_estimate: V has wrong size");
  {
    Eigen::LLT<Eigen::MatrixXd> chk(0.5 * (V + V.transpose()));
    if (chk.info() != Eigen::Success)
      throw InputError("augmented_eb_estimate: V must be positive definite");
  }
  const double nn = static_cast<double>(n);
  const double mm = static_cast<double>(summary.m);

  const Standardization st = standardize_columns(B);
  Eigen::MatrixXd Bs(n, k);
  for (Eigen::Index j = 0; j < k; ++j) Bs.col(j) = (B.col(j).array() - st.center(j)) / st.scale(j);
  const Eigen::VectorXd phi_star_s =
      (summary.phi_hat - st.center).cwiseQuotient(st.scale);
  const Eigen::MatrixXd v_std =
      st.scale.cwiseInverse().asDiagonal() * V * st.scale.cwiseInverse().asDiagonal();
  const Eigen::MatrixXd v_inv = invert_psd_floored(v_std);

  // Profile the weights out for fixed phi: the inner dual over lambda is the
  // plain balancing dual centered at phi. The outer problem in phi is smooth
  // with gradient lambda(phi) - (m/n) Vinv (phi* - phi) and Hessian
  // Cov_w(B)^{-1} + (m/n) Vinv, both per observation.
  NewtonConfig inner_cfg;
  Eigen::VectorXd lambda_warm = Eigen::VectorXd::Zero(k);
  auto inner_solve = [&](const Eigen::VectorXd& phi) -> DualSolution {
    Eigen::MatrixXd Z = Bs.rowwise() - phi.transpose();
    const Eigen::Index nrow = Z.rows();
    Eigen::VectorXd scores(nrow), weights(nrow);
    auto objective = [&](const Eigen::VectorXd& lam, Eigen::VectorXd& grad,
                         Eigen::MatrixXd* hess) -> double {
      kernels::row_products(Z, lam, scores);
      weights = scores;
      const double lse = softmax(weights);
      grad = -kernels::weighted_column_sum(Z, weights);
      if (hess) {
        const Eigen::VectorXd mean_z = -grad;
        *hess = -(kernels::weighted_gram(Z, weights) - mean_z * mean_z.transpose());
      }
      return -lse;
    };
    DualSolution sol;
    auto [lam, rep] = newton_maximize(objective, lambda_warm, inner_cfg);
    sol.lambda_std = std::move(lam);
    sol.report = rep;
    kernels::row_products(Z, sol.lambda_std, scores);
    sol.p = scores;
    softmax(sol.p);
    return sol;
  };

  auto outer = [&](const Eigen::VectorXd& phi, Eigen::VectorXd& grad,
                   Eigen::MatrixXd* hess) -> double {
    DualSolution sol;
    try {
      sol = inner_solve(phi);
    } catch (const SolverError&) {
      // phi probed outside the feasible region; reject the step
      return std::numeric_limits<double>::quiet_NaN();
    }
    if (!sol.report.converged) return std::numeric_limits<double>::quiet_NaN();
    lambda_warm = sol.lambda_std;
    const Eigen::VectorXd diff = phi_star_s - phi;
    // outer Newton maximizes -F(phi)/n, F the profiled entropy plus penalty
    const double value = -sol.report.objective - 0.5 * (mm / nn) * diff.dot(v_inv * diff);
    grad = -(sol.lambda_std - (mm / nn) * (v_inv * diff));
    if (hess) {
      Eigen::MatrixXd Z = Bs.rowwise() - phi.transpose();
      const Eigen::VectorXd mean_z = kernels::weighted_column_sum(Z, sol.p);
      const Eigen::MatrixXd cov =
          kernels::weighted_gram(Z, sol.p) - mean_z * mean_z.transpose();
      *hess = -(invert_psd_floored(cov) + (mm / nn) * v_inv);
    }
    return value;
  };

  NewtonConfig outer_cfg;
  outer_cfg.grad_tol = 1e-10;
  AugEBFit out;
  try {
    auto [phi_sol, report] = newton_maximize(outer, phi_star_s, outer_cfg);
    DualSolution sol = inner_solve(phi_sol);
    out.lambda_eb = sol.lambda_std.cwiseQuotient(st.scale);
    out.phi_eb = st.center + st.scale.cwiseProduct(phi_sol);
    out.p = std::move(sol.p);
    out.report = report;
  } catch (const SolverError& err) {
    if (std::strstr(err.what(), "unbounded") != nullptr ||
        std::strstr(err.what(), "not finite at start") != nullptr)
      throw SolverError(
          "infeasible calibration: target moments outside the convex hull of the "
          "source basis values");
    throw;
  }
  out.mu = kernels::dot({out.p.data(), static_cast<size_t>(out.p.size())},
                        {data.y.data(), static_cast<size_t>(data.y.size())});
  return out;
}

FitDiagnostics weight_diagnostics(const Eigen::VectorXd& w, const SolveReport& report,
                                  const std::vector<std::string>& warnings) {
  FitDiagnostics d;
  d.iterations = report.iterations;
  d.grad_norm = report.final_grad_norm;
  d.weight_min = w.minCoeff();
  d.weight_max = w.maxCoeff();
  d.ess = 1.0 / w.squaredNorm();
  d.warnings = warnings;
  return d;
}

EstimateReport make_estimate_report(double estimate, double se, std::int64_t n,
                                    std::int64_t m, std::string method,
                                    FitDiagnostics diagnostics) {
  EstimateReport rep;
  rep.estimate = estimate;
  rep.se = se;
  const double z = normal_quantile(0.975);
  rep.ci95 = {estimate - z * se, estimate + z * se};
  rep.n = n;
  rep.m = m;
  rep.method = std::move(method);
  rep.diagnostics = std::move(diagnostics);
  return rep;
}

}  // namespace transport
