#include "transport/flexible_reweighting.hpp"

#include <cmath>
#include <cstring>
#include <random>

#include "transport/basis_dsl.hpp"
#include "transport/errors.hpp"
#include "transport/kernels.hpp"

namespace transport {

namespace {

std::span<const double> as_span(const Eigen::VectorXd& v) {
  return {v.data(), static_cast<size_t>(v.size())};
}

double softmax(Eigen::VectorXd& s) {
  const double m = kernels::max_value(as_span(s));
  const double total = kernels::sum_exp_shifted(as_span(s), m);
  const Eigen::Index n = s.size();
#pragma omp parallel for schedule(static)
  for (Eigen::Index i = 0; i < n; ++i) s(i) = std::exp(s(i) - m) / total;
  return m + std::log(total);
}

struct Standardization {
  Eigen::VectorXd center;
  Eigen::VectorXd scale;
};

Standardization standardize_columns(const Eigen::Ref<const Eigen::MatrixXd>& M) {
  const Eigen::Index n = M.rows();
  Standardization st;
  const Eigen::VectorXd ones = Eigen::VectorXd::Constant(n, 1.0 / static_cast<double>(n));
  st.center = kernels::weighted_column_sum(M, ones);
  st.scale.resize(M.cols());
  for (Eigen::Index j = 0; j < M.cols(); ++j) {
    const Eigen::VectorXd centered = M.col(j).array() - st.center(j);
    const double var =
        kernels::dot(as_span(centered), as_span(centered)) / static_cast<double>(n);
    st.scale(j) = var > 1e-24 ? std::sqrt(var) : 1.0;
  }
  return st;
}

// Problem matrices in one coordinate system. D carries the intercept column.
struct FlexCore {
  Eigen::MatrixXd B;         // n x K
  Eigen::MatrixXd D;         // n x d_alpha
  Eigen::VectorXd phi_star;  // K
  Eigen::MatrixXd Vinv;      // K x K
  double n = 0.0;
  double m = 0.0;

  int K() const { return static_cast<int>(B.cols()); }
  int d() const { return static_cast<int>(D.cols()); }
};

Eigen::VectorXd eval_pi(const Eigen::Ref<const Eigen::MatrixXd>& D,
                        const Eigen::VectorXd& alpha) {
  Eigen::VectorXd scores(D.rows());
  kernels::row_products(D, alpha, scores);
  const Eigen::Index n = scores.size();
#pragma omp parallel for schedule(static)
  for (Eigen::Index i = 0; i < n; ++i) scores(i) = std::exp(scores(i));
  return scores;
}

struct InnerSolution {
  Eigen::VectorXd eta;
  Eigen::VectorXd q;
  double lse = 0.0;  // log sum exp at the maximizer
  SolveReport report;
};

// Maximizes -log sum_i exp(eta' h_i); the normalized gradient is
// -sum_i q_i h_i, so the balance constraint tolerance applies directly.
InnerSolution solve_inner(const Eigen::MatrixXd& H, Eigen::VectorXd eta_warm,
                          double grad_tol = 1e-10) {
  const Eigen::Index n = H.rows();
  Eigen::VectorXd scores(n), weights(n);
  auto objective = [&](const Eigen::VectorXd& eta, Eigen::VectorXd& grad,
                       Eigen::MatrixXd* hess) -> double {
    kernels::row_products(H, eta, scores);
    weights = scores;
    const double lse = softmax(weights);
    grad = -kernels::weighted_column_sum(H, weights);
    if (hess) {
      const Eigen::VectorXd mean_h = -grad;
      *hess = -(kernels::weighted_gram(H, weights) - mean_h * mean_h.transpose());
    }
    return -lse;
  };
  NewtonConfig cfg;
  cfg.grad_tol = grad_tol;
  InnerSolution sol;
  auto [eta, report] = newton_maximize(objective, std::move(eta_warm), cfg);
  sol.eta = std::move(eta);
  sol.report = report;
  kernels::row_products(H, sol.eta, scores);
  sol.q = scores;
  sol.lse = softmax(sol.q);
  return sol;
}

struct CoreEval {
  double value = 0.0;  // spec-scaled ell_V
  Eigen::VectorXd grad_alpha, grad_phi;
  Eigen::VectorXd eta, q;
  Eigen::VectorXd pi;
  SolveReport inner_report;
};

// Profiled objective and envelope gradient; throws SolverError when the inner
// maximization diverges (0 outside the hull of the h rows) or stalls.
CoreEval profiled_eval(const FlexCore& core, const Eigen::VectorXd& alpha,
                       const Eigen::VectorXd& phi, const Eigen::VectorXd& eta_warm) {
  const Eigen::Index n = core.B.rows();
  CoreEval out;
  out.pi = eval_pi(core.D, alpha);
  if (!out.pi.allFinite()) throw SolverError("inner maximization failed: pi overflow");
  Eigen::MatrixXd H(n, core.K() + 1);
  H.col(0) = out.pi.array() - 1.0;
  for (int k = 0; k < core.K(); ++k)
    H.col(k + 1) = out.pi.array() * (core.B.col(k).array() - phi(k));

  InnerSolution inner = solve_inner(H, eta_warm);
  if (!inner.report.converged) throw SolverError("inner maximization failed");
  out.eta = std::move(inner.eta);
  out.q = std::move(inner.q);
  out.inner_report = inner.report;

  const Eigen::VectorXd diff = core.phi_star - phi;
  out.value = -core.n * inner.lse + 0.5 * core.m * diff.dot(core.Vinv * diff);

  // coef_i = eta_0 + eta_tail . (B_i - phi)
  Eigen::VectorXd coef(n);
  const Eigen::VectorXd eta_tail = out.eta.tail(core.K());
  Eigen::VectorXd bshift(n);
  kernels::row_products(core.B, eta_tail, bshift);
  const double phi_eta = phi.dot(eta_tail);
#pragma omp parallel for schedule(static)
  for (Eigen::Index i = 0; i < n; ++i) coef(i) = out.eta(0) + bshift(i) - phi_eta;

  const Eigen::VectorXd wq = out.q.cwiseProduct(out.pi);
  out.grad_alpha = -core.n * kernels::weighted_column_sum(core.D, wq.cwiseProduct(coef));
  const double qpi = kernels::sum(as_span(wq));
  out.grad_phi = core.n * qpi * eta_tail - core.m * (core.Vinv * diff);
  return out;
}

// Joint stationarity refinement: damped Newton on the gradient of
// ell_V / n over (eta, alpha, phi) with the analytic Hessian.
struct PolishState {
  Eigen::VectorXd eta, alpha, phi;
  double grad_norm = std::numeric_limits<double>::infinity();
  int iterations = 0;
};

Eigen::VectorXd stationarity_gradient(const FlexCore& core, const Eigen::VectorXd& eta,
                                      const Eigen::VectorXd& alpha,
                                      const Eigen::VectorXd& phi,
                                      Eigen::MatrixXd* hess) {
  const Eigen::Index n = core.B.rows();
  const int K = core.K();
  const int d = core.d();
  const int P = (K + 1) + d + K;

  const Eigen::VectorXd pi = eval_pi(core.D, alpha);
  if (!pi.allFinite()) throw SolverError("pi overflow");
  Eigen::MatrixXd H(n, K + 1);
  H.col(0) = pi.array() - 1.0;
  for (int k = 0; k < K; ++k) H.col(k + 1) = pi.array() * (core.B.col(k).array() - phi(k));

  Eigen::VectorXd q(n);
  kernels::row_products(H, eta, q);
  softmax(q);

  const Eigen::VectorXd eta_tail = eta.tail(K);
  Eigen::VectorXd coef(n);
  {
    Eigen::VectorXd bshift(n);
    kernels::row_products(core.B, eta_tail, bshift);
    const double phi_eta = phi.dot(eta_tail);
#pragma omp parallel for schedule(static)
    for (Eigen::Index i = 0; i < n; ++i) coef(i) = eta(0) + bshift(i) - phi_eta;
  }

  // per-row gradient of s_i = eta' h_i over (eta, alpha, phi)
  Eigen::MatrixXd S(n, P);
  S.leftCols(K + 1) = H;
  const Eigen::VectorXd picoef = pi.cwiseProduct(coef);
  for (int j = 0; j < d; ++j)
    S.col(K + 1 + j) = picoef.cwiseProduct(core.D.col(j));
  for (int k = 0; k < K; ++k) S.col(K + 1 + d + k) = -eta_tail(k) * pi;

  const Eigen::VectorXd mean_s = kernels::weighted_column_sum(S, q);
  const Eigen::VectorXd diff = core.phi_star - phi;
  const double ratio = core.m / core.n;

  Eigen::VectorXd grad = -mean_s;
  grad.tail(K) -= ratio * (core.Vinv * diff);

  if (hess) {
    const Eigen::MatrixXd G =
        kernels::weighted_gram(S, q) - mean_s * mean_s.transpose();
    Eigen::MatrixXd A2 = Eigen::MatrixXd::Zero(P, P);
    const Eigen::VectorXd qpi = q.cwiseProduct(pi);
    // (eta, alpha): sum_i q_i pi_i c_i D_i with c_i = (1, B_i - phi)
    Eigen::MatrixXd C(n, K + 1);
    C.col(0).setOnes();
    for (int k = 0; k < K; ++k) C.col(k + 1) = core.B.col(k).array() - phi(k);
    A2.block(0, K + 1, K + 1, d) = kernels::weighted_cross(C, core.D, qpi);
    // (eta, phi): sum_i q_i [0; -pi_i I]
    const double sum_qpi = kernels::sum(as_span(qpi));
    A2.block(1, K + 1 + d, K, K).diagonal().setConstant(-sum_qpi);
    // (alpha, alpha): sum_i q_i pi_i coef_i D_i' D_i
    A2.block(K + 1, K + 1, d, d) =
        kernels::weighted_gram(core.D, qpi.cwiseProduct(coef));
    // (alpha, phi): -(sum_i q_i pi_i D_i') eta_tail'
    A2.block(K + 1, K + 1 + d, d, K) =
        -kernels::weighted_column_sum(core.D, qpi) * eta_tail.transpose();
    Eigen::MatrixXd A2sym = A2 + A2.transpose();
    A2sym.block(K + 1, K + 1, d, d) = A2.block(K + 1, K + 1, d, d);  // diagonal block once
    *hess = -(G + A2sym);
    hess->block(K + 1 + d, K + 1 + d, K, K) += ratio * core.Vinv;
  }
  return grad;
}

PolishState polish_stationarity(const FlexCore& core, Eigen::VectorXd eta,
                                Eigen::VectorXd alpha, Eigen::VectorXd phi,
                                int max_iter) {
  PolishState st{std::move(eta), std::move(alpha), std::move(phi)};
  const int K = core.K();
  const int d = core.d();
  Eigen::MatrixXd hess;
  Eigen::VectorXd grad;
  try {
    grad = stationarity_gradient(core, st.eta, st.alpha, st.phi, &hess);
  } catch (const SolverError&) {
    return st;
  }
  st.grad_norm = grad.lpNorm<Eigen::Infinity>();

  for (int iter = 0; iter < max_iter; ++iter) {
    if (st.grad_norm <= 1e-13) break;
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(hess);
    const Eigen::VectorXd step = lu.solve(-grad);
    if (!step.allFinite()) break;

    double t = 1.0;
    bool accepted = false;
    Eigen::VectorXd eta_new, alpha_new, phi_new, grad_new;
    Eigen::MatrixXd hess_new;
    while (t > 1e-12) {
      eta_new = st.eta + t * step.head(K + 1);
      alpha_new = st.alpha + t * step.segment(K + 1, d);
      phi_new = st.phi + t * step.tail(K);
      try {
        grad_new = stationarity_gradient(core, eta_new, alpha_new, phi_new, &hess_new);
      } catch (const SolverError&) {
        t *= 0.5;
        continue;
      }
      const double norm_new = grad_new.lpNorm<Eigen::Infinity>();
      if (norm_new < st.grad_norm * (1.0 - 1e-4 * t)) {
        st.eta = std::move(eta_new);
        st.alpha = std::move(alpha_new);
        st.phi = std::move(phi_new);
        grad = std::move(grad_new);
        hess = std::move(hess_new);
        st.grad_norm = norm_new;
        st.iterations = iter + 1;
        accepted = true;
        break;
      }
      t *= 0.5;
    }
    if (!accepted) break;
  }
  return st;
}

struct CoreSaddle {
  Eigen::VectorXd eta, alpha, phi, q;
  SolveReport report;
};

// BFGS on the profiled objective, then Newton refinement of the joint
// first-order system, then a final exact inner solve.
CoreSaddle solve_saddle_core(const FlexCore& core, const Eigen::VectorXd& alpha0,
                             int outer_budget = 500) {
  const int K = core.K();
  const int d = core.d();
  Eigen::VectorXd eta_warm = Eigen::VectorXd::Zero(K + 1);

  auto fg = [&](const Eigen::VectorXd& theta, Eigen::VectorXd& grad) -> double {
    const Eigen::VectorXd alpha = theta.head(d);
    const Eigen::VectorXd phi = theta.tail(K);
    CoreEval ev;
    try {
      ev = profiled_eval(core, alpha, phi, eta_warm);
    } catch (const SolverError&) {
      grad.setConstant(theta.size(), std::numeric_limits<double>::quiet_NaN());
      return std::numeric_limits<double>::infinity();
    }
    eta_warm = ev.eta;
    grad.resize(theta.size());
    grad.head(d) = ev.grad_alpha / core.n;
    grad.tail(K) = ev.grad_phi / core.n;
    return ev.value / core.n;
  };

  Eigen::VectorXd theta0(d + K);
  theta0.head(d) = alpha0;
  theta0.tail(K) = core.phi_star;
  BfgsResult bfgs = bfgs_minimize(fg, theta0, 1e-7, outer_budget);

  PolishState polished = polish_stationarity(
      core, eta_warm, bfgs.x.head(d), bfgs.x.tail(K), 60);

  CoreSaddle out;
  out.alpha = polished.alpha;
  out.phi = polished.phi;

  // exact inner solve at the refined (alpha, phi) pins the balance constraint
  const Eigen::VectorXd pi = eval_pi(core.D, out.alpha);
  Eigen::MatrixXd H(core.B.rows(), K + 1);
  H.col(0) = pi.array() - 1.0;
  for (int k = 0; k < K; ++k)
    H.col(k + 1) = pi.array() * (core.B.col(k).array() - out.phi(k));
  InnerSolution inner = solve_inner(H, polished.eta);
  out.eta = inner.eta;
  out.q = inner.q;

  CoreEval final_ev = profiled_eval(core, out.alpha, out.phi, out.eta);
  const double inner_scaled =
      core.n * final_ev.inner_report.final_grad_norm;  // n-scaled d ell / d eta
  double outer_scaled =
      std::max(final_ev.grad_alpha.lpNorm<Eigen::Infinity>(),
               final_ev.grad_phi.lpNorm<Eigen::Infinity>());
  out.report.converged = inner.report.converged && inner_scaled <= 1e-8 * core.n &&
                         outer_scaled <= 1e-6 * core.n;
  // tolerances above are per the normalized system; store the raw norms
  out.report.final_grad_norm = std::max(inner_scaled, outer_scaled) / core.n;
  out.report.iterations = bfgs.iterations + polished.iterations;
  out.report.objective = final_ev.value;
  return out;
}

Eigen::MatrixXd ridge_repair(Eigen::MatrixXd sigma) {
  const int K = static_cast<int>(sigma.rows());
  Eigen::MatrixXd sym = 0.5 * (sigma + sigma.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(sym);
  const double tr = std::max(sym.trace(), 1e-300);
  if (eig.info() == Eigen::Success &&
      eig.eigenvalues().minCoeff() >= 1e-10 * tr / K)
    return sym;
  sym.diagonal().array() += 1e-8 * tr / K;
  return sym;
}

struct StandardizedProblem {
  FlexCore core;
  Standardization basis_st;
  Standardization design_st;  // for the non-intercept columns of D
};

StandardizedProblem build_standardized(const Eigen::MatrixXd& B, const Eigen::MatrixXd& T,
                                       const Eigen::VectorXd& phi_hat, double m,
                                       const Eigen::MatrixXd& V) {
  StandardizedProblem sp;
  const Eigen::Index n = B.rows();
  sp.basis_st = standardize_columns(B);
  sp.design_st = standardize_columns(T);
  sp.core.B.resize(n, B.cols());
  for (Eigen::Index j = 0; j < B.cols(); ++j)
    sp.core.B.col(j) = (B.col(j).array() - sp.basis_st.center(j)) / sp.basis_st.scale(j);
  sp.core.D.resize(n, T.cols() + 1);
  sp.core.D.col(0).setOnes();
  for (Eigen::Index j = 0; j < T.cols(); ++j)
    sp.core.D.col(j + 1) =
        (T.col(j).array() - sp.design_st.center(j)) / sp.design_st.scale(j);
  sp.core.phi_star = (phi_hat - sp.basis_st.center).cwiseQuotient(sp.basis_st.scale);
  const Eigen::MatrixXd vstd = sp.basis_st.scale.cwiseInverse().asDiagonal() * V *
                               sp.basis_st.scale.cwiseInverse().asDiagonal();
  sp.core.Vinv = invert_psd_floored(vstd);
  sp.core.n = static_cast<double>(n);
  sp.core.m = m;
  return sp;
}

Eigen::VectorXd alpha_to_original(const Eigen::VectorXd& alpha_std,
                                  const Standardization& st) {
  Eigen::VectorXd alpha(alpha_std.size());
  alpha(0) = alpha_std(0);
  for (Eigen::Index j = 1; j < alpha_std.size(); ++j) {
    alpha(j) = alpha_std(j) / st.scale(j - 1);
    alpha(0) -= alpha_std(j) * st.center(j - 1) / st.scale(j - 1);
  }
  return alpha;
}

Eigen::VectorXd eta_to_original(const Eigen::VectorXd& eta_std,
                                const Standardization& st) {
  Eigen::VectorXd eta(eta_std.size());
  eta(0) = eta_std(0);
  for (Eigen::Index k = 1; k < eta_std.size(); ++k)
    eta(k) = eta_std(k) / st.scale(k - 1);
  return eta;
}

// Gauss-Newton pass for the initial estimator; returns the final alpha and
// stationarity/residual norms in standardized coordinates.
struct GnResult {
  Eigen::VectorXd alpha;
  double stat_norm = std::numeric_limits<double>::infinity();
  double resid_norm = std::numeric_limits<double>::infinity();
};

GnResult gauss_newton_hn(const FlexCore& core, Eigen::VectorXd alpha) {
  const Eigen::Index n = core.B.rows();
  const int K = core.K();
  const int d = core.d();
  const double nn = core.n;
  Eigen::MatrixXd C(n, K + 1);
  C.col(0).setOnes();
  for (int k = 0; k < K; ++k) C.col(k + 1) = core.B.col(k).array() - core.phi_star(k);

  auto residual = [&](const Eigen::VectorXd& a, Eigen::VectorXd& r,
                      Eigen::VectorXd* pi_out) -> bool {
    Eigen::VectorXd pi = eval_pi(core.D, a);
    if (!pi.allFinite()) return false;
    r = kernels::weighted_column_sum(C, pi) / nn;
    r(0) -= 1.0;
    if (pi_out) *pi_out = std::move(pi);
    return true;
  };

  GnResult res;
  Eigen::VectorXd r, pi;
  if (!residual(alpha, r, &pi)) return res;
  for (int iter = 0; iter < 200; ++iter) {
    const Eigen::MatrixXd J = kernels::weighted_cross(C, core.D, pi) / nn;
    const Eigen::VectorXd g = J.transpose() * r;
    res.stat_norm = g.lpNorm<Eigen::Infinity>();
    res.resid_norm = r.lpNorm<Eigen::Infinity>();
    if (res.stat_norm <= 1e-10) break;
    Eigen::MatrixXd jtj = J.transpose() * J;
    Eigen::VectorXd step;
    try {
      step = solve_spd_ridge(jtj, -g);
    } catch (const SolverError&) {
      break;
    }
    const double f0 = r.squaredNorm();
    const double slope = 2.0 * g.dot(step);
    double t = 1.0;
    bool accepted = false;
    Eigen::VectorXd r_new, pi_new;
    while (t > 1e-14) {
      if (residual(alpha + t * step, r_new, &pi_new) &&
          r_new.squaredNorm() <= f0 + 1e-4 * t * slope) {
        accepted = true;
        break;
      }
      t *= 0.5;
    }
    if (!accepted) break;
    alpha += t * step;
    r = std::move(r_new);
    pi = std::move(pi_new);
    (void)d;
  }
  res.alpha = std::move(alpha);
  return res;
}

Eigen::VectorXd initial_alpha_core(const FlexCore& core, bool just_identified) {
  GnResult best = gauss_newton_hn(core, Eigen::VectorXd::Zero(core.d()));
  auto good = [&](const GnResult& g) {
    if (!(g.stat_norm <= 1e-8)) return false;
    if (just_identified && !(g.resid_norm <= 1e-8)) return false;
    return true;
  };
  if (good(best)) return best.alpha;
  std::mt19937_64 rng(0xA5F0);  // deterministic restarts
  std::normal_distribution<double> draw(0.0, 0.5);
  for (int restart = 0; restart < 20; ++restart) {
    Eigen::VectorXd start(core.d());
    for (Eigen::Index j = 0; j < start.size(); ++j) start(j) = draw(rng);
    GnResult trial = gauss_newton_hn(core, start);
    if (good(trial)) return trial.alpha;
    if (trial.stat_norm < best.stat_norm) best = trial;
  }
  if (good(best)) return best.alpha;
  throw SolverError("initial estimator failed");
}

}  // namespace

Eigen::VectorXd ShiftDesign::pi(const Eigen::VectorXd& alpha) const {
  if (alpha.size() != T.cols() + 1)
    throw InputError("shift design: alpha has wrong dimension");
  Eigen::VectorXd scores(T.rows());
  kernels::row_products(T, alpha.tail(T.cols()), scores);
  const Eigen::Index n = scores.size();
  Eigen::VectorXd out(n);
#pragma omp parallel for schedule(static)
  for (Eigen::Index i = 0; i < n; ++i) out(i) = std::exp(alpha(0) + scores(i));
  return out;
}

Eigen::MatrixXd ShiftDesign::dpi_dalpha(const Eigen::VectorXd& alpha) const {
  const Eigen::VectorXd p = pi(alpha);
  Eigen::MatrixXd grad(T.rows(), T.cols() + 1);
  grad.col(0) = p;
  for (Eigen::Index j = 0; j < T.cols(); ++j) grad.col(j + 1) = p.cwiseProduct(T.col(j));
  return grad;
}

ShiftDesign shift_design(const ShiftModel& model, const SourceDataset& data) {
  return ShiftDesign{evaluate_terms(model.terms, data.X, data.var_names)};
}

HStack make_hstack(const Eigen::Ref<const Eigen::MatrixXd>& B,
                   const Eigen::Ref<const Eigen::MatrixXd>& D,
                   const Eigen::VectorXd& alpha, const Eigen::VectorXd& phi) {
  HStack hs;
  hs.pi = eval_pi(D, alpha);
  hs.H.resize(B.rows(), B.cols() + 1);
  hs.H.col(0) = hs.pi.array() - 1.0;
  for (Eigen::Index k = 0; k < B.cols(); ++k)
    hs.H.col(k + 1) = hs.pi.array() * (B.col(k).array() - phi(k));
  if (!hs.H.allFinite()) throw SolverError("h stack overflow");
  return hs;
}

Eigen::VectorXd h_n(const SourceDataset& data, const ShiftModel& model,
                    const BasisSpec& basis, const Eigen::VectorXd& alpha,
                    const Eigen::VectorXd& phi) {
  const Eigen::MatrixXd B = evaluate_basis(basis, data);
  const ShiftDesign sd = shift_design(model, data);
  Eigen::MatrixXd D(data.n(), sd.T.cols() + 1);
  D.col(0).setOnes();
  D.rightCols(sd.T.cols()) = sd.T;
  const HStack hs = make_hstack(B, D, alpha, phi);
  const Eigen::VectorXd ones =
      Eigen::VectorXd::Constant(data.n(), 1.0 / static_cast<double>(data.n()));
  return kernels::weighted_column_sum(hs.H, ones);
}

Eigen::VectorXd initial_alpha(const SourceDataset& data, const ShiftModel& model,
                              const BasisSpec& basis, const TargetSummary& summary) {
  validate_pairing(basis, summary);
  if (model.d_alpha() > basis.K() + 1)
    throw InputError("shift model dimension exceeds K+1");
  const Eigen::MatrixXd B = evaluate_basis(basis, data);
  const Eigen::MatrixXd T = evaluate_terms(model.terms, data.X, data.var_names);
  StandardizedProblem sp = build_standardized(
      B, T, summary.phi_hat, static_cast<double>(summary.m),
      Eigen::MatrixXd::Identity(basis.K(), basis.K()));
  const Eigen::VectorXd alpha_std =
      initial_alpha_core(sp.core, model.d_alpha() == basis.K() + 1);
  return alpha_to_original(alpha_std, sp.design_st);
}

Eigen::MatrixXd initial_sigma(const SourceDataset& data, const ShiftModel& model,
                              const BasisSpec& basis, const Eigen::VectorXd& alpha0,
                              const TargetSummary& summary) {
  const Eigen::MatrixXd B = evaluate_basis(basis, data);
  const ShiftDesign sd = shift_design(model, data);
  const Eigen::VectorXd pi = sd.pi(alpha0);
  return ridge_repair(kernels::weighted_gram(B, pi) / static_cast<double>(data.n()) -
                      summary.phi_hat * summary.phi_hat.transpose());
}

namespace {

FlexCore build_original_core(const Eigen::MatrixXd& B, const Eigen::MatrixXd& T,
                             const Eigen::VectorXd& phi_hat, double m,
                             const Eigen::MatrixXd& V) {
  FlexCore core;
  core.B = B;
  core.D.resize(B.rows(), T.cols() + 1);
  core.D.col(0).setOnes();
  core.D.rightCols(T.cols()) = T;
  core.phi_star = phi_hat;
  core.Vinv = invert_psd_floored(V);
  core.n = static_cast<double>(B.rows());
  core.m = m;
  return core;
}

}  // namespace

ProfiledEval profiled_objective(const Eigen::VectorXd& alpha,
                                const Eigen::VectorXd& phi,
                                const SourceDataset& data, const ShiftModel& model,
                                const BasisSpec& basis, const TargetSummary& summary,
                                const Eigen::MatrixXd& V,
                                const Eigen::VectorXd* eta_warm) {
  validate_pairing(basis, summary);
  const Eigen::MatrixXd B = evaluate_basis(basis, data);
  const Eigen::MatrixXd T = evaluate_terms(model.terms, data.X, data.var_names);
  const FlexCore core =
      build_original_core(B, T, summary.phi_hat, static_cast<double>(summary.m), V);
  const Eigen::VectorXd warm =
      eta_warm ? *eta_warm : Eigen::VectorXd::Zero(basis.K() + 1);
  CoreEval ev;
  try {
    ev = profiled_eval(core, alpha, phi, warm);
  } catch (const SolverError& err) {
    throw SolverError(std::string("inner maximization failed: ") + err.what());
  }
  ProfiledEval out;
  out.value = ev.value;
  out.grad_alpha = std::move(ev.grad_alpha);
  out.grad_phi = std::move(ev.grad_phi);
  out.eta = std::move(ev.eta);
  out.q = std::move(ev.q);
  out.inner_report = ev.inner_report;
  return out;
}

SaddlePoint saddle_solve(const SourceDataset& data, const ShiftModel& model,
                         const BasisSpec& basis, const TargetSummary& summary,
                         const Eigen::MatrixXd& V, const Eigen::VectorXd& alpha0) {
  validate_pairing(basis, summary);
  if (model.d_alpha() > basis.K() + 1)
    throw InputError("shift model dimension exceeds K+1");
  const Eigen::MatrixXd B = evaluate_basis(basis, data);
  const Eigen::MatrixXd T = evaluate_terms(model.terms, data.X, data.var_names);
  StandardizedProblem sp =
      build_standardized(B, T, summary.phi_hat, static_cast<double>(summary.m), V);

  // map the caller's alpha0 (original coordinates) into the standardized design
  Eigen::VectorXd alpha0_std(alpha0.size());
  alpha0_std(0) = alpha0(0);
  for (Eigen::Index j = 1; j < alpha0.size(); ++j) {
    alpha0_std(j) = alpha0(j) * sp.design_st.scale(j - 1);
    alpha0_std(0) += alpha0(j) * sp.design_st.center(j - 1);
  }

  CoreSaddle sol = solve_saddle_core(sp.core, alpha0_std);

  SaddlePoint out;
  out.alpha = alpha_to_original(sol.alpha, sp.design_st);
  out.phi = sp.basis_st.center + sp.basis_st.scale.cwiseProduct(sol.phi);
  out.eta = eta_to_original(sol.eta, sp.basis_st);
  out.report = sol.report;

  // recompute the weights in original coordinates (identical scores)
  const FlexCore orig =
      build_original_core(B, T, summary.phi_hat, static_cast<double>(summary.m), V);
  const HStack hs = make_hstack(orig.B, orig.D, out.alpha, out.phi);
  Eigen::VectorXd scores(hs.H.rows());
  kernels::row_products(hs.H, out.eta, scores);
  out.q = scores;
  softmax(out.q);
  return out;
}

SaddlePoint saddle_solve(const SourceDataset& data, const ShiftModel& model,
                         const BasisSpec& basis, const TargetSummary& summary,
                         const Eigen::MatrixXd& V) {
  return saddle_solve(data, model, basis, summary, V,
                      initial_alpha(data, model, basis, summary));
}

FlexFit flex_estimate(const SourceDataset& data, const ShiftModel& model,
                      const BasisSpec& basis, const TargetSummary& summary) {
  validate_pairing(basis, summary);
  if (model.d_alpha() > basis.K() + 1)
    throw InputError("shift model dimension exceeds K+1");

  FlexFit fit;
  fit.alpha0_init = initial_alpha(data, model, basis, summary);
  fit.Sigma0 = initial_sigma(data, model, basis, fit.alpha0_init, summary);
  SaddlePoint sp = saddle_solve(data, model, basis, summary, fit.Sigma0, fit.alpha0_init);
  if (!sp.report.converged)
    throw SolverError("saddle solve did not converge within the iteration budget");
  fit.eta = std::move(sp.eta);
  fit.alpha = std::move(sp.alpha);
  fit.phi = std::move(sp.phi);
  fit.q = std::move(sp.q);
  fit.report = sp.report;

  const ShiftDesign sd = shift_design(model, data);
  fit.pi = sd.pi(fit.alpha);
  const Eigen::VectorXd qpiy = fit.q.cwiseProduct(fit.pi).cwiseProduct(data.y);
  fit.mu = kernels::sum(as_span(qpiy));
  fit.Sigma_upd = update_sigma(fit, data, basis);
  return fit;
}

Eigen::MatrixXd update_sigma(const FlexFit& fit, const SourceDataset& data,
                             const BasisSpec& basis) {
  const Eigen::MatrixXd B = evaluate_basis(basis, data);
  const Eigen::VectorXd qpi = fit.q.cwiseProduct(fit.pi);
  return ridge_repair(kernels::weighted_gram(B, qpi) -
                      fit.phi * fit.phi.transpose());
}

FlexVariance flex_variance(const FlexFit& fit, const SourceDataset& data,
                           const ShiftModel& model, const BasisSpec& basis,
                           const TargetSummary& summary) {
  if (!fit.report.converged)
    throw SolverError("flex_variance requires a converged fit");
  const Eigen::Index n = data.n();
  const double nn = static_cast<double>(n);
  const int K = basis.K();
  const int d = model.d_alpha();

  const Eigen::MatrixXd B = evaluate_basis(basis, data);
  const Eigen::MatrixXd T = evaluate_terms(model.terms, data.X, data.var_names);
  Eigen::MatrixXd D(n, d);
  D.col(0).setOnes();
  D.rightCols(d - 1) = T;
  const HStack hs = make_hstack(B, D, fit.alpha, fit.phi);
  const Eigen::VectorXd& w = hs.pi;  // fitted covariate shift values

  // var{w(X) Y} under the source empirical law
  const Eigen::VectorXd wy = w.cwiseProduct(data.y);
  const double mean_wy = kernels::sum(as_span(wy)) / nn;
  const double mean_wy2 = kernels::dot(as_span(wy), as_span(wy)) / nn;
  FlexVariance out;
  out.sigma2_w = mean_wy2 - mean_wy * mean_wy;

  const Eigen::VectorXd unif = Eigen::VectorXd::Constant(n, 1.0 / nn);
  const Eigen::MatrixXd sigma_h = kernels::weighted_gram(hs.H, unif);

  Eigen::MatrixXd j_phi = Eigen::MatrixXd::Zero(K + 1, K);
  j_phi.bottomRows(K).diagonal().setConstant(-kernels::sum(as_span(w)) / nn);

  Eigen::MatrixXd C(n, K + 1);
  C.col(0).setOnes();
  for (int k = 0; k < K; ++k) C.col(k + 1) = B.col(k).array() - fit.phi(k);
  const Eigen::MatrixXd j_alpha = kernels::weighted_cross(C, D, w) / nn;

  const Eigen::MatrixXd sigma_upd =
      fit.Sigma_upd.size() ? fit.Sigma_upd : update_sigma(fit, data, basis);

  Eigen::VectorXd v(K + 1 + d);
  v.head(K + 1) = kernels::weighted_column_sum(hs.H, wy) / nn;
  v.tail(d) = kernels::weighted_column_sum(D, w.cwiseProduct(data.y)) / nn;

  const double ratio = nn / static_cast<double>(summary.m);
  Eigen::MatrixXd block = Eigen::MatrixXd::Zero(K + 1 + d, K + 1 + d);
  block.topLeftCorner(K + 1, K + 1) =
      sigma_h + ratio * j_phi * sigma_upd * j_phi.transpose();
  block.topRightCorner(K + 1, d) = j_alpha;
  block.bottomLeftCorner(d, K + 1) = j_alpha.transpose();

  Eigen::FullPivLU<Eigen::MatrixXd> lu(block);
  if (!lu.isInvertible()) {
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(block);
    const double cond = svd.singularValues()(0) /
                        svd.singularValues()(svd.singularValues().size() - 1);
    throw SolverError("singular variance system (condition estimate " +
                      std::to_string(cond) + ")");
  }
  const double quad = v.dot(lu.solve(v));
  out.correction_nonneg = quad >= 0.0;
  out.sigma2 = out.sigma2_w - quad;
  if (!(out.sigma2 > 0.0))
    throw SolverError("variance estimate not positive");
  out.se = std::sqrt(out.sigma2 / nn);
  return out;
}

FlexFit flex_fit(const SourceDataset& data, const ShiftModel& model,
                 const BasisSpec& basis, const TargetSummary& summary) {
  FlexFit fit = flex_estimate(data, model, basis, summary);
  FlexVariance var = flex_variance(fit, data, model, basis, summary);
  fit.sigma2 = var.sigma2;
  fit.sigma2_w = var.sigma2_w;
  if (!var.correction_nonneg)
    fit.warnings.push_back("variance correction quadratic form is negative");
  return fit;
}

}  // namespace transport
