#include "transport/numerics.hpp"

#include <cmath>
#include <stdexcept>

#include "transport/errors.hpp"
#include "transport/kernels.hpp"

namespace transport {

double log_sum_exp(std::span<const double> v) {
  if (v.empty()) throw std::invalid_argument("log_sum_exp: empty input");
  for (double x : v)
    if (!std::isfinite(x)) throw std::invalid_argument("log_sum_exp: non-finite entry");
  const double m = kernels::max_value(v);
  return m + std::log(kernels::sum_exp_shifted(v, m));
}

namespace {

// Newton step on a maximization: solve (-H + tau I) s = g with escalating
// Levenberg ridge. LLT doubles as the positive definiteness test.
Eigen::VectorXd ascent_step(const Eigen::MatrixXd& hess, const Eigen::VectorXd& grad) {
  const Eigen::Index k = grad.size();
  Eigen::MatrixXd a = -hess;
  double scale = a.diagonal().cwiseAbs().maxCoeff();
  if (!(scale > 0.0) || !std::isfinite(scale)) scale = 1.0;
  double tau = 0.0;
  while (true) {
    Eigen::MatrixXd ridged = a;
    if (tau > 0.0) ridged.diagonal().array() += tau;
    Eigen::LLT<Eigen::MatrixXd> llt(ridged);
    if (llt.info() == Eigen::Success) {
      Eigen::VectorXd s = llt.solve(grad);
      if (s.allFinite() && grad.dot(s) > 0.0) return s;
    }
    tau = (tau == 0.0) ? 1e-10 : tau * 10.0;
    if (tau > 1e10 * scale) throw SolverError("ill-conditioned system");
    (void)k;
  }
}

}  // namespace

std::pair<Eigen::VectorXd, SolveReport> newton_maximize(
    const NewtonObjective& objective, Eigen::VectorXd x0, const NewtonConfig& cfg) {
  if (!(cfg.grad_tol > 0.0) || cfg.max_iter < 1 || !(cfg.backtrack_ratio > 0.0) ||
      !(cfg.backtrack_ratio < 1.0) || !(cfg.armijo_c > 0.0) || !(cfg.armijo_c < 1.0))
    throw std::invalid_argument("newton_maximize: invalid NewtonConfig");

  Eigen::VectorXd x = std::move(x0);
  Eigen::VectorXd grad(x.size());
  Eigen::MatrixXd hess(x.size(), x.size());
  double value = objective(x, grad, &hess);
  if (!std::isfinite(value)) throw SolverError("objective not finite at start");

  SolveReport report;
  report.final_grad_norm = grad.lpNorm<Eigen::Infinity>();
  report.objective = value;
  int diverge_streak = 0;

  for (int iter = 0; iter < cfg.max_iter; ++iter) {
    if (report.final_grad_norm <= cfg.grad_tol) {
      report.converged = true;
      return {x, report};
    }
    Eigen::VectorXd step = ascent_step(hess, grad);
    const double slope = grad.dot(step);

    double t = 1.0;
    Eigen::VectorXd probe_grad(x.size());
    Eigen::VectorXd x_new;
    double value_new;
    bool accepted = false;
    while (t > 1e-14) {
      x_new = x + t * step;
      value_new = objective(x_new, probe_grad, nullptr);
      if (std::isfinite(value_new) && value_new >= value + cfg.armijo_c * t * slope) {
        accepted = true;
        break;
      }
      t *= cfg.backtrack_ratio;
    }
    if (!accepted) break;  // no admissible step left at this precision

    const bool grew = x_new.norm() > x.norm();
    x = std::move(x_new);
    value_new = objective(x, grad, &hess);
    report.iterations = iter + 1;
    report.final_grad_norm = grad.lpNorm<Eigen::Infinity>();

    if (value_new > value && grew && x.norm() > cfg.divergence_norm)
      ++diverge_streak;
    else
      diverge_streak = 0;
    value = value_new;
    report.objective = value;
    if (diverge_streak >= 5) throw SolverError("unbounded objective");
  }

  report.converged = report.final_grad_norm <= cfg.grad_tol;
  return {x, report};
}

namespace {

// Regularized incomplete gamma: series for P(a,x), continued fraction for
// Q(a,x). Arguments here are in gamma coordinates (a = df/2, x = chi2/2).
double gamma_p_series(double a, double x) {
  double term = 1.0 / a;
  double sum = term;
  for (int k = 1; k < 500; ++k) {
    term *= x / (a + k);
    sum += term;
    if (std::abs(term) < std::abs(sum) * 1e-17) break;
  }
  return sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

double gamma_q_contfrac(double a, double x) {
  const double tiny = 1e-300;
  double b = x + 1.0 - a;
  double c = 1.0 / tiny;
  double d = 1.0 / b;
  double h = d;
  for (int k = 1; k < 500; ++k) {
    const double an = -k * (k - a);
    b += 2.0;
    d = an * d + b;
    if (std::abs(d) < tiny) d = tiny;
    c = b + an / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double delta = d * c;
    h *= delta;
    if (std::abs(delta - 1.0) < 1e-16) break;
  }
  return h * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

}  // namespace

double chi2_sf(double x, int df) {
  if (df < 0) throw std::invalid_argument("chi2_sf: negative df");
  if (x < 0.0 || !std::isfinite(x)) throw std::invalid_argument("chi2_sf: x must be finite and nonnegative");
  if (df == 0) return x > 0.0 ? 0.0 : 1.0;  // point mass at zero
  if (x == 0.0) return 1.0;
  const double a = 0.5 * df;
  const double xg = 0.5 * x;
  if (x < df + 1.0) return 1.0 - gamma_p_series(a, xg);
  return gamma_q_contfrac(a, xg);
}

double normal_quantile(double p) {
  if (!(p > 0.0) || !(p < 1.0)) throw std::invalid_argument("normal_quantile: p must be in (0,1)");
  // Closed-form start (Abramowitz & Stegun 26.2.23), then Newton against the
  // lower-tail CDF of the smaller side, where erfc keeps full relative
  // precision and the update never cancels.
  const double pl = p < 0.5 ? p : 1.0 - p;
  const double t = std::sqrt(-2.0 * std::log(pl));
  double xm = -(t - (2.515517 + t * (0.802853 + t * 0.010328)) /
                        (1.0 + t * (1.432788 + t * (0.189269 + t * 0.001308))));
  constexpr double inv_sqrt2 = 0.7071067811865475244;
  constexpr double inv_sqrt2pi = 0.3989422804014326779;
  for (int it = 0; it < 3; ++it) {
    const double cdf = 0.5 * std::erfc(-xm * inv_sqrt2);  // small, no cancellation
    const double pdf = inv_sqrt2pi * std::exp(-0.5 * xm * xm);
    if (pdf <= 0.0) break;
    xm -= (cdf - pl) / pdf;
  }
  return p < 0.5 ? xm : -xm;
}

Eigen::VectorXd solve_spd_ridge(const Eigen::MatrixXd& A, const Eigen::VectorXd& b) {
  double scale = A.diagonal().cwiseAbs().maxCoeff();
  if (!(scale > 0.0) || !std::isfinite(scale)) scale = 1.0;
  double tau = 0.0;
  while (true) {
    Eigen::MatrixXd ridged = A;
    if (tau > 0.0) ridged.diagonal().array() += tau;
    Eigen::LLT<Eigen::MatrixXd> llt(ridged);
    if (llt.info() == Eigen::Success) {
      Eigen::VectorXd s = llt.solve(b);
      if (s.allFinite()) return s;
    }
    tau = (tau == 0.0) ? 1e-10 : tau * 10.0;
    if (tau > 1e10 * scale) throw SolverError("ill-conditioned system");
  }
}

Eigen::MatrixXd invert_psd_floored(const Eigen::MatrixXd& A, double floor_rel) {
  const Eigen::MatrixXd sym = 0.5 * (A + A.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(sym);
  if (eig.info() != Eigen::Success) throw SolverError("eigendecomposition failed");
  const double emax = eig.eigenvalues().maxCoeff();
  if (!(emax > 0.0)) throw SolverError("matrix not positive semidefinite");
  const double floor = floor_rel * emax;
  Eigen::VectorXd inv = eig.eigenvalues().cwiseMax(floor).cwiseInverse();
  return eig.eigenvectors() * inv.asDiagonal() * eig.eigenvectors().transpose();
}

BfgsResult bfgs_minimize(
    const std::function<double(const Eigen::VectorXd&, Eigen::VectorXd&)>& fg,
    Eigen::VectorXd x0, double grad_tol, int max_iter) {
  const Eigen::Index k = x0.size();
  BfgsResult res;
  res.x = std::move(x0);
  Eigen::MatrixXd hinv = Eigen::MatrixXd::Identity(k, k);
  Eigen::VectorXd grad(k), grad_new(k);
  double value = fg(res.x, grad);
  if (!std::isfinite(value)) throw SolverError("objective not finite at start");

  for (int iter = 0; iter < max_iter; ++iter) {
    res.grad_norm = grad.lpNorm<Eigen::Infinity>();
    res.value = value;
    res.iterations = iter;
    if (res.grad_norm <= grad_tol) {
      res.converged = true;
      return res;
    }
    Eigen::VectorXd dir = -(hinv * grad);
    double slope = grad.dot(dir);
    if (!(slope < 0.0)) {  // lost curvature; restart from steepest descent
      hinv.setIdentity();
      dir = -grad;
      slope = grad.dot(dir);
    }
    double t = 1.0;
    double value_new = std::numeric_limits<double>::infinity();
    Eigen::VectorXd x_new;
    bool accepted = false;
    while (t > 1e-16) {
      x_new = res.x + t * dir;
      value_new = fg(x_new, grad_new);
      if (std::isfinite(value_new) && value_new <= value + 1e-4 * t * slope) {
        accepted = true;
        break;
      }
      t *= 0.5;
    }
    if (!accepted) break;

    const Eigen::VectorXd s = x_new - res.x;
    const Eigen::VectorXd y = grad_new - grad;
    const double sy = s.dot(y);
    if (sy > 1e-12 * s.norm() * y.norm()) {
      const double rho = 1.0 / sy;
      const Eigen::MatrixXd left =
          Eigen::MatrixXd::Identity(k, k) - rho * s * y.transpose();
      hinv = left * hinv * left.transpose() + rho * s * s.transpose();
    }
    res.x = std::move(x_new);
    grad = grad_new;
    value = value_new;
  }
  res.grad_norm = grad.lpNorm<Eigen::Infinity>();
  res.value = value;
  res.converged = res.grad_norm <= grad_tol;
  return res;
}

}  // namespace transport
