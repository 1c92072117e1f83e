#include <doctest.h>

#include <cmath>
#include <random>

#include "test_util.hpp"
#include "transport/basis_dsl.hpp"
#include "transport/entropy_balancing.hpp"
#include "transport/errors.hpp"
#include "transport/flexible_reweighting.hpp"

using namespace transport;

namespace {

SourceDataset dataset_012() {
  Eigen::VectorXd y(3);
  y << 0, 1, 2;
  Eigen::MatrixXd x(3, 1);
  x << 0, 1, 2;
  return SourceDataset(y, x, {"x1"});
}

TargetSummary summary_scalar(double phi, std::int64_t m = 10) {
  Eigen::VectorXd v(1);
  v << phi;
  return TargetSummary(v, m, {"x1"});
}

// Root of the scalar dual score by bisection, the 1-D oracle.
double bisect_lambda(const Eigen::VectorXd& x, double phi) {
  auto score = [&](double lam) {
    double s = 0.0;
    for (Eigen::Index i = 0; i < x.size(); ++i)
      s += (x(i) - phi) * std::exp(lam * (x(i) - phi));
    return s;
  };
  double lo = -60.0, hi = 60.0;
  REQUIRE(score(lo) * score(hi) < 0.0);
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    (score(lo) * score(mid) <= 0.0 ? hi : lo) = mid;
  }
  return 0.5 * (lo + hi);
}

}  // namespace

TEST_CASE("eb_dual_objective at lambda = 0") {
  std::mt19937_64 gen(41);
  const Eigen::MatrixXd b = testutil::random_matrix(gen, 20, 3);
  const Eigen::VectorXd phi = testutil::random_vector(gen, 3);
  const DualEval ev = eb_dual_objective(Eigen::VectorXd::Zero(3), b, phi);
  CHECK(ev.value == doctest::Approx(-20.0 * std::log(20.0)).epsilon(1e-13));
  const Eigen::VectorXd expected = -(b.rowwise() - phi.transpose()).colwise().sum();
  CHECK((ev.gradient - expected).lpNorm<Eigen::Infinity>() <= 1e-10);
}

TEST_CASE("eb_dual_objective gradient vanishes at centered moments") {
  std::mt19937_64 gen(42);
  const Eigen::MatrixXd b = testutil::random_matrix(gen, 25, 2);
  const Eigen::VectorXd phi = b.colwise().mean();
  const DualEval ev = eb_dual_objective(Eigen::VectorXd::Zero(2), b, phi);
  CHECK(ev.gradient.lpNorm<Eigen::Infinity>() <= 1e-12);
}

TEST_CASE("eb_dual_objective gradient and hessian match finite differences") {
  std::mt19937_64 gen(43);
  for (int rep = 0; rep < 10; ++rep) {
    const Eigen::Index n = 15, k = 3;
    const Eigen::MatrixXd b = testutil::random_matrix(gen, n, k);
    const Eigen::VectorXd phi = testutil::random_vector(gen, k, 0.3);
    const Eigen::VectorXd lam = testutil::random_vector(gen, k, 0.4);
    const DualEval ev = eb_dual_objective(lam, b, phi);

    auto value_at = [&](const Eigen::VectorXd& l) {
      return eb_dual_objective(l, b, phi).value;
    };
    const Eigen::VectorXd fd_g = testutil::fd_gradient(value_at, lam);
    CHECK((ev.gradient - fd_g).lpNorm<Eigen::Infinity>() /
              (1.0 + fd_g.lpNorm<Eigen::Infinity>()) <=
          1e-6);

    auto grad_at = [&](const Eigen::VectorXd& l) {
      return eb_dual_objective(l, b, phi).gradient;
    };
    const Eigen::MatrixXd fd_h = testutil::fd_jacobian(grad_at, lam);
    CHECK(testutil::max_rel_err(ev.hessian, fd_h) <= 1e-6);
  }
  // the spec example instance
  Eigen::MatrixXd b(3, 1);
  b << 0, 1, 2;
  Eigen::VectorXd phi(1), lam(1);
  phi << 1.5;
  lam << 0.3;
  const DualEval ev = eb_dual_objective(lam, b, phi);
  auto value_at = [&](const Eigen::VectorXd& l) {
    return eb_dual_objective(l, b, phi).value;
  };
  const Eigen::VectorXd fd_g = testutil::fd_gradient(value_at, lam);
  CHECK(std::abs(ev.gradient(0) - fd_g(0)) / (1.0 + std::abs(fd_g(0))) <= 1e-6);
}

TEST_CASE("solve_eb_weights identity case") {
  std::mt19937_64 gen(44);
  const SourceDataset data = testutil::random_dataset(gen, 60, 2);
  const BasisSpec basis(parse_terms("x1 + x2"));
  const Eigen::MatrixXd b = evaluate_basis(basis, data);
  const Eigen::VectorXd phi = b.colwise().mean();
  const TargetSummary summary(phi, 30, {"x1", "x2"});

  const EBWeights w = solve_eb_weights(data, basis, summary);
  CHECK(w.report.converged);
  CHECK(w.lambda.lpNorm<Eigen::Infinity>() <= 1e-8);
  CHECK((w.p.array() - 1.0 / 60.0).abs().maxCoeff() <= 1e-10);

  const EBFit fit = eb_estimate(data, basis, summary);
  CHECK(fit.mu == doctest::Approx(data.y.mean()).epsilon(1e-12));
}

TEST_CASE("solve_eb_weights matches the bisection oracle") {
  const SourceDataset data = dataset_012();
  const BasisSpec basis(parse_terms("x1"));
  const TargetSummary summary = summary_scalar(1.5);

  const EBWeights w = solve_eb_weights(data, basis, summary);
  REQUIRE(w.report.converged);
  Eigen::VectorXd xv(3);
  xv << 0, 1, 2;
  const double lam_oracle = bisect_lambda(xv, 1.5);
  CHECK(std::abs(w.lambda(0) - lam_oracle) <= 1e-10);

  // weights from the closed form at the oracle lambda
  Eigen::VectorXd p_oracle(3);
  double total = 0.0;
  for (int i = 0; i < 3; ++i) {
    p_oracle(i) = std::exp(lam_oracle * (xv(i) - 1.5));
    total += p_oracle(i);
  }
  p_oracle /= total;
  CHECK((w.p - p_oracle).lpNorm<Eigen::Infinity>() <= 1e-10);

  // calibration exactness: y coincides with the balanced column
  const EBFit fit = eb_estimate(data, basis, summary);
  CHECK(fit.mu == doctest::Approx(1.5).epsilon(1e-10));
}

TEST_CASE("solve_eb_weights detects infeasible calibration") {
  const SourceDataset data = dataset_012();
  const BasisSpec basis(parse_terms("x1"));
  CHECK_THROWS_WITH_AS(solve_eb_weights(data, basis, summary_scalar(2.5)),
                       doctest::Contains("infeasible calibration"),
                       SolverError);
}

TEST_CASE("weight feasibility holds on random fits") {
  std::mt19937_64 gen(45);
  for (int rep = 0; rep < 20; ++rep) {
    const SourceDataset data = testutil::random_dataset(gen, 80, 3);
    const BasisSpec basis(parse_terms("x1 + x2 + x3 + x1^2"));
    const Eigen::MatrixXd b = evaluate_basis(basis, data);
    // target moments pulled toward one quadrant, inside the hull
    Eigen::VectorXd phi = b.colwise().mean();
    phi += 0.15 * testutil::random_vector(gen, 4);
    phi(3) = std::max(phi(3), 0.05);
    TargetSummary summary(phi, 40, {"x1", "x2", "x3", "x1^2"});

    EBWeights w;
    try {
      w = solve_eb_weights(data, basis, summary);
    } catch (const SolverError&) {
      continue;  // drew an infeasible target; the error path has its own test
    }
    REQUIRE(w.report.converged);
    CHECK(w.p.minCoeff() > 0.0);
    CHECK(std::abs(w.p.sum() - 1.0) <= 1e-12);
    const Eigen::VectorXd resid = b.transpose() * w.p - phi;
    CHECK(resid.lpNorm<Eigen::Infinity>() <= 1e-8);
  }
}

TEST_CASE("point estimate and weights are affine equivariant") {
  std::mt19937_64 gen(46);
  for (int rep = 0; rep < 5; ++rep) {
    const Eigen::Index n = 50;
    const Eigen::MatrixXd b = testutil::random_matrix(gen, n, 2);
    const Eigen::VectorXd y = testutil::random_vector(gen, n);
    Eigen::VectorXd phi = b.colwise().mean();
    phi(0) += 0.2;

    Eigen::MatrixXd a(2, 2);
    a << 2.0, 0.5, -0.3, 1.5;
    Eigen::VectorXd off(2);
    off << 3.0, -1.0;
    const Eigen::MatrixXd b2 = (b * a.transpose()).rowwise() + off.transpose();
    const Eigen::VectorXd phi2 = a * phi + off;

    const SourceDataset d1(y, b, {"v1", "v2"});
    const SourceDataset d2(y, b2, {"v1", "v2"});
    const BasisSpec basis(parse_terms("v1 + v2"));
    const EBFit f1 = eb_estimate(d1, basis, TargetSummary(phi, 25, {"v1", "v2"}));
    const EBFit f2 = eb_estimate(d2, basis, TargetSummary(phi2, 25, {"v1", "v2"}));
    CHECK((f1.p - f2.p).lpNorm<Eigen::Infinity>() <= 1e-10);
    CHECK(std::abs(f1.mu - f2.mu) <= 1e-10);
  }
}

TEST_CASE("eb_variance reduces to the sample variance without adjustment") {
  // lambda = 0 and y uncorrelated with the basis in sample: omega = 0 and
  // sigma2 collapses to the sample variance of y
  const Eigen::Index n = 8;
  Eigen::MatrixXd x(n, 1);
  x << -3, -2, -1, 0, 0, 1, 2, 3;
  Eigen::VectorXd y(n);
  y << 1, 4, 2, 3, 3, 2, 4, 1;  // symmetric in x: sample cov(y, x) = 0
  const SourceDataset data(y, x, {"x1"});
  const BasisSpec basis(parse_terms("x1"));
  const TargetSummary summary = summary_scalar(0.0, 16);

  const EBFit fit = eb_estimate(data, basis, summary);
  REQUIRE(fit.lambda.lpNorm<Eigen::Infinity>() <= 1e-10);
  const EBVariance var = eb_variance(fit, data, basis, summary);
  CHECK(var.omega.lpNorm<Eigen::Infinity>() <= 1e-12);
  const double sample_var = (y.array() - y.mean()).square().sum() / n;
  CHECK(var.sigma2 == doctest::Approx(sample_var).epsilon(1e-12));
}

TEST_CASE("eb_variance matches an independent transcription oracle") {
  std::mt19937_64 gen(47);
  const Eigen::Index n = 6;
  Eigen::MatrixXd x(n, 2);
  x << 0.3, 1.0, -0.8, 0.0, 1.2, 1.0, 0.4, 0.0, -1.5, 1.0, 0.9, 0.0;
  Eigen::VectorXd y(n);
  y << 0.7, -0.2, 1.4, 0.5, -1.1, 0.9;
  const SourceDataset data(y, x, {"x1", "x2"});
  const BasisSpec basis(parse_terms("x1 + x2"));
  Eigen::VectorXd phi(2);
  phi << 0.25, 0.6;
  const TargetSummary summary(phi, 9, {"x1", "x2"});

  const EBFit fit = eb_estimate(data, basis, summary);
  REQUIRE(fit.report.converged);
  const EBVariance var = eb_variance(fit, data, basis, summary);

  // term-by-term transcription with plain loops
  const Eigen::MatrixXd b = evaluate_basis(basis, data);
  const double nn = static_cast<double>(n);
  const double ratio = nn / 9.0;
  Eigen::MatrixXd sigma_eb = Eigen::MatrixXd::Zero(2, 2);
  Eigen::MatrixXd bal = Eigen::MatrixXd::Zero(2, 2);
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(2);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (int r = 0; r < 2; ++r) {
      rhs(r) += fit.p(i) * y(i) * (b(i, r) - phi(r));
      for (int c = 0; c < 2; ++c) {
        sigma_eb(r, c) += fit.p(i) * b(i, r) * b(i, c);
        bal(r, c) += fit.p(i) * (b(i, r) - phi(r)) * (b(i, c) - phi(c));
      }
    }
  }
  sigma_eb -= phi * phi.transpose();
  const Eigen::VectorXd omega = testutil::gauss_jordan_inverse(bal) * rhs;
  Eigen::VectorXd u(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double pii = nn * fit.p(i);
    double dot = 0.0;
    for (int r = 0; r < 2; ++r) dot += omega(r) * (b(i, r) - phi(r));
    u(i) = pii * y(i) - fit.mu - fit.mu * (pii - 1.0) - pii * dot;
  }
  const double ubar = u.mean();
  const double var_u = (u.array() - ubar).square().sum() / nn;
  const double sigma2_oracle = var_u + ratio * omega.dot(sigma_eb * omega);

  CHECK(testutil::max_rel_err(var.Sigma_EB, sigma_eb) <= 1e-12);
  CHECK((var.omega - omega).lpNorm<Eigen::Infinity>() /
            (1.0 + omega.lpNorm<Eigen::Infinity>()) <=
        1e-12);
  CHECK(testutil::rel_err(var.sigma2, sigma2_oracle) <= 1e-12);
}

TEST_CASE("eb variance is positive for non-constant outcomes") {
  std::mt19937_64 gen(48);
  for (int rep = 0; rep < 10; ++rep) {
    const SourceDataset data = testutil::random_dataset(gen, 60, 2);
    const BasisSpec basis(parse_terms("x1 + x2"));
    const Eigen::MatrixXd b = evaluate_basis(basis, data);
    Eigen::VectorXd phi = b.colwise().mean();
    phi += 0.1 * testutil::random_vector(gen, 2);
    const TargetSummary summary(phi, 30, {"x1", "x2"});
    const EBFit fit = eb_estimate(data, basis, summary);
    const EBVariance var = eb_variance(fit, data, basis, summary);
    CHECK(var.sigma2 > 0.0);
  }
}

TEST_CASE("augmented EB with no shift returns the source mean") {
  std::mt19937_64 gen(49);
  const SourceDataset data = testutil::random_dataset(gen, 50, 2);
  const BasisSpec basis(parse_terms("x1 + x2"));
  const Eigen::MatrixXd b = evaluate_basis(basis, data);
  const Eigen::VectorXd phi = b.colwise().mean();
  const TargetSummary summary(phi, 25, {"x1", "x2"});

  const AugEBFit fit =
      augmented_eb_estimate(data, basis, summary, Eigen::MatrixXd::Identity(2, 2));
  REQUIRE(fit.report.converged);
  CHECK((fit.phi_eb - phi).lpNorm<Eigen::Infinity>() <= 1e-8);
  CHECK(fit.lambda_eb.lpNorm<Eigen::Infinity>() <= 1e-8);
  CHECK(fit.mu == doctest::Approx(data.y.mean()).epsilon(1e-10));
}

TEST_CASE("augmented EB matches a dense 2-D grid search") {
  Eigen::VectorXd y(4);
  y << 0.5, 1.0, -0.5, 2.0;
  Eigen::MatrixXd x(4, 1);
  x << 0.0, 1.0, 2.0, 4.0;
  const SourceDataset data(y, x, {"x1"});
  const BasisSpec basis(parse_terms("x1"));
  const TargetSummary summary = summary_scalar(2.2, 8);
  Eigen::MatrixXd v(1, 1);
  v << 0.5;

  const AugEBFit fit = augmented_eb_estimate(data, basis, summary, v);
  REQUIRE(fit.report.converged);

  // nested zooming grid over (lambda, phi) on the profiled objective
  const double nn = 4.0, mm = 8.0;
  auto objective = [&](double lam, double phi) {
    double s = 0.0;
    for (int i = 0; i < 4; ++i) s += std::exp(lam * (x(i, 0) - phi));
    const double entropy = nn * std::log(nn) - nn * std::log(s);
    return entropy + 0.5 * mm * (2.2 - phi) * (2.2 - phi) / v(0, 0);
  };
  double phi_lo = 0.5, phi_hi = 3.5, lam_lo = -6.0, lam_hi = 6.0;
  double best_phi = 0.0, best_lam = 0.0;
  for (int zoom = 0; zoom < 12; ++zoom) {
    double best = -std::numeric_limits<double>::infinity();
    double bphi = 0.0, blam = 0.0;
    for (int ip = 0; ip <= 60; ++ip) {
      const double phi = phi_lo + (phi_hi - phi_lo) * ip / 60.0;
      // inner max over lambda of the entropy part
      double inner_best = -std::numeric_limits<double>::infinity();
      double inner_lam = 0.0;
      for (int il = 0; il <= 60; ++il) {
        const double lam = lam_lo + (lam_hi - lam_lo) * il / 60.0;
        double s = 0.0;
        for (int i = 0; i < 4; ++i) s += std::exp(lam * (x(i, 0) - phi));
        const double val = -nn * std::log(s);
        if (val > inner_best) {
          inner_best = val;
          inner_lam = lam;
        }
      }
      const double total = -(nn * std::log(nn) + inner_best +
                             0.5 * mm * (2.2 - phi) * (2.2 - phi) / v(0, 0));
      if (total > best) {
        best = total;
        bphi = phi;
        blam = inner_lam;
      }
    }
    best_phi = bphi;
    best_lam = blam;
    const double pw = 0.35 * (phi_hi - phi_lo), lw = 0.35 * (lam_hi - lam_lo);
    phi_lo = best_phi - 0.5 * pw;
    phi_hi = best_phi + 0.5 * pw;
    lam_lo = best_lam - 0.5 * lw;
    lam_hi = best_lam + 0.5 * lw;
    (void)objective;
  }
  CHECK(std::abs(fit.phi_eb(0) - best_phi) <= 1e-6);
  CHECK(std::abs(fit.lambda_eb(0) - best_lam) <= 1e-6);
}
