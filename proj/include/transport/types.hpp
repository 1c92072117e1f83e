#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "transport/numerics.hpp"

namespace transport {

// ---------------------------------------------------------------------------
// Basis term expressions

enum class Rel { lt, le, gt, ge, eq };

struct Var {
  std::string name;
  friend bool operator==(const Var&, const Var&) = default;
};

struct Power {
  std::string name;
  int exponent;  // >= 2; write the plain variable for exponent 1
  friend bool operator==(const Power&, const Power&) = default;
};

struct Interaction {
  std::string a, b;  // normalized so that a < b lexicographically
  friend bool operator==(const Interaction&, const Interaction&) = default;
};

struct Indicator {
  std::string name;
  Rel rel;
  double threshold;  // compared exactly as written
  friend bool operator==(const Indicator&, const Indicator&) = default;
};

struct Intercept {
  friend bool operator==(const Intercept&, const Intercept&) = default;
};

using TermExpr = std::variant<Var, Power, Interaction, Indicator, Intercept>;

// ---------------------------------------------------------------------------
// Data containers

// Outcome vector plus covariate matrix of the source sample.
struct SourceDataset {
  Eigen::VectorXd y;                   // length n
  Eigen::MatrixXd X;                   // n x d
  std::vector<std::string> var_names;  // d distinct labels

  SourceDataset(Eigen::VectorXd y_in, Eigen::MatrixXd x_in,
                std::vector<std::string> names);
  Eigen::Index n() const { return y.size(); }
  Eigen::Index dim() const { return X.cols(); }
};

// Ordered covariate basis Phi(x); no intercept term (the weights normalize).
struct BasisSpec {
  std::vector<TermExpr> terms;

  explicit BasisSpec(std::vector<TermExpr> terms_in);
  int K() const { return static_cast<int>(terms.size()); }
};

// Log-linear covariate shift model: log pi(x; alpha) = alpha_0 + sum_j
// alpha_j t_j(x). The intercept is implicit, so the parameter dimension is
// one more than the term count.
struct ShiftModel {
  std::vector<TermExpr> terms;

  explicit ShiftModel(std::vector<TermExpr> terms_in);
  int d_alpha() const { return static_cast<int>(terms.size()) + 1; }
};

// Target-population sample moments of the basis, with the target sample size
// that produced them.
struct TargetSummary {
  Eigen::VectorXd phi_hat;              // length K
  std::int64_t m;                       // target sample size, >= 2
  std::vector<std::string> term_labels; // canonical term strings, length K

  TargetSummary(Eigen::VectorXd phi, std::int64_t m_in,
                std::vector<std::string> labels);
  int K() const { return static_cast<int>(phi_hat.size()); }
};

// Confirms the summary matches the basis term for term (after canonical
// normalization of the labels). Throws InputError naming the first offending
// term on any mismatch.
void validate_pairing(const BasisSpec& basis, const TargetSummary& summary);

// ---------------------------------------------------------------------------
// Fit results

struct FitDiagnostics {
  int iterations = 0;
  double grad_norm = 0.0;
  double weight_min = 0.0;
  double weight_max = 0.0;
  double ess = 0.0;  // 1 / sum(w_i^2) for normalized weights
  std::vector<std::string> warnings;
};

struct EstimateReport {
  double estimate = 0.0;
  double se = 0.0;
  std::array<double, 2> ci95{0.0, 0.0};
  std::int64_t n = 0;
  std::int64_t m = 0;
  std::string method;
  FitDiagnostics diagnostics;
};

struct EBFit {
  Eigen::VectorXd lambda;    // K multipliers, original basis scale
  Eigen::VectorXd p;         // n weights, positive, sum to one
  double mu = 0.0;
  Eigen::MatrixXd Sigma_EB;  // K x K, filled by eb_variance
  Eigen::VectorXd omega;     // K, filled by eb_variance
  double sigma2 = 0.0;       // filled by eb_variance
  SolveReport report;
  std::vector<std::string> warnings;
};

struct FlexFit {
  Eigen::VectorXd eta;          // K+1 multipliers, original h scale
  Eigen::VectorXd alpha;        // d_alpha shift-model parameters
  Eigen::VectorXd phi;          // K optimized summary
  Eigen::VectorXd q;            // n weights, positive, sum to one
  Eigen::VectorXd pi;           // n cached shift-model values pi(x_i; alpha)
  Eigen::VectorXd alpha0_init;  // d_alpha initial estimator
  Eigen::MatrixXd Sigma0;       // K x K initial covariance estimate
  Eigen::MatrixXd Sigma_upd;    // K x K updated covariance estimate
  double mu = 0.0;
  double sigma2 = 0.0;     // filled by flex_variance
  double sigma2_w = 0.0;   // leading var{w(X)Y} term, filled by flex_variance
  SolveReport report;
  std::vector<std::string> warnings;
};

struct ModelCheckResult {
  double T = 0.0;
  int df = 0;
  double p_value = 1.0;
  std::vector<std::string> warnings;
};

}  // namespace transport
