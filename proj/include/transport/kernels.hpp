#pragma once

#include <Eigen/Dense>
#include <span>

// Row-reduction kernels shared by the estimators. Reductions are blocked with
// a fixed block size: each block accumulates serially and block partials are
// combined in index order, so results are bit-identical no matter how many
// OpenMP threads execute the block loop (including one). The serial namespace
// holds straightforward loop implementations kept as the reference for tests
// and for the benchmark target.

namespace transport::kernels {

inline constexpr std::ptrdiff_t block_size = 4096;

double sum(std::span<const double> v);
double dot(std::span<const double> a, std::span<const double> b);
double max_value(std::span<const double> v);

// sum_i exp(v[i] - shift)
double sum_exp_shifted(std::span<const double> v, double shift);

// out[i] = M.row(i) . x
void row_products(const Eigen::Ref<const Eigen::MatrixXd>& M,
                  const Eigen::Ref<const Eigen::VectorXd>& x,
                  Eigen::VectorXd& out);

// sum_i w[i] * M.row(i)
Eigen::VectorXd weighted_column_sum(const Eigen::Ref<const Eigen::MatrixXd>& M,
                                    const Eigen::Ref<const Eigen::VectorXd>& w);

// sum_i w[i] * M.row(i)^T M.row(i), symmetric K x K
Eigen::MatrixXd weighted_gram(const Eigen::Ref<const Eigen::MatrixXd>& M,
                              const Eigen::Ref<const Eigen::VectorXd>& w);

// sum_i w[i] * A.row(i)^T B.row(i), Ka x Kb
Eigen::MatrixXd weighted_cross(const Eigen::Ref<const Eigen::MatrixXd>& A,
                               const Eigen::Ref<const Eigen::MatrixXd>& B,
                               const Eigen::Ref<const Eigen::VectorXd>& w);

namespace serial {

double sum(std::span<const double> v);
double dot(std::span<const double> a, std::span<const double> b);
double max_value(std::span<const double> v);
double sum_exp_shifted(std::span<const double> v, double shift);
void row_products(const Eigen::Ref<const Eigen::MatrixXd>& M,
                  const Eigen::Ref<const Eigen::VectorXd>& x,
                  Eigen::VectorXd& out);
Eigen::VectorXd weighted_column_sum(const Eigen::Ref<const Eigen::MatrixXd>& M,
                                    const Eigen::Ref<const Eigen::VectorXd>& w);
Eigen::MatrixXd weighted_gram(const Eigen::Ref<const Eigen::MatrixXd>& M,
                              const Eigen::Ref<const Eigen::VectorXd>& w);
Eigen::MatrixXd weighted_cross(const Eigen::Ref<const Eigen::MatrixXd>& A,
                               const Eigen::Ref<const Eigen::MatrixXd>& B,
                               const Eigen::Ref<const Eigen::VectorXd>& w);

}  // namespace serial

}  // namespace transport::kernels
