#include "transport/kernels.hpp"

#include <cmath>
#include <vector>

namespace transport::kernels {

namespace {

inline std::ptrdiff_t block_count(std::ptrdiff_t n) {
  return (n + block_size - 1) / block_size;
}

}  // namespace

double sum(std::span<const double> v) {
  const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(v.size());
  const std::ptrdiff_t nb = block_count(n);
  std::vector<double> partial(static_cast<size_t>(nb), 0.0);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t b = 0; b < nb; ++b) {
    const std::ptrdiff_t lo = b * block_size;
    const std::ptrdiff_t hi = std::min(lo + block_size, n);
    double acc = 0.0;
    for (std::ptrdiff_t i = lo; i < hi; ++i) acc += v[static_cast<size_t>(i)];
    partial[static_cast<size_t>(b)] = acc;
  }
  double total = 0.0;
  for (std::ptrdiff_t b = 0; b < nb; ++b) total += partial[static_cast<size_t>(b)];
  return total;
}

double dot(std::span<const double> a, std::span<const double> b) {
  const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(a.size());
  const std::ptrdiff_t nb = block_count(n);
  std::vector<double> partial(static_cast<size_t>(nb), 0.0);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t blk = 0; blk < nb; ++blk) {
    const std::ptrdiff_t lo = blk * block_size;
    const std::ptrdiff_t hi = std::min(lo + block_size, n);
    double acc = 0.0;
    for (std::ptrdiff_t i = lo; i < hi; ++i)
      acc += a[static_cast<size_t>(i)] * b[static_cast<size_t>(i)];
    partial[static_cast<size_t>(blk)] = acc;
  }
  double total = 0.0;
  for (std::ptrdiff_t blk = 0; blk < nb; ++blk) total += partial[static_cast<size_t>(blk)];
  return total;
}

double max_value(std::span<const double> v) {
  const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(v.size());
  const std::ptrdiff_t nb = block_count(n);
  std::vector<double> partial(static_cast<size_t>(nb));
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t b = 0; b < nb; ++b) {
    const std::ptrdiff_t lo = b * block_size;
    const std::ptrdiff_t hi = std::min(lo + block_size, n);
    double acc = v[static_cast<size_t>(lo)];
    for (std::ptrdiff_t i = lo + 1; i < hi; ++i)
      if (v[static_cast<size_t>(i)] > acc) acc = v[static_cast<size_t>(i)];
    partial[static_cast<size_t>(b)] = acc;
  }
  double best = partial[0];
  for (std::ptrdiff_t b = 1; b < nb; ++b)
    if (partial[static_cast<size_t>(b)] > best) best = partial[static_cast<size_t>(b)];
  return best;
}

double sum_exp_shifted(std::span<const double> v, double shift) {
  const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(v.size());
  const std::ptrdiff_t nb = block_count(n);
  std::vector<double> partial(static_cast<size_t>(nb), 0.0);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t b = 0; b < nb; ++b) {
    const std::ptrdiff_t lo = b * block_size;
    const std::ptrdiff_t hi = std::min(lo + block_size, n);
    double acc = 0.0;
    for (std::ptrdiff_t i = lo; i < hi; ++i)
      acc += std::exp(v[static_cast<size_t>(i)] - shift);
    partial[static_cast<size_t>(b)] = acc;
  }
  double total = 0.0;
  for (std::ptrdiff_t b = 0; b < nb; ++b) total += partial[static_cast<size_t>(b)];
  return total;
}

void row_products(const Eigen::Ref<const Eigen::MatrixXd>& M,
                  const Eigen::Ref<const Eigen::VectorXd>& x,
                  Eigen::VectorXd& out) {
  const Eigen::Index n = M.rows();
  const Eigen::Index k = M.cols();
  out.resize(n);
#pragma omp parallel for schedule(static)
  for (Eigen::Index i = 0; i < n; ++i) {
    double acc = 0.0;
    for (Eigen::Index j = 0; j < k; ++j) acc += M(i, j) * x(j);
    out(i) = acc;
  }
}

Eigen::VectorXd weighted_column_sum(const Eigen::Ref<const Eigen::MatrixXd>& M,
                                    const Eigen::Ref<const Eigen::VectorXd>& w) {
  const Eigen::Index n = M.rows();
  const Eigen::Index k = M.cols();
  const std::ptrdiff_t nb = block_count(n);
  Eigen::MatrixXd partial = Eigen::MatrixXd::Zero(k, nb);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t b = 0; b < nb; ++b) {
    const Eigen::Index lo = static_cast<Eigen::Index>(b * block_size);
    const Eigen::Index hi = std::min<Eigen::Index>(lo + block_size, n);
    for (Eigen::Index i = lo; i < hi; ++i)
      for (Eigen::Index j = 0; j < k; ++j) partial(j, b) += w(i) * M(i, j);
  }
  Eigen::VectorXd total = Eigen::VectorXd::Zero(k);
  for (std::ptrdiff_t b = 0; b < nb; ++b) total += partial.col(b);
  return total;
}

Eigen::MatrixXd weighted_gram(const Eigen::Ref<const Eigen::MatrixXd>& M,
                              const Eigen::Ref<const Eigen::VectorXd>& w) {
  const Eigen::Index n = M.rows();
  const Eigen::Index k = M.cols();
  const std::ptrdiff_t nb = block_count(n);
  std::vector<Eigen::MatrixXd> partial(static_cast<size_t>(nb),
                                       Eigen::MatrixXd::Zero(k, k));
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t b = 0; b < nb; ++b) {
    const Eigen::Index lo = static_cast<Eigen::Index>(b * block_size);
    const Eigen::Index hi = std::min<Eigen::Index>(lo + block_size, n);
    Eigen::MatrixXd& acc = partial[static_cast<size_t>(b)];
    for (Eigen::Index i = lo; i < hi; ++i) {
      for (Eigen::Index r = 0; r < k; ++r) {
        const double wr = w(i) * M(i, r);
        for (Eigen::Index c = r; c < k; ++c) acc(r, c) += wr * M(i, c);
      }
    }
  }
  Eigen::MatrixXd total = Eigen::MatrixXd::Zero(k, k);
  for (std::ptrdiff_t b = 0; b < nb; ++b) total += partial[static_cast<size_t>(b)];
  for (Eigen::Index r = 0; r < k; ++r)
    for (Eigen::Index c = 0; c < r; ++c) total(r, c) = total(c, r);
  return total;
}

Eigen::MatrixXd weighted_cross(const Eigen::Ref<const Eigen::MatrixXd>& A,
                               const Eigen::Ref<const Eigen::MatrixXd>& B,
                               const Eigen::Ref<const Eigen::VectorXd>& w) {
  const Eigen::Index n = A.rows();
  const Eigen::Index ka = A.cols();
  const Eigen::Index kb = B.cols();
  const std::ptrdiff_t nb = block_count(n);
  std::vector<Eigen::MatrixXd> partial(static_cast<size_t>(nb),
                                       Eigen::MatrixXd::Zero(ka, kb));
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t b = 0; b < nb; ++b) {
    const Eigen::Index lo = static_cast<Eigen::Index>(b * block_size);
    const Eigen::Index hi = std::min<Eigen::Index>(lo + block_size, n);
    Eigen::MatrixXd& acc = partial[static_cast<size_t>(b)];
    for (Eigen::Index i = lo; i < hi; ++i)
      for (Eigen::Index r = 0; r < ka; ++r) {
        const double wr = w(i) * A(i, r);
        for (Eigen::Index c = 0; c < kb; ++c) acc(r, c) += wr * B(i, c);
      }
  }
  Eigen::MatrixXd total = Eigen::MatrixXd::Zero(ka, kb);
  for (std::ptrdiff_t b = 0; b < nb; ++b) total += partial[static_cast<size_t>(b)];
  return total;
}

namespace serial {

double sum(std::span<const double> v) {
  double acc = 0.0;
  for (double x : v) acc += x;
  return acc;
}

double dot(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

double max_value(std::span<const double> v) {
  double best = v[0];
  for (double x : v)
    if (x > best) best = x;
  return best;
}

double sum_exp_shifted(std::span<const double> v, double shift) {
  double acc = 0.0;
  for (double x : v) acc += std::exp(x - shift);
  return acc;
}

void row_products(const Eigen::Ref<const Eigen::MatrixXd>& M,
                  const Eigen::Ref<const Eigen::VectorXd>& x,
                  Eigen::VectorXd& out) {
  const Eigen::Index n = M.rows();
  const Eigen::Index k = M.cols();
  out.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    double acc = 0.0;
    for (Eigen::Index j = 0; j < k; ++j) acc += M(i, j) * x(j);
    out(i) = acc;
  }
}

Eigen::VectorXd weighted_column_sum(const Eigen::Ref<const Eigen::MatrixXd>& M,
                                    const Eigen::Ref<const Eigen::VectorXd>& w) {
  Eigen::VectorXd total = Eigen::VectorXd::Zero(M.cols());
  for (Eigen::Index i = 0; i < M.rows(); ++i)
    for (Eigen::Index j = 0; j < M.cols(); ++j) total(j) += w(i) * M(i, j);
  return total;
}

Eigen::MatrixXd weighted_gram(const Eigen::Ref<const Eigen::MatrixXd>& M,
                              const Eigen::Ref<const Eigen::VectorXd>& w) {
  Eigen::MatrixXd total = Eigen::MatrixXd::Zero(M.cols(), M.cols());
  for (Eigen::Index i = 0; i < M.rows(); ++i)
    for (Eigen::Index r = 0; r < M.cols(); ++r)
      for (Eigen::Index c = 0; c < M.cols(); ++c)
        total(r, c) += w(i) * M(i, r) * M(i, c);
  return total;
}

Eigen::MatrixXd weighted_cross(const Eigen::Ref<const Eigen::MatrixXd>& A,
                               const Eigen::Ref<const Eigen::MatrixXd>& B,
                               const Eigen::Ref<const Eigen::VectorXd>& w) {
  Eigen::MatrixXd total = Eigen::MatrixXd::Zero(A.cols(), B.cols());
  for (Eigen::Index i = 0; i < A.rows(); ++i)
    for (Eigen::Index r = 0; r < A.cols(); ++r)
      for (Eigen::Index c = 0; c < B.cols(); ++c)
        total(r, c) += w(i) * A(i, r) * B(i, c);
  return total;
}

}  // namespace serial

}  // namespace transport::kernels
