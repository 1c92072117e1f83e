// Compares the OpenMP kernels against the serial reference, and a full
// entropy balancing fit against one forced onto a single thread.

#include <chrono>
#include <cstdio>
#include <random>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "transport/entropy_balancing.hpp"
#include "transport/kernels.hpp"

using transport::kernels::block_size;

namespace {

double wtime() {
  return std::chrono::duration<double>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

template <typename F>
double time_best_of(int repeats, F&& f) {
  double best = 1e300;
  for (int r = 0; r < repeats; ++r) {
    const double t0 = wtime();
    f();
    best = std::min(best, wtime() - t0);
  }
  return best;
}

}  // namespace

int main() {
  const Eigen::Index n = 2'000'000;
  const Eigen::Index k = 6;
  std::mt19937_64 gen(7);
  std::normal_distribution<double> dist;
  Eigen::MatrixXd M(n, k);
  Eigen::VectorXd w(n), x(k);
  for (Eigen::Index i = 0; i < n; ++i) {
    w(i) = 1.0 / static_cast<double>(n);
    for (Eigen::Index j = 0; j < k; ++j) M(i, j) = dist(gen);
  }
  for (Eigen::Index j = 0; j < k; ++j) x(j) = dist(gen);

#ifdef _OPENMP
  std::printf("threads: %d, block size: %td\n", omp_get_max_threads(), block_size);
#else
  std::printf("OpenMP disabled, block size: %td\n", block_size);
#endif

  Eigen::VectorXd out_par, out_ser;
  const double t_mv_p = time_best_of(5, [&] { transport::kernels::row_products(M, x, out_par); });
  const double t_mv_s = time_best_of(5, [&] { transport::kernels::serial::row_products(M, x, out_ser); });
  std::printf("row_products        n=%td  parallel %8.2f ms   serial %8.2f ms   speedup %.2fx   max|diff| %.3g\n",
              n, 1e3 * t_mv_p, 1e3 * t_mv_s, t_mv_s / t_mv_p,
              (out_par - out_ser).lpNorm<Eigen::Infinity>());

  Eigen::MatrixXd g_par, g_ser;
  const double t_g_p = time_best_of(5, [&] { g_par = transport::kernels::weighted_gram(M, w); });
  const double t_g_s = time_best_of(5, [&] { g_ser = transport::kernels::serial::weighted_gram(M, w); });
  std::printf("weighted_gram       n=%td  parallel %8.2f ms   serial %8.2f ms   speedup %.2fx   max|diff| %.3g\n",
              n, 1e3 * t_g_p, 1e3 * t_g_s, t_g_s / t_g_p,
              (g_par - g_ser).lpNorm<Eigen::Infinity>());

  Eigen::VectorXd scores(n);
  transport::kernels::row_products(M, x, scores);
  double lse_p = 0, lse_s = 0;
  const double t_l_p = time_best_of(5, [&] {
    const std::span<const double> s{scores.data(), static_cast<size_t>(n)};
    const double mx = transport::kernels::max_value(s);
    lse_p = mx + std::log(transport::kernels::sum_exp_shifted(s, mx));
  });
  const double t_l_s = time_best_of(5, [&] {
    const std::span<const double> s{scores.data(), static_cast<size_t>(n)};
    const double mx = transport::kernels::serial::max_value(s);
    lse_s = mx + std::log(transport::kernels::serial::sum_exp_shifted(s, mx));
  });
  std::printf("log_sum_exp         n=%td  parallel %8.2f ms   serial %8.2f ms   speedup %.2fx   |diff| %.3g\n",
              n, 1e3 * t_l_p, 1e3 * t_l_s, t_l_s / t_l_p, std::abs(lse_p - lse_s));

  // end-to-end: one balancing fit on a large synthetic panel
  const Eigen::Index nfit = 500'000;
  Eigen::MatrixXd B(nfit, 4);
  for (Eigen::Index i = 0; i < nfit; ++i) {
    const double z = dist(gen);
    B(i, 0) = z;
    B(i, 1) = dist(gen) < -2.0 * z ? 1.0 : 0.0;
    B(i, 2) = dist(gen) < z ? 1.0 : 0.0;
    B(i, 3) = z * z;
  }
  Eigen::VectorXd phi = B.colwise().mean();
  phi(0) += 0.2;
  phi(3) += 0.3;

  const double t_fit = time_best_of(3, [&] { transport::solve_eb_weights(B, phi); });
#ifdef _OPENMP
  const int saved = omp_get_max_threads();
  omp_set_num_threads(1);
  const double t_fit1 = time_best_of(3, [&] { transport::solve_eb_weights(B, phi); });
  omp_set_num_threads(saved);
  std::printf("balancing fit       n=%td  parallel %8.2f ms   1 thread %8.2f ms   speedup %.2fx\n",
              nfit, 1e3 * t_fit, 1e3 * t_fit1, t_fit1 / t_fit);
#else
  std::printf("balancing fit       n=%td  %8.2f ms\n", nfit, 1e3 * t_fit);
#endif
  return 0;
}
