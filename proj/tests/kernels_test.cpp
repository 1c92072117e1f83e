#include <doctest.h>

#ifdef _OPENMP
#include <omp.h>
#endif

#include <random>

#include "test_util.hpp"
#include "transport/kernels.hpp"

namespace k = transport::kernels;

namespace {

std::span<const double> span_of(const Eigen::VectorXd& v) {
  return {v.data(), static_cast<size_t>(v.size())};
}

}  // namespace

TEST_CASE("parallel kernels agree with the serial reference") {
  std::mt19937_64 gen(11);
  for (const Eigen::Index n : {7L, 4096L, 50000L}) {
    const Eigen::MatrixXd m = testutil::random_matrix(gen, n, 5);
    const Eigen::VectorXd w = testutil::random_vector(gen, n).cwiseAbs();
    const Eigen::VectorXd x = testutil::random_vector(gen, 5);

    CHECK(k::sum(span_of(w)) == doctest::Approx(k::serial::sum(span_of(w))).epsilon(1e-13));
    CHECK(k::dot(span_of(w), span_of(w)) ==
          doctest::Approx(k::serial::dot(span_of(w), span_of(w))).epsilon(1e-13));
    CHECK(k::max_value(span_of(w)) == k::serial::max_value(span_of(w)));

    Eigen::VectorXd out_p, out_s;
    k::row_products(m, x, out_p);
    k::serial::row_products(m, x, out_s);
    CHECK((out_p - out_s).lpNorm<Eigen::Infinity>() == 0.0);

    const Eigen::VectorXd cs_p = k::weighted_column_sum(m, w);
    const Eigen::VectorXd cs_s = k::serial::weighted_column_sum(m, w);
    CHECK((cs_p - cs_s).lpNorm<Eigen::Infinity>() <=
          1e-12 * (1.0 + cs_s.lpNorm<Eigen::Infinity>()));

    const Eigen::MatrixXd g_p = k::weighted_gram(m, w);
    const Eigen::MatrixXd g_s = k::serial::weighted_gram(m, w);
    CHECK(testutil::max_rel_err(g_p, g_s) <= 1e-11);

    const Eigen::MatrixXd c_p = k::weighted_cross(m.leftCols(3), m.rightCols(2), w);
    const Eigen::MatrixXd c_s = k::serial::weighted_cross(m.leftCols(3), m.rightCols(2), w);
    CHECK(testutil::max_rel_err(c_p, c_s) <= 1e-11);
  }
}

TEST_CASE("blocked reductions match the serial order exactly within one block") {
  std::mt19937_64 gen(12);
  const Eigen::VectorXd v = testutil::random_vector(gen, k::block_size - 1);
  CHECK(k::sum(span_of(v)) == k::serial::sum(span_of(v)));
  CHECK(k::sum_exp_shifted(span_of(v), 0.5) == k::serial::sum_exp_shifted(span_of(v), 0.5));
}

#ifdef _OPENMP
TEST_CASE("kernel results are bit-identical for any thread count") {
  std::mt19937_64 gen(13);
  const Eigen::Index n = 3 * k::block_size + 17;
  const Eigen::MatrixXd m = testutil::random_matrix(gen, n, 4);
  const Eigen::VectorXd w = testutil::random_vector(gen, n).cwiseAbs();

  const int saved = omp_get_max_threads();
  omp_set_num_threads(1);
  const double s1 = k::sum(span_of(w));
  const Eigen::MatrixXd g1 = k::weighted_gram(m, w);
  omp_set_num_threads(std::max(2, saved));
  const double s2 = k::sum(span_of(w));
  const Eigen::MatrixXd g2 = k::weighted_gram(m, w);
  omp_set_num_threads(saved);

  CHECK(s1 == s2);
  CHECK((g1 - g2).lpNorm<Eigen::Infinity>() == 0.0);
}
#endif
