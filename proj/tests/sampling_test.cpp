#include "kronvb/sampling.hpp"

#include <gtest/gtest.h>

#include "kronvb/error.hpp"
#include "test_util.hpp"

using namespace kronvb;
using namespace kronvb::testing;

namespace {

// Entry-wise variance of a Wishart(nu, q) draw.
Matrix wishart_variance(const Matrix &q, double nu) {
  Matrix v(q.rows(), q.cols());
  for (Eigen::Index i = 0; i < q.rows(); ++i)
    for (Eigen::Index j = 0; j < q.cols(); ++j)
      v(i, j) = nu * (q(i, j) * q(i, j) + q(i, i) * q(j, j));
  return v;
}

// Entry-wise variance of an inverse-Wishart(nu, psi) draw.
Matrix iw_variance(const Matrix &psi, double nu) {
  const double p = static_cast<double>(psi.rows());
  const double k = nu - p;
  const double den = k * (k - 1) * (k - 1) * (k - 3);
  Matrix v(psi.rows(), psi.cols());
  for (Eigen::Index i = 0; i < psi.rows(); ++i)
    for (Eigen::Index j = 0; j < psi.cols(); ++j)
      v(i, j) = ((k + 1) * psi(i, j) * psi(i, j) + (k - 1) * psi(i, i) * psi(j, j)) / den;
  return v;
}

void expect_within_se(const Matrix &mean, const Matrix &expected, const Matrix &var,
                      double n, const char *what) {
  for (Eigen::Index i = 0; i < mean.rows(); ++i)
    for (Eigen::Index j = 0; j < mean.cols(); ++j) {
      const double se = std::sqrt(var(i, j) / n);
      EXPECT_LE(std::abs(mean(i, j) - expected(i, j)), 5.0 * se)
          << what << " entry (" << i << "," << j << ")";
    }
}

}  // namespace

TEST(Rng, SeedDeterminism) {
  Rng a(42), b(42), c(43);
  const Matrix x = a.normal_matrix(3, 3), y = b.normal_matrix(3, 3), z = c.normal_matrix(3, 3);
  EXPECT_EQ(x, y);
  EXPECT_NE(x, z);
  EXPECT_EQ(a.fork(3).seed(), b.fork(3).seed());
  EXPECT_NE(a.fork(3).seed(), a.fork(4).seed());
}

TEST(TensorNormal, EmptySample) {
  Rng rng(1);
  const auto s = sample_tensor_normal(FactorSet::identity(FactorDims({2, 3})), 0, rng);
  EXPECT_EQ(s.stats.count, 0u);
  EXPECT_EQ(s.stats.scatter.norm(), 0.0);
}

TEST(TensorNormal, IdentityCovarianceMoments) {
  Rng rng(2);
  const double n = 1e5;
  const auto s = sample_tensor_normal(FactorSet::identity(FactorDims({2, 3})), 100000, rng);
  const Matrix id = Matrix::Identity(6, 6);
  expect_within_se(s.stats.scatter / n, id, wishart_variance(id, 1.0), n, "identity");
}

TEST(TensorNormal, KroneckerCovarianceMoments) {
  std::mt19937_64 gen(3);
  const FactorSet f = random_spd_factors(gen, {2, 3});
  Rng rng(3);
  const double n = 1e5;
  const auto s = sample_tensor_normal(f, 100000, rng);
  const Matrix sigma = dense_kron(f);
  expect_within_se(s.stats.scatter / n, sigma, wishart_variance(sigma, 1.0), n, "kron");
}

TEST(Bartlett, ShapeAndPositivity) {
  Rng rng(4);
  for (int t = 0; t < 200; ++t) {
    const Matrix l = bartlett_lower(5, 5.3, rng);
    EXPECT_EQ(Matrix(l.triangularView<Eigen::StrictlyUpper>()).norm(), 0.0);
    EXPECT_GT(l.diagonal().minCoeff(), 0.0);
  }
  EXPECT_THROW(bartlett_lower(4, 3.0, rng), ValidationError);
}

TEST(Bartlett, WishartMean) {
  Rng rng(5);
  const int n = 100000;
  const double nu = 8.0;
  Matrix sum = Matrix::Zero(4, 4);
  for (int t = 0; t < n; ++t) {
    const Matrix l = bartlett_lower(4, nu, rng);
    sum += l * l.transpose();
  }
  const Matrix id = Matrix::Identity(4, 4);
  expect_within_se(sum / n, nu * id, wishart_variance(id, nu), n, "bartlett");
}

TEST(Bartlett, ScalarChiSquare) {
  Rng rng(6);
  const int n = 100000;
  double sum = 0.0;
  for (int t = 0; t < n; ++t) sum += std::pow(bartlett_lower(1, 3.5, rng)(0, 0), 2);
  EXPECT_LE(std::abs(sum / n - 3.5), 5.0 * std::sqrt(2 * 3.5 / n));
}

TEST(MultiwayCholesky, KroneckerOfCholeskyIsCholeskyOfKronecker) {
  std::mt19937_64 gen(7);
  const FactorSet q = random_spd_factors(gen, {2, 3});
  std::vector<Matrix> l;
  for (const auto &m : q) l.push_back(cholesky_lower(m));
  const Matrix lhs = cholesky_lower(dense_kron(q));
  EXPECT_LE(max_abs(lhs - dense_kron(FactorSet(l))), 1e-12 * max_abs(lhs));
}

TEST(MultiwayCholesky, FastPathMatchesDense) {
  std::mt19937_64 gen(8);
  for (const auto &d : std::vector<std::vector<std::size_t>>{{2, 3}, {3, 2}, {2, 3, 2}}) {
    const FactorSet q = random_spd_factors(gen, d);
    Rng rng(8);
    Matrix b;
    const WishartSpec spec{static_cast<double>(q.dims().total()) + 3.0, q, false};
    const Matrix w = multiway_iw_cholesky(spec, rng, &b);
    std::vector<Matrix> l;
    for (const auto &m : q) l.push_back(cholesky_lower(m));
    const Matrix dense = dense_kron(FactorSet(l)) * b;
    EXPECT_LE(max_abs(w - dense), 1e-12 * max_abs(dense));
    EXPECT_EQ(Matrix(w.triangularView<Eigen::StrictlyUpper>()).norm(), 0.0);
  }
}

TEST(MultiwayCholesky, IdentityFactorsGiveBartlettDraw) {
  Rng rng(9);
  Matrix b;
  const WishartSpec spec{9.0, FactorSet::identity(FactorDims({2, 3})), false};
  const Matrix w = multiway_iw_cholesky(spec, rng, &b);
  EXPECT_LE(max_abs(w * w.transpose() - b * b.transpose()), 1e-13);
}

TEST(MultiwayCholesky, ScaleMean) {
  std::mt19937_64 gen(10);
  const FactorSet q = random_spd_factors(gen, {2, 3});
  const WishartSpec spec{9.0, q, false};
  Rng rng(10);
  const int n = 100000;
  Matrix sum = Matrix::Zero(6, 6);
  for (int t = 0; t < n; ++t) {
    const Matrix w = multiway_iw_cholesky(spec, rng);
    sum += w * w.transpose();
  }
  const Matrix qd = dense_kron(q);
  expect_within_se(sum / n, 9.0 * qd, wishart_variance(qd, 9.0), n, "multiway");
}

TEST(MultiwayCholesky, DofViolation) {
  Rng rng(11);
  const WishartSpec spec{5.0, FactorSet::identity(FactorDims({2, 3})), true};
  EXPECT_THROW(multiway_iw_cholesky(spec, rng), ValidationError);
}

TEST(JointIw, MeanAndSpd) {
  std::mt19937_64 gen(12);
  const FactorSet a = random_spd_factors(gen, {2, 2});
  const double nu = 8.0;
  Rng rng(12);
  const auto draws = sample_joint_iw(nu, a, 10000, rng);
  Matrix sum = Matrix::Zero(4, 4);
  for (const auto &d : draws) {
    EXPECT_NO_THROW(cholesky_lower(d));
    sum += d;
  }
  const Matrix psi = dense_kron(a);
  expect_within_se(sum / 1e4, psi / (nu - 5.0), iw_variance(psi, nu), 1e4, "joint iw");
  EXPECT_GT(nearest_kronecker_residual(draws[0], a.dims()), 1e-6);
  EXPECT_THROW(sample_joint_iw(5.0, a, 1, rng), ValidationError);
}

TEST(MeanField, PerModeMeanAndSeparability) {
  std::mt19937_64 gen(13);
  const FactorSet a = random_spd_factors(gen, {2, 3});
  const std::vector<double> nu{9.0, 10.0};
  Rng rng(13);
  const auto draws = sample_mean_field(nu, a, 10000, rng);
  std::vector<Matrix> sum{Matrix::Zero(2, 2), Matrix::Zero(3, 3)};
  for (const auto &d : draws)
    for (std::size_t i = 0; i < 2; ++i) sum[i] += d[i];
  for (std::size_t i = 0; i < 2; ++i) {
    const double di = static_cast<double>(a[i].rows());
    expect_within_se(sum[i] / 1e4, a[i] / (nu[i] - di - 1), iw_variance(a[i], nu[i]), 1e4, "mf");
  }
  for (int t = 0; t < 5; ++t)
    EXPECT_LE(nearest_kronecker_residual(dense_kron(draws[static_cast<std::size_t>(t)]), a.dims()), 1e-12);
}

TEST(MeanField, ModesIndependent) {
  const FactorSet a = FactorSet::identity(FactorDims({2, 3}));
  Rng rng(14);
  const int n = 10000;
  const auto draws = sample_mean_field({15.0, 16.0}, a, static_cast<std::size_t>(n), rng);
  Vector t1(n), t2(n);
  for (int t = 0; t < n; ++t) {
    t1(t) = draws[static_cast<std::size_t>(t)][0].trace();
    t2(t) = draws[static_cast<std::size_t>(t)][1].trace();
  }
  const Vector c1 = t1.array() - t1.mean(), c2 = t2.array() - t2.mean();
  const double corr = c1.dot(c2) / (c1.norm() * c2.norm());
  EXPECT_LE(std::abs(corr), 5.0 / std::sqrt(n));
}

TEST(Mahalanobis, TruthDrawCentersAtDimension) {
  std::mt19937_64 gen(15);
  const FactorSet truth = random_spd_factors(gen, {2, 3});
  const Matrix sigma = dense_kron(truth);
  const Matrix w = cholesky_lower(SpdMatrix(sigma).inverse());
  const std::vector<PrecisionFactor> draws(200, w);
  Rng rng(15);
  const auto m = mahalanobis_predictive(SpdMatrix(sigma).inverse(), draws, 100, rng);
  double mean = 0.0;
  for (double v : m) mean += v;
  mean /= static_cast<double>(m.size());
  // Each M is chi^2_6 / 100 averaged: variance 2 * 6 / 100.
  EXPECT_LE(std::abs(mean - 6.0), 5.0 * std::sqrt(12.0 / 100.0 / 200.0));
}

TEST(Mahalanobis, ScaledIdentity) {
  const double c = 2.5;
  const Matrix w = Matrix::Identity(6, 6) / std::sqrt(c);
  std::vector<PrecisionFactor> dense(200, w);
  Rng rng(16), rng2(16);
  const auto m = mahalanobis_predictive(Matrix(Matrix::Identity(6, 6)), dense, 100, rng);
  double mean = 0.0;
  for (double v : m) mean += v / 200.0;
  EXPECT_LE(std::abs(mean - c * 6.0), 5.0 * c * std::sqrt(12.0 / 100.0 / 200.0));
  // Factored draws and a factored truth give the same numbers.
  const FactorSet wf({Matrix::Identity(2, 2) / std::pow(c, 0.25),
                      Matrix::Identity(3, 3) / std::pow(c, 0.25)});
  std::vector<PrecisionFactor> fact(200, wf);
  const auto m2 = mahalanobis_predictive(FactorSet::identity(FactorDims({2, 3})), fact, 100, rng2);
  for (std::size_t t = 0; t < m.size(); ++t) EXPECT_NEAR(m[t], m2[t], 1e-12 * m[t]);
}

TEST(NearestKronecker, SeparableIsZero) {
  std::mt19937_64 gen(17);
  const FactorSet f = random_spd_factors(gen, {2, 3, 2});
  EXPECT_LE(nearest_kronecker_residual(dense_kron(f), f.dims()), 1e-12);
  EXPECT_GT(nearest_kronecker_residual(random_spd(gen, 12), f.dims()), 1e-3);
}
