#include "kronvb/harness.hpp"

#include <gtest/gtest.h>

#include <atomic>
#include <cmath>
#include <stdexcept>

#include "kronvb/error.hpp"
#include "kronvb/spd.hpp"

using namespace kronvb;

namespace {

ExperimentSpec small(ExperimentKind kind) {
  ExperimentSpec s = ExperimentSpec::defaults(kind);
  s.dims = FactorDims({2, 3, 2});
  s.n_obs = 20;
  s.max_iters = 60;
  s.threads = 2;
  return s;
}

DataArray synthetic_array(const std::vector<std::size_t> &dims, std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  const FactorSet truth = generate_truth(FactorDims(dims), rng);
  const Matrix y = sample_dense_normal(dense_kron(truth), n, rng);
  DataArray a;
  a.shape = dims;
  a.shape.push_back(n);
  a.values.resize(static_cast<std::size_t>(y.size()));
  for (Eigen::Index c = 0; c < y.rows(); ++c)
    for (Eigen::Index t = 0; t < y.cols(); ++t)
      a.values[static_cast<std::size_t>(c * y.cols() + t)] = y(c, t) + 2.0;
  return a;
}

}  // namespace

TEST(ExperimentKind, NamesRoundTrip) {
  for (const auto k : {ExperimentKind::kConvergenceSweep, ExperimentKind::kMetricComparison,
                       ExperimentKind::kMahalanobisStudy, ExperimentKind::kMisspecTable,
                       ExperimentKind::kRealDataFit})
    EXPECT_EQ(parse_experiment_kind(to_string(k)), k);
  EXPECT_THROW(parse_experiment_kind("sweep"), ValidationError);
}

TEST(ExperimentSpec, DefaultsValidate) {
  for (const auto k : {ExperimentKind::kConvergenceSweep, ExperimentKind::kMetricComparison,
                       ExperimentKind::kMahalanobisStudy, ExperimentKind::kMisspecTable,
                       ExperimentKind::kRealDataFit})
    EXPECT_NO_THROW(ExperimentSpec::defaults(k).validate()) << to_string(k);
}

TEST(ExperimentSpec, RejectsBadValues) {
  auto s = ExperimentSpec::defaults(ExperimentKind::kConvergenceSweep);
  s.joint_grid.clear();
  EXPECT_THROW(s.validate(), ValidationError);
  s = ExperimentSpec::defaults(ExperimentKind::kConvergenceSweep);
  s.mean_field_grid = {std::nan("")};
  EXPECT_THROW(s.validate(), ValidationError);
  s = ExperimentSpec::defaults(ExperimentKind::kConvergenceSweep);
  s.n_obs = 0;
  EXPECT_THROW(s.validate(), ValidationError);
  s = ExperimentSpec::defaults(ExperimentKind::kMisspecTable);
  s.beta = 0.0;
  EXPECT_THROW(s.validate(), ValidationError);
  s = ExperimentSpec::defaults(ExperimentKind::kMahalanobisStudy);
  s.draws = 0;
  EXPECT_THROW(s.validate(), ValidationError);
  s = ExperimentSpec::defaults(ExperimentKind::kRealDataFit);
  s.gamma = -1.0;
  EXPECT_THROW(s.validate(), ValidationError);
}

TEST(Truth, FactorsSpdWithUnitDeterminantsAfterFirst) {
  Rng rng(3);
  const FactorSet t = generate_truth(FactorDims({5, 6, 4, 3}), rng);
  for (std::size_t i = 0; i < t.size(); ++i) {
    const SpdMatrix a(t[i]);
    if (i > 0) EXPECT_NEAR(a.logdet(), 0.0, 1e-10);
  }
}

TEST(Truth, SeededDeterminism) {
  Rng a(9), b(9);
  const FactorSet x = generate_truth(FactorDims({3, 4}), a);
  const FactorSet y = generate_truth(FactorDims({3, 4}), b);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(x[i], y[i]);
}

TEST(Truth, MisspecificationAddsRankedTerm) {
  Rng rng(4);
  const FactorSet t = generate_truth(FactorDims({2, 3}), rng);
  const Matrix base = dense_kron(t);
  Rng r0(5);
  EXPECT_EQ(misspecified_truth(t, 0, 0.2, r0), base);
  for (std::size_t r : {1u, 3u}) {
    Rng rr(5);
    const Matrix diff = misspecified_truth(t, r, 0.2, rr) - base;
    Eigen::SelfAdjointEigenSolver<Matrix> eig(diff);
    std::size_t positive = 0;
    for (Eigen::Index k = 0; k < diff.rows(); ++k) {
      EXPECT_GT(eig.eigenvalues()(k), -1e-10);
      if (eig.eigenvalues()(k) > 1e-8) ++positive;
    }
    EXPECT_EQ(positive, r);
  }
  Rng bad(1);
  EXPECT_THROW(misspecified_truth(t, 1, 0.0, bad), ValidationError);
}

TEST(Truth, DenseSamplesMatchCovariance) {
  Matrix sigma(2, 2);
  sigma << 2.0, 0.6, 0.6, 1.0;
  Rng rng(11);
  const Matrix y = sample_dense_normal(sigma, 200000, rng);
  const Matrix s = y * y.transpose() / static_cast<double>(y.cols());
  EXPECT_LT((s - sigma).norm() / sigma.norm(), 0.01);
}

TEST(SeriesPlateau, FindsFirstFlatWindow) {
  const std::vector<double> v{1, 2, 3, 4, 4, 4, 4, 4};
  EXPECT_EQ(series_plateau(v, 1e-12, 3), std::optional<std::size_t>(5));
  EXPECT_EQ(series_plateau(v, 1e-12, 9), std::nullopt);
  EXPECT_THROW(series_plateau(v, 1e-12, 1), ValidationError);
}

TEST(ParallelFor, CoversEveryIndexOnce) {
  std::vector<std::atomic<int>> hits(37);
  parallel_for(hits.size(), 4, [&](std::size_t i) { hits[i]++; });
  for (const auto &h : hits) EXPECT_EQ(h.load(), 1);
}

TEST(ParallelFor, RethrowsWorkerError) {
  EXPECT_THROW(parallel_for(8, 3,
                            [](std::size_t i) {
                              if (i == 5) throw NumericError("boom");
                            }),
               NumericError);
}

TEST(Correlation, UnitDiagonalAndScaleInvariance) {
  Rng rng(2);
  const Matrix a = generate_truth(FactorDims({6}), rng)[0];
  const ModeSummary m = summarize_mode(a);
  for (Eigen::Index k = 0; k < 6; ++k) EXPECT_EQ(m.correlation(k, k), 1.0);
  EXPECT_NEAR(m.eigenvalues.sum(), 6.0, 1e-10);
  for (Eigen::Index k = 1; k < 6; ++k) EXPECT_GE(m.eigenvalues(k - 1), m.eigenvalues(k));
  const ModeSummary scaled = summarize_mode(37.5 * a);
  EXPECT_LE((scaled.correlation - m.correlation).cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_EQ(m.leading_vectors.cols(), 2);
  for (Eigen::Index j = 0; j < 2; ++j) {
    Eigen::Index idx = 0;
    m.leading_vectors.col(j).cwiseAbs().maxCoeff(&idx);
    EXPECT_GT(m.leading_vectors(idx, j), 0.0);
    const Vector r = m.correlation * m.leading_vectors.col(j) -
                     m.eigenvalues(j) * m.leading_vectors.col(j);
    EXPECT_LT(r.norm(), 1e-10);
  }
}

TEST(DataArrayCheck, RejectsMalformedInput) {
  DataArray a = synthetic_array({2, 3}, 4, 1);
  EXPECT_NO_THROW(a.validate());
  DataArray b = a;
  b.values.pop_back();
  EXPECT_THROW(b.validate(), ValidationError);
  b = a;
  b.values[7] = std::nan("");
  try {
    b.validate();
    FAIL();
  } catch (const ValidationError &e) {
    EXPECT_NE(std::string(e.what()).find("7"), std::string::npos);
  }
  b = a;
  b.shape = {24};
  EXPECT_THROW(b.validate(), ValidationError);
  b = a;
  b.mode_names = {"x"};
  EXPECT_THROW(b.validate(), ValidationError);
}

TEST(Experiments, ConvergenceSweepSmoke) {
  auto s = small(ExperimentKind::kConvergenceSweep);
  s.joint_grid = {-5.0, -4.5};
  s.mean_field_grid = {-6.0};
  const SweepResult r = run_convergence_sweep(s);
  ASSERT_EQ(r.cells.size(), 3u);
  for (const auto &c : r.cells) {
    EXPECT_NE(c.status, FitStatus::kDiverged) << c.method << " " << c.log10_eps;
    ASSERT_EQ(c.trace.rows.size(), s.max_iters + 1);
    EXPECT_TRUE(c.trace.rows.back().distance_sq.has_value());
    EXPECT_GE(c.trace.rows.back().elbo, c.trace.rows.front().elbo);
  }
  EXPECT_EQ(r.cells[0].method, "joint");
  EXPECT_EQ(r.cells[2].method, "meanfield");
}

TEST(Experiments, SweepIsDeterministicAcrossThreadCounts) {
  auto s = small(ExperimentKind::kConvergenceSweep);
  s.joint_grid = {-5.0};
  s.mean_field_grid = {-6.0};
  s.max_iters = 20;
  const SweepResult a = run_convergence_sweep(s);
  s.threads = 1;
  const SweepResult b = run_convergence_sweep(s);
  ASSERT_EQ(a.cells.size(), b.cells.size());
  for (std::size_t k = 0; k < a.cells.size(); ++k)
    EXPECT_EQ(a.cells[k].trace.rows.back().elbo, b.cells[k].trace.rows.back().elbo);
}

TEST(Experiments, MetricComparisonSmoke) {
  auto s = small(ExperimentKind::kMetricComparison);
  s.product_grid = {-5.5};
  const SweepResult r = run_metric_comparison(s);
  ASSERT_EQ(r.cells.size(), 2u);
  EXPECT_EQ(r.cells[0].trace.rows.front().elbo, r.cells[1].trace.rows.front().elbo);
  for (const auto &c : r.cells) EXPECT_EQ(c.log10_eps_dof, s.eps_dof);
}

TEST(Experiments, MahalanobisStudySmoke) {
  auto s = small(ExperimentKind::kMahalanobisStudy);
  s.draws = 5;
  s.inner = 4;
  s.max_iters = 200;
  const MahalanobisResult r = run_mahalanobis_study(s);
  ASSERT_EQ(r.series.size(), 3u);
  for (const auto &ser : r.series) {
    EXPECT_TRUE(ser.message.empty()) << ser.method << ": " << ser.message;
    EXPECT_EQ(ser.values.size(), s.draws);
    ASSERT_EQ(ser.quantiles.size(), 5u);
    for (std::size_t k = 1; k < 5; ++k) EXPECT_LE(ser.quantiles[k - 1], ser.quantiles[k]);
    for (double v : ser.values) EXPECT_GT(v, 0.0);
  }
  EXPECT_GT(r.joint_residual, 1e-3);
  EXPECT_LT(r.mean_field_residual, 1e-8);
}

TEST(Experiments, MisspecTableSmoke) {
  auto s = small(ExperimentKind::kMisspecTable);
  s.ranks = {0, 2};
  s.max_iters = 100;
  const auto rows = run_misspec_table(s);
  ASSERT_EQ(rows.size(), 4u);
  for (const auto &r : rows)
    if (r.count) EXPECT_LE(*r.count, s.max_iters);
}

TEST(Experiments, RealDataFitSummarizesModes) {
  DataArray a = synthetic_array({4, 3, 2}, 12, 8);
  auto s = ExperimentSpec::defaults(ExperimentKind::kRealDataFit);
  s.max_iters = 300;
  const RealDataResult r = run_real_data_fit(a, s);
  EXPECT_NE(r.fit.status, FitStatus::kDiverged);
  ASSERT_EQ(r.modes.size(), 3u);
  EXPECT_GT(r.fit.state.nu_v(), static_cast<double>(24 + 1));
  for (std::size_t i = 0; i < 3; ++i) {
    const auto d = static_cast<double>(a.shape[i]);
    EXPECT_NEAR(r.modes[i].eigenvalues.sum(), d, 1e-10);
    for (Eigen::Index k = 0; k < r.modes[i].correlation.rows(); ++k)
      EXPECT_EQ(r.modes[i].correlation(k, k), 1.0);
  }
  DataArray shifted = a;
  for (double &v : shifted.values) v += 100.0;
  const RealDataResult r2 = run_real_data_fit(shifted, s);
  for (std::size_t i = 0; i < 3; ++i)
    EXPECT_LT((r2.modes[i].correlation - r.modes[i].correlation).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(Experiments, RealDataNeedsTwoObservations) {
  DataArray a = synthetic_array({3, 2}, 1, 2);
  EXPECT_THROW(run_real_data_fit(a, ExperimentSpec::defaults(ExperimentKind::kRealDataFit)),
               ValidationError);
}
