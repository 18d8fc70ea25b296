#include "kronvb/optimizer.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "kronvb/error.hpp"
#include "kronvb/spd.hpp"
#include "test_util.hpp"

using namespace kronvb;
using namespace kronvb::testing;

namespace {

SufficientStats simulate(const std::vector<std::size_t> &dims, std::size_t n, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  Rng rng(seed);
  return sample_tensor_normal(random_spd_factors(gen, dims), n, rng).stats;
}

Trace trace_of(std::initializer_list<std::pair<double, double>> rows) {
  Trace t;
  std::size_t it = 0;
  for (const auto &[elbo, grad] : rows) {
    TraceRow r;
    r.iteration = it++;
    r.elbo = elbo;
    r.grad_norm = grad;
    t.rows.push_back(r);
  }
  return t;
}

double init_gamma(const SufficientStats &st, double nu0) {
  return nu0 * st.scatter.trace() / static_cast<double>(st.count);
}

JointState joint_init(const SufficientStats &st, bool orthogonalized, std::uint64_t seed) {
  Rng rng(seed);
  const double nu0 = static_cast<double>(st.dims.total()) + 2.0;
  return initial_joint_state(st.dims, default_init_scales(st.dims, init_gamma(st, nu0)),
                             orthogonalized, rng);
}

MeanFieldState mean_field_init(const SufficientStats &st, std::uint64_t seed) {
  Rng rng(seed);
  double nu0 = 1.0;
  for (std::size_t d : st.dims.extents()) nu0 *= static_cast<double>(d) + 2.0;
  return initial_mean_field_state(st.dims, default_init_scales(st.dims, init_gamma(st, nu0)), rng);
}

void expect_monotone(const Trace &t) {
  for (std::size_t k = 1; k < t.rows.size(); ++k)
    EXPECT_GE(t.rows[k].elbo, t.rows[k - 1].elbo - 1e-9 * std::abs(t.rows[k - 1].elbo))
        << "at row " << k;
}

}  // namespace

TEST(CheckConvergence, ConstantTraceConverges) {
  Trace t;
  for (int i = 0; i < 60; ++i) t.rows.push_back({static_cast<std::size_t>(i), -5.0, 0.0, {}, {}, {}, 1.0});
  EXPECT_EQ(check_convergence(t, {}), FitStatus::kConverged);
}

TEST(CheckConvergence, IncreasingTraceRuns) {
  Trace t;
  for (int i = 0; i < 60; ++i)
    t.rows.push_back({static_cast<std::size_t>(i), -100.0 + i, 1.0, {}, {}, {}, 1.0});
  EXPECT_EQ(check_convergence(t, {}), FitStatus::kRunning);
}

TEST(CheckConvergence, NanDiverges) {
  EXPECT_EQ(check_convergence(trace_of({{-1.0, 1.0}, {std::nan(""), 1.0}}), {}),
            FitStatus::kDiverged);
  EXPECT_EQ(check_convergence(trace_of({{-1.0, std::numeric_limits<double>::infinity()}}), {}),
            FitStatus::kDiverged);
}

TEST(CheckConvergence, PlateauWithLargeGradientStalls) {
  Trace t;
  for (int i = 0; i < 60; ++i) t.rows.push_back({static_cast<std::size_t>(i), -5.0, 3.0, {}, {}, {}, 1.0});
  EXPECT_EQ(check_convergence(t, {}), FitStatus::kStalled);
}

TEST(CheckConvergence, ShortTraceRuns) {
  EXPECT_EQ(check_convergence(trace_of({{-1.0, 0.0}, {-1.0, 0.0}}), {}), FitStatus::kRunning);
  EXPECT_THROW(check_convergence(Trace{}, {}), ValidationError);
}

TEST(PlateauIteration, FindsFirstFlatWindow) {
  Trace t;
  for (int i = 0; i < 100; ++i)
    t.rows.push_back({static_cast<std::size_t>(i), i < 40 ? -100.0 + i : -61.0, 0.0, {}, {}, {}, 1.0});
  const auto k = plateau_iteration(t, 1e-8, 10);
  ASSERT_TRUE(k.has_value());
  EXPECT_EQ(*k, 48u);
  EXPECT_FALSE(plateau_iteration(t, 1e-8, 200).has_value());
}

TEST(OptimizerConfig, NaiveMetricRejected) {
  OptimizerConfig cfg;
  cfg.metric = MetricKind::kPullbackNaive;
  try {
    cfg.validate();
    FAIL() << "expected a ValidationError";
  } catch (const ValidationError &e) {
    EXPECT_NE(std::string(e.what()).find("degenerate"), std::string::npos);
  }
}

TEST(OptimizerConfig, BadValuesRejected) {
  OptimizerConfig cfg;
  cfg.step.factors = 0.0;
  EXPECT_THROW(cfg.validate(), ValidationError);
  cfg = {};
  cfg.max_iters = 0;
  EXPECT_THROW(cfg.validate(), ValidationError);
  cfg = {};
  cfg.step.dof = std::nan("");
  EXPECT_THROW(cfg.validate(), ValidationError);
}

TEST(DistanceToTruth, MatchesDenseOracle) {
  std::mt19937_64 gen(1);
  for (int k = 0; k < 10; ++k) {
    const FactorSet a = random_spd_factors(gen, {2, 2});
    const FactorSet t = random_spd_factors(gen, {2, 2});
    const JointState s = JointState::with_dof(9.0, a);
    const Matrix mean = dense_kron(a) / (9.0 - 4.0 - 1.0);
    const double oracle = (mean - dense_kron(t)).squaredNorm();
    EXPECT_LE(rel_err(distance_to_truth(s, t), oracle), 1e-12);
    EXPECT_LE(rel_err(distance_to_truth(s, dense_kron(t)), oracle), 1e-12);

    const MeanFieldState mf = MeanFieldState::with_dof({5.0, 6.0}, a);
    const Matrix mf_mean = dense_kron(FactorSet({a[0] / 2.0, a[1] / 3.0}));
    EXPECT_LE(rel_err(distance_to_truth(mf, t), (mf_mean - dense_kron(t)).squaredNorm()), 1e-12);
  }
}

TEST(DistanceToTruth, ZeroAtTruthAndHomogeneous) {
  std::mt19937_64 gen(2);
  const FactorSet a = random_spd_factors(gen, {2, 3});
  const JointState s = JointState::with_dof(6.0 + 1.0 + 1.0, a);
  EXPECT_LE(distance_to_truth(s, a), 1e-12 * a[0].squaredNorm() * a[1].squaredNorm());

  // A state whose mean is tiny stands in for mean zero.
  const JointState tiny = JointState::with_dof(1e15, FactorSet::identity(a.dims()));
  const double c = 3.5;
  const FactorSet scaled({c * a[0], a[1]});
  EXPECT_LE(rel_err(distance_to_truth(tiny, scaled), c * c * distance_to_truth(tiny, a)), 1e-9);
}

TEST(DistanceToTruth, ShapeMismatchRejected) {
  EXPECT_THROW(JointState::with_dof(4.5, FactorSet::identity(FactorDims({2, 2}))), ValidationError);
  const JointState s = JointState::with_dof(6.0, FactorSet::identity(FactorDims({2, 2})));
  EXPECT_THROW(distance_to_truth(s, FactorSet::identity(FactorDims({2, 3}))), ValidationError);
  EXPECT_THROW(distance_to_truth(s, Matrix(Matrix::Identity(3, 3))), ValidationError);
}

TEST(FitJoint, TinyStepAscends) {
  OptimizerConfig cfg;
  cfg.step = StepSizes::global(1e-7);
  cfg.max_iters = 1;
  cfg.backtracking = false;
  cfg.stop_when_converged = false;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const SufficientStats st = simulate({2, 3}, 8, 100 + seed);
    const JointObjective obj(st, default_joint_prior(st), true);
    const JointFit f = fit_joint(obj, joint_init(st, true, seed), cfg);
    ASSERT_EQ(f.trace.rows.size(), 2u);
    EXPECT_GE(f.trace.rows[1].elbo, f.trace.rows[0].elbo) << "seed " << seed;
  }
}

TEST(FitJoint, FirstStepGainMatchesGradientNorm) {
  const SufficientStats st = simulate({2, 3}, 8, 3);
  for (const MetricKind m : {MetricKind::kPullbackOrthogonalized, MetricKind::kProductManifold}) {
    const bool orth = m == MetricKind::kPullbackOrthogonalized;
    const JointObjective obj(st, default_joint_prior(st), orth);
    OptimizerConfig cfg;
    cfg.metric = m;
    cfg.step = StepSizes::global(1e-9);
    cfg.max_iters = 1;
    cfg.backtracking = false;
    const JointFit f = fit_joint(obj, joint_init(st, orth, 3), cfg);
    const double gain = f.trace.rows[1].elbo - f.trace.rows[0].elbo;
    const double g = f.trace.rows[0].grad_norm;
    EXPECT_LE(rel_err(gain, 1e-9 * g * g), 1e-3) << to_string(m);
  }
}

TEST(FitJoint, MonotoneWithBacktracking) {
  for (std::uint64_t seed = 0; seed < 5; ++seed)
    for (const MetricKind m : {MetricKind::kPullbackOrthogonalized, MetricKind::kProductManifold})
      for (const double eps : {1e-4, 1e-2, 1.0}) {
        const SufficientStats st = simulate({2, 3, 2}, 10, 200 + seed);
        const bool orth = m == MetricKind::kPullbackOrthogonalized;
        const JointObjective obj(st, default_joint_prior(st), orth);
        OptimizerConfig cfg;
        cfg.metric = m;
        cfg.step = StepSizes::global(eps);
        cfg.max_iters = 200;
        const JointFit f = fit_joint(obj, joint_init(st, orth, seed), cfg);
        EXPECT_NE(f.status, FitStatus::kDiverged) << f.message;
        expect_monotone(f.trace);
        EXPECT_GE(f.trace.rows.back().elbo, f.trace.rows.front().elbo);
      }
}

TEST(FitJoint, DeterminantsStayNormalized) {
  const SufficientStats st = simulate({3, 4, 2}, 12, 4);
  const JointObjective obj(st, default_joint_prior(st), true);
  OptimizerConfig cfg;
  cfg.step = StepSizes::global(1e-3);
  cfg.max_iters = 100;
  cfg.stop_when_converged = false;
  const JointFit f = fit_joint(obj, joint_init(st, true, 4), cfg);
  ASSERT_EQ(f.trace.rows.size(), 101u);
  const double p = static_cast<double>(st.dims.total());
  for (const auto &r : f.trace.rows) {
    for (std::size_t i = 1; i < r.log_dets.size(); ++i)
      EXPECT_LE(std::abs(std::exp(r.log_dets[i]) - 1.0), 1e-10);
    EXPECT_GT(r.nu_v[0], p + 1.0);
  }
}

TEST(FitJoint, SeededDeterminism) {
  const SufficientStats st = simulate({2, 3, 2}, 10, 5);
  const JointObjective obj(st, default_joint_prior(st), true);
  OptimizerConfig cfg;
  cfg.step = StepSizes::global(1e-3);
  cfg.max_iters = 50;
  const JointFit a = fit_joint(obj, joint_init(st, true, 9), cfg);
  const JointFit b = fit_joint(obj, joint_init(st, true, 9), cfg);
  ASSERT_EQ(a.trace.rows.size(), b.trace.rows.size());
  for (std::size_t k = 0; k < a.trace.rows.size(); ++k) {
    EXPECT_EQ(a.trace.rows[k].elbo, b.trace.rows[k].elbo);
    EXPECT_EQ(a.trace.rows[k].grad_norm, b.trace.rows[k].grad_norm);
  }
  EXPECT_EQ(a.state.z, b.state.z);
  for (std::size_t i = 0; i < a.state.a.size(); ++i) EXPECT_EQ(a.state.a[i], b.state.a[i]);
}

TEST(FitJoint, RecordEveryAndCallback) {
  const SufficientStats st = simulate({2, 2}, 6, 6);
  const JointObjective obj(st, default_joint_prior(st), true);
  OptimizerConfig cfg;
  cfg.step = StepSizes::global(1e-3);
  cfg.max_iters = 20;
  cfg.record_every = 5;
  cfg.stop_when_converged = false;
  std::size_t seen = 0;
  cfg.on_record = [&](const TraceRow &) { ++seen; };
  const JointFit f = fit_joint(obj, joint_init(st, true, 6), cfg);
  ASSERT_EQ(f.trace.rows.size(), 5u);
  EXPECT_EQ(seen, 5u);
  EXPECT_EQ(f.trace.rows[1].iteration, 5u);
  EXPECT_EQ(f.trace.rows.back().iteration, 20u);
}

TEST(FitJoint, LargeStepWithoutBacktrackingReportsDivergence) {
  const SufficientStats st = simulate({5, 6, 4, 3}, 50, 7);
  Rng rng(7);
  // Factors far below the data scale give an overflowing first step.
  const JointState init = initial_joint_state(st.dims, default_init_scales(st.dims, 1e-3), true, rng);
  const JointObjective obj(st, default_joint_prior(st), true);
  OptimizerConfig cfg;
  cfg.step = StepSizes::global(1e-2);
  cfg.max_iters = 100;
  cfg.backtracking = false;
  const JointFit f = fit_joint(obj, init, cfg);
  EXPECT_EQ(f.status, FitStatus::kDiverged);
  EXPECT_FALSE(f.message.empty());
  EXPECT_TRUE(f.state.a[0].allFinite());
  EXPECT_TRUE(std::isfinite(f.trace.rows.back().elbo));
}

TEST(FitJoint, SingleModeReachesConjugateFixedPoint) {
  const SufficientStats st = simulate({4}, 9, 8);
  std::mt19937_64 gen(8);
  const Matrix lambda = random_spd(gen, 4);
  const double nu = 6.0;
  const JointObjective obj(st, {nu, lambda}, true);
  OptimizerConfig cfg;
  cfg.step = StepSizes::global(2e-2);
  cfg.max_iters = 20000;
  cfg.convergence.grad_norm_tol = 1e-11;
  cfg.convergence.elbo_rel_tol = 1e-14;
  const JointFit f = fit_joint(obj, JointState::with_dof(6.0, FactorSet({Matrix::Identity(4, 4)})), cfg);
  EXPECT_EQ(f.status, FitStatus::kConverged) << f.message;
  const Matrix target = lambda + st.scatter;
  EXPECT_LE((f.state.a[0] - target).norm() / target.norm(), 1e-8);
  EXPECT_LE(rel_err(f.state.nu_v(), nu + 9.0), 1e-8);
}

TEST(FitJoint, StartingAtFixedPointStays) {
  const SufficientStats st = simulate({3}, 7, 9);
  const Matrix lambda = Matrix::Identity(3, 3) * 2.0;
  const JointObjective obj(st, {5.0, lambda}, true);
  OptimizerConfig cfg;
  cfg.step = StepSizes::global(1e-1);
  cfg.max_iters = 10;
  cfg.stop_when_converged = false;
  const JointFit f = fit_joint(obj, JointState::with_dof(12.0, FactorSet({lambda + st.scatter})), cfg);
  EXPECT_LE((f.state.a[0] - (lambda + st.scatter)).norm(), 1e-10 * (lambda + st.scatter).norm());
  EXPECT_LE(std::abs(f.state.nu_v() - 12.0), 1e-10);
}

TEST(FitJoint, PriorOnlyReturnsToPrior) {
  const FactorDims dims({3});
  const SufficientStats empty{dims, Matrix::Zero(3, 3), 0};
  std::mt19937_64 gen(10);
  const Matrix lambda = random_spd(gen, 3);
  const JointObjective obj(empty, {7.0, lambda}, true);
  OptimizerConfig cfg;
  cfg.step = StepSizes::global(5e-2);
  cfg.max_iters = 20000;
  cfg.convergence.grad_norm_tol = 1e-9;
  const JointFit f = fit_joint(obj, JointState::with_dof(5.0, FactorSet({Matrix::Identity(3, 3)})), cfg);
  // The bound is flat to round-off near its maximum of zero, so the fit may
  // stop there without meeting the gradient tolerance.
  EXPECT_NE(f.status, FitStatus::kDiverged) << f.message;
  EXPECT_NE(f.status, FitStatus::kRunning);
  EXPECT_LE((f.state.a[0] - lambda).norm() / lambda.norm(), 1e-6);
  EXPECT_LE(rel_err(f.state.nu_v(), 7.0), 1e-6);
  EXPECT_LE(std::abs(f.trace.rows.back().elbo), 1e-8);
}

TEST(FitMeanField, PriorOnlyConvergesToPerModePriors) {
  const FactorDims dims({2, 3});
  const SufficientStats empty{dims, Matrix::Zero(6, 6), 0};
  std::mt19937_64 gen(11);
  const FactorSet lam = random_spd_factors(gen, {2, 3});
  const MeanFieldObjective obj(empty, {{4.0, 6.0}, lam});
  OptimizerConfig cfg;
  cfg.step = StepSizes::global(5e-2);
  cfg.max_iters = 20000;
  cfg.convergence.grad_norm_tol = 1e-9;
  const MeanFieldFit f =
      fit_mean_field(obj, MeanFieldState::with_dof({5.0, 5.0}, FactorSet::identity(dims)), cfg);
  EXPECT_NE(f.status, FitStatus::kDiverged) << f.message;
  EXPECT_NE(f.status, FitStatus::kRunning);
  for (std::size_t i = 0; i < 2; ++i)
    EXPECT_LE((f.state.a[i] - lam[i]).norm() / lam[i].norm(), 1e-6);
  EXPECT_LE(rel_err(f.state.nu_v()[0], 4.0), 1e-6);
  EXPECT_LE(rel_err(f.state.nu_v()[1], 6.0), 1e-6);
  expect_monotone(f.trace);
}

TEST(FitMeanField, MonotoneWithBacktracking) {
  for (std::uint64_t seed = 0; seed < 5; ++seed)
    for (const double eps : {1e-4, 1e-2, 1.0}) {
      const SufficientStats st = simulate({2, 3, 2}, 10, 300 + seed);
      const MeanFieldObjective obj(st, default_mean_field_prior(st));
      OptimizerConfig cfg;
      cfg.step = StepSizes::global(eps);
      cfg.max_iters = 200;
      const MeanFieldFit f = fit_mean_field(obj, mean_field_init(st, seed), cfg);
      // Large steps can drive the factors to numerical singularity; the
      // trace must still never descend.
      if (eps < 1.0) EXPECT_NE(f.status, FitStatus::kDiverged) << f.message;
      expect_monotone(f.trace);
      EXPECT_GE(obj.value(f.state), f.trace.rows.front().elbo);
    }
}

TEST(FitMeanField, MetricIgnoredAndDofsFeasible) {
  const SufficientStats st = simulate({2, 3}, 10, 12);
  const MeanFieldObjective obj(st, default_mean_field_prior(st));
  OptimizerConfig cfg;
  cfg.step = StepSizes::global(1e-3);
  cfg.max_iters = 50;
  cfg.stop_when_converged = false;
  const MeanFieldFit a = fit_mean_field(obj, mean_field_init(st, 12), cfg);
  cfg.metric = MetricKind::kProductManifold;
  const MeanFieldFit b = fit_mean_field(obj, mean_field_init(st, 12), cfg);
  EXPECT_EQ(a.trace.rows.back().elbo, b.trace.rows.back().elbo);
  for (const auto &r : a.trace.rows) {
    EXPECT_GT(r.nu_v[0], 3.0);
    EXPECT_GT(r.nu_v[1], 4.0);
  }
}

TEST(FitMeanField, SmallStepStableOnDeskDims) {
  const SufficientStats st = simulate({5, 6, 4, 3}, 50, 13);
  const MeanFieldObjective obj(st, default_mean_field_prior(st));
  OptimizerConfig cfg;
  cfg.step = StepSizes::global(1e-6);
  cfg.max_iters = 2000;
  cfg.backtracking = false;
  cfg.stop_when_converged = false;
  cfg.record_every = 10;
  const MeanFieldFit f = fit_mean_field(obj, mean_field_init(st, 13), cfg);
  EXPECT_NE(f.status, FitStatus::kDiverged) << f.message;
  EXPECT_EQ(f.iterations, 2000u);
  EXPECT_GT(f.trace.rows.back().elbo, f.trace.rows.front().elbo);
}

TEST(Initialization, ShapesAndNormalization) {
  Rng rng(14);
  const FactorDims dims({3, 4, 2});
  const auto scales = default_init_scales(dims, 24.0);
  ASSERT_EQ(scales.size(), 3u);
  EXPECT_NEAR(scales[1], std::pow(24.0, 1.0 / 3.0) / 4.0, 1e-14);
  const JointState j = initial_joint_state(dims, scales, true, rng);
  EXPECT_DOUBLE_EQ(j.nu_v(), 26.0);
  for (std::size_t i = 1; i < 3; ++i) EXPECT_NEAR(SpdMatrix(j.a[i]).logdet(), 0.0, 1e-12);
  const MeanFieldState m = initial_mean_field_state(dims, scales, rng);
  EXPECT_DOUBLE_EQ(m.nu_v()[0], 5.0);
  EXPECT_DOUBLE_EQ(m.nu_v()[2], 4.0);
  EXPECT_THROW(default_init_scales(dims, 0.0), ValidationError);
  EXPECT_THROW(random_initial_factors(dims, {1.0, 1.0}, rng), ValidationError);
}

TEST(MeanFactors, FoldsDofIntoModeZero) {
  std::mt19937_64 gen(15);
  const FactorSet a = random_spd_factors(gen, {2, 3});
  const JointState s = JointState::with_dof(10.0, a);
  const FactorSet m = mean_factors(s);
  EXPECT_LE(max_abs(dense_kron(m) - dense_kron(a) / 3.0), 1e-12);
}
