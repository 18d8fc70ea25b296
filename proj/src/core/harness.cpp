#include "kronvb/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <thread>

#include "kronvb/error.hpp"
#include "kronvb/spd.hpp"

namespace kronvb {

const char *to_string(ExperimentKind kind) {
  switch (kind) {
    case ExperimentKind::kConvergenceSweep: return "convergence-sweep";
    case ExperimentKind::kMetricComparison: return "metric-comparison";
    case ExperimentKind::kMahalanobisStudy: return "mahalanobis-study";
    case ExperimentKind::kMisspecTable: return "misspec-table";
    case ExperimentKind::kRealDataFit: return "real-data-fit";
  }
  return "unknown";
}

ExperimentKind parse_experiment_kind(const std::string &name) {
  for (const auto k : {ExperimentKind::kConvergenceSweep, ExperimentKind::kMetricComparison,
                       ExperimentKind::kMahalanobisStudy, ExperimentKind::kMisspecTable,
                       ExperimentKind::kRealDataFit})
    if (name == to_string(k)) return k;
  throw ValidationError("unknown experiment '" + name + "'");
}

namespace {

void check_grid(const std::vector<double> &grid, const char *name) {
  if (grid.empty()) throw ValidationError(std::string(name) + " must not be empty");
  for (double g : grid)
    if (!std::isfinite(g) || g >= 300.0 || g <= -300.0)
      throw ValidationError(std::string(name) + " has an invalid exponent");
}

void check_exponent(double e, const char *name) {
  if (!std::isfinite(e) || e >= 300.0 || e <= -300.0)
    throw ValidationError(std::string(name) + " is not a usable log10 step");
}

void check_positive(double v, const char *name) {
  if (!(v > 0.0) || !std::isfinite(v)) throw ValidationError(std::string(name) + " must be positive");
}

}  // namespace

void ExperimentSpec::validate() const {
  if (kind != ExperimentKind::kRealDataFit) {
    if (dims.modes() == 0) throw ValidationError("dims must not be empty");
    for (std::size_t d : dims.extents())
      if (d == 0) throw ValidationError("every extent in dims must be positive");
    if (n_obs == 0) throw ValidationError("n must be positive");
  }
  if (max_iters == 0) throw ValidationError("iters must be positive");
  if (record_every == 0) throw ValidationError("record_every must be positive");
  switch (kind) {
    case ExperimentKind::kConvergenceSweep:
      check_grid(joint_grid, "joint_grid");
      check_grid(mean_field_grid, "mean_field_grid");
      break;
    case ExperimentKind::kMetricComparison:
      check_grid(product_grid, "product_grid");
      check_exponent(eps_dof, "eps_dof");
      check_exponent(eps_pullback, "eps_pullback");
      break;
    case ExperimentKind::kMisspecTable:
      if (ranks.empty()) throw ValidationError("ranks must not be empty");
      check_positive(xi, "xi");
      check_positive(beta, "beta");
      check_exponent(eps_joint, "eps_joint");
      check_exponent(eps_mean_field, "eps_mean_field");
      break;
    case ExperimentKind::kMahalanobisStudy:
      if (draws == 0) throw ValidationError("K must be positive");
      if (inner == 0) throw ValidationError("m must be positive");
      check_exponent(study_eps_joint, "study_eps_joint");
      check_exponent(study_eps_mean_field, "study_eps_mean_field");
      break;
    case ExperimentKind::kRealDataFit:
      check_positive(gamma, "gamma");
      check_exponent(eps, "eps");
      check_exponent(eps_dof, "eps_dof");
      break;
  }
}

ExperimentSpec ExperimentSpec::defaults(ExperimentKind kind) {
  ExperimentSpec s;
  s.kind = kind;
  switch (kind) {
    case ExperimentKind::kConvergenceSweep:
    case ExperimentKind::kMetricComparison:
      s.backtracking = false;
      break;
    case ExperimentKind::kMisspecTable:
      s.backtracking = false;
      s.max_iters = 12000;
      break;
    case ExperimentKind::kMahalanobisStudy:
      s.max_iters = 10000;
      break;
    case ExperimentKind::kRealDataFit:
      s.dims = FactorDims();
      s.n_obs = 0;
      s.max_iters = 5000;
      break;
  }
  return s;
}

// ---------------------------------------------------------------------------

FactorSet generate_truth(const FactorDims &dims, Rng &rng) {
  std::vector<Matrix> f;
  for (std::size_t i = 0; i < dims.modes(); ++i) {
    const auto d = static_cast<Eigen::Index>(dims[i]);
    Matrix l = rng.normal_matrix(d, d).triangularView<Eigen::Lower>();
    l.diagonal().array() += static_cast<double>(d);
    Matrix s = symmetrize(l * l.transpose());
    if (i > 0) s /= std::exp(SpdMatrix(s).logdet() / static_cast<double>(d));
    f.push_back(std::move(s));
  }
  return FactorSet(std::move(f));
}

Matrix misspecified_truth(const FactorSet &truth, std::size_t rank, double xi, Rng &rng) {
  if (!(xi > 0.0)) throw ValidationError("xi must be positive");
  Matrix sigma = dense_kron(truth);
  const double sd = std::sqrt(xi);
  for (std::size_t k = 0; k < rank; ++k) {
    const Matrix x = sd * rng.normal_matrix(sigma.rows(), 1);
    sigma.noalias() += x * x.transpose();
  }
  return symmetrize(sigma);
}

Matrix sample_dense_normal(const Matrix &sigma, std::size_t n, Rng &rng) {
  const Matrix l = cholesky_lower(sigma, "covariance");
  return l.triangularView<Eigen::Lower>() *
         rng.normal_matrix(sigma.rows(), static_cast<Eigen::Index>(n));
}

namespace {

double scatter_scale(const SufficientStats &stats) {
  if (stats.count == 0) throw ValidationError("initialization needs at least one observation");
  const double g = stats.scatter.trace() / static_cast<double>(stats.count);
  if (!(g > 0.0)) throw ValidationError("initialization needs tr(S) > 0");
  return g;
}

}  // namespace

JointState joint_start(const JointObjective &objective, const SufficientStats &stats,
                       bool orthogonalized, Rng &rng) {
  const auto scales = default_init_scales(stats.dims, scatter_scale(stats));
  return calibrate_scale(objective, initial_joint_state(stats.dims, scales, orthogonalized, rng));
}

MeanFieldState mean_field_start(const MeanFieldObjective &objective,
                                const SufficientStats &stats, Rng &rng) {
  const auto scales = default_init_scales(stats.dims, scatter_scale(stats));
  return calibrate_scale(objective, initial_mean_field_state(stats.dims, scales, rng));
}

std::optional<std::size_t> series_plateau(const std::vector<double> &values, double rel_tol,
                                          std::size_t window) {
  if (window < 2) throw ValidationError("plateau window must be at least 2");
  for (std::size_t k = window - 1; k < values.size(); ++k)
    if (std::abs(values[k] - values[k + 1 - window]) <= rel_tol * std::abs(values[k])) return k;
  return std::nullopt;
}

void parallel_for(std::size_t count, std::size_t threads,
                  const std::function<void(std::size_t)> &fn) {
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = std::min(threads, count);
  std::vector<std::exception_ptr> errors(count);
  if (threads <= 1) {
    for (std::size_t i = 0; i < count; ++i) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t)
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < count; i = next++) {
          try {
            fn(i);
          } catch (...) {
            errors[i] = std::current_exception();
          }
        }
      });
    for (auto &th : pool) th.join();
  }
  for (const auto &e : errors)
    if (e) std::rethrow_exception(e);
}

// ---------------------------------------------------------------------------

namespace {

struct Problem {
  FactorSet truth;
  SufficientStats stats;
};

Problem simulate_problem(const ExperimentSpec &spec) {
  const Rng root(spec.seed);
  Rng truth_rng = root.fork(0);
  Rng data_rng = root.fork(1);
  Problem p;
  p.truth = generate_truth(spec.dims, truth_rng);
  p.stats = sample_tensor_normal(p.truth, spec.n_obs, data_rng).stats;
  return p;
}

OptimizerConfig sweep_config(const ExperimentSpec &spec, StepSizes step, const Truth &truth) {
  OptimizerConfig cfg;
  cfg.step = step;
  cfg.max_iters = spec.max_iters;
  cfg.record_every = spec.record_every;
  cfg.backtracking = spec.backtracking;
  cfg.stop_when_converged = false;
  cfg.truth = truth;
  return cfg;
}

void finish_cell(CellResult &cell) {
  if (cell.trace.rows.empty()) return;
  cell.elbo_plateau = plateau_iteration(cell.trace, 1e-8, 50);
  std::vector<double> d;
  for (const auto &r : cell.trace.rows) d.push_back(r.distance_sq.value_or(0.0));
  if (const auto k = series_plateau(d, 1e-4, 50)) cell.distance_plateau = cell.trace.rows[*k].iteration;
}

template <typename Fit>
void store_fit(CellResult &cell, Fit &&fit) {
  cell.status = fit.status;
  cell.message = fit.message;
  cell.iterations = fit.iterations;
  cell.trace = std::move(fit.trace);
  finish_cell(cell);
}

double pow10(double e) { return std::pow(10.0, e); }

}  // namespace

SweepResult run_convergence_sweep(const ExperimentSpec &spec) {
  spec.validate();
  const Problem prob = simulate_problem(spec);
  const Rng root(spec.seed);
  Rng joint_rng = root.fork(2);
  Rng mf_rng = root.fork(3);
  const JointObjective joint(prob.stats, default_joint_prior(prob.stats), true);
  const MeanFieldObjective mf(prob.stats, default_mean_field_prior(prob.stats));
  const JointState joint_init = joint_start(joint, prob.stats, true, joint_rng);
  const MeanFieldState mf_init = mean_field_start(mf, prob.stats, mf_rng);

  SweepResult out;
  out.truth = prob.truth;
  for (double e : spec.joint_grid) {
    CellResult c;
    c.method = "joint";
    c.metric = MetricKind::kPullbackOrthogonalized;
    c.log10_eps = c.log10_eps_dof = e;
    out.cells.push_back(std::move(c));
  }
  for (double e : spec.mean_field_grid) {
    CellResult c;
    c.method = "meanfield";
    c.metric = MetricKind::kProductManifold;
    c.log10_eps = c.log10_eps_dof = e;
    out.cells.push_back(std::move(c));
  }
  parallel_for(out.cells.size(), spec.threads, [&](std::size_t i) {
    CellResult &c = out.cells[i];
    const OptimizerConfig cfg = sweep_config(spec, StepSizes::global(pow10(c.log10_eps)), prob.truth);
    if (c.method == "joint")
      store_fit(c, fit_joint(joint, joint_init, cfg));
    else
      store_fit(c, fit_mean_field(mf, mf_init, cfg));
  });
  return out;
}

SweepResult run_metric_comparison(const ExperimentSpec &spec) {
  spec.validate();
  const Problem prob = simulate_problem(spec);
  const Rng root(spec.seed);
  Rng init_rng = root.fork(2);
  const JointPrior prior = default_joint_prior(prob.stats);
  const JointObjective orth(prob.stats, prior, true);
  const JointObjective full(prob.stats, prior, false);
  // Both arms start from the same (x)_i A_i.
  const JointState pullback_init = joint_start(orth, prob.stats, true, init_rng);
  const JointState product_init = pullback_init;

  SweepResult out;
  out.truth = prob.truth;
  {
    CellResult c;
    c.method = "joint";
    c.metric = MetricKind::kPullbackOrthogonalized;
    c.log10_eps = spec.eps_pullback;
    c.log10_eps_dof = spec.eps_dof;
    out.cells.push_back(std::move(c));
  }
  for (double e : spec.product_grid) {
    CellResult c;
    c.method = "joint";
    c.metric = MetricKind::kProductManifold;
    c.log10_eps = e;
    c.log10_eps_dof = spec.eps_dof;
    out.cells.push_back(std::move(c));
  }
  parallel_for(out.cells.size(), spec.threads, [&](std::size_t i) {
    CellResult &c = out.cells[i];
    OptimizerConfig cfg =
        sweep_config(spec, {pow10(c.log10_eps), pow10(c.log10_eps_dof)}, prob.truth);
    cfg.metric = c.metric;
    if (c.metric == MetricKind::kPullbackOrthogonalized)
      store_fit(c, fit_joint(orth, pullback_init, cfg));
    else
      store_fit(c, fit_joint(full, product_init, cfg));
  });
  return out;
}

// ---------------------------------------------------------------------------

namespace {

std::vector<double> quantiles(std::vector<double> v, const std::vector<double> &probs) {
  std::vector<double> out;
  if (v.empty()) return out;
  std::sort(v.begin(), v.end());
  for (double p : probs) {
    const double h = p * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const std::size_t hi = std::min(lo + 1, v.size() - 1);
    out.push_back(v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]));
  }
  return out;
}

}  // namespace

void summarize_series(MahalanobisSeries &s) {
  const double n = static_cast<double>(s.values.size());
  if (s.values.empty()) return;
  double mean = 0.0;
  for (double v : s.values) mean += v;
  mean /= n;
  double var = 0.0;
  for (double v : s.values) var += (v - mean) * (v - mean);
  s.mean = mean;
  s.variance = s.values.size() > 1 ? var / (n - 1.0) : 0.0;
  s.quantiles = quantiles(s.values, {0.05, 0.25, 0.5, 0.75, 0.95});
}

namespace {

constexpr std::size_t kDenseBaselineLimit = 6000;

}  // namespace

MahalanobisResult run_mahalanobis_study(const ExperimentSpec &spec) {
  spec.validate();
  const Problem prob = simulate_problem(spec);
  const Rng root(spec.seed);
  Rng joint_rng = root.fork(2);
  Rng mf_rng = root.fork(3);
  const JointPrior prior = default_joint_prior(prob.stats);
  const JointObjective joint(prob.stats, prior, true);
  const MeanFieldObjective mf(prob.stats, default_mean_field_prior(prob.stats));
  const JointState joint_init = joint_start(joint, prob.stats, true, joint_rng);
  const MeanFieldState mf_init = mean_field_start(mf, prob.stats, mf_rng);

  MahalanobisResult out;
  out.fits.resize(2);
  out.fits[0].method = "joint";
  out.fits[0].log10_eps = out.fits[0].log10_eps_dof = spec.study_eps_joint;
  out.fits[1].method = "meanfield";
  out.fits[1].metric = MetricKind::kProductManifold;
  out.fits[1].log10_eps = out.fits[1].log10_eps_dof = spec.study_eps_mean_field;

  std::optional<JointState> joint_state;
  std::optional<MeanFieldState> mf_state;
  parallel_for(2, spec.threads, [&](std::size_t i) {
    OptimizerConfig cfg = sweep_config(
        spec, StepSizes::global(pow10(out.fits[i].log10_eps)), prob.truth);
    cfg.stop_when_converged = true;
    if (i == 0) {
      JointFit f = fit_joint(joint, joint_init, cfg);
      joint_state = f.state;
      store_fit(out.fits[0], std::move(f));
    } else {
      MeanFieldFit f = fit_mean_field(mf, mf_init, cfg);
      mf_state = f.state;
      store_fit(out.fits[1], std::move(f));
    }
  });

  const FactorSet truth_inverse = inverse_factors(prob.truth);
  const std::size_t p = spec.dims.total();
  out.series.resize(3);
  out.series[0].method = "unstructured";
  out.series[1].method = "joint";
  out.series[2].method = "meanfield";

  parallel_for(3, spec.threads, [&](std::size_t s) {
    MahalanobisSeries &series = out.series[s];
    Rng draw_rng = root.fork(10 + s);
    Rng inner_rng = root.fork(20 + s);
    try {
      if (s == 0) {
        if (p > kDenseBaselineLimit)
          throw ValidationError("dense baseline skipped: p = " + std::to_string(p) +
                                " exceeds " + std::to_string(kDenseBaselineLimit));
        const Matrix post = symmetrize(dense_kron(std::get<FactorSet>(prior.scale)) +
                                       prob.stats.scatter);
        const WishartSpec ws{prior.nu + static_cast<double>(prob.stats.count), post, true};
        for (std::size_t t = 0; t < spec.draws; ++t) {
          Rng r = draw_rng.split();
          const PrecisionFactor w = iw_precision_cholesky(ws, r);
          series.values.push_back(mahalanobis_predictive(truth_inverse, {w}, spec.inner, inner_rng)[0]);
        }
      } else if (s == 1) {
        const WishartSpec ws{joint_state->nu_v(), joint_state->a, true};
        for (std::size_t t = 0; t < spec.draws; ++t) {
          Rng r = draw_rng.split();
          const Matrix w = iw_precision_cholesky(ws, r);
          if (t < 3)
            out.joint_residual = std::max(
                out.joint_residual,
                nearest_kronecker_residual(covariance_from_precision_cholesky(w), spec.dims));
          series.values.push_back(
              mahalanobis_predictive(truth_inverse, {PrecisionFactor(w)}, spec.inner, inner_rng)[0]);
        }
      } else {
        const auto nu = mf_state->nu_v();
        for (std::size_t t = 0; t < spec.draws; ++t) {
          std::vector<Matrix> ws;
          for (std::size_t i = 0; i < nu.size(); ++i) {
            Rng r = draw_rng.split();
            ws.push_back(iw_precision_cholesky({nu[i], Matrix(mf_state->a[i]), true}, r));
          }
          const FactorSet wf(std::move(ws));
          if (t < 3) {
            std::vector<Matrix> cov;
            for (const auto &w : wf) cov.push_back(covariance_from_precision_cholesky(w));
            out.mean_field_residual =
                std::max(out.mean_field_residual,
                         nearest_kronecker_residual(dense_kron(FactorSet(cov)), spec.dims));
          }
          series.values.push_back(
              mahalanobis_predictive(truth_inverse, {PrecisionFactor(wf)}, spec.inner, inner_rng)[0]);
        }
      }
    } catch (const Error &e) {
      series.message = e.what();
    }
    summarize_series(series);
  });
  return out;
}

// ---------------------------------------------------------------------------

namespace {

double relative_kron_gap(const FactorSet &x, const FactorSet &y) {
  double xx = 1.0, yy = 1.0, xy = 1.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    xx *= x[i].squaredNorm();
    yy *= y[i].squaredNorm();
    xy *= x[i].cwiseProduct(y[i]).sum();
  }
  return std::sqrt(std::max(0.0, xx + yy - 2.0 * xy) / yy);
}

}  // namespace

std::vector<MisspecRow> run_misspec_table(const ExperimentSpec &spec) {
  spec.validate();
  const Rng root(spec.seed);
  Rng truth_rng = root.fork(0);
  const FactorSet truth = generate_truth(spec.dims, truth_rng);

  std::vector<MisspecRow> rows;
  for (const char *method : {"joint", "meanfield"})
    for (std::size_t r : spec.ranks) {
      MisspecRow row;
      row.method = method;
      row.rank = r;
      rows.push_back(row);
    }

  // One data set per rank, shared by both methods.
  std::vector<SufficientStats> stats(spec.ranks.size());
  for (std::size_t k = 0; k < spec.ranks.size(); ++k) {
    Rng mis_rng = root.fork(100 + k);
    Rng data_rng = root.fork(200 + k);
    const Matrix sigma = misspecified_truth(truth, spec.ranks[k], spec.xi, mis_rng);
    stats[k] = SufficientStats::from_observations(spec.dims,
                                                  sample_dense_normal(sigma, spec.n_obs, data_rng));
  }

  parallel_for(rows.size(), spec.threads, [&](std::size_t i) {
    MisspecRow &row = rows[i];
    const std::size_t k = i % spec.ranks.size();
    const SufficientStats &st = stats[k];
    Rng init_rng = root.fork(300 + k);
    OptimizerConfig cfg;
    cfg.max_iters = spec.max_iters;
    cfg.record_every = spec.record_every;
    cfg.backtracking = spec.backtracking;
    cfg.stop_when_converged = false;
    std::vector<std::pair<std::size_t, FactorSet>> means;
    cfg.on_mean = [&](std::size_t it, const FactorSet &m) { means.emplace_back(it, m); };
    Trace trace;
    if (row.method == "joint") {
      cfg.step = StepSizes::global(pow10(spec.eps_joint));
      const JointObjective obj(st, default_joint_prior(st), true);
      JointFit f = fit_joint(obj, joint_start(obj, st, true, init_rng), cfg);
      row.status = f.status;
      row.message = f.message;
      trace = std::move(f.trace);
    } else {
      cfg.step = StepSizes::global(pow10(spec.eps_mean_field));
      const MeanFieldObjective obj(st, default_mean_field_prior(st));
      MeanFieldFit f = fit_mean_field(obj, mean_field_start(obj, st, init_rng), cfg);
      row.status = f.status;
      row.message = f.message;
      trace = std::move(f.trace);
    }
    if (row.status == FitStatus::kDiverged || means.empty()) return;
    if (!plateau_iteration(trace, 1e-8, 50)) return;
    const FactorSet &last = means.back().second;
    for (const auto &[it, m] : means)
      if (relative_kron_gap(m, last) <= spec.beta) {
        row.count = it;
        break;
      }
  });
  return rows;
}

// ---------------------------------------------------------------------------

void DataArray::validate() const {
  if (shape.size() < 2)
    throw ValidationError("data needs at least one mode plus the observation mode");
  std::size_t total = 1;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (shape[i] == 0) throw ValidationError("extent of mode " + std::to_string(i + 1) + " is zero");
    total *= shape[i];
  }
  if (values.size() != total)
    throw ValidationError("data has " + std::to_string(values.size()) + " values but shape needs " +
                          std::to_string(total));
  if (!mode_names.empty() && mode_names.size() != shape.size())
    throw ValidationError("mode_names must name every mode");
  for (std::size_t i = 0; i < values.size(); ++i)
    if (!std::isfinite(values[i]))
      throw ValidationError("non-finite data value at flat index " + std::to_string(i));
}

Matrix correlation_from(const Matrix &a) {
  const Vector s = a.diagonal().cwiseSqrt().cwiseInverse();
  Matrix c = s.asDiagonal() * a * s.asDiagonal();
  c = symmetrize(c);
  c.diagonal().setOnes();
  return c;
}

ModeSummary summarize_mode(const Matrix &a) {
  ModeSummary m;
  m.correlation = correlation_from(a);
  Eigen::SelfAdjointEigenSolver<Matrix> eig(m.correlation);
  if (eig.info() != Eigen::Success) throw NumericError("eigendecomposition failed");
  const Eigen::Index d = a.rows();
  m.eigenvalues = eig.eigenvalues().reverse();
  const Eigen::Index k = std::min<Eigen::Index>(2, d);
  m.leading_vectors.resize(d, k);
  for (Eigen::Index j = 0; j < k; ++j) {
    Vector v = eig.eigenvectors().col(d - 1 - j);
    Eigen::Index idx = 0;
    v.cwiseAbs().maxCoeff(&idx);
    if (v(idx) < 0.0) v = -v;
    m.leading_vectors.col(j) = v;
  }
  return m;
}

RealDataResult run_real_data_fit(const DataArray &data, const ExperimentSpec &spec) {
  spec.validate();
  data.validate();
  const std::vector<std::size_t> extents(data.shape.begin(), data.shape.end() - 1);
  const FactorDims dims(extents);
  const std::size_t n = data.shape.back();
  if (n < 2) throw ValidationError("centering needs at least two observations");
  const auto p = static_cast<Eigen::Index>(dims.total());
  const auto nn = static_cast<Eigen::Index>(n);

  // Row-major with the observation mode last: value (cell, t) sits at cell * n + t.
  Matrix y = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      data.values.data(), p, nn);
  const Vector mean = y.rowwise().mean();
  y.colwise() -= mean;
  if (!(y.squaredNorm() > 0.0)) throw ValidationError("data has no variation after centering");
  // M = S + S / (n - 1).
  y *= std::sqrt(static_cast<double>(n) / static_cast<double>(n - 1));

  const double nu = static_cast<double>(p) + 2.0;
  const JointObjective obj(dims, n, nu, std::move(y), true);

  const Rng root(spec.seed);
  Rng init_rng = root.fork(0);
  std::vector<double> scales;
  for (std::size_t d : extents) scales.push_back(spec.gamma / static_cast<double>(d));
  const JointState init = calibrate_scale(obj, initial_joint_state(dims, scales, true, init_rng));

  OptimizerConfig cfg;
  cfg.step = {pow10(spec.eps), pow10(spec.eps_dof)};
  cfg.max_iters = spec.max_iters;
  cfg.record_every = spec.record_every;
  cfg.backtracking = spec.backtracking;
  RealDataResult out{fit_joint(obj, init, cfg), {}};
  for (const auto &a : out.fit.state.a) out.modes.push_back(summarize_mode(a));
  return out;
}

}  // namespace kronvb
