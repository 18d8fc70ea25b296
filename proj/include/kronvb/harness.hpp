#pragma once

// Experiment drivers: convergence sweeps, metric comparison, predictive
// Mahalanobis study, misspecification counts and the real-data workflow.

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "kronvb/optimizer.hpp"

namespace kronvb {

enum class ExperimentKind {
  kConvergenceSweep,
  kMetricComparison,
  kMahalanobisStudy,
  kMisspecTable,
  kRealDataFit,
};

const char *to_string(ExperimentKind kind);
// Accepts the names produced by to_string; ValidationError otherwise.
ExperimentKind parse_experiment_kind(const std::string &name);

// Step sizes are log10 exponents throughout.
struct ExperimentSpec {
  ExperimentKind kind = ExperimentKind::kConvergenceSweep;
  FactorDims dims{{5, 6, 4, 3}};
  std::size_t n_obs = 50;
  std::uint64_t seed = 1;
  std::size_t max_iters = 3000;
  std::size_t record_every = 1;
  std::size_t threads = 0;  // 0: hardware concurrency

  // Convergence sweep (global step, dof and factors alike).
  std::vector<double> joint_grid{-6.0, -5.5, -5.0, -4.75, -4.5, -4.4, -4.25};
  std::vector<double> mean_field_grid{-7.0, -6.5, -6.0, -5.5, -5.0};

  // Metric comparison and real-data fit (split steps).
  double eps_dof = -5.0;
  double eps_pullback = -3.5;
  std::vector<double> product_grid{-4.9, -5.2, -5.5, -5.8, -6.0};

  // Misspecification table.
  std::vector<std::size_t> ranks{0, 1, 3, 5};
  double xi = 0.2;
  double beta = 0.005;
  double eps_joint = -4.4;
  double eps_mean_field = -5.5;

  // Mahalanobis study.
  std::size_t draws = 200;
  std::size_t inner = 100;
  double study_eps_joint = -4.4;
  double study_eps_mean_field = -6.0;

  // Real-data fit.
  double gamma = 5.0;
  double eps = -4.4;
  bool backtracking = true;

  void validate() const;
  // Defaults for `kind`, e.g. longer runs for the misspecification table.
  static ExperimentSpec defaults(ExperimentKind kind);
};

// Sigma_i = L L^T with L lower triangular standard normal plus d_i on the
// diagonal; modes i > 0 rescaled to unit determinant.
FactorSet generate_truth(const FactorDims &dims, Rng &rng);

// (x)_i Sigma_i + sum_{k<r} x_k x_k^T with x_k ~ N(0, xi I).
Matrix misspecified_truth(const FactorSet &truth, std::size_t rank, double xi, Rng &rng);

// n draws y ~ N(0, sigma) as columns.
Matrix sample_dense_normal(const Matrix &sigma, std::size_t n, Rng &rng);

// Random starting points: factors from random_initial_factors with
// gamma = tr(S) / n, then calibrate_scale.
JointState joint_start(const JointObjective &objective, const SufficientStats &stats,
                       bool orthogonalized, Rng &rng);
MeanFieldState mean_field_start(const MeanFieldObjective &objective,
                                const SufficientStats &stats, Rng &rng);

// First position k >= window - 1 with |v[k] - v[k - window + 1]| <= rel_tol |v[k]|.
std::optional<std::size_t> series_plateau(const std::vector<double> &values, double rel_tol,
                                          std::size_t window);

struct CellResult {
  std::string method;  // "joint" or "meanfield"
  MetricKind metric = MetricKind::kPullbackOrthogonalized;
  double log10_eps = 0.0;      // factor step
  double log10_eps_dof = 0.0;  // dof step
  FitStatus status = FitStatus::kRunning;
  std::string message;
  std::size_t iterations = 0;
  std::optional<std::size_t> elbo_plateau;      // rel 1e-8 over 50 rows
  std::optional<std::size_t> distance_plateau;  // rel 1e-4 over 50 rows
  Trace trace;
};

struct SweepResult {
  FactorSet truth;
  std::vector<CellResult> cells;
};

SweepResult run_convergence_sweep(const ExperimentSpec &spec);
SweepResult run_metric_comparison(const ExperimentSpec &spec);

struct MahalanobisSeries {
  std::string method;  // "unstructured", "joint" or "meanfield"
  std::vector<double> values;
  double mean = 0.0;
  double variance = 0.0;
  std::vector<double> quantiles;  // at 0.05, 0.25, 0.5, 0.75, 0.95
  std::string message;            // non-empty when the method failed
};

// Fills mean, sample variance and type-7 quantiles from `values`.
void summarize_series(MahalanobisSeries &s);

struct MahalanobisResult {
  std::vector<MahalanobisSeries> series;
  std::vector<CellResult> fits;
  // Largest nearest-Kronecker residual over a few draws per family.
  double joint_residual = 0.0;
  double mean_field_residual = 0.0;
};

MahalanobisResult run_mahalanobis_study(const ExperimentSpec &spec);

struct MisspecRow {
  std::string method;
  std::size_t rank = 0;
  // First iteration with ||E[Sigma]_i - E[Sigma]_N||_F <= beta ||E[Sigma]_N||_F;
  // empty when the run did not settle by max_iters.
  std::optional<std::size_t> count;
  FitStatus status = FitStatus::kRunning;
  std::string message;
};

std::vector<MisspecRow> run_misspec_table(const ExperimentSpec &spec);

// Flat row-major array; the last mode indexes observations.
struct DataArray {
  std::vector<std::size_t> shape;
  std::vector<double> values;
  std::vector<std::string> mode_names;

  void validate() const;
};

struct ModeSummary {
  Matrix correlation;
  Vector eigenvalues;        // descending
  Matrix leading_vectors;    // d_i x min(2, d_i), sign fixed by largest entry
};

struct RealDataResult {
  JointFit fit;
  std::vector<ModeSummary> modes;
};

// Correlation matrix of an SPD matrix; the diagonal is set to exactly 1.
Matrix correlation_from(const Matrix &a);
ModeSummary summarize_mode(const Matrix &a);

// Centers the observations, fits the joint model with Lambda = S / (n - 1)
// from nu_v = p + 2 and summarizes each mode's mean correlation matrix.
RealDataResult run_real_data_fit(const DataArray &data, const ExperimentSpec &spec);

// Runs fn(0..count-1) on up to `threads` workers; results land by index.
void parallel_for(std::size_t count, std::size_t threads,
                  const std::function<void(std::size_t)> &fn);

}  // namespace kronvb
