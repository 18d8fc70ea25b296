#pragma once

#include <functional>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "kronvb/elbo.hpp"
#include "kronvb/geometry.hpp"
#include "kronvb/sampling.hpp"

namespace kronvb {

struct StepSizes {
  double factors = 1e-4;  // geodesic step for the scale factors
  double dof = 1e-4;      // gradient step in z-space

  static StepSizes global(double eps) { return {eps, eps}; }
};

struct ConvergenceCriteria {
  double elbo_rel_tol = 1e-8;
  double grad_norm_tol = 1e-6;
  std::size_t window = 50;  // recorded points
};

struct TraceRow {
  std::size_t iteration = 0;
  double elbo = 0.0;
  double grad_norm = 0.0;
  std::vector<double> log_dets;
  std::vector<double> nu_v;
  std::optional<double> distance_sq;  // ||E_q[Sigma] - Sigma*||_F^2
  double step_scale = 1.0;            // fraction of the nominal step taken
};

struct Trace {
  std::vector<TraceRow> rows;
};

enum class FitStatus { kConverged, kRunning, kStalled, kDiverged };
const char *to_string(FitStatus status);

using Truth = std::variant<FactorSet, Matrix>;

struct OptimizerConfig {
  MetricKind metric = MetricKind::kPullbackOrthogonalized;
  StepSizes step;
  std::size_t max_iters = 1000;
  ConvergenceCriteria convergence;
  std::size_t record_every = 1;
  // Halve the step (up to max_halvings times) whenever the ELBO would drop.
  bool backtracking = true;
  std::size_t max_halvings = 30;
  bool stop_when_converged = true;
  std::optional<Truth> truth;
  std::function<void(const TraceRow &)> on_record;
  // Receives E_q[Sigma] per mode (see mean_factors) at every recorded row.
  std::function<void(std::size_t iteration, const FactorSet &mean)> on_mean;

  void validate() const;
};

struct JointFit {
  JointState state;
  Trace trace;
  FitStatus status = FitStatus::kRunning;
  std::size_t iterations = 0;
  std::string message;
};

struct MeanFieldFit {
  MeanFieldState state;
  Trace trace;
  FitStatus status = FitStatus::kRunning;
  std::size_t iterations = 0;
  std::string message;
};

// Riemannian gradient ascent on the joint bound. Each iteration evaluates
// the bound and every T^(i), moves z by step.dof * dELBO/dz, recomputes the
// factor gradients at the new dof from the same traces, converts them under
// cfg.metric and takes a geodesic step of length step.factors. Under the
// orthogonalized pullback metric modes i > 0 are renormalized to unit
// determinant after each step.
JointFit fit_joint(const JointObjective &objective, const JointState &init,
                   const OptimizerConfig &cfg);

// The mean-field variant: product metric, all dofs updated together, no
// determinant normalization. cfg.metric is ignored.
MeanFieldFit fit_mean_field(const MeanFieldObjective &objective, const MeanFieldState &init,
                            const OptimizerConfig &cfg);

// Converged: relative ELBO change over the last `window` rows at most
// elbo_rel_tol and gradient norm at most grad_norm_tol. Stalled: the ELBO has
// plateaued but the gradient has not. Diverged: a non-finite entry.
FitStatus check_convergence(const Trace &trace, const ConvergenceCriteria &criteria);

// First recorded iteration whose ELBO differs from the one `window` rows
// earlier by at most rel_tol relative.
std::optional<std::size_t> plateau_iteration(const Trace &trace, double rel_tol,
                                             std::size_t window);

// ||E_q[Sigma] - truth||_F^2 with E_q[Sigma] = (x) A_i / (nu_v - p - 1).
double distance_to_truth(const JointState &state, const Truth &truth);
// Same with E_q[Sigma] = (x) [A_i / (nu_vi - d_i - 1)].
double distance_to_truth(const MeanFieldState &state, const Truth &truth);

// E_q[Sigma] per mode: A_i / (nu_vi - d_i - 1) for the mean field; for the
// joint family the scalar 1 / (nu_v - p - 1) is folded into mode 0.
FactorSet mean_factors(const JointState &state);
FactorSet mean_factors(const MeanFieldState &state);

// A_i ~ IW(d_i + 2, scales[i] I).
FactorSet random_initial_factors(const FactorDims &dims, const std::vector<double> &scales,
                                 Rng &rng);
// nu_v = p + 2, factors from random_initial_factors; modes i > 0 normalized
// to unit determinant when `orthogonalized`.
JointState initial_joint_state(const FactorDims &dims, const std::vector<double> &scales,
                               bool orthogonalized, Rng &rng);
// nu_vi = d_i + 2.
MeanFieldState initial_mean_field_state(const FactorDims &dims,
                                        const std::vector<double> &scales, Rng &rng);
// Rescales A_0 by the scalar c > 0 maximizing the bound with everything else
// fixed (Brent search over log c). The joint bound depends on the factors'
// overall scale only through c.
JointState calibrate_scale(const JointObjective &objective, JointState state);
// Same for the mean field, one scalar per mode, `sweeps` passes over the modes.
MeanFieldState calibrate_scale(const MeanFieldObjective &objective, MeanFieldState state,
                               std::size_t sweeps = 2);

// gamma^{1/D} / d_i per mode.
std::vector<double> default_init_scales(const FactorDims &dims, double gamma);

}  // namespace kronvb
