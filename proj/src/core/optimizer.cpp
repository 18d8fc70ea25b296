#include "kronvb/optimizer.hpp"

#include <boost/math/tools/minima.hpp>

#include <cmath>
#include <limits>

#include "kronvb/error.hpp"

namespace kronvb {

const char *to_string(FitStatus status) {
  switch (status) {
    case FitStatus::kConverged: return "converged";
    case FitStatus::kRunning: return "running";
    case FitStatus::kStalled: return "stalled";
    case FitStatus::kDiverged: return "diverged";
  }
  return "unknown";
}

void OptimizerConfig::validate() const {
  if (metric == MetricKind::kPullbackNaive)
    throw ValidationError("metric is degenerate: pullback-naive cannot be used for fitting");
  if (!(step.factors > 0.0) || !(step.dof > 0.0) || !std::isfinite(step.factors) ||
      !std::isfinite(step.dof))
    throw ValidationError("step sizes must be positive and finite");
  if (max_iters < 1) throw ValidationError("max_iters must be at least 1");
  if (!(convergence.elbo_rel_tol > 0.0) || !(convergence.grad_norm_tol > 0.0))
    throw ValidationError("convergence tolerances must be positive");
  if (convergence.window < 2) throw ValidationError("convergence window must be at least 2");
  if (record_every < 1) throw ValidationError("record_every must be at least 1");
}

FitStatus check_convergence(const Trace &trace, const ConvergenceCriteria &criteria) {
  if (trace.rows.empty()) throw ValidationError("empty trace");
  for (const auto &r : trace.rows)
    if (!std::isfinite(r.elbo) || !std::isfinite(r.grad_norm)) return FitStatus::kDiverged;
  if (trace.rows.size() < criteria.window) return FitStatus::kRunning;
  const double last = trace.rows.back().elbo;
  const double first = trace.rows[trace.rows.size() - criteria.window].elbo;
  const double rel = std::abs(last - first) / std::max(std::abs(last), 1e-300);
  if (rel > criteria.elbo_rel_tol) return FitStatus::kRunning;
  return trace.rows.back().grad_norm <= criteria.grad_norm_tol ? FitStatus::kConverged
                                                                : FitStatus::kStalled;
}

std::optional<std::size_t> plateau_iteration(const Trace &trace, double rel_tol,
                                             std::size_t window) {
  if (window < 2) throw ValidationError("plateau window must be at least 2");
  for (std::size_t k = window - 1; k < trace.rows.size(); ++k) {
    const double last = trace.rows[k].elbo;
    const double first = trace.rows[k + 1 - window].elbo;
    if (std::abs(last - first) <= rel_tol * std::abs(last)) return trace.rows[k].iteration;
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------

FactorSet mean_factors(const JointState &state) {
  const double p = static_cast<double>(state.a.dims().total());
  const double denom = state.nu_v() - p - 1.0;
  if (!(denom > 0.0)) throw ValidationError("degrees of freedom too small for the mean");
  std::vector<Matrix> f(state.a.matrices());
  f[0] /= denom;
  return FactorSet(std::move(f));
}

FactorSet mean_factors(const MeanFieldState &state) {
  const auto nu = state.nu_v();
  std::vector<Matrix> f;
  for (std::size_t i = 0; i < state.a.size(); ++i) {
    const double denom = nu[i] - static_cast<double>(state.a[i].rows()) - 1.0;
    if (!(denom > 0.0)) throw ValidationError("degrees of freedom too small for the mean");
    f.push_back(state.a[i] / denom);
  }
  return FactorSet(std::move(f));
}

namespace {

double kron_distance(const FactorSet &mean, const Truth &truth) {
  if (const auto *t = std::get_if<FactorSet>(&truth)) {
    if (!(t->dims() == mean.dims())) throw ValidationError("truth dims do not match the state");
    // ||X - Y||^2 = prod ||X_i||^2 + prod ||Y_i||^2 - 2 prod <X_i, Y_i>.
    double xx = 1.0, yy = 1.0, xy = 1.0;
    for (std::size_t i = 0; i < mean.size(); ++i) {
      xx *= mean[i].squaredNorm();
      yy *= (*t)[i].squaredNorm();
      xy *= mean[i].cwiseProduct((*t)[i]).sum();
    }
    return std::max(0.0, xx + yy - 2.0 * xy);
  }
  const Matrix &d = std::get<Matrix>(truth);
  const auto p = static_cast<Eigen::Index>(mean.dims().total());
  if (d.rows() != p || d.cols() != p) throw ValidationError("truth order does not match the state");
  return (dense_kron(mean) - d).squaredNorm();
}

}  // namespace

double distance_to_truth(const JointState &state, const Truth &truth) {
  return kron_distance(mean_factors(state), truth);
}

double distance_to_truth(const MeanFieldState &state, const Truth &truth) {
  return kron_distance(mean_factors(state), truth);
}

// ---------------------------------------------------------------------------

namespace {

struct JointOps {
  const JointObjective &obj;
  MetricKind metric;

  std::vector<double> dofs(const JointState &s) const { return {s.nu_v()}; }
  void step_dof(JointState &s, const ElboValue &v, double eps) const { s.z += eps * v.grad_z[0]; }
  std::vector<Matrix> grad_a(const ElboValue &v, const JointState &s) const {
    return obj.grad_a(v, s.nu_v());
  }
  double distance(const JointState &s, const Truth &t) const { return distance_to_truth(s, t); }
};

struct MeanFieldOps {
  const MeanFieldObjective &obj;
  MetricKind metric = MetricKind::kProductManifold;

  std::vector<double> dofs(const MeanFieldState &s) const { return s.nu_v(); }
  void step_dof(MeanFieldState &s, const ElboValue &v, double eps) const {
    for (std::size_t i = 0; i < s.z.size(); ++i) s.z[i] += eps * v.grad_z[i];
  }
  std::vector<Matrix> grad_a(const ElboValue &v, const MeanFieldState &s) const {
    return obj.grad_a(v, s.nu_v());
  }
  double distance(const MeanFieldState &s, const Truth &t) const { return distance_to_truth(s, t); }
};

template <typename State>
struct FitResult {
  State state;
  Trace trace;
  FitStatus status = FitStatus::kRunning;
  std::size_t iterations = 0;
  std::string message;
};

template <typename Ops, typename Objective, typename State>
FitResult<State> run(const Ops &ops, const Objective &obj, const State &init,
                     const OptimizerConfig &cfg) {
  cfg.validate();
  FitResult<State> res;
  res.state = init;
  ElboValue v;
  try {
    v = obj.evaluate(res.state);
  } catch (const NumericError &e) {
    res.status = FitStatus::kDiverged;
    res.message = std::string("initial state: ") + e.what();
    return res;
  }

  double last_scale = 1.0;
  for (std::size_t it = 0;; ++it) {
    const TangentVector r = riemannian_grad(res.state.a, v.grad_a, ops.metric);
    double norm_sq = gradient_norm_sq(v.grad_a, r);
    for (double g : v.grad_z) norm_sq += g * g;
    const double grad_norm = std::sqrt(std::max(norm_sq, 0.0));

    if (it % cfg.record_every == 0 || it == cfg.max_iters) {
      TraceRow row;
      row.iteration = it;
      row.elbo = v.value;
      row.grad_norm = grad_norm;
      for (const auto &a : res.state.a) row.log_dets.push_back(SpdMatrix(a).logdet());
      row.nu_v = ops.dofs(res.state);
      if (cfg.truth) row.distance_sq = ops.distance(res.state, *cfg.truth);
      row.step_scale = last_scale;
      res.trace.rows.push_back(row);
      if (cfg.on_record) cfg.on_record(row);
      if (cfg.on_mean) cfg.on_mean(it, mean_factors(res.state));
      res.status = check_convergence(res.trace, cfg.convergence);
      if (res.status == FitStatus::kStalled) res.status = FitStatus::kRunning;
    }
    res.iterations = it;
    if (cfg.stop_when_converged && res.status == FitStatus::kConverged) break;
    if (it == cfg.max_iters) break;

    bool accepted = false;
    std::string failure;
    double scale = 1.0;
    State cand;
    ElboValue vc;
    for (std::size_t attempt = 0; attempt <= (cfg.backtracking ? cfg.max_halvings : 0);
         ++attempt, scale *= 0.5) {
      try {
        cand = res.state;
        ops.step_dof(cand, v, scale * cfg.step.dof);
        const auto g = ops.grad_a(v, cand);
        const TangentVector rg = riemannian_grad(res.state.a, g, ops.metric);
        cand.a = geodesic_step(res.state.a, rg, scale * cfg.step.factors, ops.metric);
        vc = obj.evaluate(cand);
      } catch (const NumericError &e) {
        failure = e.what();
        continue;
      }
      if (!cfg.backtracking || vc.value >= v.value - 1e-12 * std::abs(v.value)) {
        accepted = true;
        break;
      }
      failure = "no ascent step found";
    }
    if (!accepted) {
      res.status = cfg.backtracking && failure == "no ascent step found" ? FitStatus::kStalled
                                                                         : FitStatus::kDiverged;
      res.message = "iteration " + std::to_string(it + 1) + ": " + failure;
      return res;
    }
    last_scale = scale;
    res.state = std::move(cand);
    v = std::move(vc);
  }
  if (res.status == FitStatus::kRunning) {
    const FitStatus s = check_convergence(res.trace, cfg.convergence);
    if (s == FitStatus::kStalled) res.status = s;
  }
  return res;
}

}  // namespace

JointFit fit_joint(const JointObjective &objective, const JointState &init,
                   const OptimizerConfig &cfg) {
  auto r = run(JointOps{objective, cfg.metric}, objective, init, cfg);
  return {std::move(r.state), std::move(r.trace), r.status, r.iterations, std::move(r.message)};
}

MeanFieldFit fit_mean_field(const MeanFieldObjective &objective, const MeanFieldState &init,
                            const OptimizerConfig &cfg) {
  OptimizerConfig c = cfg;
  c.metric = MetricKind::kProductManifold;
  auto r = run(MeanFieldOps{objective}, objective, init, c);
  return {std::move(r.state), std::move(r.trace), r.status, r.iterations, std::move(r.message)};
}

// ---------------------------------------------------------------------------

FactorSet random_initial_factors(const FactorDims &dims, const std::vector<double> &scales,
                                 Rng &rng) {
  if (scales.size() != dims.modes()) throw ValidationError("need one scale per mode");
  std::vector<Matrix> f;
  for (std::size_t i = 0; i < dims.modes(); ++i) {
    const auto d = static_cast<Eigen::Index>(dims[i]);
    if (!(scales[i] > 0.0)) throw ValidationError("initial scales must be positive");
    const WishartSpec spec{static_cast<double>(d) + 2.0, Matrix(Matrix::Identity(d, d) * scales[i]),
                           true};
    f.push_back(covariance_from_precision_cholesky(iw_precision_cholesky(spec, rng)));
  }
  return FactorSet(std::move(f));
}

JointState initial_joint_state(const FactorDims &dims, const std::vector<double> &scales,
                               bool orthogonalized, Rng &rng) {
  FactorSet a = random_initial_factors(dims, scales, rng);
  if (orthogonalized) a = normalize_determinants(a);
  return JointState::with_dof(static_cast<double>(dims.total()) + 2.0, std::move(a));
}

MeanFieldState initial_mean_field_state(const FactorDims &dims,
                                        const std::vector<double> &scales, Rng &rng) {
  std::vector<double> nu;
  for (std::size_t d : dims.extents()) nu.push_back(static_cast<double>(d) + 2.0);
  return MeanFieldState::with_dof(nu, random_initial_factors(dims, scales, rng));
}

namespace {

// argmax over log c of f, |log c| <= 50.
template <typename F>
double best_log_scale(F &&f) {
  auto neg = [&](double t) {
    try {
      const double v = f(t);
      return std::isfinite(v) ? -v : std::numeric_limits<double>::infinity();
    } catch (const NumericError &) {
      return std::numeric_limits<double>::infinity();
    }
  };
  const auto r = boost::math::tools::brent_find_minima(neg, -50.0, 50.0, 40);
  if (!std::isfinite(r.second)) throw NumericError("scale calibration found no finite bound");
  return r.first;
}

}  // namespace

JointState calibrate_scale(const JointObjective &objective, JointState state) {
  const Matrix a0 = state.a[0];
  const double t = best_log_scale([&](double t) {
    JointState s = state;
    s.a[0] = std::exp(t) * a0;
    return objective.value(s);
  });
  state.a[0] = std::exp(t) * a0;
  return state;
}

MeanFieldState calibrate_scale(const MeanFieldObjective &objective, MeanFieldState state,
                               std::size_t sweeps) {
  for (std::size_t sweep = 0; sweep < sweeps; ++sweep)
    for (std::size_t i = 0; i < state.a.size(); ++i) {
      const Matrix ai = state.a[i];
      const double t = best_log_scale([&](double t) {
        MeanFieldState s = state;
        s.a[i] = std::exp(t) * ai;
        return objective.value(s);
      });
      state.a[i] = std::exp(t) * ai;
    }
  return state;
}

std::vector<double> default_init_scales(const FactorDims &dims, double gamma) {
  if (!(gamma > 0.0)) throw ValidationError("gamma must be positive");
  std::vector<double> s;
  const double g = std::pow(gamma, 1.0 / static_cast<double>(dims.modes()));
  for (std::size_t d : dims.extents()) s.push_back(g / static_cast<double>(d));
  return s;
}

}  // namespace kronvb
