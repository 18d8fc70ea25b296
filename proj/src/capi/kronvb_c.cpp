#include "kronvb.h"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <memory>
#include <new>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "kronvb/error.hpp"
#include "kronvb/harness.hpp"
#include "kronvb/io.hpp"

using namespace kronvb;

struct kronvb_data {
  DataArray array;
};

struct kronvb_state {
  io::StateFile file;
};

struct kronvb_fit {
  FitStatus status = FitStatus::kRunning;
  std::string message;
  std::size_t iterations = 0;
  Trace trace;
  io::StateFile state;
  std::string last_row;
};

namespace {

thread_local std::string g_last_error;

kronvb_status fail(kronvb_status code, const std::string &msg) {
  g_last_error = msg;
  return code;
}

template <typename F>
kronvb_status guarded(F &&f) {
  try {
    f();
    g_last_error.clear();
    return KRONVB_OK;
  } catch (const Error &e) {
    return fail(static_cast<kronvb_status>(e.code()), e.what());
  } catch (const std::bad_alloc &) {
    return fail(KRONVB_ERR_NUMERIC, "out of memory");
  } catch (const std::exception &e) {
    return fail(KRONVB_ERR_NUMERIC, e.what());
  }
}

void require(const void *p, const char *name) {
  if (!p) throw ValidationError(std::string(name) + " must not be null");
}

FactorDims observation_dims(const DataArray &a) {
  return FactorDims(std::vector<std::size_t>(a.shape.begin(), a.shape.end() - 1));
}

Matrix observation_columns(const DataArray &a) {
  const FactorDims dims = observation_dims(a);
  const auto p = static_cast<Eigen::Index>(dims.total());
  const auto n = static_cast<Eigen::Index>(a.shape.back());
  return Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      a.values.data(), p, n);
}

std::size_t copy_out(const std::vector<std::size_t> &v, std::size_t *out, std::size_t cap) {
  for (std::size_t i = 0; i < v.size() && i < cap; ++i) out[i] = v[i];
  return v.size();
}

MetricKind metric_from(kronvb_metric m) {
  switch (m) {
    case KRONVB_METRIC_PULLBACK: return MetricKind::kPullbackOrthogonalized;
    case KRONVB_METRIC_PRODUCT: return MetricKind::kProductManifold;
    case KRONVB_METRIC_PULLBACK_NAIVE: return MetricKind::kPullbackNaive;
  }
  throw ValidationError("unknown metric");
}

template <typename Fit>
void store(kronvb_fit &out, Fit &&f) {
  out.status = f.status;
  out.message = f.message;
  out.iterations = f.iterations;
  out.trace = std::move(f.trace);
  out.state = io::StateFile::from(f.state);
  Trace last;
  if (!out.trace.rows.empty()) last.rows.push_back(out.trace.rows.back());
  out.last_row = io::trace_csv(last);
}

nlohmann::ordered_json factors_json(const FactorSet &f) {
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  for (const auto &m : f) {
    std::vector<double> v;
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) v.push_back(m(r, c));
    arr.push_back(v);
  }
  return arr;
}

void sample_impl(const io::StateFile &state, const io::StateFile *truth,
                 const kronvb_sample_options &o, const std::string &dir) {
  if (o.draws == 0) throw ValidationError("draws must be positive");
  if (truth && o.inner == 0) throw ValidationError("inner samples must be positive");
  if (state.family == "covariance") throw ValidationError("cannot sample from a covariance state");
  const FactorDims dims = state.factors.dims();
  if (truth) {
    if (truth->family != "covariance") throw ValidationError("truth must be a covariance state");
    if (!(truth->factors.dims() == dims)) throw ValidationError("truth dims differ from the state");
  }
  const bool joint = state.family == "joint";
  const Rng root(o.seed);
  Rng draw_rng = root.fork(0);
  Rng inner_rng = root.fork(1);
  std::vector<PrecisionFactor> precisions;
  nlohmann::ordered_json draws = nlohmann::ordered_json::array();
  double residual = 0.0;
  const JointState js = joint ? state.joint() : JointState{};
  const MeanFieldState ms = joint ? MeanFieldState{} : state.mean_field();
  for (std::size_t t = 0; t < o.draws; ++t) {
    if (joint) {
      Rng r = draw_rng.split();
      const Matrix w = iw_precision_cholesky({js.nu_v(), js.a, true}, r);
      const Matrix cov = covariance_from_precision_cholesky(w);
      if (t < 3) residual = std::max(residual, nearest_kronecker_residual(cov, dims));
      if (o.write_draws)
        draws.push_back(o.dense ? factors_json(FactorSet({cov})) : factors_json(FactorSet({w})));
      precisions.emplace_back(w);
    } else {
      const auto nu = ms.nu_v();
      std::vector<Matrix> ws, cov;
      for (std::size_t i = 0; i < nu.size(); ++i) {
        Rng r = draw_rng.split();
        ws.push_back(iw_precision_cholesky({nu[i], Matrix(ms.a[i]), true}, r));
        cov.push_back(covariance_from_precision_cholesky(ws.back()));
      }
      const FactorSet cf(cov);
      if (t < 3) residual = std::max(residual, nearest_kronecker_residual(dense_kron(cf), dims));
      if (o.write_draws)
        draws.push_back(o.dense ? factors_json(FactorSet({dense_kron(cf)})) : factors_json(cf));
      precisions.emplace_back(FactorSet(ws));
    }
  }

  nlohmann::ordered_json summary;
  summary["family"] = state.family;
  summary["dims"] = dims.extents();
  summary["draws"] = o.draws;
  summary["seed"] = o.seed;
  summary["mean_factors"] = factors_json(joint ? mean_factors(js) : mean_factors(ms));
  summary["kronecker_residual"] = residual;
  summary["separable"] = residual <= 1e-8;
  if (truth) {
    MahalanobisSeries s;
    s.values = mahalanobis_predictive(inverse_factors(truth->factors), precisions, o.inner, inner_rng);
    summarize_series(s);
    nlohmann::ordered_json m;
    m["inner"] = o.inner;
    m["values"] = s.values;
    m["mean"] = s.mean;
    m["variance"] = s.variance;
    m["quantile_probs"] = {0.05, 0.25, 0.5, 0.75, 0.95};
    m["quantiles"] = s.quantiles;
    summary["mahalanobis"] = m;
  }
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory '" + dir + "': " + ec.message());
  if (o.write_draws) {
    nlohmann::ordered_json d;
    d["family"] = state.family;
    d["form"] = o.dense ? "covariance" : (joint ? "precision-cholesky" : "covariance-factors");
    d["layout"] = "row-major";
    d["draws"] = draws;
    io::write_text((std::filesystem::path(dir) / "draws.json").string(), d.dump() + "\n");
  }
  io::write_text((std::filesystem::path(dir) / "summary.json").string(), summary.dump(2) + "\n");
}

}  // namespace

extern "C" {

const char *kronvb_version(void) { return "1.0.0"; }

const char *kronvb_last_error(void) { return g_last_error.c_str(); }

// ---- data -----------------------------------------------------------------

kronvb_status kronvb_simulate(const size_t *dims, size_t modes, size_t n, uint64_t seed,
                              kronvb_data **data, kronvb_state **truth) {
  return guarded([&] {
    require(dims, "dims");
    require(data, "data");
    if (modes == 0) throw ValidationError("dims must not be empty");
    if (n == 0) throw ValidationError("n must be positive");
    std::vector<std::size_t> d(dims, dims + modes);
    for (std::size_t x : d)
      if (x == 0) throw ValidationError("every extent in dims must be positive");
    const Rng root(seed);
    Rng truth_rng = root.fork(0);
    Rng data_rng = root.fork(1);
    const FactorSet t = generate_truth(FactorDims(d), truth_rng);
    const Matrix y = sample_tensor_normal(t, n, data_rng).observations;
    auto out = std::make_unique<kronvb_data>();
    out->array.shape = d;
    out->array.shape.push_back(n);
    out->array.values.resize(static_cast<std::size_t>(y.size()));
    for (Eigen::Index c = 0; c < y.rows(); ++c)
      for (Eigen::Index j = 0; j < y.cols(); ++j)
        out->array.values[static_cast<std::size_t>(c * y.cols() + j)] = y(c, j);
    if (truth) *truth = new kronvb_state{io::StateFile::covariance(t)};
    *data = out.release();
  });
}

kronvb_status kronvb_data_create(const size_t *shape, size_t modes, const double *values,
                                 kronvb_data **out) {
  return guarded([&] {
    require(shape, "shape");
    require(values, "values");
    require(out, "out");
    auto d = std::make_unique<kronvb_data>();
    d->array.shape.assign(shape, shape + modes);
    std::size_t total = modes == 0 ? 0 : 1;
    for (std::size_t x : d->array.shape) total *= x;
    d->array.values.assign(values, values + total);
    d->array.validate();
    *out = d.release();
  });
}

kronvb_status kronvb_data_read(const char *path, kronvb_data **out) {
  return guarded([&] {
    require(path, "path");
    require(out, "out");
    *out = new kronvb_data{io::read_data(path)};
  });
}

kronvb_status kronvb_data_write(const kronvb_data *data, const char *path) {
  return guarded([&] {
    require(data, "data");
    require(path, "path");
    io::write_data(path, data->array);
  });
}

kronvb_status kronvb_data_shape(const kronvb_data *data, size_t *shape, size_t capacity,
                                size_t *modes) {
  return guarded([&] {
    require(data, "data");
    const std::size_t m = copy_out(data->array.shape, shape, shape ? capacity : 0);
    if (modes) *modes = m;
  });
}

kronvb_status kronvb_data_values(const kronvb_data *data, const double **values, size_t *count) {
  return guarded([&] {
    require(data, "data");
    require(values, "values");
    *values = data->array.values.data();
    if (count) *count = data->array.values.size();
  });
}

kronvb_status kronvb_data_checksum(const kronvb_data *data, uint64_t *checksum) {
  return guarded([&] {
    require(data, "data");
    require(checksum, "checksum");
    if (data->array.shape.size() < 2)
      throw ValidationError("data needs at least one mode plus the observation mode");
    const Matrix y = observation_columns(data->array);
    const Matrix s = y * y.transpose();
    std::uint64_t h = 1469598103934665603ull;
    const auto *bytes = reinterpret_cast<const unsigned char *>(s.data());
    for (std::size_t i = 0; i < static_cast<std::size_t>(s.size()) * sizeof(double); ++i) {
      h ^= bytes[i];
      h *= 1099511628211ull;
    }
    *checksum = h;
  });
}

void kronvb_data_free(kronvb_data *data) { delete data; }

// ---- states ---------------------------------------------------------------

kronvb_status kronvb_state_read(const char *path, kronvb_state **out) {
  return guarded([&] {
    require(path, "path");
    require(out, "out");
    *out = new kronvb_state{io::read_state(path)};
  });
}

kronvb_status kronvb_state_write(const kronvb_state *state, const char *path) {
  return guarded([&] {
    require(state, "state");
    require(path, "path");
    io::write_state(path, state->file);
  });
}

const char *kronvb_state_family(const kronvb_state *state) {
  return state ? state->file.family.c_str() : "";
}

kronvb_status kronvb_state_dims(const kronvb_state *state, size_t *dims, size_t capacity,
                                size_t *modes) {
  return guarded([&] {
    require(state, "state");
    const std::size_t m =
        copy_out(state->file.factors.dims().extents(), dims, dims ? capacity : 0);
    if (modes) *modes = m;
  });
}

kronvb_status kronvb_state_nu(const kronvb_state *state, double *nu, size_t capacity,
                              size_t *count) {
  return guarded([&] {
    require(state, "state");
    const auto &v = state->file.nu_v;
    for (std::size_t i = 0; nu && i < v.size() && i < capacity; ++i) nu[i] = v[i];
    if (count) *count = v.size();
  });
}

kronvb_status kronvb_state_factor(const kronvb_state *state, size_t mode, double *out,
                                  size_t capacity) {
  return guarded([&] {
    require(state, "state");
    require(out, "out");
    if (mode >= state->file.factors.size()) throw ValidationError("mode out of range");
    const Matrix &m = state->file.factors[mode];
    if (capacity < static_cast<std::size_t>(m.size()))
      throw ValidationError("output buffer too small for factor " + std::to_string(mode + 1));
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) out[r * m.cols() + c] = m(r, c);
  });
}

void kronvb_state_free(kronvb_state *state) { delete state; }

// ---- fitting --------------------------------------------------------------

void kronvb_fit_options_default(kronvb_fit_options *o) {
  if (!o) return;
  o->method = KRONVB_JOINT;
  o->metric = KRONVB_METRIC_PULLBACK;
  o->orthogonalize = 1;
  o->log10_eps = -4.4;
  o->log10_eps_dof = -4.4;
  o->max_iters = 3000;
  o->record_every = 1;
  o->backtracking = 1;
  o->stop_when_converged = 1;
  o->seed = 1;
}

kronvb_status kronvb_fit_run(const kronvb_data *data, const kronvb_fit_options *options,
                             kronvb_fit **out) {
  return guarded([&] {
    require(data, "data");
    require(options, "options");
    require(out, "out");
    const kronvb_fit_options &o = *options;
    data->array.validate();
    const FactorDims dims = observation_dims(data->array);
    const SufficientStats stats =
        SufficientStats::from_observations(dims, observation_columns(data->array));

    OptimizerConfig cfg;
    cfg.metric = metric_from(o.metric);
    cfg.step = {std::pow(10.0, o.log10_eps), std::pow(10.0, o.log10_eps_dof)};
    cfg.max_iters = o.max_iters;
    cfg.record_every = o.record_every;
    cfg.backtracking = o.backtracking != 0;
    cfg.stop_when_converged = o.stop_when_converged != 0;

    // Same streams as the experiment harness: joint starts on fork 2, mean field on fork 3.
    const Rng root(o.seed);
    auto fit = std::make_unique<kronvb_fit>();
    if (o.method == KRONVB_JOINT) {
      const bool orth = o.orthogonalize != 0;
      const JointObjective obj(stats, default_joint_prior(stats), orth);
      Rng rng = root.fork(2);
      const JointState init = joint_start(obj, stats, orth, rng);
      store(*fit, fit_joint(obj, init, cfg));
    } else if (o.method == KRONVB_MEANFIELD) {
      cfg.metric = MetricKind::kProductManifold;
      const MeanFieldObjective obj(stats, default_mean_field_prior(stats));
      Rng rng = root.fork(3);
      const MeanFieldState init = mean_field_start(obj, stats, rng);
      store(*fit, fit_mean_field(obj, init, cfg));
    } else {
      throw ValidationError("unknown method");
    }
    *out = fit.release();
  });
}

kronvb_fit_status kronvb_fit_get_status(const kronvb_fit *fit) {
  if (!fit) return KRONVB_FIT_DIVERGED;
  switch (fit->status) {
    case FitStatus::kConverged: return KRONVB_FIT_CONVERGED;
    case FitStatus::kRunning: return KRONVB_FIT_RUNNING;
    case FitStatus::kStalled: return KRONVB_FIT_STALLED;
    case FitStatus::kDiverged: return KRONVB_FIT_DIVERGED;
  }
  return KRONVB_FIT_DIVERGED;
}

const char *kronvb_fit_message(const kronvb_fit *fit) { return fit ? fit->message.c_str() : ""; }

size_t kronvb_fit_iterations(const kronvb_fit *fit) { return fit ? fit->iterations : 0; }

double kronvb_fit_final_elbo(const kronvb_fit *fit) {
  if (!fit || fit->trace.rows.empty()) return std::nan("");
  return fit->trace.rows.back().elbo;
}

kronvb_status kronvb_fit_write_trace(const kronvb_fit *fit, const char *path) {
  return guarded([&] {
    require(fit, "fit");
    require(path, "path");
    io::write_text(path, io::trace_csv(fit->trace));
  });
}

const char *kronvb_fit_last_row(const kronvb_fit *fit) { return fit ? fit->last_row.c_str() : ""; }

kronvb_status kronvb_fit_state(const kronvb_fit *fit, kronvb_state **out) {
  return guarded([&] {
    require(fit, "fit");
    require(out, "out");
    *out = new kronvb_state{fit->state};
  });
}

void kronvb_fit_free(kronvb_fit *fit) { delete fit; }

// ---- sampling -------------------------------------------------------------

void kronvb_sample_options_default(kronvb_sample_options *o) {
  if (!o) return;
  o->draws = 200;
  o->inner = 100;
  o->seed = 1;
  o->dense = 0;
  o->write_draws = 0;
}

kronvb_status kronvb_sample_run(const kronvb_state *state, const kronvb_state *truth,
                                const kronvb_sample_options *options, const char *out_dir) {
  return guarded([&] {
    require(state, "state");
    require(options, "options");
    require(out_dir, "out_dir");
    sample_impl(state->file, truth ? &truth->file : nullptr, *options, out_dir);
  });
}

// ---- experiments ----------------------------------------------------------

kronvb_status kronvb_experiment_resolve(const char *config_json, char **resolved) {
  return guarded([&] {
    require(config_json, "config_json");
    require(resolved, "resolved");
    const std::string text = io::spec_to_json(io::spec_from_json(config_json));
    char *buf = static_cast<char *>(std::malloc(text.size() + 1));
    if (!buf) throw std::bad_alloc();
    std::memcpy(buf, text.c_str(), text.size() + 1);
    *resolved = buf;
  });
}

kronvb_status kronvb_experiment_run(const char *config_json, const char *data_path,
                                    const char *out_dir) {
  return guarded([&] {
    require(config_json, "config_json");
    require(out_dir, "out_dir");
    const ExperimentSpec spec = io::spec_from_json(config_json);
    switch (spec.kind) {
      case ExperimentKind::kConvergenceSweep:
      case ExperimentKind::kMetricComparison: {
        const SweepResult r = spec.kind == ExperimentKind::kConvergenceSweep
                                  ? run_convergence_sweep(spec)
                                  : run_metric_comparison(spec);
        io::write_sweep(out_dir, r);
        if (std::all_of(r.cells.begin(), r.cells.end(),
                        [](const CellResult &c) { return c.status == FitStatus::kDiverged; }))
          throw NumericError("every cell diverged");
        break;
      }
      case ExperimentKind::kMahalanobisStudy: {
        const MahalanobisResult r = run_mahalanobis_study(spec);
        io::write_mahalanobis(out_dir, r);
        if (std::all_of(r.series.begin(), r.series.end(),
                        [](const MahalanobisSeries &s) { return !s.message.empty(); }))
          throw NumericError("every series failed");
        break;
      }
      case ExperimentKind::kMisspecTable: {
        const auto rows = run_misspec_table(spec);
        io::write_misspec(out_dir, rows, spec);
        if (std::all_of(rows.begin(), rows.end(),
                        [](const MisspecRow &r) { return r.status == FitStatus::kDiverged; }))
          throw NumericError("every run diverged");
        break;
      }
      case ExperimentKind::kRealDataFit: {
        if (!data_path) throw ValidationError("real-data-fit needs a data file");
        const DataArray data = io::read_data(data_path);
        const RealDataResult r = run_real_data_fit(data, spec);
        io::write_real_data(out_dir, r, data);
        if (r.fit.status == FitStatus::kDiverged) throw NumericError("fit diverged: " + r.fit.message);
        break;
      }
    }
  });
}

void kronvb_string_free(char *s) { std::free(s); }

}  // extern "C"
