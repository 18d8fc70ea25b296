#include "kronvb/io.hpp"

#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "kronvb/error.hpp"

namespace kronvb::io {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

constexpr const char *kStateFormat = "kronvb-state";
constexpr const char *kFactorOrder = "first factor outermost, last mode fastest";

std::vector<double> row_major(const Matrix &m) {
  std::vector<double> v;
  v.reserve(static_cast<std::size_t>(m.size()));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) v.push_back(m(r, c));
  return v;
}

Matrix from_row_major(const std::vector<double> &v, std::size_t d, const std::string &what) {
  if (v.size() != d * d)
    throw ValidationError(what + " has " + std::to_string(v.size()) + " entries, expected " +
                          std::to_string(d * d));
  const auto n = static_cast<Eigen::Index>(d);
  Matrix m(n, n);
  for (Eigen::Index r = 0; r < n; ++r)
    for (Eigen::Index c = 0; c < n; ++c) m(r, c) = v[static_cast<std::size_t>(r * n + c)];
  return m;
}

std::string sidecar_path(const std::string &path) { return path + ".json"; }

void ensure_dir(const std::string &dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory '" + dir + "': " + ec.message());
}

std::string join(const std::string &dir, const char *name) {
  return (std::filesystem::path(dir) / name).string();
}

template <typename T>
T get_key(const json &j, const char *key, const std::string &where) {
  if (!j.contains(key)) throw ValidationError(where + " is missing \"" + key + "\"");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception &) {
    throw ValidationError(where + " has a malformed \"" + key + "\"");
  }
}

json parse_json(const std::string &text, const std::string &where) {
  try {
    return json::parse(text);
  } catch (const json::parse_error &e) {
    throw ValidationError(where + " is not valid JSON: " + e.what());
  }
}

std::string opt_count(const std::optional<std::size_t> &v) {
  return v ? std::to_string(*v) : std::string();
}

ordered_json opt_json(const std::optional<std::size_t> &v) {
  return v ? ordered_json(*v) : ordered_json(nullptr);
}

ordered_json matrix_rows(const Matrix &m) {
  ordered_json rows = ordered_json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    ordered_json row = ordered_json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(row);
  }
  return rows;
}

ordered_json cell_json(const CellResult &c) {
  ordered_json j;
  j["method"] = c.method;
  j["metric"] = to_string(c.metric);
  j["log10_eps"] = c.log10_eps;
  j["log10_eps_dof"] = c.log10_eps_dof;
  j["status"] = to_string(c.status);
  j["message"] = c.message;
  j["iterations"] = c.iterations;
  j["elbo_plateau"] = opt_json(c.elbo_plateau);
  j["distance_plateau"] = opt_json(c.distance_plateau);
  if (!c.trace.rows.empty()) j["final_elbo"] = c.trace.rows.back().elbo;
  return j;
}

std::string dump(const ordered_json &j) { return j.dump(2) + "\n"; }

}  // namespace

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, r.ptr);
}

void write_text(const std::string &path, const std::string &text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw IoError("write to '" + path + "' failed");
}

std::string read_text(const std::string &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw IoError("read from '" + path + "' failed");
  return ss.str();
}

// ---------------------------------------------------------------------------

void write_data(const std::string &path, const DataArray &data) {
  data.validate();
  std::string bytes(data.values.size() * 8, '\0');
  for (std::size_t i = 0; i < data.values.size(); ++i) {
    auto u = std::bit_cast<std::uint64_t>(data.values[i]);
    if constexpr (std::endian::native == std::endian::big) u = __builtin_bswap64(u);
    std::memcpy(bytes.data() + 8 * i, &u, 8);
  }
  write_text(path, bytes);
  ordered_json side;
  side["shape"] = data.shape;
  side["layout"] = "row-major";
  side["dtype"] = "f64le";
  side["observation_mode"] = "last";
  if (!data.mode_names.empty()) side["mode_names"] = data.mode_names;
  write_text(sidecar_path(path), dump(side));
}

DataArray read_binary_data(const std::string &path) {
  const std::string where = "sidecar '" + sidecar_path(path) + "'";
  const json side = parse_json(read_text(sidecar_path(path)), where);
  if (!side.is_object()) throw ValidationError(where + " must be a JSON object");
  for (const auto &[key, value] : side.items())
    if (key != "shape" && key != "layout" && key != "dtype" && key != "mode_names" &&
        key != "observation_mode")
      throw ValidationError(where + " has unknown key \"" + key + "\"");
  DataArray d;
  d.shape = get_key<std::vector<std::size_t>>(side, "shape", where);
  if (side.contains("layout") && get_key<std::string>(side, "layout", where) != "row-major")
    throw ValidationError(where + ": only row-major layout is supported");
  if (side.contains("dtype") && get_key<std::string>(side, "dtype", where) != "f64le")
    throw ValidationError(where + ": only f64le data is supported");
  if (side.contains("mode_names"))
    d.mode_names = get_key<std::vector<std::string>>(side, "mode_names", where);

  const std::string bytes = read_text(path);
  if (bytes.size() % 8 != 0)
    throw ValidationError("'" + path + "' length " + std::to_string(bytes.size()) +
                          " is not a multiple of 8 bytes");
  d.values.resize(bytes.size() / 8);
  for (std::size_t i = 0; i < d.values.size(); ++i) {
    std::uint64_t u = 0;
    std::memcpy(&u, bytes.data() + 8 * i, 8);
    if constexpr (std::endian::native == std::endian::big) u = __builtin_bswap64(u);
    d.values[i] = std::bit_cast<double>(u);
  }
  d.validate();
  return d;
}

DataArray read_csv_data(const std::string &path) {
  std::istringstream in(read_text(path));
  DataArray d;
  std::string line;
  std::size_t line_no = 0, rows = 0, cols = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos || line[0] == '#') continue;
    std::size_t col = 0, start = 0;
    while (true) {
      const std::size_t end = line.find(',', start);
      std::string field = line.substr(start, end == std::string::npos ? std::string::npos : end - start);
      const auto b = field.find_first_not_of(" \t");
      const auto e = field.find_last_not_of(" \t");
      field = b == std::string::npos ? std::string() : field.substr(b, e - b + 1);
      ++col;
      double v = 0.0;
      const auto r = std::from_chars(field.data(), field.data() + field.size(), v);
      if (field.empty() || r.ec != std::errc() || r.ptr != field.data() + field.size())
        throw ValidationError("'" + path + "' line " + std::to_string(line_no) + ", column " +
                              std::to_string(col) + ": '" + field + "' is not a number");
      if (!std::isfinite(v))
        throw ValidationError("'" + path + "' line " + std::to_string(line_no) + ", column " +
                              std::to_string(col) + ": non-finite value");
      d.values.push_back(v);
      if (end == std::string::npos) break;
      start = end + 1;
    }
    if (rows == 0) cols = col;
    else if (col != cols)
      throw ValidationError("'" + path + "' line " + std::to_string(line_no) + " has " +
                            std::to_string(col) + " columns, expected " + std::to_string(cols));
    ++rows;
  }
  if (rows == 0) throw ValidationError("'" + path + "' has no data rows");
  d.shape = {rows, cols};
  d.validate();
  return d;
}

DataArray read_data(const std::string &path) {
  if (std::filesystem::path(path).extension() == ".csv") return read_csv_data(path);
  return read_binary_data(path);
}

// ---------------------------------------------------------------------------

StateFile StateFile::from(const JointState &s) { return {"joint", s.a, {s.nu_v()}}; }

StateFile StateFile::from(const MeanFieldState &s) { return {"meanfield", s.a, s.nu_v()}; }

StateFile StateFile::covariance(const FactorSet &sigma) { return {"covariance", sigma, {}}; }

void StateFile::validate() const {
  if (factors.size() == 0) throw ValidationError("state has no factors");
  if (family == "joint") {
    if (nu_v.size() != 1) throw ValidationError("joint state needs exactly one nu_v");
  } else if (family == "meanfield") {
    if (nu_v.size() != factors.size())
      throw ValidationError("meanfield state needs one nu_v per mode");
  } else if (family == "covariance") {
    if (!nu_v.empty()) throw ValidationError("covariance state takes no nu_v");
  } else {
    throw ValidationError("unknown state family '" + family + "'");
  }
  for (std::size_t i = 0; i < factors.size(); ++i)
    if (!factors[i].allFinite())
      throw ValidationError("factor " + std::to_string(i + 1) + " has non-finite entries");
}

JointState StateFile::joint() const {
  if (family != "joint") throw ValidationError("expected a joint state, got '" + family + "'");
  validate();
  return JointState::with_dof(nu_v[0], factors);
}

MeanFieldState StateFile::mean_field() const {
  if (family != "meanfield")
    throw ValidationError("expected a meanfield state, got '" + family + "'");
  validate();
  return MeanFieldState::with_dof(nu_v, factors);
}

std::string state_to_json(const StateFile &state) {
  state.validate();
  ordered_json j;
  j["format"] = kStateFormat;
  j["version"] = 1;
  j["family"] = state.family;
  j["factor_order"] = kFactorOrder;
  j["scale_mode"] = 0;
  j["layout"] = "row-major";
  j["dims"] = state.factors.dims().extents();
  if (!state.nu_v.empty()) j["nu_v"] = state.nu_v;
  ordered_json f = ordered_json::array();
  for (const auto &m : state.factors) f.push_back(row_major(m));
  j["factors"] = f;
  return dump(j);
}

StateFile state_from_json(const std::string &text) {
  const std::string where = "state";
  const json j = parse_json(text, where);
  if (!j.is_object()) throw ValidationError("state must be a JSON object");
  static const std::set<std::string> known{"format", "version", "family", "factor_order",
                                           "scale_mode", "layout", "dims", "nu_v", "factors"};
  for (const auto &[key, value] : j.items())
    if (!known.count(key)) throw ValidationError("state has unknown key \"" + key + "\"");
  if (get_key<std::string>(j, "format", where) != kStateFormat)
    throw ValidationError("not a kronvb state file");
  if (get_key<int>(j, "version", where) != 1) throw ValidationError("unsupported state version");
  if (j.contains("factor_order") && get_key<std::string>(j, "factor_order", where) != kFactorOrder)
    throw ValidationError("state uses an unsupported factor order");
  if (j.contains("scale_mode") && get_key<int>(j, "scale_mode", where) != 0)
    throw ValidationError("state must carry the scale in mode 0");
  if (j.contains("layout") && get_key<std::string>(j, "layout", where) != "row-major")
    throw ValidationError("state factors must be row-major");
  StateFile s;
  s.family = get_key<std::string>(j, "family", where);
  const auto dims = get_key<std::vector<std::size_t>>(j, "dims", where);
  const auto raw = get_key<std::vector<std::vector<double>>>(j, "factors", where);
  if (raw.size() != dims.size())
    throw ValidationError("state has " + std::to_string(raw.size()) + " factors for " +
                          std::to_string(dims.size()) + " dims");
  std::vector<Matrix> f;
  for (std::size_t i = 0; i < dims.size(); ++i)
    f.push_back(from_row_major(raw[i], dims[i], "factor " + std::to_string(i + 1)));
  s.factors = FactorSet(std::move(f));
  if (j.contains("nu_v")) s.nu_v = get_key<std::vector<double>>(j, "nu_v", where);
  s.validate();
  return s;
}

void write_state(const std::string &path, const StateFile &state) {
  write_text(path, state_to_json(state));
}

StateFile read_state(const std::string &path) { return state_from_json(read_text(path)); }

// ---------------------------------------------------------------------------

std::string trace_csv(const Trace &trace) {
  std::ostringstream out;
  const std::size_t n_nu = trace.rows.empty() ? 0 : trace.rows.front().nu_v.size();
  const std::size_t n_ld = trace.rows.empty() ? 0 : trace.rows.front().log_dets.size();
  const bool dist = !trace.rows.empty() && trace.rows.front().distance_sq.has_value();
  out << "iteration,elbo,grad_norm,step_scale";
  for (std::size_t i = 0; i < n_nu; ++i) out << ",nu_v" << (n_nu > 1 ? std::to_string(i + 1) : "");
  for (std::size_t i = 0; i < n_ld; ++i) out << ",log_det" << i + 1;
  if (dist) out << ",distance_sq";
  out << "\n";
  for (const auto &r : trace.rows) {
    out << r.iteration << ',' << format_double(r.elbo) << ',' << format_double(r.grad_norm) << ','
        << format_double(r.step_scale);
    for (double v : r.nu_v) out << ',' << format_double(v);
    for (double v : r.log_dets) out << ',' << format_double(v);
    if (dist) out << ',' << format_double(r.distance_sq.value_or(std::nan("")));
    out << "\n";
  }
  return out.str();
}

// ---------------------------------------------------------------------------

std::string spec_to_json(const ExperimentSpec &s) {
  ordered_json j;
  j["kind"] = to_string(s.kind);
  if (s.kind != ExperimentKind::kRealDataFit) {
    j["dims"] = s.dims.extents();
    j["n"] = s.n_obs;
  }
  j["seed"] = s.seed;
  j["iters"] = s.max_iters;
  j["record_every"] = s.record_every;
  j["threads"] = s.threads;
  j["backtracking"] = s.backtracking;
  switch (s.kind) {
    case ExperimentKind::kConvergenceSweep:
      j["joint_grid"] = s.joint_grid;
      j["mean_field_grid"] = s.mean_field_grid;
      break;
    case ExperimentKind::kMetricComparison:
      j["eps_dof"] = s.eps_dof;
      j["eps_pullback"] = s.eps_pullback;
      j["product_grid"] = s.product_grid;
      break;
    case ExperimentKind::kMisspecTable:
      j["r"] = s.ranks;
      j["xi"] = s.xi;
      j["beta"] = s.beta;
      j["eps_joint"] = s.eps_joint;
      j["eps_mean_field"] = s.eps_mean_field;
      break;
    case ExperimentKind::kMahalanobisStudy:
      j["K"] = s.draws;
      j["m"] = s.inner;
      j["eps_joint"] = s.study_eps_joint;
      j["eps_mean_field"] = s.study_eps_mean_field;
      break;
    case ExperimentKind::kRealDataFit:
      j["gamma"] = s.gamma;
      j["eps"] = s.eps;
      j["eps_dof"] = s.eps_dof;
      break;
  }
  return dump(j);
}

ExperimentSpec spec_from_json(const std::string &text) {
  const std::string where = "experiment config";
  const json j = parse_json(text, where);
  if (!j.is_object()) throw ValidationError(where + " must be a JSON object");
  ExperimentSpec s = ExperimentSpec::defaults(
      parse_experiment_kind(get_key<std::string>(j, "kind", where)));
  // Shape keys come from the data file for real-data fits.
  std::set<std::string> allowed{"kind", "seed", "iters", "record_every", "threads", "backtracking"};
  if (s.kind != ExperimentKind::kRealDataFit) allowed.insert({"dims", "n"});
  switch (s.kind) {
    case ExperimentKind::kConvergenceSweep: allowed.insert({"joint_grid", "mean_field_grid"}); break;
    case ExperimentKind::kMetricComparison:
      allowed.insert({"eps_dof", "eps_pullback", "product_grid"});
      break;
    case ExperimentKind::kMisspecTable:
      allowed.insert({"r", "xi", "beta", "eps_joint", "eps_mean_field"});
      break;
    case ExperimentKind::kMahalanobisStudy:
      allowed.insert({"K", "m", "eps_joint", "eps_mean_field"});
      break;
    case ExperimentKind::kRealDataFit: allowed.insert({"gamma", "eps", "eps_dof"}); break;
  }
  for (const auto &[key, value] : j.items())
    if (!allowed.count(key))
      throw ValidationError(where + " has unknown key \"" + key + "\" for " + to_string(s.kind));

  auto set = [&](const char *key, auto &field) {
    if (j.contains(key)) field = get_key<std::decay_t<decltype(field)>>(j, key, where);
  };
  if (j.contains("dims")) s.dims = FactorDims(get_key<std::vector<std::size_t>>(j, "dims", where));
  set("n", s.n_obs);
  set("seed", s.seed);
  set("iters", s.max_iters);
  set("record_every", s.record_every);
  set("threads", s.threads);
  set("backtracking", s.backtracking);
  set("joint_grid", s.joint_grid);
  set("mean_field_grid", s.mean_field_grid);
  set("eps_dof", s.eps_dof);
  set("eps_pullback", s.eps_pullback);
  set("product_grid", s.product_grid);
  set("r", s.ranks);
  set("xi", s.xi);
  set("beta", s.beta);
  set("K", s.draws);
  set("m", s.inner);
  set("gamma", s.gamma);
  set("eps", s.eps);
  if (s.kind == ExperimentKind::kMahalanobisStudy) {
    set("eps_joint", s.study_eps_joint);
    set("eps_mean_field", s.study_eps_mean_field);
  } else {
    set("eps_joint", s.eps_joint);
    set("eps_mean_field", s.eps_mean_field);
  }
  s.validate();
  return s;
}

// ---------------------------------------------------------------------------

void write_sweep(const std::string &dir, const SweepResult &result) {
  ensure_dir(dir);
  std::ostringstream traces;
  traces << "method,metric,log10_eps,log10_eps_dof,iteration,elbo,grad_norm,distance_sq\n";
  std::ostringstream cells;
  cells << "method,metric,log10_eps,log10_eps_dof,status,iterations,elbo_plateau,distance_plateau\n";
  ordered_json summary;
  summary["cells"] = ordered_json::array();
  for (const auto &c : result.cells) {
    const std::string key = c.method + ',' + to_string(c.metric) + ',' +
                            format_double(c.log10_eps) + ',' + format_double(c.log10_eps_dof);
    for (const auto &r : c.trace.rows)
      traces << key << ',' << r.iteration << ',' << format_double(r.elbo) << ','
             << format_double(r.grad_norm) << ','
             << (r.distance_sq ? format_double(*r.distance_sq) : std::string()) << "\n";
    cells << key << ',' << to_string(c.status) << ',' << c.iterations << ','
          << opt_count(c.elbo_plateau) << ',' << opt_count(c.distance_plateau) << "\n";
    summary["cells"].push_back(cell_json(c));
  }
  write_text(join(dir, "traces.csv"), traces.str());
  write_text(join(dir, "cells.csv"), cells.str());
  write_text(join(dir, "summary.json"), dump(summary));
  write_state(join(dir, "truth.json"), StateFile::covariance(result.truth));
}

void write_mahalanobis(const std::string &dir, const MahalanobisResult &result) {
  ensure_dir(dir);
  std::ostringstream values;
  values << "method,draw,mahalanobis\n";
  ordered_json summary;
  summary["series"] = ordered_json::array();
  for (const auto &s : result.series) {
    for (std::size_t t = 0; t < s.values.size(); ++t)
      values << s.method << ',' << t << ',' << format_double(s.values[t]) << "\n";
    ordered_json j;
    j["method"] = s.method;
    j["count"] = s.values.size();
    j["mean"] = s.mean;
    j["variance"] = s.variance;
    j["quantile_probs"] = {0.05, 0.25, 0.5, 0.75, 0.95};
    j["quantiles"] = s.quantiles;
    j["message"] = s.message;
    summary["series"].push_back(j);
  }
  summary["fits"] = ordered_json::array();
  for (const auto &c : result.fits) summary["fits"].push_back(cell_json(c));
  summary["joint_kronecker_residual"] = result.joint_residual;
  summary["meanfield_kronecker_residual"] = result.mean_field_residual;
  write_text(join(dir, "mahalanobis.csv"), values.str());
  write_text(join(dir, "summary.json"), dump(summary));
}

void write_misspec(const std::string &dir, const std::vector<MisspecRow> &rows,
                   const ExperimentSpec &spec) {
  ensure_dir(dir);
  std::ostringstream table;
  table << "method";
  for (std::size_t r : spec.ranks) table << ",r=" << r;
  table << "\n";
  ordered_json summary;
  summary["beta"] = spec.beta;
  summary["xi"] = spec.xi;
  summary["max_iters"] = spec.max_iters;
  summary["rows"] = ordered_json::array();
  for (const char *method : {"joint", "meanfield"}) {
    table << method;
    for (std::size_t r : spec.ranks)
      for (const auto &row : rows)
        if (row.method == method && row.rank == r)
          table << ',' << (row.count ? std::to_string(*row.count) : std::string(">max"));
    table << "\n";
  }
  for (const auto &row : rows) {
    ordered_json j;
    j["method"] = row.method;
    j["r"] = row.rank;
    j["count"] = opt_json(row.count);
    j["status"] = to_string(row.status);
    j["message"] = row.message;
    summary["rows"].push_back(j);
  }
  write_text(join(dir, "counts.csv"), table.str());
  write_text(join(dir, "summary.json"), dump(summary));
}

void write_real_data(const std::string &dir, const RealDataResult &result,
                     const DataArray &data) {
  ensure_dir(dir);
  std::ostringstream eig;
  eig << "mode,name,component,eigenvalue,vector1,vector2\n";
  ordered_json summary;
  summary["status"] = to_string(result.fit.status);
  summary["message"] = result.fit.message;
  summary["iterations"] = result.fit.iterations;
  summary["nu_v"] = result.fit.state.nu_v();
  if (!result.fit.trace.rows.empty()) {
    summary["final_elbo"] = result.fit.trace.rows.back().elbo;
    summary["log_dets"] = result.fit.trace.rows.back().log_dets;
  }
  summary["modes"] = ordered_json::array();
  for (std::size_t i = 0; i < result.modes.size(); ++i) {
    const ModeSummary &m = result.modes[i];
    const std::string name = data.mode_names.empty() ? "mode" + std::to_string(i + 1)
                                                     : data.mode_names[i];
    for (Eigen::Index k = 0; k < m.eigenvalues.size(); ++k) {
      eig << i + 1 << ',' << name << ',' << k + 1 << ',' << format_double(m.eigenvalues(k));
      for (Eigen::Index c = 0; c < 2; ++c)
        eig << ',' << (c < m.leading_vectors.cols() ? format_double(m.leading_vectors(k, c)) : "");
      eig << "\n";
    }
    ordered_json j;
    j["mode"] = i + 1;
    j["name"] = name;
    j["eigenvalues"] = std::vector<double>(m.eigenvalues.begin(), m.eigenvalues.end());
    j["correlation"] = matrix_rows(m.correlation);
    summary["modes"].push_back(j);
  }
  write_text(join(dir, "trace.csv"), trace_csv(result.fit.trace));
  write_text(join(dir, "eigen.csv"), eig.str());
  write_text(join(dir, "summary.json"), dump(summary));
  write_state(join(dir, "state.json"), StateFile::from(result.fit.state));
}

}  // namespace kronvb::io
