// kronvb command-line front end. Links only the C API.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <iostream>
#include <set>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "kronvb.h"

using nlohmann::ordered_json;

namespace {

enum Exit { kOk = 0, kValidation = 1, kNumeric = 2, kIo = 3 };

struct Failure {
  int code;
  std::string message;
};

[[noreturn]] void fail(int code, const std::string &msg) { throw Failure{code, msg}; }

void check(kronvb_status s) {
  if (s != KRONVB_OK) fail(static_cast<int>(s), kronvb_last_error());
}

// Accepts "-4.4" or "10^-4.4".
double parse_log10(const std::string &text, const char *flag) {
  std::string t = text;
  if (t.rfind("10^", 0) == 0) t = t.substr(3);
  try {
    std::size_t pos = 0;
    const double v = std::stod(t, &pos);
    if (pos != t.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception &) {
    fail(kValidation, std::string(flag) + ": '" + text + "' is not a log10 step such as -4.4");
  }
}

std::vector<std::size_t> parse_list(const std::string &text, const char *flag) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t pos = 0;
      const long long v = std::stoll(item, &pos);
      if (pos != item.size() || v < 0) throw std::invalid_argument(item);
      out.push_back(static_cast<std::size_t>(v));
    } catch (const std::exception &) {
      fail(kValidation, std::string(flag) + ": '" + item + "' is not a non-negative integer");
    }
  }
  if (out.empty()) fail(kValidation, std::string(flag) + " must not be empty");
  return out;
}

ordered_json load_config(const std::string &path) {
  std::ifstream in(path);
  if (!in) fail(kIo, "cannot open config '" + path + "'");
  try {
    ordered_json j = ordered_json::parse(in);
    if (!j.is_object()) fail(kValidation, "config '" + path + "' must be a JSON object");
    return j;
  } catch (const ordered_json::parse_error &e) {
    fail(kValidation, "config '" + path + "' is not valid JSON: " + e.what());
  }
}

template <typename T>
T get(const ordered_json &j, const char *key, T fallback) {
  if (!j.contains(key) || j.at(key).is_null()) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const ordered_json::exception &) {
    fail(kValidation, std::string("config key \"") + key + "\" has the wrong type");
  }
}

std::string require_string(const ordered_json &j, const char *key, const char *what) {
  const auto v = get<std::string>(j, key, "");
  if (v.empty()) fail(kValidation, std::string(what) + " is required (--" + key + ")");
  return v;
}

void reject_unknown(const ordered_json &j, const std::set<std::string> &allowed,
                    const std::string &command) {
  for (const auto &[key, value] : j.items())
    if (!allowed.count(key)) fail(kValidation, "unknown config key \"" + key + "\" for " + command);
}

std::string path_in(const std::string &dir, const char *name) {
  return (std::filesystem::path(dir) / name).string();
}

void ensure_dir(const std::string &dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) fail(kIo, "cannot create '" + dir + "': " + ec.message());
}

void write_echo(const std::string &dir, const ordered_json &config) {
  ensure_dir(dir);
  std::ofstream out(path_in(dir, "config.json"), std::ios::trunc);
  out << config.dump(2) << "\n";
  if (!out) fail(kIo, "cannot write config echo in '" + dir + "'");
}

// ---- resolution: config file merged with flags, defaults filled in --------

ordered_json resolve_simulate(const ordered_json &in) {
  reject_unknown(in, {"command", "dims", "n", "seed"}, "simulate");
  ordered_json c;
  c["command"] = "simulate";
  c["dims"] = get<std::vector<std::size_t>>(in, "dims", {5, 6, 4, 3});
  c["n"] = get<std::size_t>(in, "n", 50);
  c["seed"] = get<std::uint64_t>(in, "seed", 1);
  if (c["dims"].empty()) fail(kValidation, "dims must not be empty");
  for (const auto &d : c["dims"])
    if (d.get<std::size_t>() == 0) fail(kValidation, "every extent in dims must be positive");
  if (c["n"].get<std::size_t>() == 0) fail(kValidation, "n must be positive");
  return c;
}

ordered_json resolve_fit(const ordered_json &in) {
  reject_unknown(in,
                 {"command", "data", "method", "metric", "orthogonalize", "eps", "eps_dof", "iters",
                  "record_every", "backtracking", "stop_when_converged", "seed"},
                 "fit");
  ordered_json c;
  c["command"] = "fit";
  c["data"] = require_string(in, "data", "a data file");
  const auto method = get<std::string>(in, "method", "joint");
  if (method != "joint" && method != "meanfield")
    fail(kValidation, "method must be joint or meanfield, got '" + method + "'");
  c["method"] = method;
  if (method == "meanfield" && (in.contains("metric") || in.contains("orthogonalize")))
    std::cerr << "warning: --metric and normalization flags are ignored for the meanfield method\n";
  const auto metric = get<std::string>(in, "metric", "pullback");
  if (metric != "pullback" && metric != "product" && metric != "pullback-naive")
    fail(kValidation, "metric must be pullback, product or pullback-naive, got '" + metric + "'");
  if (method == "joint") {
    c["metric"] = metric;
    c["orthogonalize"] = get<bool>(in, "orthogonalize", true);
  } else {
    c["metric"] = "product";
    c["orthogonalize"] = false;
  }
  c["eps"] = get<double>(in, "eps", -4.4);
  c["eps_dof"] = get<double>(in, "eps_dof", c["eps"].get<double>());
  c["iters"] = get<std::size_t>(in, "iters", 3000);
  c["record_every"] = get<std::size_t>(in, "record_every", 1);
  c["backtracking"] = get<bool>(in, "backtracking", true);
  c["stop_when_converged"] = get<bool>(in, "stop_when_converged", true);
  c["seed"] = get<std::uint64_t>(in, "seed", 1);
  return c;
}

ordered_json resolve_sample(const ordered_json &in) {
  reject_unknown(in, {"command", "state", "truth", "K", "m", "seed", "dense", "write_draws"},
                 "sample");
  ordered_json c;
  c["command"] = "sample";
  c["state"] = require_string(in, "state", "a state file");
  const auto truth = get<std::string>(in, "truth", "");
  c["truth"] = truth.empty() ? ordered_json(nullptr) : ordered_json(truth);
  c["K"] = get<std::size_t>(in, "K", 200);
  c["m"] = get<std::size_t>(in, "m", 100);
  c["seed"] = get<std::uint64_t>(in, "seed", 1);
  c["dense"] = get<bool>(in, "dense", false);
  c["write_draws"] = get<bool>(in, "write_draws", false);
  if (c["K"].get<std::size_t>() == 0) fail(kValidation, "K must be positive");
  if (c["m"].get<std::size_t>() == 0) fail(kValidation, "m must be positive");
  return c;
}

ordered_json resolve_experiment(const ordered_json &in) {
  ordered_json spec = in;
  spec.erase("command");
  spec.erase("data");
  spec.erase("experiment");
  spec["kind"] = require_string(in, "experiment", "an experiment name");
  char *resolved = nullptr;
  check(kronvb_experiment_resolve(spec.dump().c_str(), &resolved));
  const ordered_json r = ordered_json::parse(resolved);
  kronvb_string_free(resolved);
  ordered_json c;
  c["command"] = "experiment";
  c["experiment"] = r["kind"];
  const auto data = get<std::string>(in, "data", "");
  if (r["kind"] == "real-data-fit" && data.empty())
    fail(kValidation, "real-data-fit needs a data file (--data)");
  c["data"] = data.empty() ? ordered_json(nullptr) : ordered_json(data);
  for (const auto &[key, value] : r.items())
    if (key != "kind") c[key] = value;
  return c;
}

ordered_json resolve(const ordered_json &in) {
  const auto command = get<std::string>(in, "command", "");
  if (command == "simulate") return resolve_simulate(in);
  if (command == "fit") return resolve_fit(in);
  if (command == "sample") return resolve_sample(in);
  if (command == "experiment") return resolve_experiment(in);
  fail(kValidation, "config names no known command ('" + command + "')");
}

// ---- execution ------------------------------------------------------------

int run_simulate(const ordered_json &c, const std::string &out) {
  const auto dims = c["dims"].get<std::vector<std::size_t>>();
  kronvb_data *data = nullptr;
  kronvb_state *truth = nullptr;
  check(kronvb_simulate(dims.data(), dims.size(), c["n"].get<std::size_t>(),
                        c["seed"].get<std::uint64_t>(), &data, &truth));
  std::unique_ptr<kronvb_data, decltype(&kronvb_data_free)> dg(data, kronvb_data_free);
  std::unique_ptr<kronvb_state, decltype(&kronvb_state_free)> tg(truth, kronvb_state_free);
  write_echo(out, c);
  check(kronvb_data_write(data, path_in(out, "data.bin").c_str()));
  check(kronvb_state_write(truth, path_in(out, "truth.json").c_str()));
  std::uint64_t sum = 0;
  check(kronvb_data_checksum(data, &sum));
  char hex[17];
  std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(sum));
  std::cout << "wrote " << path_in(out, "data.bin") << " and " << path_in(out, "truth.json")
            << "\nscatter checksum " << hex << "\n";
  return kOk;
}

int run_fit(const ordered_json &c, const std::string &out) {
  kronvb_data *data = nullptr;
  check(kronvb_data_read(c["data"].get<std::string>().c_str(), &data));
  std::unique_ptr<kronvb_data, decltype(&kronvb_data_free)> dg(data, kronvb_data_free);
  kronvb_fit_options o;
  kronvb_fit_options_default(&o);
  o.method = c["method"] == "joint" ? KRONVB_JOINT : KRONVB_MEANFIELD;
  const auto metric = c["metric"].get<std::string>();
  o.metric = metric == "pullback"  ? KRONVB_METRIC_PULLBACK
             : metric == "product" ? KRONVB_METRIC_PRODUCT
                                   : KRONVB_METRIC_PULLBACK_NAIVE;
  o.orthogonalize = c["orthogonalize"].get<bool>();
  o.log10_eps = c["eps"].get<double>();
  o.log10_eps_dof = c["eps_dof"].get<double>();
  o.max_iters = c["iters"].get<std::size_t>();
  o.record_every = c["record_every"].get<std::size_t>();
  o.backtracking = c["backtracking"].get<bool>();
  o.stop_when_converged = c["stop_when_converged"].get<bool>();
  o.seed = c["seed"].get<std::uint64_t>();
  kronvb_fit *fit = nullptr;
  check(kronvb_fit_run(data, &o, &fit));
  std::unique_ptr<kronvb_fit, decltype(&kronvb_fit_free)> fg(fit, kronvb_fit_free);
  write_echo(out, c);
  check(kronvb_fit_write_trace(fit, path_in(out, "trace.csv").c_str()));
  kronvb_state *state = nullptr;
  check(kronvb_fit_state(fit, &state));
  std::unique_ptr<kronvb_state, decltype(&kronvb_state_free)> sg(state, kronvb_state_free);
  check(kronvb_state_write(state, path_in(out, "state.json").c_str()));
  const auto status = kronvb_fit_get_status(fit);
  static const char *names[] = {"converged", "running", "stalled", "diverged"};
  std::cout << "status " << names[status] << " after " << kronvb_fit_iterations(fit)
            << " iterations, final ELBO " << kronvb_fit_final_elbo(fit) << "\n";
  if (status == KRONVB_FIT_DIVERGED) {
    std::cerr << "error: " << kronvb_fit_message(fit) << "\nlast trace row:\n"
              << kronvb_fit_last_row(fit);
    return kNumeric;
  }
  return kOk;
}

int run_sample(const ordered_json &c, const std::string &out) {
  kronvb_state *state = nullptr;
  check(kronvb_state_read(c["state"].get<std::string>().c_str(), &state));
  std::unique_ptr<kronvb_state, decltype(&kronvb_state_free)> sg(state, kronvb_state_free);
  std::unique_ptr<kronvb_state, decltype(&kronvb_state_free)> tg(nullptr, kronvb_state_free);
  if (!c["truth"].is_null()) {
    kronvb_state *truth = nullptr;
    check(kronvb_state_read(c["truth"].get<std::string>().c_str(), &truth));
    tg.reset(truth);
  }
  kronvb_sample_options o;
  kronvb_sample_options_default(&o);
  o.draws = c["K"].get<std::size_t>();
  o.inner = c["m"].get<std::size_t>();
  o.seed = c["seed"].get<std::uint64_t>();
  o.dense = c["dense"].get<bool>();
  o.write_draws = c["write_draws"].get<bool>();
  write_echo(out, c);
  check(kronvb_sample_run(state, tg.get(), &o, out.c_str()));
  std::cout << "wrote " << path_in(out, "summary.json") << "\n";
  return kOk;
}

int run_experiment(const ordered_json &c, const std::string &out) {
  ordered_json spec;
  spec["kind"] = c["experiment"];
  for (const auto &[key, value] : c.items())
    if (key != "command" && key != "experiment" && key != "data") spec[key] = value;
  write_echo(out, c);
  const std::string data = c["data"].is_null() ? "" : c["data"].get<std::string>();
  const kronvb_status s =
      kronvb_experiment_run(spec.dump().c_str(), data.empty() ? nullptr : data.c_str(), out.c_str());
  if (s == KRONVB_ERR_NUMERIC) {
    std::cerr << "error: " << kronvb_last_error() << "\n";
    return kNumeric;
  }
  check(s);
  std::cout << "wrote " << c["experiment"].get<std::string>() << " outputs to " << out << "\n";
  return kOk;
}

int dispatch(const ordered_json &c, const std::string &out) {
  const auto command = c["command"].get<std::string>();
  if (command == "simulate") return run_simulate(c, out);
  if (command == "fit") return run_fit(c, out);
  if (command == "sample") return run_sample(c, out);
  return run_experiment(c, out);
}

}  // namespace

int main(int argc, char **argv) {
  CLI::App app{"Variational inverse-Wishart fits with Kronecker-structured covariance"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kronvb_version());

  struct Flags {
    std::string config, out = "out", data, state, truth, method, metric, dims, r, experiment;
    std::string eps, eps_dof;
    double xi = 0.0, beta = 0.0;
    std::size_t n = 0, iters = 0, K = 0, m = 0, threads = 0, record_every = 0;
    std::uint64_t seed = 0;
    bool orthogonalize = true, backtracking = true, dense = false, write_draws = false;
  } f;

  auto common = [&](CLI::App *sub) {
    sub->add_option("--config", f.config, "JSON config file; flags override its values");
    sub->add_option("--out", f.out, "Output directory")->capture_default_str();
    sub->add_option("--seed", f.seed, "Random seed");
  };

  CLI::App *sim = app.add_subcommand("simulate", "Draw tensor-normal data from a generated truth");
  common(sim);
  sim->add_option("--dims", f.dims, "Mode extents, e.g. 5,6,4,3");
  sim->add_option("--n", f.n, "Number of observations");

  CLI::App *fit = app.add_subcommand("fit", "Fit the joint or mean-field model to a data file");
  common(fit);
  fit->add_option("--data", f.data, "Data file (.csv or binary with .json sidecar)");
  fit->add_option("--method", f.method, "joint or meanfield");
  fit->add_option("--metric", f.metric, "pullback, product or pullback-naive");
  fit->add_option("--eps", f.eps, "log10 factor step, e.g. -4.4");
  fit->add_option("--eps-dof", f.eps_dof, "log10 dof step (default: --eps)");
  fit->add_option("--iters", f.iters, "Maximum iterations");
  fit->add_option("--record-every", f.record_every, "Trace stride");
  fit->add_flag("--orthogonalize,!--no-orthogonalize", f.orthogonalize,
                "Keep |A_i| = 1 for i > 1 (joint only)");
  fit->add_flag("--backtracking,!--no-backtracking", f.backtracking, "Halve rejected steps");

  CLI::App *sample = app.add_subcommand("sample", "Draw covariances from a fitted state");
  common(sample);
  sample->add_option("--state", f.state, "State file written by fit");
  sample->add_option("--truth", f.truth, "Truth file for the Mahalanobis study");
  sample->add_option("--K", f.K, "Number of covariance draws");
  sample->add_option("--m", f.m, "Inner samples per draw");
  sample->add_flag("--write-draws", f.write_draws, "Also write draws.json");
  sample->add_flag("--dense", f.dense, "Write dense covariance draws");

  CLI::App *exp = app.add_subcommand("experiment", "Run a named experiment");
  common(exp);
  exp->add_option("--experiment", f.experiment,
                  "convergence-sweep, metric-comparison, mahalanobis-study, misspec-table or "
                  "real-data-fit");
  exp->add_option("--dims", f.dims, "Mode extents");
  exp->add_option("--n", f.n, "Number of observations");
  exp->add_option("--iters", f.iters, "Maximum iterations");
  exp->add_option("--r", f.r, "Misspecification ranks, e.g. 0,1,3,5");
  exp->add_option("--xi", f.xi, "Misspecification noise scale");
  exp->add_option("--beta", f.beta, "Relative settling threshold");
  exp->add_option("--K", f.K, "Covariance draws");
  exp->add_option("--m", f.m, "Inner samples per draw");
  exp->add_option("--eps", f.eps, "log10 factor step (real-data-fit)");
  exp->add_option("--eps-dof", f.eps_dof, "log10 dof step");
  exp->add_option("--data", f.data, "Data file (real-data-fit)");
  exp->add_option("--threads", f.threads, "Worker threads (0: all cores)");

  CLI::App *val = app.add_subcommand("validate-config", "Check a config file without running it");
  val->add_option("--config", f.config, "JSON config file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError &e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kValidation;
  }

  try {
    CLI::App *sub = app.get_subcommands().front();
    ordered_json in = f.config.empty() ? ordered_json::object() : load_config(f.config);
    if (sub == val) {
      const ordered_json c = resolve(in);
      std::cout << c.dump(2) << "\n";
      return kOk;
    }
    const std::string name = sub->get_name();
    if (in.contains("command") && in["command"] != name)
      fail(kValidation, "config is for '" + in["command"].get<std::string>() + "', not '" + name + "'");
    in["command"] = name;
    auto given = [&](const char *flag) { return sub->get_option_no_throw(flag) && sub->count(flag) > 0; };
    if (given("--seed")) in["seed"] = f.seed;
    if (given("--dims")) in["dims"] = parse_list(f.dims, "--dims");
    if (given("--n")) in["n"] = f.n;
    if (given("--data")) in["data"] = f.data;
    if (given("--state")) in["state"] = f.state;
    if (given("--truth")) in["truth"] = f.truth;
    if (given("--method")) in["method"] = f.method;
    if (given("--metric")) in["metric"] = f.metric;
    if (given("--eps")) in["eps"] = parse_log10(f.eps, "--eps");
    if (given("--eps-dof")) in["eps_dof"] = parse_log10(f.eps_dof, "--eps-dof");
    if (given("--iters")) in["iters"] = f.iters;
    if (given("--record-every")) in["record_every"] = f.record_every;
    if (given("--orthogonalize")) in["orthogonalize"] = f.orthogonalize;
    if (given("--backtracking")) in["backtracking"] = f.backtracking;
    if (given("--K")) in["K"] = f.K;
    if (given("--m")) in["m"] = f.m;
    if (given("--write-draws")) in["write_draws"] = f.write_draws;
    if (given("--dense")) in["dense"] = f.dense;
    if (given("--experiment")) in["experiment"] = f.experiment;
    if (given("--r")) in["r"] = parse_list(f.r, "--r");
    if (given("--xi")) in["xi"] = f.xi;
    if (given("--beta")) in["beta"] = f.beta;
    if (given("--threads")) in["threads"] = f.threads;
    return dispatch(resolve(in), f.out);
  } catch (const Failure &e) {
    std::cerr << "error: " << e.message << "\n";
    return e.code;
  }
}
