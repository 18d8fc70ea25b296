#include "kronvb/elbo.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "kronvb/error.hpp"
#include "kronvb/special.hpp"
#include "kronvb/spd.hpp"

namespace kronvb {

namespace {

const double kLog2 = std::numbers::ln2;
const double kLog2Pi = std::log(2.0 * std::numbers::pi);

void check_term(double v, const char *name) {
  if (!std::isfinite(v))
    throw NumericError(std::string("ELBO term '") + name + "' is not finite");
}

double gamma_scale(const SufficientStats &stats) {
  if (stats.count == 0)
    throw ValidationError("default prior needs at least one observation");
  const double g = stats.scatter.trace() / static_cast<double>(stats.count);
  if (!(g > 0.0)) throw ValidationError("default prior needs tr(S) > 0");
  return g;
}

std::vector<Matrix> default_scale_factors(const SufficientStats &stats) {
  const double g = std::pow(gamma_scale(stats), 1.0 / static_cast<double>(stats.dims.modes()));
  std::vector<Matrix> f;
  for (std::size_t d : stats.dims.extents()) {
    const auto n = static_cast<Eigen::Index>(d);
    f.push_back(Matrix::Identity(n, n) * (g / static_cast<double>(d)));
  }
  return f;
}

struct FactorInfo {
  std::vector<Matrix> inverse;
  std::vector<double> logdet;
};

FactorInfo factor_info(const FactorSet &a, const FactorDims &dims) {
  if (!(a.dims() == dims))
    throw ValidationError("variational factors do not match the data dimensions");
  FactorInfo info;
  for (std::size_t i = 0; i < a.size(); ++i) {
    try {
      const SpdMatrix s(a[i]);
      info.inverse.push_back(s.inverse());
      info.logdet.push_back(s.logdet());
    } catch (const NumericError &) {
      throw NumericError("variational factor " + std::to_string(i + 1) +
                         " is not positive definite");
    }
  }
  return info;
}

}  // namespace

double joint_dof(double z, std::size_t p) { return std::exp(z) + static_cast<double>(p) + 1.0; }

double joint_z(double nu_v, std::size_t p) {
  const double excess = nu_v - static_cast<double>(p) - 1.0;
  if (!(excess > 0.0))
    throw ValidationError("degrees of freedom " + std::to_string(nu_v) + " must exceed p + 1 = " +
                          std::to_string(p + 1));
  return std::log(excess);
}

JointPrior default_joint_prior(const SufficientStats &stats) {
  return {static_cast<double>(stats.dims.total()) + 2.0, FactorSet(default_scale_factors(stats))};
}

MeanFieldPrior default_mean_field_prior(const SufficientStats &stats) {
  MeanFieldPrior prior;
  for (std::size_t d : stats.dims.extents()) prior.nu.push_back(static_cast<double>(d) + 2.0);
  prior.scale = FactorSet(default_scale_factors(stats));
  return prior;
}

JointState JointState::with_dof(double nu_v, FactorSet a) {
  JointState s;
  s.z = joint_z(nu_v, a.dims().total());
  s.a = std::move(a);
  return s;
}

std::vector<double> MeanFieldState::nu_v() const {
  std::vector<double> out;
  for (std::size_t i = 0; i < z.size(); ++i)
    out.push_back(joint_dof(z[i], static_cast<std::size_t>(a[i].rows())));
  return out;
}

MeanFieldState MeanFieldState::with_dof(const std::vector<double> &nu_v, FactorSet a) {
  if (nu_v.size() != a.size()) throw ValidationError("need one degree of freedom per mode");
  MeanFieldState s;
  for (std::size_t i = 0; i < nu_v.size(); ++i)
    s.z.push_back(joint_z(nu_v[i], static_cast<std::size_t>(a[i].rows())));
  s.a = std::move(a);
  return s;
}

// ---------------------------------------------------------------------------

JointObjective::JointObjective(const SufficientStats &stats, JointPrior prior,
                               bool orthogonalized, ContractionStrategy strategy)
    : dims_(stats.dims),
      n_(stats.count),
      prior_(std::move(prior)),
      orthogonalized_(orthogonalized),
      strategy_(strategy) {
  const std::size_t p = dims_.total();
  const auto pi = static_cast<Eigen::Index>(p);
  if (stats.scatter.rows() != pi || stats.scatter.cols() != pi)
    throw ValidationError("scatter matrix order does not match prod(dims)");
  if (!(prior_.nu > static_cast<double>(p) - 1.0))
    throw ValidationError("prior degrees of freedom must exceed p - 1");

  double log_det_lambda = 0.0;
  if (const auto *f = std::get_if<FactorSet>(&prior_.scale)) {
    if (!(f->dims() == dims_)) throw ValidationError("prior scale factors do not match dims");
    m_ = stats.scatter + dense_kron(*f);
    for (std::size_t i = 0; i < f->size(); ++i)
      log_det_lambda += static_cast<double>(dims_.complement(i)) * SpdMatrix((*f)[i]).logdet();
  } else {
    const Matrix &lambda = std::get<Matrix>(prior_.scale);
    if (lambda.rows() != pi || lambda.cols() != pi)
      throw ValidationError("prior scale order does not match prod(dims)");
    m_ = stats.scatter + lambda;
    try {
      log_det_lambda = SpdMatrix(lambda).logdet();
    } catch (const NumericError &) {
      lambda_singular_ = true;
    }
  }
  m_ = symmetrize(m_);
  set_constant(log_det_lambda);
}

JointObjective::JointObjective(const FactorDims &dims, std::size_t n, double prior_nu,
                               Matrix shifted_columns, bool orthogonalized)
    : dims_(dims),
      n_(n),
      prior_{prior_nu, Matrix()},
      orthogonalized_(orthogonalized),
      strategy_(ContractionStrategy::kUpperTriangular),
      m_columns_(std::move(shifted_columns)),
      low_rank_(true),
      lambda_singular_(true) {
  const std::size_t p = dims_.total();
  if (static_cast<std::size_t>(m_columns_.rows()) != p)
    throw ValidationError("column length does not match prod(dims)");
  if (!m_columns_.allFinite()) throw ValidationError("data columns contain non-finite values");
  if (!(prior_.nu > static_cast<double>(p) - 1.0))
    throw ValidationError("prior degrees of freedom must exceed p - 1");
  set_constant(0.0);
}

void JointObjective::set_constant(double log_det_lambda) {
  const std::size_t p = dims_.total();
  const double pd = static_cast<double>(p), nu = prior_.nu;
  constant_ = -0.5 * static_cast<double>(n_) * pd * kLog2Pi + 0.5 * nu * log_det_lambda -
              0.5 * nu * pd * kLog2 - log_multigamma(static_cast<int>(p), 0.5 * nu);
}

Matrix JointObjective::shifted_scatter() const {
  if (low_rank_) return m_columns_ * m_columns_.transpose();
  return m_;
}

ElboValue JointObjective::evaluate(const JointState &state, bool with_gradients) const {
  const FactorInfo info = factor_info(state.a, dims_);
  const std::size_t p = dims_.total();
  const double pd = static_cast<double>(p);
  const double nu_v = state.nu_v();
  const double big_n = static_cast<double>(n_);
  const double nu = prior_.nu;

  ElboValue out;
  out.a_inverse = info.inverse;
  const FactorSet weights(info.inverse);
  if (low_rank_) {
    out.traces = partial_traces_from_columns(m_columns_, weights);
  } else if (with_gradients) {
    out.traces = partial_traces(m_, weights, strategy_);
  } else {
    out.traces.assign(dims_.modes(), Matrix());
    out.traces[0] = partial_trace(m_, weights, 0, strategy_);
  }
  out.data_trace = info.inverse[0].cwiseProduct(out.traces[0]).sum();
  check_term(out.data_trace, "trace");

  double log_det_psi = 0.0;
  if (orthogonalized_) {
    log_det_psi = static_cast<double>(dims_.complement(0)) * info.logdet[0];
  } else {
    for (std::size_t i = 0; i < dims_.modes(); ++i)
      log_det_psi += static_cast<double>(dims_.complement(i)) * info.logdet[i];
  }
  const int pi = static_cast<int>(p);
  const double psi_sum = digamma_sum(pi, nu_v);
  const double e_log_det = log_det_psi - pd * kLog2 - psi_sum;
  const double entropy_part = log_multigamma(pi, 0.5 * nu_v) + 0.5 * nu_v * pd * kLog2 -
                              0.5 * nu_v * log_det_psi;
  check_term(entropy_part, "entropy");
  check_term(e_log_det, "expected log-determinant");

  out.constant = constant_;
  out.value = constant_ + entropy_part - 0.5 * nu_v * (out.data_trace - pd) +
              0.5 * (nu_v - big_n - nu) * e_log_det;
  check_term(out.value, "total");

  const double g_nu = -0.5 * (out.data_trace - pd) +
                      0.25 * (big_n + nu - nu_v) * trigamma_sum(pi, nu_v);
  check_term(g_nu, "dof gradient");
  out.grad_nu = {g_nu};
  out.grad_z = {g_nu * (nu_v - pd - 1.0)};
  if (with_gradients) out.grad_a = grad_a(out, nu_v);
  return out;
}

std::vector<Matrix> JointObjective::grad_a(const ElboValue &at, double nu_v) const {
  const double shrink = 0.5 * (static_cast<double>(n_) + prior_.nu);
  std::vector<Matrix> g;
  for (std::size_t i = 0; i < dims_.modes(); ++i) {
    const Matrix &ai = at.a_inverse.at(i);
    Matrix gi = 0.5 * nu_v * ai * at.traces.at(i) * ai;
    if (!orthogonalized_ || i == 0) gi -= shrink * static_cast<double>(dims_.complement(i)) * ai;
    gi = symmetrize(gi);
    if (!gi.allFinite())
      throw NumericError("gradient for factor " + std::to_string(i + 1) + " is not finite");
    g.push_back(std::move(gi));
  }
  return g;
}

// ---------------------------------------------------------------------------

MeanFieldObjective::MeanFieldObjective(const SufficientStats &stats, MeanFieldPrior prior,
                                       ContractionStrategy strategy)
    : dims_(stats.dims), n_(stats.count), prior_(std::move(prior)), strategy_(strategy),
      s_(stats.scatter) {
  const auto pi = static_cast<Eigen::Index>(dims_.total());
  if (s_.rows() != pi || s_.cols() != pi)
    throw ValidationError("scatter matrix order does not match prod(dims)");
  if (prior_.nu.size() != dims_.modes() || !(prior_.scale.dims() == dims_))
    throw ValidationError("mean-field prior does not match the data dimensions");
  constant_ = -0.5 * static_cast<double>(n_) * static_cast<double>(dims_.total()) * kLog2Pi;
  for (std::size_t i = 0; i < dims_.modes(); ++i) {
    const double d = static_cast<double>(dims_[i]), nu = prior_.nu[i];
    if (!(nu > d - 1.0))
      throw ValidationError("prior degrees of freedom for mode " + std::to_string(i + 1) +
                            " must exceed d - 1");
    const SpdMatrix lambda(prior_.scale[i]);
    constant_ += 0.5 * nu * lambda.logdet() - 0.5 * nu * d * kLog2 -
                 log_multigamma(static_cast<int>(dims_[i]), 0.5 * nu);
    lambda_.push_back(lambda.values());
  }
}

ElboValue MeanFieldObjective::evaluate(const MeanFieldState &state, bool with_gradients) const {
  const FactorInfo info = factor_info(state.a, dims_);
  if (state.z.size() != dims_.modes())
    throw ValidationError("need one degree of freedom per mode");
  const std::vector<double> nu_v = state.nu_v();
  const double big_n = static_cast<double>(n_);

  ElboValue out;
  out.a_inverse = info.inverse;
  const FactorSet weights(info.inverse);
  if (with_gradients) {
    out.traces = partial_traces(s_, weights, strategy_);
  } else {
    out.traces.assign(dims_.modes(), Matrix());
    out.traces[0] = partial_trace(s_, weights, 0, strategy_);
  }
  out.data_trace = info.inverse[0].cwiseProduct(out.traces[0]).sum();
  check_term(out.data_trace, "trace");

  double prod_nu = 1.0;
  for (double v : nu_v) prod_nu *= v;

  out.constant = constant_;
  double value = constant_ - 0.5 * prod_nu * out.data_trace;
  out.grad_nu.resize(dims_.modes());
  out.grad_z.resize(dims_.modes());
  for (std::size_t i = 0; i < dims_.modes(); ++i) {
    const double d = static_cast<double>(dims_[i]);
    const int di = static_cast<int>(dims_[i]);
    const double nvi = nu_v[i], nui = prior_.nu[i];
    const double shape = big_n * static_cast<double>(dims_.complement(i)) + nui;
    const double tr_lambda = lambda_[i].cwiseProduct(info.inverse[i]).sum();
    const double ell = info.logdet[i] - d * kLog2 - digamma_sum(di, nvi);
    const double term = log_multigamma(di, 0.5 * nvi) + 0.5 * nvi * d * kLog2 -
                        0.5 * nvi * info.logdet[i] - 0.5 * nvi * (tr_lambda - d) +
                        0.5 * (nvi - shape) * ell;
    check_term(term, "mode term");
    value += term;

    const double others = prod_nu / nvi;
    const double g = -0.5 * others * out.data_trace - 0.5 * (tr_lambda - d) +
                     0.25 * (shape - nvi) * trigamma_sum(di, nvi);
    check_term(g, "dof gradient");
    out.grad_nu[i] = g;
    out.grad_z[i] = g * (nvi - d - 1.0);
  }
  check_term(value, "total");
  out.value = value;
  if (with_gradients) out.grad_a = grad_a(out, nu_v);
  return out;
}

std::vector<Matrix> MeanFieldObjective::grad_a(const ElboValue &at,
                                               const std::vector<double> &nu_v) const {
  double prod_nu = 1.0;
  for (double v : nu_v) prod_nu *= v;
  std::vector<Matrix> g;
  for (std::size_t i = 0; i < dims_.modes(); ++i) {
    const Matrix &ai = at.a_inverse.at(i);
    const double shape =
        static_cast<double>(n_) * static_cast<double>(dims_.complement(i)) + prior_.nu[i];
    Matrix inner = 0.5 * prod_nu * at.traces.at(i) + 0.5 * nu_v[i] * lambda_[i];
    Matrix gi = symmetrize(ai * inner * ai - 0.5 * shape * ai);
    if (!gi.allFinite())
      throw NumericError("gradient for factor " + std::to_string(i + 1) + " is not finite");
    g.push_back(std::move(gi));
  }
  return g;
}

ElboValue elbo_joint(const JointState &state, const SufficientStats &stats,
                     const JointPrior &prior, bool orthogonalized) {
  return JointObjective(stats, prior, orthogonalized).evaluate(state);
}

ElboValue elbo_mean_field(const MeanFieldState &state, const SufficientStats &stats,
                          const MeanFieldPrior &prior) {
  return MeanFieldObjective(stats, prior).evaluate(state);
}

}  // namespace kronvb
