#include "kronvb/geometry.hpp"

#include <cmath>
#include <string>

#include "kronvb/error.hpp"

namespace kronvb {

const char *to_string(MetricKind kind) {
  switch (kind) {
    case MetricKind::kProductManifold: return "product";
    case MetricKind::kPullbackOrthogonalized: return "pullback";
    case MetricKind::kPullbackNaive: return "pullback-naive";
  }
  return "unknown";
}

namespace {

void check_shape(const SpdMatrix &base, const Matrix &v, const char *what) {
  if (v.rows() != base.order() || v.cols() != base.order())
    throw ValidationError(std::string(what) + ": tangent shape does not match base point");
}

}  // namespace

double ai_inner(const SpdMatrix &base, const Matrix &u, const Matrix &v) {
  check_shape(base, u, "ai_inner");
  check_shape(base, v, "ai_inner");
  const Matrix a = base.inverse() * u;
  const Matrix b = base.inverse() * v;
  return (a.transpose().cwiseProduct(b)).sum();
}

SpdMatrix ai_exp(const SpdMatrix &base, const Matrix &v, double t) {
  check_shape(base, v, "ai_exp");
  if (t == 0.0) return base;
  if (!v.allFinite() || !std::isfinite(t))
    throw NumericError("ai_exp: non-finite tangent or step");
  // Sigma^{1/2} exp(t Sigma^{-1/2} V Sigma^{-1/2}) Sigma^{1/2}, written with
  // the Cholesky factor; the geodesic does not depend on the choice of root.
  const auto l = base.chol().triangularView<Eigen::Lower>();
  Matrix w = l.solve(symmetrize(v));
  w = l.solve(Matrix(w.transpose()));
  const Matrix e = sym_exp(t * symmetrize(w));
  const Matrix &lm = base.chol();
  return SpdMatrix(lm * e * lm.transpose());
}

Matrix project_traceless(const SpdMatrix &base, const Matrix &v) {
  check_shape(base, v, "project_traceless");
  const double tr = base.inverse().cwiseProduct(v).sum();
  return v - (tr / static_cast<double>(base.order())) * base.values();
}

namespace {

Vector vec(const Matrix &m) { return Eigen::Map<const Vector>(m.data(), m.size()); }

Matrix self_kron(const Matrix &a) {
  Matrix out(a.rows() * a.rows(), a.cols() * a.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j)
      out.block(i * a.rows(), j * a.cols(), a.rows(), a.cols()) = a(i, j) * a;
  return out;
}

}  // namespace

Matrix pullback_metric_naive(const FactorSet &factors) {
  const FactorDims dims = factors.dims();
  const std::size_t nd = dims.modes();
  std::vector<Matrix> inv;
  std::vector<Eigen::Index> offset(nd + 1, 0);
  for (std::size_t i = 0; i < nd; ++i) {
    inv.push_back(SpdMatrix(factors[i]).inverse());
    offset[i + 1] = offset[i] + static_cast<Eigen::Index>(dims[i] * dims[i]);
  }
  Matrix g = Matrix::Zero(offset[nd], offset[nd]);
  for (std::size_t i = 0; i < nd; ++i) {
    const auto ni = static_cast<Eigen::Index>(dims[i] * dims[i]);
    g.block(offset[i], offset[i], ni, ni) =
        static_cast<double>(dims.complement(i)) * self_kron(inv[i]);
    for (std::size_t j = 0; j < nd; ++j) {
      if (j == i) continue;
      const auto nj = static_cast<Eigen::Index>(dims[j] * dims[j]);
      const double c =
          static_cast<double>(dims.total() / (dims[i] * dims[j]));
      g.block(offset[i], offset[j], ni, nj) = c * vec(inv[i]) * vec(inv[j]).transpose();
    }
  }
  return g;
}

Matrix pullback_metric_orthogonalized(const FactorSet &factors) {
  const FactorDims dims = factors.dims();
  Eigen::Index n = 0;
  for (std::size_t i = 0; i < dims.modes(); ++i)
    n += static_cast<Eigen::Index>(dims[i] * dims[i]);
  Matrix g = Matrix::Zero(n, n);
  Eigen::Index off = 0;
  for (std::size_t i = 0; i < dims.modes(); ++i) {
    const auto ni = static_cast<Eigen::Index>(dims[i] * dims[i]);
    g.block(off, off, ni, ni) = static_cast<double>(dims.complement(i)) *
                                self_kron(SpdMatrix(factors[i]).inverse());
    off += ni;
  }
  return g;
}

double pullback_quadratic_form(const FactorSet &factors, const TangentVector &v) {
  const FactorDims dims = factors.dims();
  const std::size_t nd = dims.modes();
  if (v.components.size() != nd)
    throw ValidationError("tangent has the wrong number of modes");
  std::vector<double> tr(nd);
  double q = 0.0;
  for (std::size_t i = 0; i < nd; ++i) {
    const SpdMatrix base(factors[i]);
    check_shape(base, v.components[i], "pullback_quadratic_form");
    const Matrix a = base.inverse() * v.components[i];
    tr[i] = a.trace();
    q += static_cast<double>(dims.complement(i)) * (a * a).trace();
  }
  for (std::size_t i = 0; i < nd; ++i)
    for (std::size_t j = 0; j < nd; ++j)
      if (i != j)
        q += static_cast<double>(dims.total() / (dims[i] * dims[j])) * tr[i] * tr[j];
  return q;
}

TangentVector riemannian_grad(const FactorSet &factors,
                              const std::vector<Matrix> &euclid_grads,
                              MetricKind metric) {
  if (metric == MetricKind::kPullbackNaive)
    throw ValidationError("metric is degenerate: the naive pullback metric is "
                          "not positive definite");
  if (euclid_grads.size() != factors.size())
    throw ValidationError("gradient count does not match factor count");
  const FactorDims dims = factors.dims();
  TangentVector out;
  out.components.reserve(factors.size());
  for (std::size_t i = 0; i < factors.size(); ++i) {
    const Matrix &a = factors[i];
    if (euclid_grads[i].rows() != a.rows() || euclid_grads[i].cols() != a.cols())
      throw ValidationError("gradient " + std::to_string(i + 1) + " has the wrong shape");
    Matrix g = symmetrize(a * symmetrize(euclid_grads[i]) * a);
    if (metric == MetricKind::kPullbackOrthogonalized) {
      g /= static_cast<double>(dims.complement(i));
      if (i > 0) g = project_traceless(SpdMatrix(a), g);
    }
    out.components.push_back(std::move(g));
  }
  return out;
}

double gradient_norm_sq(const std::vector<Matrix> &euclid_grads,
                        const TangentVector &rgrad) {
  double s = 0.0;
  for (std::size_t i = 0; i < euclid_grads.size(); ++i)
    s += euclid_grads[i].cwiseProduct(rgrad.components.at(i)).sum();
  return s;
}

FactorSet geodesic_step(const FactorSet &factors, const TangentVector &v, double t,
                        MetricKind metric) {
  if (v.components.size() != factors.size())
    throw ValidationError("tangent has the wrong number of modes");
  std::vector<Matrix> next;
  next.reserve(factors.size());
  for (std::size_t i = 0; i < factors.size(); ++i) {
    Matrix a = ai_exp(SpdMatrix(factors[i]), v.components[i], t).values();
    if (metric == MetricKind::kPullbackOrthogonalized && i > 0) {
      const double ld = SpdMatrix(a).logdet();
      a *= std::exp(-ld / static_cast<double>(a.rows()));
    }
    next.push_back(std::move(a));
  }
  return FactorSet(std::move(next));
}

FactorSet normalize_determinants(const FactorSet &factors) {
  std::vector<Matrix> out(factors.matrices());
  double moved = 0.0;  // log of the scale moved onto mode 0
  for (std::size_t i = 1; i < out.size(); ++i) {
    const double d = static_cast<double>(out[i].rows());
    const double c = SpdMatrix(out[i]).logdet() / d;
    out[i] *= std::exp(-c);
    moved += c;
  }
  if (!out.empty()) out[0] *= std::exp(moved);
  return FactorSet(std::move(out));
}

}  // namespace kronvb
