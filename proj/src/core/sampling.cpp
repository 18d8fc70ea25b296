#include "kronvb/sampling.hpp"

#include <cmath>
#include <string>

#include "kronvb/error.hpp"

namespace kronvb {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

Rng::Rng(std::uint64_t seed) : seed_(seed), engine_(splitmix64(seed)) {}

double Rng::normal() { return normal_(engine_); }

double Rng::chi_square(double k) {
  if (!(k > 0.0)) throw ValidationError("chi-square degrees of freedom must be positive");
  return std::gamma_distribution<double>(0.5 * k, 2.0)(engine_);
}

double Rng::uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }

Matrix Rng::normal_matrix(Eigen::Index rows, Eigen::Index cols) {
  Matrix m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = normal();
  return m;
}

Rng Rng::fork(std::uint64_t index) const {
  return Rng(splitmix64(seed_ ^ splitmix64(index + 0x632be59bd9b4e019ULL)));
}

Rng Rng::split() { return Rng(engine_()); }

TensorNormalSample sample_tensor_normal(const FactorSet &covariances, std::size_t n,
                                        Rng &rng) {
  const FactorDims dims = covariances.dims();
  std::vector<Matrix> chol;
  for (std::size_t i = 0; i < covariances.size(); ++i)
    chol.push_back(cholesky_lower(covariances[i],
                                  ("covariance factor " + std::to_string(i + 1)).c_str()));
  const Matrix z = rng.normal_matrix(static_cast<Eigen::Index>(dims.total()),
                                     static_cast<Eigen::Index>(n));
  TensorNormalSample out;
  out.observations = kron_apply(FactorSet(std::move(chol)), z);
  out.stats = SufficientStats::from_observations(dims, out.observations);
  return out;
}

Matrix bartlett_lower(Eigen::Index p, double nu, Rng &rng) {
  if (p < 1) throw ValidationError("Bartlett order must be positive");
  if (!(nu > static_cast<double>(p - 1)))
    throw ValidationError("Wishart degrees of freedom " + std::to_string(nu) +
                          " must exceed order - 1 = " + std::to_string(p - 1));
  Matrix l = Matrix::Zero(p, p);
  for (Eigen::Index i = 0; i < p; ++i) {
    l(i, i) = std::sqrt(rng.chi_square(nu - static_cast<double>(i)));
    for (Eigen::Index j = 0; j < i; ++j) l(i, j) = rng.normal();
  }
  return l;
}

Eigen::Index WishartSpec::order() const {
  if (const auto *f = std::get_if<FactorSet>(&scale))
    return static_cast<Eigen::Index>(f->dims().total());
  return std::get<Matrix>(scale).rows();
}

void WishartSpec::validate() const {
  const Eigen::Index p = order();
  if (!(dof > static_cast<double>(p - 1)))
    throw ValidationError("degrees of freedom " + std::to_string(dof) +
                          " must exceed order - 1 = " + std::to_string(p - 1));
}

namespace {

// Offsets of a reversed-order multi-index box: entry r of the result is the
// matrix index (last mode fastest) of the r-th cell when mode D varies
// slowest and mode 1 fastest.
std::vector<std::size_t> reversed_order_map(const FactorDims &dims) {
  const std::size_t nd = dims.modes();
  std::vector<std::size_t> map(dims.total());
  std::vector<std::size_t> stride(nd, 1);
  for (std::size_t k = nd - 1; k-- > 0;) stride[k] = stride[k + 1] * dims[k + 1];
  std::vector<std::size_t> idx(nd, 0);  // idx[k] indexes mode k
  for (std::size_t r = 0; r < map.size(); ++r) {
    std::size_t m = 0;
    for (std::size_t k = 0; k < nd; ++k) m += idx[k] * stride[k];
    map[r] = m;
    for (std::size_t k = 0; k < nd; ++k) {  // mode 1 is the fastest axis
      if (++idx[k] < dims[k]) break;
      idx[k] = 0;
    }
  }
  return map;
}

std::vector<Matrix> chol_of_scale(const FactorSet &scale, bool inverse) {
  std::vector<Matrix> out;
  for (std::size_t i = 0; i < scale.size(); ++i) {
    const SpdMatrix s(scale[i]);
    out.push_back(inverse ? cholesky_lower(s.inverse(), "inverse scale factor")
                          : Matrix(s.chol()));
  }
  return out;
}

}  // namespace

Matrix multiway_cholesky_apply(const FactorSet &chol_factors, const Matrix &bartlett) {
  const FactorDims dims = chol_factors.dims();
  const std::size_t nd = dims.modes();
  const std::size_t p = dims.total();
  if (static_cast<std::size_t>(bartlett.rows()) != p ||
      static_cast<std::size_t>(bartlett.cols()) != p)
    throw ValidationError("Bartlett factor order does not match prod(dims)");
  const auto map = reversed_order_map(dims);

  std::vector<std::size_t> shape;
  for (std::size_t k = nd; k-- > 0;) shape.push_back(dims[k]);
  shape.insert(shape.end(), shape.begin(), shape.end());
  Tensor t(shape);
  auto &v = t.values();
  for (std::size_t r = 0; r < p; ++r)
    for (std::size_t c = 0; c < p; ++c)
      v[r * p + c] = bartlett(static_cast<Eigen::Index>(map[r]), static_cast<Eigen::Index>(map[c]));

  for (std::size_t j = 0; j < nd; ++j) t = mode_product(t, chol_factors[nd - 1 - j], j);

  Matrix w(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(p));
  const auto &g = t.values();
  for (std::size_t r = 0; r < p; ++r)
    for (std::size_t c = 0; c < p; ++c)
      w(static_cast<Eigen::Index>(map[r]), static_cast<Eigen::Index>(map[c])) = g[r * p + c];
  return w;
}

Matrix multiway_iw_cholesky(const WishartSpec &spec, Rng &rng, Matrix *bartlett_out) {
  spec.validate();
  const auto *scale = std::get_if<FactorSet>(&spec.scale);
  if (!scale) throw ValidationError("multiway sampler needs a per-mode scale");
  const FactorSet l(chol_of_scale(*scale, spec.inverse));
  Matrix b = bartlett_lower(spec.order(), spec.dof, rng);
  Matrix w = multiway_cholesky_apply(l, b);
  if (bartlett_out) *bartlett_out = std::move(b);
  return w;
}

Matrix multiway_iw_cholesky(const WishartSpec &spec, Rng &rng) {
  return multiway_iw_cholesky(spec, rng, nullptr);
}

Matrix iw_precision_cholesky(const WishartSpec &spec, Rng &rng) {
  if (std::holds_alternative<FactorSet>(spec.scale)) {
    WishartSpec inv = spec;
    inv.inverse = true;
    return multiway_iw_cholesky(inv, rng);
  }
  spec.validate();
  const SpdMatrix psi(std::get<Matrix>(spec.scale));
  const Matrix l = cholesky_lower(psi.inverse(), "inverse scale");
  const Matrix b = bartlett_lower(spec.order(), spec.dof, rng);
  return l.triangularView<Eigen::Lower>() * b;
}

Matrix covariance_from_precision_cholesky(const Matrix &w) {
  const Matrix winv =
      w.triangularView<Eigen::Lower>().solve(Matrix::Identity(w.rows(), w.cols()));
  return symmetrize(winv.transpose() * winv);
}

std::vector<Matrix> sample_joint_iw(double nu_v, const FactorSet &a, std::size_t n_draws,
                                    Rng &rng) {
  const double p = static_cast<double>(a.dims().total());
  if (!(nu_v > p + 1))
    throw ValidationError("joint degrees of freedom " + std::to_string(nu_v) +
                          " must exceed p + 1 = " + std::to_string(p + 1));
  const WishartSpec spec{nu_v, a, true};
  std::vector<Matrix> out;
  out.reserve(n_draws);
  for (std::size_t t = 0; t < n_draws; ++t) {
    Rng sub = rng.split();
    out.push_back(covariance_from_precision_cholesky(iw_precision_cholesky(spec, sub)));
  }
  return out;
}

std::vector<FactorSet> sample_mean_field(const std::vector<double> &nu, const FactorSet &a,
                                         std::size_t n_draws, Rng &rng) {
  if (nu.size() != a.size())
    throw ValidationError("need one degree of freedom per mode");
  for (std::size_t i = 0; i < nu.size(); ++i) {
    const double d = static_cast<double>(a[i].rows());
    if (!(nu[i] > d + 1))
      throw ValidationError("mode " + std::to_string(i + 1) + " degrees of freedom " +
                            std::to_string(nu[i]) + " must exceed d + 1 = " +
                            std::to_string(d + 1));
  }
  std::vector<FactorSet> out;
  out.reserve(n_draws);
  for (std::size_t t = 0; t < n_draws; ++t) {
    Rng sub = rng.split();
    std::vector<Matrix> f;
    for (std::size_t i = 0; i < a.size(); ++i) {
      const WishartSpec spec{nu[i], Matrix(a[i]), true};
      f.push_back(covariance_from_precision_cholesky(iw_precision_cholesky(spec, sub)));
    }
    out.emplace_back(std::move(f));
  }
  return out;
}

std::vector<double> mahalanobis_predictive(const std::variant<Matrix, FactorSet> &truth_inverse,
                                           const std::vector<PrecisionFactor> &draws,
                                           std::size_t m, Rng &rng) {
  if (m == 0) throw ValidationError("inner sample count must be positive");
  const Eigen::Index p =
      std::holds_alternative<Matrix>(truth_inverse)
          ? std::get<Matrix>(truth_inverse).rows()
          : static_cast<Eigen::Index>(std::get<FactorSet>(truth_inverse).dims().total());
  std::vector<double> out;
  out.reserve(draws.size());
  for (const auto &draw : draws) {
    Rng sub = rng.split();
    const Matrix z = sub.normal_matrix(p, static_cast<Eigen::Index>(m));
    Matrix y;
    if (const auto *w = std::get_if<Matrix>(&draw)) {
      if (w->rows() != p) throw ValidationError("draw order does not match the truth");
      y = w->triangularView<Eigen::Lower>().transpose().solve(z);
    } else {
      const auto &wf = std::get<FactorSet>(draw);
      if (static_cast<Eigen::Index>(wf.dims().total()) != p)
        throw ValidationError("draw order does not match the truth");
      std::vector<Matrix> inv_t;
      for (const auto &wi : wf)
        inv_t.push_back(Matrix(wi.triangularView<Eigen::Lower>().solve(
                                   Matrix::Identity(wi.rows(), wi.cols())))
                            .transpose());
      y = kron_apply(FactorSet(std::move(inv_t)), z);
    }
    const Matrix ty = std::holds_alternative<Matrix>(truth_inverse)
                          ? Matrix(std::get<Matrix>(truth_inverse) * y)
                          : kron_apply(std::get<FactorSet>(truth_inverse), y);
    out.push_back(y.cwiseProduct(ty).sum() / static_cast<double>(m));
  }
  return out;
}

double nearest_kronecker_residual(const Matrix &sigma, const FactorDims &dims) {
  const std::size_t p = dims.total();
  if (static_cast<std::size_t>(sigma.rows()) != p || static_cast<std::size_t>(sigma.cols()) != p)
    throw ValidationError("matrix order does not match prod(dims)");
  const double total = sigma.norm();
  if (total == 0.0 || dims.modes() == 1) return 0.0;
  double worst = 0.0;
  for (std::size_t k = 0; k < dims.modes(); ++k) {
    const std::size_t dk = dims[k], rest = p / dk;
    std::size_t inner = 1;  // stride of mode k in the linear index
    for (std::size_t j = k + 1; j < dims.modes(); ++j) inner *= dims[j];
    Matrix r(static_cast<Eigen::Index>(dk * dk), static_cast<Eigen::Index>(rest * rest));
    for (std::size_t a = 0; a < p; ++a) {
      const std::size_t ak = (a / inner) % dk;
      const std::size_t ar = (a / (inner * dk)) * inner + a % inner;
      for (std::size_t b = 0; b < p; ++b) {
        const std::size_t bk = (b / inner) % dk;
        const std::size_t br = (b / (inner * dk)) * inner + b % inner;
        r(static_cast<Eigen::Index>(ak * dk + bk), static_cast<Eigen::Index>(ar * rest + br)) =
            sigma(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b));
      }
    }
    Eigen::BDCSVD<Matrix> svd(r);
    const Vector s = svd.singularValues();
    const double tail = s.size() > 1 ? s.tail(s.size() - 1).norm() : 0.0;
    worst = std::max(worst, tail / total);
  }
  return worst;
}

}  // namespace kronvb
