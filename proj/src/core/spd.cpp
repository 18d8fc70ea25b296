#include "kronvb/spd.hpp"

#include <cmath>
#include <string>

#include "kronvb/error.hpp"

namespace kronvb {

Matrix cholesky_lower(const Matrix &a, const char *what) {
  if (!a.allFinite())
    throw NumericError(std::string(what) + " has non-finite entries");
  Eigen::LLT<Matrix> llt(a);
  if (llt.info() != Eigen::Success)
    throw NumericError(std::string(what) + " is not positive definite");
  Matrix l = llt.matrixL();
  // Pivots at round-off level mean the matrix is numerically singular.
  const double floor = 1e-14 * a.diagonal().cwiseAbs().maxCoeff();
  for (Eigen::Index i = 0; i < l.rows(); ++i)
    if (!(l(i, i) * l(i, i) > floor))
      throw NumericError(std::string(what) + " is not positive definite");
  return l;
}

SpdMatrix::SpdMatrix(const Matrix &values) {
  if (values.rows() != values.cols() || values.rows() == 0)
    throw ValidationError("SPD matrix must be square and non-empty");
  if (!values.allFinite()) throw NumericError("SPD matrix has non-finite entries");
  const double scale = values.cwiseAbs().maxCoeff();
  const double asym = (values - values.transpose()).cwiseAbs().maxCoeff();
  if (asym > 1e-8 * scale)
    throw ValidationError("matrix is not symmetric (max asymmetry " +
                          std::to_string(asym) + ")");
  values_ = symmetrize(values);
  chol_ = cholesky_lower(values_, "SPD matrix");
  logdet_ = 2.0 * chol_.diagonal().array().log().sum();
  const Eigen::Index n = values_.rows();
  Matrix linv = chol_.triangularView<Eigen::Lower>().solve(Matrix::Identity(n, n));
  inverse_ = linv.transpose() * linv;
  inverse_ = symmetrize(inverse_);
}

Matrix symmetric_function(const Matrix &a, const std::function<double(double)> &f,
                          bool clamp) {
  if (!a.allFinite())
    throw NumericError("matrix function of a matrix with non-finite entries");
  Eigen::SelfAdjointEigenSolver<Matrix> eig(symmetrize(a));
  if (eig.info() != Eigen::Success)
    throw NumericError("symmetric eigendecomposition failed");
  Vector lambda = eig.eigenvalues();
  if (clamp) {
    const double floor = 1e-14 * lambda.cwiseAbs().maxCoeff();
    for (Eigen::Index i = 0; i < lambda.size(); ++i)
      lambda(i) = std::max(lambda(i), floor);
  }
  for (Eigen::Index i = 0; i < lambda.size(); ++i) lambda(i) = f(lambda(i));
  const Matrix &v = eig.eigenvectors();
  return symmetrize(v * lambda.asDiagonal() * v.transpose());
}

Matrix sym_sqrt(const Matrix &a) {
  return symmetric_function(a, [](double x) { return std::sqrt(x); }, true);
}

Matrix sym_inv_sqrt(const Matrix &a) {
  return symmetric_function(a, [](double x) { return 1.0 / std::sqrt(x); }, true);
}

Matrix sym_exp(const Matrix &a) {
  return symmetric_function(a, [](double x) { return std::exp(x); }, false);
}

Matrix sym_log(const Matrix &a) {
  return symmetric_function(a, [](double x) { return std::log(x); }, true);
}

FactorSet inverse_factors(const FactorSet &factors) {
  std::vector<Matrix> inv;
  inv.reserve(factors.size());
  for (const auto &f : factors) inv.push_back(SpdMatrix(f).inverse());
  return FactorSet(std::move(inv));
}

}  // namespace kronvb
