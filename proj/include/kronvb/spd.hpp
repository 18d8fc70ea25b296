#pragma once

#include <functional>

#include "kronvb/kron_tensor.hpp"

namespace kronvb {

// Symmetric positive definite matrix with its Cholesky factor, inverse and
// log-determinant computed once at construction.
class SpdMatrix {
 public:
  // Symmetrizes `values` (asymmetry above 1e-8 relative is rejected) and
  // factors it. Throws NumericError when the matrix is not positive definite
  // or contains non-finite entries.
  explicit SpdMatrix(const Matrix &values);

  Eigen::Index order() const { return values_.rows(); }
  const Matrix &values() const { return values_; }
  const Matrix &chol() const { return chol_; }
  const Matrix &inverse() const { return inverse_; }
  double logdet() const { return logdet_; }

 private:
  Matrix values_;
  Matrix chol_;
  Matrix inverse_;
  double logdet_ = 0.0;
};

// Cholesky factor of an SPD matrix; NumericError naming `what` on failure
// or when a squared pivot falls below 1e-14 * max diag(a).
Matrix cholesky_lower(const Matrix &a, const char *what = "matrix");

// f(A) for symmetric A via its eigendecomposition. Eigenvalues are clamped
// from below at 1e-14 * max|lambda| when `clamp` is set, which the square
// root and logarithm need on nearly singular input.
Matrix symmetric_function(const Matrix &a, const std::function<double(double)> &f,
                          bool clamp);

Matrix sym_sqrt(const Matrix &a);
Matrix sym_inv_sqrt(const Matrix &a);
Matrix sym_exp(const Matrix &a);
Matrix sym_log(const Matrix &a);

inline Matrix symmetrize(const Matrix &a) { return 0.5 * (a + a.transpose()); }

// Inverses of every factor, e.g. the weights for kron_trace.
FactorSet inverse_factors(const FactorSet &factors);

}  // namespace kronvb
