#pragma once

// Kronecker and tensor index algebra.
//
// Conventions used across the library:
//  * A FactorSet {A_1, ..., A_D} represents A_1 (x) A_2 (x) ... (x) A_D with
//    the first factor outermost, so the last mode varies fastest in the
//    linear index.
//  * Multi-index <-> linear index maps are 1-based. Mode numbers passed to
//    functions are 0-based.
//  * Dense tensors are row-major.

#include <Eigen/Dense>

#include <cstddef>
#include <span>
#include <vector>

namespace kronvb {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

class FactorDims {
 public:
  FactorDims() = default;
  explicit FactorDims(std::vector<std::size_t> dims);

  std::size_t modes() const { return dims_.size(); }
  std::size_t operator[](std::size_t i) const { return dims_[i]; }
  std::size_t total() const { return total_; }
  // d_{-i}: product of all extents except mode i.
  std::size_t complement(std::size_t i) const { return total_ / dims_[i]; }
  const std::vector<std::size_t> &extents() const { return dims_; }

  bool operator==(const FactorDims &other) const { return dims_ == other.dims_; }

 private:
  std::vector<std::size_t> dims_;
  std::size_t total_ = 0;
};

// Ordered per-mode square matrices. Most callers hold SPD factors, but the
// container itself only checks shapes.
class FactorSet {
 public:
  FactorSet() = default;
  explicit FactorSet(std::vector<Matrix> factors);

  std::size_t size() const { return factors_.size(); }
  const Matrix &operator[](std::size_t i) const { return factors_[i]; }
  Matrix &operator[](std::size_t i) { return factors_[i]; }
  FactorDims dims() const;

  auto begin() const { return factors_.begin(); }
  auto end() const { return factors_.end(); }
  const std::vector<Matrix> &matrices() const { return factors_; }

  static FactorSet identity(const FactorDims &dims);

 private:
  std::vector<Matrix> factors_;
};

// Gram matrix S = sum_n y_n y_n^T of vectorized observations.
struct SufficientStats {
  FactorDims dims;
  Matrix scatter;
  std::size_t count = 0;

  static SufficientStats from_observations(const FactorDims &dims,
                                           const Matrix &columns);
};

// Dense row-major tensor.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape);
  Tensor(std::vector<std::size_t> shape, std::vector<double> values);

  const std::vector<std::size_t> &shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return values_.size(); }
  const std::vector<double> &values() const { return values_; }
  std::vector<double> &values() { return values_; }

  // 0-based element access.
  double at(std::span<const std::size_t> index) const;
  double &at(std::span<const std::size_t> index);

 private:
  std::size_t offset(std::span<const std::size_t> index) const;

  std::vector<std::size_t> shape_;
  std::vector<double> values_;
};

// 2D-way array of shape (d_1..d_D, d_1..d_D) pairing row and column
// multi-indices of a symmetric matrix of order prod d_i.
struct FoldedSymmetricTensor {
  FactorDims dims;
  Tensor values;
};

// 1-based multi-index -> 1-based linear index,
//   p = sum_{k<D} (i_k - 1) prod_{j>k} d_j + i_D.
std::size_t linear_index(std::span<const std::size_t> multi,
                         const FactorDims &dims);

// Inverse of linear_index.
std::vector<std::size_t> multi_index(std::size_t linear, const FactorDims &dims);

// Entry of (x)_k A_k at 1-based row/column multi-indices.
double kron_entry(const FactorSet &factors, std::span<const std::size_t> row,
                  std::span<const std::size_t> col);

// Materializes (x)_k A_k. Intended for small orders and test oracles.
Matrix dense_kron(const FactorSet &factors);

// ((x)_k M_k) * columns, applied mode by mode without forming the product.
Matrix kron_apply(const FactorSet &factors, const Matrix &columns);

FoldedSymmetricTensor symmetric_fold(const Matrix &a, const FactorDims &dims);
Matrix symmetric_unfold(const FoldedSymmetricTensor &t);

// result[.., i, ..] = sum_j m(i, j) * t[.., j, ..] along `mode`.
Tensor mode_product(const Tensor &t, const Matrix &m, std::size_t mode);

enum class ContractionStrategy {
  kFull,
  // Folds mirrored entries of each contracted pair first, then uses only the
  // upper triangle of the symmetric weight matrix.
  kUpperTriangular,
};

// T^(k)(S, {W_j}_{j!=k}): contracts the folded S against every W_j, j != k,
// over the paired row/column modes, then symmetrizes. `weights` holds one
// matrix per mode; weights[k] is not read. With W_j = Sigma_j^{-1},
//   tr(Sigma_k^{-1} T^(k)) = tr([(x)_i Sigma_i]^{-1} S).
Matrix partial_trace(const Matrix &s, const FactorSet &weights, std::size_t k,
                     ContractionStrategy strategy = ContractionStrategy::kFull);

// T^(k) for every mode, sharing contractions between modes.
std::vector<Matrix> partial_traces(
    const Matrix &s, const FactorSet &weights,
    ContractionStrategy strategy = ContractionStrategy::kFull);

// T^(k) for every mode when S = Y Y^T is given by the columns of Y; costs
// O(n p sum_j d_j) and never forms S.
std::vector<Matrix> partial_traces_from_columns(const Matrix &columns, const FactorSet &weights);

// tr([(x)_i W_i] S) computed through the mode-0 partial trace.
double kron_trace(const Matrix &s, const FactorSet &weights);

}  // namespace kronvb
