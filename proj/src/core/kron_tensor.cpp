#include "kronvb/kron_tensor.hpp"

#include <algorithm>
#include <numeric>
#include <string>

#include "kronvb/error.hpp"

namespace kronvb {

FactorDims::FactorDims(std::vector<std::size_t> dims) : dims_(std::move(dims)) {
  if (dims_.empty()) throw ValidationError("FactorDims needs at least one mode");
  total_ = 1;
  for (std::size_t i = 0; i < dims_.size(); ++i) {
    if (dims_[i] == 0)
      throw ValidationError("mode " + std::to_string(i + 1) + " has extent 0");
    total_ *= dims_[i];
  }
}

FactorSet::FactorSet(std::vector<Matrix> factors) : factors_(std::move(factors)) {
  for (std::size_t i = 0; i < factors_.size(); ++i) {
    if (factors_[i].rows() != factors_[i].cols() || factors_[i].rows() == 0)
      throw ValidationError("factor " + std::to_string(i + 1) +
                            " is not a non-empty square matrix");
  }
}

FactorDims FactorSet::dims() const {
  std::vector<std::size_t> d;
  d.reserve(factors_.size());
  for (const auto &f : factors_) d.push_back(static_cast<std::size_t>(f.rows()));
  return FactorDims(std::move(d));
}

FactorSet FactorSet::identity(const FactorDims &dims) {
  std::vector<Matrix> f;
  for (std::size_t d : dims.extents())
    f.push_back(Matrix::Identity(static_cast<Eigen::Index>(d),
                                 static_cast<Eigen::Index>(d)));
  return FactorSet(std::move(f));
}

SufficientStats SufficientStats::from_observations(const FactorDims &dims,
                                                   const Matrix &columns) {
  if (static_cast<std::size_t>(columns.rows()) != dims.total())
    throw ValidationError("observation length does not match prod(dims)");
  SufficientStats s;
  s.dims = dims;
  s.count = static_cast<std::size_t>(columns.cols());
  const auto p = static_cast<Eigen::Index>(dims.total());
  s.scatter = Matrix::Zero(p, p);
  if (s.count > 0)
    s.scatter.selfadjointView<Eigen::Lower>().rankUpdate(columns);
  s.scatter = s.scatter.selfadjointView<Eigen::Lower>();
  return s;
}

// ---------------------------------------------------------------------------

Tensor::Tensor(std::vector<std::size_t> shape) : shape_(std::move(shape)) {
  std::size_t n = 1;
  for (std::size_t e : shape_) n *= e;
  values_.assign(n, 0.0);
}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> values)
    : shape_(std::move(shape)), values_(std::move(values)) {
  std::size_t n = 1;
  for (std::size_t e : shape_) n *= e;
  if (n != values_.size())
    throw ValidationError("tensor value count does not match its shape");
}

std::size_t Tensor::offset(std::span<const std::size_t> index) const {
  if (index.size() != shape_.size())
    throw ValidationError("tensor index rank mismatch");
  std::size_t off = 0;
  for (std::size_t k = 0; k < shape_.size(); ++k) {
    if (index[k] >= shape_[k])
      throw ValidationError("tensor index out of bounds in mode " +
                            std::to_string(k));
    off = off * shape_[k] + index[k];
  }
  return off;
}

double Tensor::at(std::span<const std::size_t> index) const {
  return values_[offset(index)];
}

double &Tensor::at(std::span<const std::size_t> index) {
  return values_[offset(index)];
}

// ---------------------------------------------------------------------------

std::size_t linear_index(std::span<const std::size_t> multi,
                         const FactorDims &dims) {
  if (multi.size() != dims.modes())
    throw ValidationError("multi-index has " + std::to_string(multi.size()) +
                          " entries, expected " + std::to_string(dims.modes()));
  std::size_t p = 0;
  for (std::size_t k = 0; k < multi.size(); ++k) {
    if (multi[k] < 1 || multi[k] > dims[k])
      throw ValidationError("index " + std::to_string(multi[k]) +
                            " out of bounds for mode " + std::to_string(k + 1) +
                            " (extent " + std::to_string(dims[k]) + ")");
    p = p * dims[k] + (multi[k] - 1);
  }
  return p + 1;
}

std::vector<std::size_t> multi_index(std::size_t linear, const FactorDims &dims) {
  if (linear < 1 || linear > dims.total())
    throw ValidationError("linear index " + std::to_string(linear) +
                          " out of bounds (total " +
                          std::to_string(dims.total()) + ")");
  std::vector<std::size_t> multi(dims.modes());
  std::size_t rest = linear - 1;
  for (std::size_t k = dims.modes(); k-- > 0;) {
    multi[k] = rest % dims[k] + 1;
    rest /= dims[k];
  }
  return multi;
}

double kron_entry(const FactorSet &factors, std::span<const std::size_t> row,
                  std::span<const std::size_t> col) {
  const FactorDims dims = factors.dims();
  // linear_index validates the bounds of both multi-indices.
  (void)linear_index(row, dims);
  (void)linear_index(col, dims);
  double v = 1.0;
  for (std::size_t k = 0; k < factors.size(); ++k)
    v *= factors[k](static_cast<Eigen::Index>(row[k] - 1),
                    static_cast<Eigen::Index>(col[k] - 1));
  return v;
}

Matrix dense_kron(const FactorSet &factors) {
  if (factors.size() == 0) throw ValidationError("empty factor set");
  Matrix out = factors[0];
  for (std::size_t k = 1; k < factors.size(); ++k) {
    const Matrix &b = factors[k];
    Matrix next(out.rows() * b.rows(), out.cols() * b.cols());
    for (Eigen::Index i = 0; i < out.rows(); ++i)
      for (Eigen::Index j = 0; j < out.cols(); ++j)
        next.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = out(i, j) * b;
    out = std::move(next);
  }
  return out;
}

Matrix kron_apply(const FactorSet &factors, const Matrix &columns) {
  const FactorDims dims = factors.dims();
  if (static_cast<std::size_t>(columns.rows()) != dims.total())
    throw ValidationError("kron_apply: vector length " + std::to_string(columns.rows()) +
                          " does not match prod(dims) = " + std::to_string(dims.total()));
  // A column-major p x n block is a row-major (n, d_1, ..., d_D) tensor.
  std::vector<std::size_t> shape{static_cast<std::size_t>(columns.cols())};
  shape.insert(shape.end(), dims.extents().begin(), dims.extents().end());
  Tensor t(shape, std::vector<double>(columns.data(), columns.data() + columns.size()));
  for (std::size_t k = 0; k < dims.modes(); ++k) t = mode_product(t, factors[k], k + 1);
  return Eigen::Map<const Matrix>(t.values().data(), columns.rows(), columns.cols());
}

namespace {

std::vector<std::size_t> doubled_shape(const FactorDims &dims) {
  std::vector<std::size_t> shape = dims.extents();
  shape.insert(shape.end(), dims.extents().begin(), dims.extents().end());
  return shape;
}

}  // namespace

FoldedSymmetricTensor symmetric_fold(const Matrix &a, const FactorDims &dims) {
  const auto p = static_cast<Eigen::Index>(dims.total());
  if (a.rows() != p || a.cols() != p)
    throw ValidationError("matrix order " + std::to_string(a.rows()) + "x" +
                          std::to_string(a.cols()) +
                          " does not match prod(dims) = " + std::to_string(p));
  std::vector<double> values(static_cast<std::size_t>(p * p));
  // Row-major over (row multi-index, column multi-index) is exactly row-major
  // over (p, q).
  for (Eigen::Index r = 0; r < p; ++r)
    for (Eigen::Index c = 0; c < p; ++c)
      values[static_cast<std::size_t>(r * p + c)] = a(r, c);
  return {dims, Tensor(doubled_shape(dims), std::move(values))};
}

Matrix symmetric_unfold(const FoldedSymmetricTensor &t) {
  if (t.values.shape() != doubled_shape(t.dims))
    throw ValidationError("folded tensor shape does not match its dims");
  const auto p = static_cast<Eigen::Index>(t.dims.total());
  Matrix a(p, p);
  const auto &v = t.values.values();
  for (Eigen::Index r = 0; r < p; ++r)
    for (Eigen::Index c = 0; c < p; ++c)
      a(r, c) = v[static_cast<std::size_t>(r * p + c)];
  return a;
}

Tensor mode_product(const Tensor &t, const Matrix &m, std::size_t mode) {
  if (mode >= t.rank())
    throw ValidationError("mode " + std::to_string(mode) + " out of range for rank " +
                          std::to_string(t.rank()));
  const std::size_t extent = t.shape()[mode];
  if (static_cast<std::size_t>(m.cols()) != extent)
    throw ValidationError("mode product: matrix has " + std::to_string(m.cols()) +
                          " columns but mode " + std::to_string(mode) +
                          " has extent " + std::to_string(extent));
  std::size_t pre = 1, post = 1;
  for (std::size_t k = 0; k < mode; ++k) pre *= t.shape()[k];
  for (std::size_t k = mode + 1; k < t.rank(); ++k) post *= t.shape()[k];

  std::vector<std::size_t> shape = t.shape();
  shape[mode] = static_cast<std::size_t>(m.rows());
  Tensor out(shape);
  const auto rows = static_cast<std::size_t>(m.rows());
  const double *in = t.values().data();
  double *o = out.values().data();
  for (std::size_t a = 0; a < pre; ++a) {
    for (std::size_t i = 0; i < rows; ++i) {
      double *dst = o + (a * rows + i) * post;
      for (std::size_t j = 0; j < extent; ++j) {
        const double w = m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
        if (w == 0.0) continue;
        const double *src = in + (a * extent + j) * post;
        for (std::size_t q = 0; q < post; ++q) dst[q] += w * src[q];
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Paired-mode contraction engine behind partial_trace.

namespace {

// A partially contracted folded tensor. Axes are the surviving row modes
// followed by the surviving column modes, both in increasing mode order.
// `data` either aliases the caller's scatter matrix or `owned`; moves keep
// the vector buffer, so only move these around.
struct Folded {
  std::vector<std::size_t> modes;  // surviving modes, increasing
  std::vector<std::size_t> extents;
  std::vector<double> owned;
  const double *data = nullptr;

  std::size_t axis_of(std::size_t mode) const {
    return static_cast<std::size_t>(
        std::find(modes.begin(), modes.end(), mode) - modes.begin());
  }
};

// Removes `mode` from both the row and column side:
//   out[pre, mid, post] = sum_{a,b} w(a,b) in[pre, a, mid, b, post]
// where pre = rows before the mode, mid = rows after it and columns before
// it, post = columns after it.
Folded contract_mode(const Folded &in, std::size_t mode, const Matrix &w,
                     ContractionStrategy strategy) {
  const std::size_t m = in.modes.size();
  const std::size_t r = in.axis_of(mode);
  const std::size_t d = in.extents[r];

  std::size_t pre = 1, mid = 1, post = 1;
  for (std::size_t k = 0; k < r; ++k) pre *= in.extents[k];
  for (std::size_t k = r + 1; k < m; ++k) mid *= in.extents[k];
  for (std::size_t k = 0; k < r; ++k) mid *= in.extents[k];
  for (std::size_t k = r + 1; k < m; ++k) post *= in.extents[k];

  Folded out;
  out.modes = in.modes;
  out.extents = in.extents;
  out.modes.erase(out.modes.begin() + static_cast<std::ptrdiff_t>(r));
  out.extents.erase(out.extents.begin() + static_cast<std::ptrdiff_t>(r));
  out.owned.assign(pre * mid * post, 0.0);
  out.data = out.owned.data();

  const double *src = in.data;
  double *dst = out.owned.data();
  auto at = [&](std::size_t p, std::size_t a, std::size_t mi, std::size_t b) {
    return src + (((p * d + a) * mid + mi) * d + b) * post;
  };

  for (std::size_t p = 0; p < pre; ++p) {
    for (std::size_t mi = 0; mi < mid; ++mi) {
      double *o = dst + (p * mid + mi) * post;
      for (std::size_t a = 0; a < d; ++a) {
        if (strategy == ContractionStrategy::kFull) {
          for (std::size_t b = 0; b < d; ++b) {
            const double wab = w(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b));
            const double *x = at(p, a, mi, b);
            for (std::size_t q = 0; q < post; ++q) o[q] += wab * x[q];
          }
        } else {
          const double waa = w(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(a));
          const double *xaa = at(p, a, mi, a);
          for (std::size_t q = 0; q < post; ++q) o[q] += waa * xaa[q];
          for (std::size_t b = a + 1; b < d; ++b) {
            const double wab = w(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b));
            const double *xab = at(p, a, mi, b);
            const double *xba = at(p, b, mi, a);
            for (std::size_t q = 0; q < post; ++q) o[q] += wab * (xab[q] + xba[q]);
          }
        }
      }
    }
  }
  return out;
}

Folded contract_all(const Folded &start, std::vector<std::size_t> drop,
                    const FactorSet &weights, ContractionStrategy strategy) {
  // A contraction over extent d costs size * d and shrinks the tensor by
  // d^2, so small extents go first.
  std::sort(drop.begin(), drop.end(), [&](std::size_t a, std::size_t b) {
    return weights[a].rows() != weights[b].rows() ? weights[a].rows() < weights[b].rows()
                                                  : a < b;
  });
  Folded cur;
  const Folded *src = &start;
  for (std::size_t mode : drop) {
    cur = contract_mode(*src, mode, weights[mode], strategy);
    src = &cur;
  }
  if (drop.empty()) {
    cur.modes = start.modes;
    cur.extents = start.extents;
    cur.data = start.data;
  }
  return cur;
}

Matrix finish(const Folded &f) {
  const auto d = static_cast<Eigen::Index>(f.extents.at(0));
  Matrix t(d, d);
  for (Eigen::Index a = 0; a < d; ++a)
    for (Eigen::Index b = 0; b < d; ++b) t(a, b) = f.data[a * d + b];
  Matrix sym = 0.5 * (t + t.transpose());
  if (!sym.allFinite())
    throw NumericError("partial trace produced non-finite entries for mode " +
                       std::to_string(f.modes.at(0) + 1));
  return sym;
}

// Every mode left in `node` still needs its T. Peeling off the smallest mode
// m costs one pass for m itself plus one pass that serves every other mode.
void descend(const Folded &node, const FactorSet &weights, ContractionStrategy strategy,
             std::vector<Matrix> &out) {
  if (node.modes.size() == 1) {
    out[node.modes[0]] = finish(node);
    return;
  }
  std::size_t m = node.modes[0];
  for (std::size_t k : node.modes)
    if (weights[k].rows() < weights[m].rows()) m = k;
  std::vector<std::size_t> others;
  for (std::size_t k : node.modes)
    if (k != m) others.push_back(k);
  out[m] = finish(contract_all(node, others, weights, strategy));
  const Folded rest = contract_mode(node, m, weights[m], strategy);
  descend(rest, weights, strategy, out);
}

FactorDims check_inputs(const Matrix &s, const FactorSet &weights) {
  if (weights.size() == 0) throw ValidationError("no weight factors supplied");
  const FactorDims dims = weights.dims();
  const auto p = static_cast<Eigen::Index>(dims.total());
  if (s.rows() != p || s.cols() != p)
    throw ValidationError("scatter matrix order " + std::to_string(s.rows()) +
                          " does not match prod(dims) = " + std::to_string(p));
  return dims;
}

Folded root_view(const Matrix &s, const FactorDims &dims) {
  Folded root;
  root.modes.resize(dims.modes());
  std::iota(root.modes.begin(), root.modes.end(), std::size_t{0});
  root.extents = dims.extents();
  // S is symmetric, so Eigen's column-major buffer is also its row-major
  // buffer: the folded view is index arithmetic over S itself.
  root.data = s.data();
  return root;
}

}  // namespace

Matrix partial_trace(const Matrix &s, const FactorSet &weights, std::size_t k,
                     ContractionStrategy strategy) {
  const FactorDims dims = check_inputs(s, weights);
  if (k >= dims.modes())
    throw ValidationError("mode " + std::to_string(k) + " out of range");
  std::vector<std::size_t> drop;
  for (std::size_t j = 0; j < dims.modes(); ++j)
    if (j != k) drop.push_back(j);
  const Folded root = root_view(s, dims);
  return finish(contract_all(root, drop, weights, strategy));
}

std::vector<Matrix> partial_traces(const Matrix &s, const FactorSet &weights,
                                   ContractionStrategy strategy) {
  const FactorDims dims = check_inputs(s, weights);
  std::vector<Matrix> out(dims.modes());
  descend(root_view(s, dims), weights, strategy, out);
  return out;
}

std::vector<Matrix> partial_traces_from_columns(const Matrix &columns, const FactorSet &weights) {
  const FactorDims dims = weights.dims();
  if (static_cast<std::size_t>(columns.rows()) != dims.total())
    throw ValidationError("column length " + std::to_string(columns.rows()) +
                          " does not match prod(dims) = " + std::to_string(dims.total()));
  std::vector<Matrix> out;
  for (std::size_t k = 0; k < dims.modes(); ++k) {
    std::vector<Matrix> w(weights.matrices());
    const auto dk = static_cast<Eigen::Index>(dims[k]);
    w[k] = Matrix::Identity(dk, dk);
    const Matrix weighted = kron_apply(FactorSet(std::move(w)), columns);
    std::size_t outer = 1, inner = 1;
    for (std::size_t j = 0; j < k; ++j) outer *= dims[j];
    for (std::size_t j = k + 1; j < dims.modes(); ++j) inner *= dims[j];
    const auto in = static_cast<Eigen::Index>(inner);
    // Each (column, outer index) slab is a row-major d_k x inner block.
    Matrix t = Matrix::Zero(dk, dk);
    for (Eigen::Index c = 0; c < columns.cols(); ++c)
      for (std::size_t o = 0; o < outer; ++o) {
        const Eigen::Index off = static_cast<Eigen::Index>(o) * dk * in;
        Eigen::Map<const Matrix> x(columns.col(c).data() + off, in, dk);
        Eigen::Map<const Matrix> y(weighted.col(c).data() + off, in, dk);
        t.noalias() += x.transpose() * y;
      }
    out.push_back(0.5 * (t + t.transpose()));
  }
  return out;
}

double kron_trace(const Matrix &s, const FactorSet &weights) {
  const Matrix t = partial_trace(s, weights, 0);
  return weights[0].cwiseProduct(t).sum();
}

}  // namespace kronvb
