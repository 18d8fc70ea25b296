#pragma once

#include <random>

#include "kronvb/kron_tensor.hpp"

namespace kronvb::testing {

inline Matrix random_matrix(std::mt19937_64 &gen, Eigen::Index r, Eigen::Index c) {
  std::normal_distribution<double> nd;
  Matrix m(r, c);
  for (Eigen::Index j = 0; j < c; ++j)
    for (Eigen::Index i = 0; i < r; ++i) m(i, j) = nd(gen);
  return m;
}

inline Matrix random_symmetric(std::mt19937_64 &gen, Eigen::Index n) {
  Matrix m = random_matrix(gen, n, n);
  return 0.5 * (m + m.transpose());
}

// Well-conditioned SPD matrix: B B^T / n + I.
inline Matrix random_spd(std::mt19937_64 &gen, Eigen::Index n) {
  Matrix b = random_matrix(gen, n, n);
  Matrix s = b * b.transpose() / static_cast<double>(n) + Matrix::Identity(n, n);
  return 0.5 * (s + s.transpose());
}

inline FactorSet random_spd_factors(std::mt19937_64 &gen, const std::vector<std::size_t> &dims) {
  std::vector<Matrix> f;
  for (std::size_t d : dims) f.push_back(random_spd(gen, static_cast<Eigen::Index>(d)));
  return FactorSet(std::move(f));
}

inline double rel_err(double a, double b) {
  return std::abs(a - b) / std::max(std::abs(b), 1e-300);
}

inline double max_abs(const Matrix &m) { return m.cwiseAbs().maxCoeff(); }

}  // namespace kronvb::testing
