#pragma once

#include <cstdint>
#include <random>
#include <variant>
#include <vector>

#include "kronvb/spd.hpp"

namespace kronvb {

// Seeded pseudorandom source. Identical seeds give identical streams within
// one build.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t seed() const { return seed_; }
  double normal();
  // Real-valued degrees of freedom, drawn as Gamma(k/2, scale 2).
  double chi_square(double k);
  double uniform();
  Matrix normal_matrix(Eigen::Index rows, Eigen::Index cols);

  // Independent stream for sub-task `index`, derived from this seed only.
  Rng fork(std::uint64_t index) const;
  // Independent stream seeded from the next value of this one.
  Rng split();

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_;
};

std::uint64_t splitmix64(std::uint64_t x);

struct TensorNormalSample {
  Matrix observations;  // p x n, one vectorized observation per column
  SufficientStats stats;
};

// y = ((x)_i L_i) z with L_i = chol(Sigma_i) and z standard normal.
TensorNormalSample sample_tensor_normal(const FactorSet &covariances, std::size_t n,
                                        Rng &rng);

// Bartlett factor of Wishart(nu, I_p): L_ii = sqrt(chi^2_{nu - i + 1}) for
// 1-based i, strictly lower entries standard normal. Requires nu > p - 1.
Matrix bartlett_lower(Eigen::Index p, double nu, Rng &rng);

struct WishartSpec {
  double dof = 0.0;
  std::variant<FactorSet, Matrix> scale;
  // When set, `scale` is the inverse-Wishart scale Psi and the factors used
  // are chol(Psi^{-1}).
  bool inverse = false;

  Eigen::Index order() const;
  void validate() const;
};

// Multiway Cholesky product ((x)_i L_i) * bartlett through the reversed-order
// reshape: the p x p matrix becomes a (d_D..d_1, d_D..d_1) array, row axis j
// (0-based) receives L_{D-j}, and the result is unfolded back.
Matrix multiway_cholesky_apply(const FactorSet &chol_factors, const Matrix &bartlett);

// Draws W_L with W_L W_L^T ~ Wishart(dof, Q), Q = (x)_i Q_i the Wishart scale
// (or Psi^{-1} for an inverse spec). Requires a FactorSet scale.
Matrix multiway_iw_cholesky(const WishartSpec &spec, Rng &rng);

// Same, also returning the Bartlett draw that produced it.
Matrix multiway_iw_cholesky(const WishartSpec &spec, Rng &rng, Matrix *bartlett_out);

// Lower Cholesky factor of a precision draw: Sigma^{-1} = W W^T with
// Sigma ~ IW(dof, scale).
Matrix iw_precision_cholesky(const WishartSpec &spec, Rng &rng);

// Sigma = W^{-T} W^{-1} from a lower precision factor W.
Matrix covariance_from_precision_cholesky(const Matrix &w);

// Dense IW(nu_v, (x)_i A_i) draws. Requires nu_v > p + 1.
std::vector<Matrix> sample_joint_iw(double nu_v, const FactorSet &a, std::size_t n_draws,
                                    Rng &rng);

// Independent per-mode IW(nu_i, A_i) draws. Requires nu_i > d_i + 1.
std::vector<FactorSet> sample_mean_field(const std::vector<double> &nu, const FactorSet &a,
                                         std::size_t n_draws, Rng &rng);

// Precision Cholesky factor of a covariance draw, dense or per mode.
using PrecisionFactor = std::variant<Matrix, FactorSet>;

// For each draw, averages y^T Sigma*^{-1} y over m draws y ~ N(0, Sigma^(t)).
// `truth_inverse` is either dense or the per-mode inverses of a separable
// truth.
std::vector<double> mahalanobis_predictive(const std::variant<Matrix, FactorSet> &truth_inverse,
                                           const std::vector<PrecisionFactor> &draws,
                                           std::size_t m, Rng &rng);

// Largest relative rank-one residual sqrt(sum_{k>=2} s_k^2) / ||Sigma||_F over
// the single-mode rearrangements of Sigma. Zero for exactly separable input.
double nearest_kronecker_residual(const Matrix &sigma, const FactorDims &dims);

}  // namespace kronvb
