#pragma once

// Affine-invariant geometry on SPD matrices and the metrics it induces on a
// product of Kronecker factors.

#include <vector>

#include "kronvb/spd.hpp"

namespace kronvb {

enum class MetricKind {
  // Each factor carries its own affine-invariant metric.
  kProductManifold,
  // Pullback of the affine-invariant metric on (x)_i Sigma_i under the
  // constraint |Sigma_i| = 1 for i > 1 (mode 0 carries the scale).
  kPullbackOrthogonalized,
  // Unconstrained pullback. Degenerate; diagnostics only.
  kPullbackNaive,
};

const char *to_string(MetricKind kind);

// Per-mode symmetric tangent components.
struct TangentVector {
  std::vector<Matrix> components;
};

// g_Sigma(U, V) = tr(Sigma^{-1} U Sigma^{-1} V).
double ai_inner(const SpdMatrix &base, const Matrix &u, const Matrix &v);

// Geodesic through `base` with initial velocity v, evaluated at time t.
SpdMatrix ai_exp(const SpdMatrix &base, const Matrix &v, double t);

// V - tr(V Sigma^{-1}) / d * Sigma, the g-orthogonal projection onto
// tangents that preserve |Sigma|.
Matrix project_traceless(const SpdMatrix &base, const Matrix &v);

// Block matrix of the unconstrained pullback metric acting on
// (vec V_1, ..., vec V_D), with full column-major vec of each d_i x d_i block:
//   g_ii = d_{-i} Sigma_i^{-1} (x) Sigma_i^{-1}
//   g_ij = prod_{k not in {i,j}} d_k vec(Sigma_i^{-1}) vec(Sigma_j^{-1})^T.
Matrix pullback_metric_naive(const FactorSet &factors);

// Block-diagonal metric sum_i d_{-i} Sigma_i^{-1} (x) Sigma_i^{-1}; equals the
// pullback metric on tangents with tr(Sigma_i^{-1} V_i) = 0 for i > 0.
Matrix pullback_metric_orthogonalized(const FactorSet &factors);

// Quadratic form of the pullback metric in trace form:
//   sum_i d_{-i} tr((S_i^{-1} V_i)^2)
//     + sum_{i != j} prod_{k not in {i,j}} d_k tr(S_i^{-1} V_i) tr(S_j^{-1} V_j).
double pullback_quadratic_form(const FactorSet &factors, const TangentVector &v);

// Converts per-mode Euclidean gradients to the Riemannian gradient.
//   kProductManifold:        Sigma_i G_i Sigma_i
//   kPullbackOrthogonalized: (1/d_{-i}) Sigma_i G_i Sigma_i, projected for i > 0
// kPullbackNaive throws ValidationError.
TangentVector riemannian_grad(const FactorSet &factors,
                              const std::vector<Matrix> &euclid_grads,
                              MetricKind metric);

// Squared metric norm of a Riemannian gradient, <G, grad>_F summed over modes.
double gradient_norm_sq(const std::vector<Matrix> &euclid_grads,
                        const TangentVector &rgrad);

// A_i <- exp_{A_i}(t V_i) per mode. Under kPullbackOrthogonalized the modes
// i > 0 are rescaled to unit determinant afterwards.
FactorSet geodesic_step(const FactorSet &factors, const TangentVector &v, double t,
                        MetricKind metric);

// Rescales factors i > 0 to |A_i| = 1 and moves the removed scale to A_0 so
// that (x)_i A_i is unchanged.
FactorSet normalize_determinants(const FactorSet &factors);

}  // namespace kronvb
