#pragma once

// Evidence lower bounds for inverse-Wishart variational families.
//
// Joint family:      q(Sigma) = IW(nu_v, (x)_i A_i),  nu_v = exp(z) + p + 1
// Mean-field family: q(Sigma_i) = IW(nu_vi, A_i),     nu_vi = exp(z_i) + d_i + 1
//
// The model is y_n ~ N(0, Sigma) with Sigma ~ IW(nu, Lambda) (joint) or
// Sigma = (x)_i Sigma_i, Sigma_i ~ IW(nu_i, Lambda_i) (mean field).

#include <variant>
#include <vector>

#include "kronvb/kron_tensor.hpp"

namespace kronvb {

double joint_dof(double z, std::size_t p);
double joint_z(double nu_v, std::size_t p);

struct JointPrior {
  double nu = 0.0;
  std::variant<Matrix, FactorSet> scale;
};

struct MeanFieldPrior {
  std::vector<double> nu;
  FactorSet scale;
};

// nu = p + 2 and Lambda = (x)_i (gamma^{1/D} / d_i) I with gamma = tr(S) / n.
JointPrior default_joint_prior(const SufficientStats &stats);
// nu_i = d_i + 2 and Lambda_i = (gamma^{1/D} / d_i) I with gamma = tr(S) / n.
MeanFieldPrior default_mean_field_prior(const SufficientStats &stats);

struct JointState {
  double z = 0.0;
  FactorSet a;

  double nu_v() const { return joint_dof(z, a.dims().total()); }
  static JointState with_dof(double nu_v, FactorSet a);
};

struct MeanFieldState {
  std::vector<double> z;
  FactorSet a;

  std::vector<double> nu_v() const;
  static MeanFieldState with_dof(const std::vector<double> &nu_v, FactorSet a);
};

struct ElboValue {
  double value = 0.0;
  // Parameter-free part of `value` (normalizers, the 2 pi term).
  double constant = 0.0;
  // tr(((x)_i A_i)^{-1} M): M = S + Lambda (joint) or S (mean field).
  double data_trace = 0.0;
  std::vector<Matrix> grad_a;
  std::vector<double> grad_nu;  // d/dnu_v, one entry per degree of freedom
  std::vector<double> grad_z;
  // T^(i)(M) contracted against the A_j^{-1}; reusable for gradient updates
  // at a new degree of freedom.
  std::vector<Matrix> traces;
  std::vector<Matrix> a_inverse;
};

class JointObjective {
 public:
  // With `orthogonalized` the log-determinant term is d_{-1} log|A_1|, which
  // assumes |A_i| = 1 for i > 0.
  JointObjective(const SufficientStats &stats, JointPrior prior, bool orthogonalized,
                 ContractionStrategy strategy = ContractionStrategy::kUpperTriangular);

  // M = S + Lambda supplied as C with M = C C^T, for a prior scale that is
  // itself built from the data (and so singular when n <= p). log|Lambda| is
  // left out of the constant and prior().scale is empty.
  JointObjective(const FactorDims &dims, std::size_t n, double prior_nu, Matrix shifted_columns,
                 bool orthogonalized);

  ElboValue evaluate(const JointState &state, bool with_gradients = true) const;
  double value(const JointState &state) const { return evaluate(state, false).value; }

  // Factor gradients at degree of freedom nu_v, reusing the traces cached in
  // `at` (which must come from evaluate on the same factors).
  std::vector<Matrix> grad_a(const ElboValue &at, double nu_v) const;

  const FactorDims &dims() const { return dims_; }
  std::size_t count() const { return n_; }
  const JointPrior &prior() const { return prior_; }
  bool orthogonalized() const { return orthogonalized_; }
  // Set when a dense Lambda is singular; log|Lambda| is then left out of
  // the constant.
  bool prior_scale_singular() const { return lambda_singular_; }
  Matrix shifted_scatter() const;

 private:
  void set_constant(double log_det_lambda);

  FactorDims dims_;
  std::size_t n_;
  JointPrior prior_;
  bool orthogonalized_;
  ContractionStrategy strategy_;
  Matrix m_;
  Matrix m_columns_;
  bool low_rank_ = false;
  bool lambda_singular_ = false;
  double constant_ = 0.0;
};

class MeanFieldObjective {
 public:
  MeanFieldObjective(const SufficientStats &stats, MeanFieldPrior prior,
                     ContractionStrategy strategy = ContractionStrategy::kUpperTriangular);

  ElboValue evaluate(const MeanFieldState &state, bool with_gradients = true) const;
  double value(const MeanFieldState &state) const { return evaluate(state, false).value; }

  std::vector<Matrix> grad_a(const ElboValue &at, const std::vector<double> &nu_v) const;

  const FactorDims &dims() const { return dims_; }
  std::size_t count() const { return n_; }
  const MeanFieldPrior &prior() const { return prior_; }

 private:
  FactorDims dims_;
  std::size_t n_;
  MeanFieldPrior prior_;
  ContractionStrategy strategy_;
  Matrix s_;
  std::vector<Matrix> lambda_;
  double constant_ = 0.0;
};

ElboValue elbo_joint(const JointState &state, const SufficientStats &stats,
                     const JointPrior &prior, bool orthogonalized);
ElboValue elbo_mean_field(const MeanFieldState &state, const SufficientStats &stats,
                          const MeanFieldPrior &prior);

}  // namespace kronvb
