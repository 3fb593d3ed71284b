#ifndef PCRHC_GALERKIN_HPP_
#define PCRHC_GALERKIN_HPP_

#include <Eigen/Core>

#include <memory>
#include <vector>

#include "pcrhc/basis.hpp"

namespace pcrhc {

// ---------------------------------------------------------------------------
// Uncertain system and its deterministic surrogate
// ---------------------------------------------------------------------------

/// One monomial term of a polynomial matrix in Delta.
struct PolyTerm {
  MultiIndex exponents;
  Eigen::MatrixXd coeff;
};

/// Linear system x(k+1) = A(Delta) x(k) + B(Delta) u(k) with
/// A(Delta) = sum_alpha A_alpha Delta^alpha and likewise for B.
/// Components of Delta are mutually independent with the given marginals.
struct UncertainSystem {
  int n = 0;
  int m = 0;
  int d = 0;
  std::vector<PolyTerm> A_terms;
  std::vector<PolyTerm> B_terms;
  std::vector<Marginal> marginals;

  void validate() const;
  int max_monomial_degree() const;
  Eigen::MatrixXd eval_A(const Eigen::VectorXd& delta) const;
  Eigen::MatrixXd eval_B(const Eigen::VectorXd& delta) const;
};

/// The deterministic n(p+1)-dimensional surrogate X(k+1) = Abold X(k) + Bbold U(k).
struct ChaosSystem {
  std::shared_ptr<const BasisSet> basis;
  std::shared_ptr<const ProductTensors> tensors;
  Eigen::MatrixXd Abold;  // n(p+1) x n(p+1)
  Eigen::MatrixXd Bbold;  // n(p+1) x m(p+1)
  int n = 0;
  int m = 0;

  int blocks() const { return basis->size(); }  // p + 1
  int state_dim() const { return n * blocks(); }
  int control_dim() const { return m * blocks(); }
};

/// Stacked gPC coefficient vector [x_0; x_1; ...; x_p], blocks of length n.
struct ChaosState {
  int n = 0;
  Eigen::VectorXd coeffs;

  ChaosState() = default;
  ChaosState(int n_, int blocks)
      : n(n_), coeffs(Eigen::VectorXd::Zero(n_ * blocks)) {}
  int blocks() const { return n == 0 ? 0 : static_cast<int>(coeffs.size()) / n; }
  Eigen::VectorBlock<Eigen::VectorXd> block(int i) { return coeffs.segment(i * n, n); }
  Eigen::VectorXd block(int i) const { return coeffs.segment(i * n, n); }
};

/// Stacked gPC control coefficients [u_0; ...; u_p], blocks of length m.
struct ChaosControl {
  int m = 0;
  Eigen::VectorXd coeffs;

  ChaosControl() = default;
  ChaosControl(int m_, int blocks)
      : m(m_), coeffs(Eigen::VectorXd::Zero(m_ * blocks)) {}
  int blocks() const { return m == 0 ? 0 : static_cast<int>(coeffs.size()) / m; }
  Eigen::VectorBlock<Eigen::VectorXd> block(int i) { return coeffs.segment(i * m, m); }
  Eigen::VectorXd block(int i) const { return coeffs.segment(i * m, m); }
};

// ---------------------------------------------------------------------------
// Projection and assembly
// ---------------------------------------------------------------------------

/// Relative L2 energy of the modes a projection discards. Filled when a
/// diagnostics pointer is handed to project_matrix.
struct ProjectionDiagnostics {
  double relative_truncation_energy = 0.0;
  bool truncated = false;
};

/// gPC coefficient matrices M_i = <M(Delta) phi_i> / <phi_i^2> of a
/// polynomial matrix given by monomial terms, computed entrywise by
/// quadrature exact for the integrand. Terms above the basis degree are
/// truncated; the optional diagnostics report the discarded energy.
std::vector<Eigen::MatrixXd> project_matrix(const std::vector<PolyTerm>& terms,
                                            const BasisSet& basis,
                                            int rows, int cols,
                                            ProjectionDiagnostics* diag = nullptr);

/// Galerkin assembly: block (i, k) of Abold is (1/h_i^2) sum_j A_j <phi_i phi_j phi_k>,
/// the stacked (W (x) I)^{-1} [H_A (E_i (x) I)] construction.
ChaosSystem assemble(const std::vector<Eigen::MatrixXd>& A_coeffs,
                     const std::vector<Eigen::MatrixXd>& B_coeffs,
                     std::shared_ptr<const BasisSet> basis,
                     std::shared_ptr<const ProductTensors> tensors);

/// Basis construction + projection + assembly in one call.
ChaosSystem make_chaos_system(const UncertainSystem& sys, int order,
                              ProjectionDiagnostics* diag = nullptr);

/// One surrogate step X(k+1) = Abold X(k) + Bbold U(k).
ChaosState propagate(const ChaosSystem& sys, const ChaosState& X,
                     const ChaosControl& U);

/// Open-loop surrogate trajectory X(0..steps) under zero control.
std::vector<ChaosState> propagate_open_loop(const ChaosSystem& sys,
                                            const ChaosState& X0, int steps);

/// Abold + Bbold (M (x) K) with M = diag(0, 1, ..., 1): deviation-feedback
/// closed loop for the control law u = ubar + K (x - E[x]).
Eigen::MatrixXd closed_loop_matrix(const ChaosSystem& sys,
                                   const Eigen::MatrixXd& K);

// ---------------------------------------------------------------------------
// Moments of gPC states
// ---------------------------------------------------------------------------

/// E[x] = x_0, the first coefficient block.
Eigen::VectorXd mean(const ChaosState& X);

/// Cov(x) = M_X W M_X^T - x_0 x_0^T = sum_{i>=1} h_i^2 x_i x_i^T.
Eigen::MatrixXd covariance(const ChaosState& X, const ProductTensors& tensors);

struct MomentOptions {
  double term_cap = 1e7;  // cap on (p+1)^q contraction terms
};

/// q-th raw moment of scalar component `component`, the q-fold coefficient
/// contraction sum x_{i1} ... x_{iq} <phi_{i1} ... phi_{iq}>.
/// Throws LimitError when (p+1)^q exceeds the configured cap.
double moment(const ChaosState& X, int q, int component, const BasisSet& basis,
              const MomentOptions& options = {});

/// Evaluates the gPC polynomial x(k, Delta) at a realization of Delta.
Eigen::VectorXd eval_state(const ChaosState& X, const BasisSet& basis,
                           const Eigen::VectorXd& delta);
Eigen::VectorXd eval_control(const ChaosControl& U, const BasisSet& basis,
                             const Eigen::VectorXd& delta);

}  // namespace pcrhc

#endif  // PCRHC_GALERKIN_HPP_
