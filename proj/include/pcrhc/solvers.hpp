#ifndef PCRHC_SOLVERS_HPP_
#define PCRHC_SOLVERS_HPP_

#include <Eigen/Core>

#include <cstdint>
#include <string>
#include <vector>

#include "pcrhc/errors.hpp"

namespace pcrhc {

// ---------------------------------------------------------------------------
// Convex QP / QCQP
// ---------------------------------------------------------------------------

/// Convex quadratic inequality x^T Q x + g^T x <= bound with Q PSD.
struct QuadConstraint {
  Eigen::MatrixXd Q;
  Eigen::VectorXd g;
  double bound = 0.0;
};

/// min 1/2 x^T H x + f^T x  s.t.  A_eq x = b_eq, A_in x <= b_in, quad rows.
struct QPData {
  Eigen::MatrixXd H;
  Eigen::VectorXd f;
  Eigen::MatrixXd A_eq;
  Eigen::VectorXd b_eq;
  Eigen::MatrixXd A_in;
  Eigen::VectorXd b_in;
  std::vector<QuadConstraint> quad;

  int num_vars() const { return static_cast<int>(H.rows()); }
  /// Checks symmetry, PSD-ness (eigenvalues >= -1e-10) and shape consistency.
  void validate() const;
  double objective(const Eigen::VectorXd& x) const;
  /// Largest violation over all constraint classes at x.
  double violation(const Eigen::VectorXd& x) const;
};

enum class SolveStatus { optimal, infeasible, max_iterations, numeric_failure };
std::string to_string(SolveStatus s);

struct Residuals {
  double primal = 0.0;
  double dual = 0.0;
  double constraint_violation = 0.0;
};

struct SolveReport {
  SolveStatus status = SolveStatus::numeric_failure;
  double objective = 0.0;
  Eigen::VectorXd x;
  Residuals residuals;
  int iterations = 0;
  std::vector<std::string> notes;
  // Multipliers in the convention H x + f + A_eq'y_eq + A_in'y_in
  // + sum_j y_quad[j] (2 Q_j x + g_j) = 0, y_in >= 0, y_quad >= 0.
  Eigen::VectorXd y_eq;
  Eigen::VectorXd y_in;
  std::vector<double> y_quad;
};

struct ConvexSettings {
  double eps_primal = 1e-8;
  double eps_dual = 1e-8;
  int max_iterations = 100000;
  double rho = 0.1;
  double rho_eq_scale = 1e3;  // equality rows get rho * this
  double sigma = 1e-6;
  double alpha = 1.6;  // over-relaxation
  int check_interval = 25;
  bool polish = true;
  bool adaptive_rho = true;
  double eps_infeasible = 1e-5;
};

/// Operator-splitting (ADMM) solve with an active-set Newton polish step.
/// Quadratic rows enter through a second-order-cone reformulation of the
/// PSD forms. Deterministic: fixed iteration order, no time-based state.
SolveReport solve_convex(const QPData& data, const ConvexSettings& settings = {},
                         const Eigen::VectorXd* warm_start = nullptr);

// ---------------------------------------------------------------------------
// Discrete algebraic Riccati equation
// ---------------------------------------------------------------------------

struct DareOptions {
  double tolerance = 1e-12;   // relative change of iterates
  int max_iterations = 200;
  double residual_tolerance = 1e-9;  // relative DARE residual contract
};

struct DareResult {
  Eigen::MatrixXd P;
  int iterations = 0;
  double residual = 0.0;  // ||A'PA - P - A'PB (R+B'PB)^-1 B'PA + Q||_F
  std::vector<double> residual_history;
};

/// Structure-preserving doubling iteration for
/// P = A^T P A - A^T P B (R + B^T P B)^{-1} B^T P A + Q, Q >= 0, R > 0.
/// Throws SynthesisError on non-convergence, NumericError if the converged
/// iterate misses the residual contract.
DareResult solve_dare(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B,
                      const Eigen::MatrixXd& Q, const Eigen::MatrixXd& R,
                      const DareOptions& options = {});

// ---------------------------------------------------------------------------
// Variable-gain sequential local optimization
// ---------------------------------------------------------------------------

struct RHCProblem;  // transcription.hpp

/// Initial iterate for the nonconvex {ubar(k), K(k)} program.
struct VariableGainGuess {
  std::vector<Eigen::VectorXd> ubar;   // N entries of length m
  std::vector<Eigen::MatrixXd> gains;  // N entries of size m x n
};

struct VariableGainSettings {
  int max_outer = 60;
  int starts = 3;            // multi-start: guess/terminal, zero, perturbed
  std::uint64_t seed = 1;    // seeds the perturbed start
  double stationarity_tol = 1e-6;
  double step_tol = 1e-10;
  double constraint_tol = 1e-8;
  ConvexSettings convex;
};

struct VariableGainSolution {
  std::vector<Eigen::VectorXd> ubar;
  std::vector<Eigen::MatrixXd> gains;
  std::vector<Eigen::VectorXd> states;  // X(0..N) under the returned iterate
  double objective = 0.0;
  double stationarity = 0.0;
  SolveReport report;
};

/// Alternating scheme for mean-plus-variable-gain problems: convex solve in
/// ubar with gains fixed, then a damped Gauss-Newton step in the gains.
/// Returns the best KKT point found across starts; the objective never
/// exceeds the fixed-gain warm start it was seeded with.
VariableGainSolution solve_variable_gain(const RHCProblem& problem,
                                         const VariableGainGuess* guess,
                                         const VariableGainSettings& settings = {});

}  // namespace pcrhc

#endif  // PCRHC_SOLVERS_HPP_
