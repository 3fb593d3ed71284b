#ifndef PCRHC_TRANSCRIPTION_HPP_
#define PCRHC_TRANSCRIPTION_HPP_

#include <Eigen/Core>

#include <string>
#include <vector>

#include "pcrhc/galerkin.hpp"
#include "pcrhc/solvers.hpp"

namespace pcrhc {

// ---------------------------------------------------------------------------
// Specifications (physical coordinates)
// ---------------------------------------------------------------------------

struct CostSpec {
  Eigen::MatrixXd Q;  // n x n, symmetric positive definite
  Eigen::MatrixXd R;  // m x m, symmetric positive definite
  int N = 10;         // horizon length >= 1

  /// Symmetry within 1e-12 and Cholesky-verified positive definiteness.
  void validate(int n, int m) const;
};

enum class ConstraintKind {
  expectation_quadratic_state,
  expectation_quadratic_control,
  variance_trace_state,
};
enum class ConstraintDirection { le, ge };

std::string to_string(ConstraintKind k);

/// E[z^T H z + G z] <=/>= bound for z = x or u, or trace(Cov(x)) <= bound,
/// applied at the listed prediction steps (empty = every applicable step).
struct ConstraintSpec {
  ConstraintKind kind = ConstraintKind::expectation_quadratic_state;
  Eigen::MatrixXd H;       // symmetric, may be zero/empty
  Eigen::MatrixXd G;       // single row, may be empty
  double bound = 0.0;
  ConstraintDirection direction = ConstraintDirection::le;
  std::vector<int> steps;  // subset of {0..N} (states) or {0..N-1} (controls)
};

// ---------------------------------------------------------------------------
// Lifted (gPC coordinate) objects
// ---------------------------------------------------------------------------

/// Canonical <= constraint z^T quad z + lin z <= rhs on a lifted state or
/// control vector. quad may be empty (pure linear) and lin may be empty.
struct LiftedConstraint {
  enum class Target { state, control };
  Target target = Target::state;
  ConstraintKind kind = ConstraintKind::expectation_quadratic_state;
  Eigen::MatrixXd quad;      // L x L or empty
  Eigen::RowVectorXd lin;    // length L or empty
  double rhs = 0.0;
  std::vector<int> steps;

  bool has_quad() const { return quad.size() > 0; }
  bool has_lin() const { return lin.size() > 0; }
  /// rhs - (v'quad v + lin v); >= 0 means satisfied.
  double margin(const Eigen::VectorXd& v) const;
};

struct TerminalController {
  Eigen::MatrixXd P;          // n(p+1) x n(p+1), symmetric PSD
  Eigen::MatrixXd K_f;        // m(p+1) x n(p+1) full lifted gain
  Eigen::MatrixXd gain_mean;  // m x n, block (0,0) of K_f
  Eigen::MatrixXd gain_dev;   // m x n, structured deviation gain
  double spectral_radius = 0.0;  // closed loop under K_f
  DareResult dare;
};

enum class ControlMode { full_chaos, mean_fixed_gain, mean_variable_gain };
std::string to_string(ControlMode m);

/// Fully lifted finite-horizon problem. Immutable after build.
struct RHCProblem {
  ChaosSystem system;
  CostSpec cost;              // physical Q, R, N
  Eigen::MatrixXd Qbar;       // W (x) Q
  Eigen::MatrixXd Rbar;       // W (x) R
  TerminalController terminal;
  std::vector<LiftedConstraint> constraints;  // canonical <= form
  ControlMode mode = ControlMode::mean_fixed_gain;
  Eigen::MatrixXd fixed_gain;  // m x n, used by mean modes
  ChaosState initial;

  int nx() const { return system.state_dim(); }
  int nu_full() const { return system.control_dim(); }
  /// Per-step decision size: m(p+1) for full mode, m for mean modes.
  int nu_step() const;
  int horizon() const { return cost.N; }
};

// ---------------------------------------------------------------------------
// Lifting operations
// ---------------------------------------------------------------------------

/// (Qbar, Rbar) = (W (x) Q, W (x) R).
std::pair<Eigen::MatrixXd, Eigen::MatrixXd> lift_cost(const CostSpec& cost,
                                                      const ProductTensors& tensors);

/// E[z^T H z + G z] -> Hbar = W (x) H, Gbar = G [I 0]; direction >= is folded
/// by negation. convex_mode enforces PSD-ness of the canonical quadratic term.
LiftedConstraint lift_expectation_constraint(const ConstraintSpec& c,
                                             const ProductTensors& tensors,
                                             int block_dim, bool convex_mode);

/// trace(Cov(x)) <= bound -> X^T ((W - F F^T) (x) I_n) X <= bound.
LiftedConstraint lift_variance_constraint(double bound, const ProductTensors& tensors,
                                          int n, const std::vector<int>& steps);

/// LQR on the lifted deterministic pair: P from the Riccati equation on
/// (Abold, Bbold, Qbar, Rbar), K_f = -(Rbar + B'PB)^{-1} B'PA, plus the
/// structured mean/deviation gains for the ubar + K (x - E[x]) law.
TerminalController synth_terminal(const ChaosSystem& sys, const Eigen::MatrixXd& Qbar,
                                  const Eigen::MatrixXd& Rbar,
                                  const DareOptions& options = {});

/// Validate, lift everything, and pick the decision layout for the mode.
/// Throws InfeasibleInitialError if the initial state violates a step-0
/// state constraint.
RHCProblem build_problem(const ChaosSystem& sys, const CostSpec& cost,
                         const std::vector<ConstraintSpec>& constraints,
                         ControlMode mode, const ChaosState& initial,
                         const DareOptions& dare_options = {});

/// Throws InfeasibleInitialError when a step-0 state constraint is violated
/// by more than tol at X(0).
void check_initial_feasible(const RHCProblem& problem, double tol = 1e-8);

// ---------------------------------------------------------------------------
// Horizon stacking (sparse formulation, explicit states)
// ---------------------------------------------------------------------------

/// Decision vector layout: z = [X(1)..X(N), v(0)..v(N-1)] with v the
/// per-step control decision (U(k) in full mode, ubar(k) in mean modes).
struct QPLayout {
  int nx = 0;
  int nu = 0;
  int N = 0;
  double constant = 0.0;  // X(0)-dependent objective offset
  int num_vars() const { return N * (nx + nu); }
  int x_offset(int k) const { return (k - 1) * nx; }        // k in 1..N
  int u_offset(int k) const { return N * nx + k * nu; }     // k in 0..N-1
};

/// Where each (constraint, step) instance landed in the QP: exactly one of
/// lin_row (row of A_in) or quad_index (entry of quad) is >= 0.
struct ConstraintInstanceRef {
  int constraint = 0;
  int step = 0;
  int lin_row = -1;
  int quad_index = -1;
};

struct BuiltQP {
  QPData qp;
  QPLayout layout;
  std::vector<ConstraintInstanceRef> instances;
};

/// Stack the horizon for full-chaos-control mode.
BuiltQP build_qp_full(const RHCProblem& problem);

/// Stack the horizon for the mean modes with the given per-step gains
/// (N entries, each m x n). Controls enter as U(k) = e1 (x) ubar(k) +
/// (M (x) K(k)) X(k); the cross terms with the mean block cancel, so the
/// program stays a convex QP/QCQP for PSD constraint data.
BuiltQP build_qp_fixed_gain(const RHCProblem& problem,
                            const std::vector<Eigen::MatrixXd>& gains);

/// Split an optimizer z into X(0..N) (X(0) from the problem) and controls.
std::vector<Eigen::VectorXd> extract_states(const RHCProblem& problem,
                                            const QPLayout& layout,
                                            const Eigen::VectorXd& z);
std::vector<Eigen::VectorXd> extract_controls(const QPLayout& layout,
                                              const Eigen::VectorXd& z);

/// Full lifted control U(k) for mean modes.
Eigen::VectorXd compose_control(const ChaosSystem& sys, const Eigen::VectorXd& ubar,
                                const Eigen::MatrixXd& gain, const Eigen::VectorXd& X);

/// Horizon objective sum_{k<N} X'Qbar X + U'Rbar U plus terminal X'PX,
/// including the constant X(0) term.
double horizon_objective(const RHCProblem& problem,
                         const std::vector<Eigen::VectorXd>& states,
                         const std::vector<Eigen::VectorXd>& full_controls);

/// Margin of every constraint instance on a stored trajectory, as
/// (constraint index, step, margin) rows in deterministic order.
struct MarginRecord {
  int constraint = 0;
  int step = 0;
  double margin = 0.0;
};
std::vector<MarginRecord> constraint_margins(const RHCProblem& problem,
                                             const std::vector<Eigen::VectorXd>& states,
                                             const std::vector<Eigen::VectorXd>& full_controls);

}  // namespace pcrhc

#endif  // PCRHC_TRANSCRIPTION_HPP_
