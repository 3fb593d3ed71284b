#ifndef PCRHC_RHC_ENGINE_HPP_
#define PCRHC_RHC_ENGINE_HPP_

#include <Eigen/Core>

#include <iosfwd>
#include <string>
#include <vector>

#include "pcrhc/transcription.hpp"

namespace pcrhc {

// ---------------------------------------------------------------------------
// Plants
// ---------------------------------------------------------------------------

/// What the loop drives: either the surrogate itself, or one realized plant
/// (A(Delta*), B(Delta*)) with the surrogate propagated alongside to supply
/// the E[x] term of the feedback law.
struct PlantHandle {
  enum class Kind { chaos_surrogate, sampled_truth };
  Kind kind = Kind::chaos_surrogate;
  ChaosState chaos;        // surrogate coefficients, kept for both kinds
  Eigen::VectorXd delta;   // sampled-truth realization Delta*
  Eigen::MatrixXd A_true;
  Eigen::MatrixXd B_true;
  Eigen::VectorXd x_true;

  static PlantHandle surrogate(const ChaosState& X0);
  /// Throws DomainError when delta lies outside the distribution's support.
  static PlantHandle truth(const UncertainSystem& sys, const Eigen::VectorXd& delta,
                           const Eigen::VectorXd& x0, const ChaosState& X0_surrogate);
};

// ---------------------------------------------------------------------------
// Stepping
// ---------------------------------------------------------------------------

struct EngineSettings {
  ConvexSettings convex;          // full / fixed-gain solves
  VariableGainSettings variable;  // variable-gain solves
  bool warm_start = true;
  double initial_feasibility_tol = 1e-8;
};

/// Previous horizon solution, shifted by the engine to seed the next solve.
struct WarmStart {
  bool valid = false;
  std::vector<Eigen::VectorXd> ubar;   // mean modes
  std::vector<Eigen::MatrixXd> gains;  // mean modes
  std::vector<Eigen::VectorXd> U;      // full mode
  std::vector<Eigen::VectorXd> X;      // lifted states X(0..N)
};

struct StepResult {
  SolveReport report;
  bool degraded = false;   // max-iterations: best iterate applied
  double objective = 0.0;  // includes the X(0) cost term
  // First input in the problem's mode.
  Eigen::VectorXd ubar0;   // mean modes (m)
  Eigen::MatrixXd gain0;   // mean modes (m x n)
  ChaosControl U0;         // full lifted first control (all modes)
  // Whole horizon, for warm starting and inspection.
  std::vector<Eigen::VectorXd> ubar_seq;
  std::vector<Eigen::MatrixXd> gain_seq;
  std::vector<Eigen::VectorXd> U_seq;
  std::vector<Eigen::VectorXd> X_seq;
};

/// Solve one horizon problem from problem.initial and return the first
/// input. Throws InfeasibleInitialError when the current state violates a
/// step-0 state constraint; solver failure statuses are returned, not thrown.
StepResult rhc_step(const RHCProblem& problem, const EngineSettings& settings = {},
                    const WarmStart* warm = nullptr);

/// Copy of the problem with a new initial state (terminal data reused).
RHCProblem with_initial(const RHCProblem& problem, const ChaosState& state);

/// Shift a solved horizon one step and append the terminal law: decision k
/// becomes decision k+1 of `result`, the last slot is filled from the
/// terminal controller, and the predicted states move accordingly.
WarmStart shift_warm_start(const RHCProblem& problem, const StepResult& result);

// ---------------------------------------------------------------------------
// Closed loop
// ---------------------------------------------------------------------------

struct StepRecord {
  int k = 0;
  ChaosState state;            // surrogate coefficients at time k
  Eigen::VectorXd x_true;      // sampled-truth realization (empty otherwise)
  Eigen::VectorXd mean;        // E[x](k)
  double cov_trace = 0.0;
  Eigen::MatrixXd moments;     // n x 4: orders 1..4 per component
  // Control applied at k (absent in the final record).
  bool has_control = false;
  Eigen::VectorXd ubar;
  Eigen::MatrixXd gain;
  Eigen::VectorXd control;     // full lifted U(k)
  Eigen::VectorXd u_applied;   // physical input (sampled-truth runs)
  SolveStatus status = SolveStatus::optimal;
  double objective = 0.0;
  int iterations = 0;
  bool degraded = false;
  std::vector<MarginRecord> margins;  // lifted margins at this record
};

struct ClosedLoopTrace {
  std::vector<StepRecord> records;  // length steps + 1 unless aborted
  int steps_requested = 0;
  bool degraded = false;
  bool aborted = false;
  std::string abort_reason;
};

/// Receding-horizon loop: solve, apply the first input, advance the plant.
/// Sampled-truth plants get u = ubar + K (x_true - E[x]-from-surrogate) with
/// the surrogate propagated in parallel under the same input. Unrecoverable
/// solver failures abort with the partial trace and aborted flag set.
ClosedLoopTrace run_closed_loop(const PlantHandle& plant, const RHCProblem& problem,
                                int steps, const EngineSettings& settings = {});

// ---------------------------------------------------------------------------
// Moment decay
// ---------------------------------------------------------------------------

struct MomentDecayEntry {
  int order = 0;
  int component = 0;
  double initial_abs = 0.0;
  double final_abs = 0.0;
  double max_abs = 0.0;
  bool decayed = false;
  bool bounded = false;
};

struct MomentDecayReport {
  std::vector<MomentDecayEntry> entries;
  bool all_decayed = true;
  bool all_bounded = true;
};

/// Per order q and component: |m_q| at the final step below
/// tolerance * |m_q(0)|, and max_k |m_q(k)| within bound_factor of the
/// initial magnitude (with an absolute floor of 1).
MomentDecayReport check_moment_decay(const ClosedLoopTrace& trace,
                                     const std::vector<int>& orders,
                                     double tolerance, double bound_factor = 100.0);

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

/// One row per record; fixed column order (see README): k, surrogate
/// coefficients, truth state, mean, covariance trace, moments (order-major),
/// ubar, gain (row-major), full control, applied input, objective, status,
/// iterations, degraded, one margin column per constraint instance at that
/// record. All floats at 17 significant digits.
void write_trace_csv(const ClosedLoopTrace& trace, const RHCProblem& problem,
                     std::ostream& os);

/// Summary JSON: final norms, worst margins, decay verdicts, iteration and
/// status tallies.
std::string trace_summary_json(const ClosedLoopTrace& trace, const RHCProblem& problem,
                               const MomentDecayReport& decay);

}  // namespace pcrhc

#endif  // PCRHC_RHC_ENGINE_HPP_
