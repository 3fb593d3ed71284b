#ifndef PCRHC_VALIDATION_HPP_
#define PCRHC_VALIDATION_HPP_

#include <Eigen/Core>

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "pcrhc/galerkin.hpp"
#include "pcrhc/solvers.hpp"

namespace pcrhc {

// ---------------------------------------------------------------------------
// Sampling
// ---------------------------------------------------------------------------

/// M i.i.d. draws of the uncertainty vector, one row per draw. Counter-based
/// generation: row i, dimension j depends only on (seed, j, i), so the set is
/// reproducible across platforms and thread counts.
struct SampleSet {
  Eigen::MatrixXd samples;  // M x d
  std::uint64_t seed = 0;
  std::vector<Marginal> marginals;

  int count() const { return static_cast<int>(samples.rows()); }
  int dim() const { return static_cast<int>(samples.cols()); }
};

/// Uniform on [-1,1], standard normal, gamma (unit scale), and beta (mapped
/// onto [-1,1]); gamma and beta draw through the inverse CDF.
SampleSet sample_delta(const std::vector<Marginal>& marginals, int M, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Ensemble simulation
// ---------------------------------------------------------------------------

/// Control policy applied identically to every ensemble member: either an
/// open-loop chaos-expanded sequence u(k, Delta) evaluated at the member's
/// realization, or the feedback law u(k) = ubar(k) + K(k) (x(k) - mean(k))
/// around a supplied mean trajectory.
struct EnsemblePolicy {
  enum class Kind { open_loop_chaos, mean_feedback };
  Kind kind = Kind::open_loop_chaos;

  // open_loop_chaos
  std::vector<ChaosControl> chaos_controls;
  std::shared_ptr<const BasisSet> basis;

  // mean_feedback
  std::vector<Eigen::VectorXd> ubar;
  std::vector<Eigen::MatrixXd> gains;
  std::vector<Eigen::VectorXd> means;

  static EnsemblePolicy open_loop(std::vector<ChaosControl> controls,
                                  std::shared_ptr<const BasisSet> basis);
  /// Zero input for `steps` steps (an open-loop sequence of zeros).
  static EnsemblePolicy zero(int m, std::shared_ptr<const BasisSet> basis, int steps);
  static EnsemblePolicy feedback(std::vector<Eigen::VectorXd> ubar,
                                 std::vector<Eigen::MatrixXd> gains,
                                 std::vector<Eigen::VectorXd> means);
};

/// Per-member trajectories: states[k] is M x n, row j the state of member j
/// at time k.
struct Ensemble {
  std::vector<Eigen::MatrixXd> states;

  int steps() const { return static_cast<int>(states.size()) - 1; }
  int count() const { return states.empty() ? 0 : static_cast<int>(states.front().rows()); }
};

/// Exact simulation x(k+1) = A(Delta_j) x(k) + B(Delta_j) u(k) per member
/// from the shared initial state. Members are independent, so `threads` > 1
/// splits them across workers; results are identical for any thread count.
Ensemble simulate_ensemble(const UncertainSystem& sys, const SampleSet& samples,
                           const EnsemblePolicy& policy, int steps,
                           const Eigen::VectorXd& x0, int threads = 1);

// ---------------------------------------------------------------------------
// Moment comparison
// ---------------------------------------------------------------------------

/// Per step and component: surrogate prediction vs Monte-Carlo estimate with
/// its standard error, and the normalized discrepancy |gPC - MC| / SE.
/// Column c corresponds to orders[c]: order 1 is the mean, order 2 the
/// variance, orders 3 and 4 raw moments. Orders above 4 are not validated.
struct MomentReport {
  std::vector<int> orders;
  struct Step {
    int k = 0;
    Eigen::MatrixXd gpc;          // n x orders
    Eigen::MatrixXd mc;           // n x orders
    Eigen::MatrixXd se;           // n x orders
    Eigen::MatrixXd discrepancy;  // n x orders
  };
  std::vector<Step> steps;

  /// Largest discrepancy across steps and components for one order.
  double max_discrepancy(int order) const;
  /// Largest discrepancy anywhere in the report.
  double worst() const;
};

/// Monte-Carlo estimates use pairwise summation over the member index in a
/// fixed tree order, so the report is bit-stable for a given sample set.
/// The pass criterion (typically discrepancy <= 3) is the caller's.
MomentReport compare_moments(const Ensemble& ensemble,
                             const std::vector<ChaosState>& trajectory,
                             const std::vector<int>& orders, const BasisSet& basis,
                             const ProductTensors& tensors);

std::string to_json(const MomentReport& report);
void write_ensemble_csv(const Ensemble& ensemble, std::ostream& os);

// ---------------------------------------------------------------------------
// Brute-force optimization oracle
// ---------------------------------------------------------------------------

/// Global minimum of a linearly constrained convex QP by enumerating active
/// sets of the inequality rows and solving each KKT system. Exponential in
/// the number of inequalities (capped at 20); a cross-check for small
/// problems, not a solver.
struct BruteForceResult {
  bool feasible = false;
  Eigen::VectorXd x;
  double objective = 0.0;
};

BruteForceResult brute_force_qp(const QPData& qp, double tol = 1e-9);

}  // namespace pcrhc

#endif  // PCRHC_VALIDATION_HPP_
