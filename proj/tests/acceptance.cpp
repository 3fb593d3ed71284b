// End-to-end acceptance checks. Each criterion prints exactly one PASS/FAIL
// line (with the measured quantity and its runtime) and the process exits
// with the number of failed criteria.

#include <Eigen/Core>
#include <Eigen/Eigenvalues>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "pcrhc/config.hpp"
#include "pcrhc/rhc_engine.hpp"
#include "pcrhc/rng.hpp"
#include "pcrhc/validation.hpp"

using namespace pcrhc;

namespace {

struct Shared {
  ExperimentConfig config;
  std::optional<ChaosSystem> chaos;
  std::optional<RHCProblem> problem;
  std::optional<ClosedLoopTrace> trace;      // criterion 6 output
  std::optional<SampleSet> mc_samples;       // criterion 3 ensemble, reused by 9
  std::optional<Ensemble> mc_ensemble;
};

EngineSettings engine_settings(const ExperimentConfig& config) {
  EngineSettings s;
  s.convex = config.solver.convex;
  s.variable = config.solver.variable;
  s.variable.convex = config.solver.convex;
  s.variable.seed = config.run.seed;
  return s;
}

ChaosState lifted_initial(const ChaosSystem& sys, const Eigen::VectorXd& x0) {
  ChaosState X0(sys.n, sys.blocks());
  X0.block(0) = x0;
  return X0;
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.3g", v);
  return buf;
}

// --- criterion bodies ------------------------------------------------------

bool c1_basis(Shared&, std::string& detail) {
  double worst = 0.0;
  for (const Marginal& marg : {Marginal::uniform(), Marginal::gaussian()}) {
    BasisSet basis({marg}, 4);
    ProductTensors t = build_tensors(basis);
    PolynomialFamily fam = PolynomialFamily::for_marginal(marg);
    QuadratureRule rule = gauss_quadrature(fam, 10);
    for (int i = 0; i <= 4; ++i) {
      const double h2 = marg.kind == DistKind::uniform
                            ? 1.0 / (2.0 * i + 1.0)
                            : std::tgamma(i + 1.0);
      for (int j = 0; j <= 4; ++j) {
        double inner = 0.0;
        for (int q = 0; q < rule.num_nodes(); ++q)
          inner += rule.weights(q) * eval_poly(fam, i, rule.nodes(q, 0)) *
                   eval_poly(fam, j, rule.nodes(q, 0));
        const double expect = i == j ? h2 : 0.0;
        worst = std::max(worst, std::abs(inner - expect));
      }
      worst = std::max(worst, std::abs(t.W(i, i) - h2));
    }
  }
  detail = "max orthogonality/norm defect " + fmt(worst);
  return worst <= 1e-12;
}

bool c2_one_step(Shared& sh, std::string& detail) {
  const ChaosSystem& sys = *sh.chaos;
  const Eigen::Vector2d x0(-0.5, 1.0);
  ChaosState X0 = lifted_initial(sys, x0);
  ChaosState X1 = propagate(sys, X0, ChaosControl(sys.m, sys.blocks()));

  Eigen::MatrixXd A0(2, 2);
  A0 << 1.02, -0.1, 0.1, 0.98;
  const Eigen::Vector2d mean_expect = A0 * x0;
  const Eigen::Matrix2d cov_expect = (0.04 * 0.04 / 3.0) * x0 * x0.transpose();

  const double dmean = (mean(X1) - mean_expect).cwiseAbs().maxCoeff();
  const double dcov = (covariance(X1, *sys.tensors) - cov_expect).cwiseAbs().maxCoeff();
  detail = "mean defect " + fmt(dmean) + ", variance defect " + fmt(dcov);
  return dmean <= 1e-10 && dcov <= 1e-10;
}

bool c3_mc_agreement(Shared& sh, std::string& detail) {
  const ExperimentConfig& cfg = sh.config;
  const ChaosSystem& sys = *sh.chaos;
  ChaosState X0 = lifted_initial(sys, cfg.run.x0);
  auto states = propagate_open_loop(sys, X0, 5);

  sh.mc_samples = sample_delta(cfg.system.marginals, 100000, cfg.run.seed);
  EnsemblePolicy zero = EnsemblePolicy::zero(cfg.system.m, sys.basis, 5);
  sh.mc_ensemble = simulate_ensemble(cfg.system, *sh.mc_samples, zero, 5, cfg.run.x0, 4);

  MomentReport rep =
      compare_moments(*sh.mc_ensemble, states, {1, 2}, *sys.basis, *sys.tensors);
  const double worst = rep.worst();
  detail = "worst discrepancy " + fmt(worst) + " standard errors";
  return worst <= 3.0;
}

bool c4_terminal(Shared& sh, std::string& detail) {
  const RHCProblem& p = *sh.problem;
  const TerminalController& tc = p.terminal;
  const double res = tc.dare.residual;
  const double res_limit = 1e-9 * std::max(1.0, tc.P.norm());
  bool ok = res <= res_limit && tc.spectral_radius < 1.0;

  Eigen::MatrixXd Acl = p.system.Abold + p.system.Bbold * tc.K_f;
  Eigen::MatrixXd W = p.Qbar + tc.K_f.transpose() * p.Rbar * tc.K_f;
  CounterRng rng(2024);
  double worst_identity = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    Eigen::VectorXd X(p.nx());
    for (int i = 0; i < p.nx(); ++i) X(i) = 2.0 * rng.next_uniform01() - 1.0;
    Eigen::VectorXd Xn = Acl * X;
    const double lhs = X.dot(tc.P * X) - Xn.dot(tc.P * Xn);
    const double rhs = X.dot(W * X);
    worst_identity =
        std::max(worst_identity, std::abs(lhs - rhs) / std::max(1.0, std::abs(rhs)));
  }
  ok = ok && worst_identity <= 1e-8;
  detail = "residual " + fmt(res) + ", spectral radius " + fmt(tc.spectral_radius) +
           ", decrease defect " + fmt(worst_identity);
  return ok;
}

bool c5_convex_oracle(Shared&, std::string& detail) {
  CounterRng rng(7);
  double worst_gap = 0.0, worst_viol = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 2 + static_cast<int>(rng.next_uniform01() * 28);
    const int rows = 1 + static_cast<int>(rng.next_uniform01() * 6);
    Eigen::MatrixXd L(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) L(i, j) = 2.0 * rng.next_uniform01() - 1.0;
    QPData qp;
    qp.H = L * L.transpose() + 0.5 * Eigen::MatrixXd::Identity(n, n);
    qp.f = Eigen::VectorXd(n);
    for (int i = 0; i < n; ++i) qp.f(i) = 2.0 * rng.next_uniform01() - 1.0;
    qp.A_in = Eigen::MatrixXd(rows, n);
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < n; ++j) qp.A_in(i, j) = 2.0 * rng.next_uniform01() - 1.0;
    Eigen::VectorXd x_feas(n);
    for (int i = 0; i < n; ++i) x_feas(i) = 2.0 * rng.next_uniform01() - 1.0;
    qp.b_in = qp.A_in * x_feas;
    for (int i = 0; i < rows; ++i) qp.b_in(i) += 0.05 + rng.next_uniform01();

    SolveReport rep = solve_convex(qp);
    if (rep.status != SolveStatus::optimal) {
      detail = "solver status not optimal on trial " + std::to_string(trial);
      return false;
    }
    BruteForceResult oracle = brute_force_qp(qp);
    if (!oracle.feasible) {
      detail = "oracle found no feasible point on trial " + std::to_string(trial);
      return false;
    }
    worst_gap = std::max(worst_gap, std::abs(rep.objective - oracle.objective) /
                                        std::max(1.0, std::abs(oracle.objective)));
    worst_viol = std::max(worst_viol, qp.violation(rep.x));
  }
  detail = "worst objective gap " + fmt(worst_gap) + ", worst violation " + fmt(worst_viol);
  return worst_gap <= 1e-6 && worst_viol <= 1e-8;
}

bool c6_closed_loop(Shared& sh, std::string& detail) {
  const ExperimentConfig& cfg = sh.config;
  const ChaosSystem& sys = *sh.chaos;
  PlantHandle plant = PlantHandle::surrogate(lifted_initial(sys, cfg.run.x0));
  sh.trace = run_closed_loop(plant, *sh.problem, cfg.run.steps, engine_settings(cfg));
  const ClosedLoopTrace& trace = *sh.trace;
  if (trace.aborted) {
    detail = "loop aborted: " + trace.abort_reason;
    return false;
  }

  double worst_mean = 1e300;
  for (const StepRecord& r : trace.records) worst_mean = std::min(worst_mean, r.mean(0));
  const double norm0 = trace.records.front().state.coeffs.norm();
  const double normN = trace.records.back().state.coeffs.norm();
  const bool floor_ok = worst_mean >= -1.0 - 1e-6;
  const bool contract_ok = normN <= 1e-2 * norm0;
  const bool clean = !trace.degraded;
  detail = "min E[x1] " + fmt(worst_mean) + ", final/initial norm " + fmt(normN / norm0) +
           (clean ? ", no degraded steps" : ", degraded steps present");
  return floor_ok && contract_ok && clean;
}

bool c7_moment_stability(Shared& sh, std::string& detail) {
  if (!sh.trace) {
    detail = "closed-loop trace unavailable";
    return false;
  }
  MomentDecayReport closed = check_moment_decay(*sh.trace, {1, 2, 3, 4}, 1e-4);

  // open-loop control case: the same check must reject the uncontrolled plant
  const ChaosSystem& sys = *sh.chaos;
  ChaosState X0 = lifted_initial(sys, sh.config.run.x0);
  auto states = propagate_open_loop(sys, X0, sh.config.run.steps);
  ClosedLoopTrace open;
  open.steps_requested = sh.config.run.steps;
  for (std::size_t k = 0; k < states.size(); ++k) {
    StepRecord r;
    r.k = static_cast<int>(k);
    r.state = states[k];
    r.mean = mean(states[k]);
    r.moments = Eigen::MatrixXd(sys.n, 4);
    for (int c = 0; c < sys.n; ++c)
      for (int q = 1; q <= 4; ++q) r.moments(c, q - 1) = moment(states[k], q, c, *sys.basis);
    open.records.push_back(std::move(r));
  }
  MomentDecayReport uncontrolled = check_moment_decay(open, {1, 2, 3, 4}, 1e-4);

  detail = std::string("controlled decayed=") + (closed.all_decayed ? "yes" : "no") +
           " bounded=" + (closed.all_bounded ? "yes" : "no") +
           ", uncontrolled decayed=" + (uncontrolled.all_decayed ? "yes" : "no");
  return closed.all_decayed && closed.all_bounded && !uncontrolled.all_decayed;
}

bool c8_sampled_truth(Shared& sh, std::string& detail) {
  if (!sh.trace) {
    detail = "closed-loop trace unavailable";
    return false;
  }
  const ExperimentConfig& cfg = sh.config;
  const ClosedLoopTrace& trace = *sh.trace;
  const int steps = cfg.run.steps;

  std::vector<Eigen::VectorXd> ubar, means;
  std::vector<Eigen::MatrixXd> gains;
  std::vector<ChaosState> trajectory;
  for (int k = 0; k < steps; ++k) {
    ubar.push_back(trace.records[static_cast<std::size_t>(k)].ubar);
    gains.push_back(trace.records[static_cast<std::size_t>(k)].gain);
    means.push_back(trace.records[static_cast<std::size_t>(k)].mean);
  }
  for (int k = 0; k <= steps; ++k)
    trajectory.push_back(trace.records[static_cast<std::size_t>(k)].state);

  SampleSet samples = sample_delta(cfg.system.marginals, 10000, cfg.run.seed + 1);
  EnsemblePolicy policy = EnsemblePolicy::feedback(ubar, gains, means);
  Ensemble ens = simulate_ensemble(cfg.system, samples, policy, steps, cfg.run.x0, 4);

  const ChaosSystem& sys = *sh.chaos;
  MomentReport rep = compare_moments(ens, trajectory, {1}, *sys.basis, *sys.tensors);
  double worst_mean = 0.0;
  for (int k = 0; k <= 10; ++k)
    worst_mean = std::max(
        worst_mean, rep.steps[static_cast<std::size_t>(k)].discrepancy.cwiseAbs().maxCoeff());

  const double norm0 = cfg.run.x0.norm();
  const double worst_final = ens.states.back().rowwise().norm().maxCoeff();
  detail = "mean discrepancy (k<=10) " + fmt(worst_mean) + " SE, worst final norm " +
           fmt(worst_final) + " vs initial " + fmt(norm0);
  return worst_mean <= 3.0 && worst_final < norm0;
}

bool c9_order_convergence(Shared& sh, std::string& detail) {
  if (!sh.mc_ensemble) {
    detail = "Monte-Carlo ensemble unavailable";
    return false;
  }
  const ExperimentConfig& cfg = sh.config;
  std::vector<double> disc;
  for (int r = 1; r <= 4; ++r) {
    ChaosSystem chaos = make_chaos_system(cfg.system, r);
    ChaosState X0 = lifted_initial(chaos, cfg.run.x0);
    auto states = propagate_open_loop(chaos, X0, 5);
    MomentReport rep =
        compare_moments(*sh.mc_ensemble, states, {2}, *chaos.basis, *chaos.tensors);
    disc.push_back(rep.steps.back().discrepancy.col(0).cwiseAbs().maxCoeff());
  }
  bool monotone = true;
  for (std::size_t i = 0; i + 1 < disc.size(); ++i)
    monotone = monotone && disc[i + 1] <= disc[i] * (1.0 + 1e-9) + 1e-12;
  std::string seq;
  for (double d : disc) seq += (seq.empty() ? "" : " >= ") + fmt(d);
  detail = "step-5 variance discrepancy by order: " + seq;
  return monotone;
}

}  // namespace

int main() {
  Shared sh;
  sh.config = preset("paper");
  try {
    sh.chaos = make_chaos_system(sh.config.system, sh.config.order);
    sh.problem = build_problem(*sh.chaos, sh.config.cost, sh.config.constraints,
                               sh.config.mode, lifted_initial(*sh.chaos, sh.config.run.x0));
  } catch (const std::exception& e) {
    std::printf("FAIL setup: %s\n", e.what());
    return 9;
  }

  struct Criterion {
    int id;
    const char* label;
    double budget_s;
    std::function<bool(Shared&, std::string&)> body;
  };
  const std::vector<Criterion> criteria = {
      {1, "basis exactness", 1.0, c1_basis},
      {2, "projection one-step exactness", 1.0, c2_one_step},
      {3, "surrogate vs Monte-Carlo moments", 30.0, c3_mc_agreement},
      {4, "terminal synthesis", 5.0, c4_terminal},
      {5, "convex solver vs enumeration oracle", 30.0, c5_convex_oracle},
      {6, "benchmark closed loop", 300.0, c6_closed_loop},
      {7, "moment stability", 60.0, c7_moment_stability},
      {8, "sampled-truth robustness", 300.0, c8_sampled_truth},
      {9, "order convergence", 120.0, c9_order_convergence},
  };

  int failures = 0;
  for (const Criterion& c : criteria) {
    const auto start = std::chrono::steady_clock::now();
    bool ok = false;
    std::string detail;
    try {
      ok = c.body(sh, detail);
    } catch (const std::exception& e) {
      ok = false;
      detail = std::string("exception: ") + e.what();
    }
    const double elapsed =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const bool in_budget = elapsed <= c.budget_s;
    if (!in_budget) detail += " [over the " + fmt(c.budget_s) + "s budget]";
    const bool pass = ok && in_budget;
    std::printf("%s criterion %d: %s — %s (%.2fs)\n", pass ? "PASS" : "FAIL", c.id,
                c.label, detail.c_str(), elapsed);
    std::fflush(stdout);
    if (!pass) ++failures;
  }
  return failures;
}
