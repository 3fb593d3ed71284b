#include "pcrhc/rhc_engine.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>
#include <sstream>

#include "json.hpp"

namespace pcrhc {

namespace {

void check_support(const std::vector<Marginal>& marginals, const Eigen::VectorXd& delta) {
  if (delta.size() != static_cast<Eigen::Index>(marginals.size())) {
    throw DomainError("realization has " + std::to_string(delta.size()) +
                      " components, expected " + std::to_string(marginals.size()));
  }
  for (Eigen::Index j = 0; j < delta.size(); ++j) {
    const double v = delta[j];
    const Marginal& m = marginals[static_cast<std::size_t>(j)];
    if (!std::isfinite(v)) throw DomainError("realization component is not finite");
    bool ok = true;
    switch (m.kind) {
      case DistKind::gaussian: break;
      case DistKind::uniform: ok = v >= -1.0 && v <= 1.0; break;
      case DistKind::gamma: ok = v >= 0.0; break;
      case DistKind::beta: ok = v >= -1.0 && v <= 1.0; break;
    }
    if (!ok) {
      throw DomainError("realization component " + std::to_string(j) + " = " +
                        std::to_string(v) + " lies outside the support of its " +
                        to_string(m.kind) + " marginal");
    }
  }
}

// Exact forward roll of the surrogate under a full lifted control sequence.
std::vector<Eigen::VectorXd> roll_states(const RHCProblem& problem,
                                         const std::vector<Eigen::VectorXd>& full_controls) {
  const ChaosSystem& sys = problem.system;
  std::vector<Eigen::VectorXd> X(static_cast<std::size_t>(problem.horizon()) + 1);
  X[0] = problem.initial.coeffs;
  for (int k = 0; k < problem.horizon(); ++k) {
    X[static_cast<std::size_t>(k) + 1] =
        sys.Abold * X[static_cast<std::size_t>(k)] +
        sys.Bbold * full_controls[static_cast<std::size_t>(k)];
  }
  return X;
}

Eigen::VectorXd warm_vector_full(const RHCProblem& problem, const WarmStart& warm,
                                 const QPLayout& layout, bool* usable) {
  *usable = false;
  const std::size_t N = static_cast<std::size_t>(layout.N);
  if (!warm.valid || warm.U.size() != N || warm.X.size() != N + 1) return {};
  for (const auto& u : warm.U)
    if (u.size() != layout.nu) return {};
  for (const auto& x : warm.X)
    if (x.size() != layout.nx) return {};
  Eigen::VectorXd z(layout.num_vars());
  for (int k = 1; k <= layout.N; ++k)
    z.segment(layout.x_offset(k), layout.nx) = warm.X[static_cast<std::size_t>(k)];
  for (int k = 0; k < layout.N; ++k)
    z.segment(layout.u_offset(k), layout.nu) = warm.U[static_cast<std::size_t>(k)];
  (void)problem;
  *usable = true;
  return z;
}

Eigen::VectorXd warm_vector_mean(const RHCProblem& problem, const WarmStart& warm,
                                 const QPLayout& layout, bool* usable) {
  *usable = false;
  const std::size_t N = static_cast<std::size_t>(layout.N);
  if (!warm.valid || warm.ubar.size() != N || warm.X.size() != N + 1) return {};
  for (const auto& u : warm.ubar)
    if (u.size() != layout.nu) return {};
  for (const auto& x : warm.X)
    if (x.size() != layout.nx) return {};
  Eigen::VectorXd z(layout.num_vars());
  for (int k = 1; k <= layout.N; ++k)
    z.segment(layout.x_offset(k), layout.nx) = warm.X[static_cast<std::size_t>(k)];
  for (int k = 0; k < layout.N; ++k)
    z.segment(layout.u_offset(k), layout.nu) = warm.ubar[static_cast<std::size_t>(k)];
  (void)problem;
  *usable = true;
  return z;
}

StepResult step_full(const RHCProblem& problem, const EngineSettings& settings,
                     const WarmStart* warm) {
  BuiltQP built = build_qp_full(problem);
  bool use_warm = false;
  Eigen::VectorXd z0;
  if (settings.warm_start && warm != nullptr)
    z0 = warm_vector_full(problem, *warm, built.layout, &use_warm);

  StepResult out;
  out.report = solve_convex(built.qp, settings.convex, use_warm ? &z0 : nullptr);
  out.degraded = out.report.status == SolveStatus::max_iterations;
  if (out.report.status == SolveStatus::infeasible ||
      out.report.status == SolveStatus::numeric_failure) {
    return out;
  }

  out.U_seq = extract_controls(built.layout, out.report.x);
  out.X_seq = roll_states(problem, out.U_seq);

  const int m = problem.system.m;
  const int n = problem.system.n;
  const int N = problem.horizon();
  out.ubar_seq.resize(static_cast<std::size_t>(N));
  out.gain_seq.assign(static_cast<std::size_t>(N), Eigen::MatrixXd::Zero(m, n));
  for (int k = 0; k < N; ++k)
    out.ubar_seq[static_cast<std::size_t>(k)] = out.U_seq[static_cast<std::size_t>(k)].head(m);

  out.ubar0 = out.ubar_seq[0];
  out.gain0 = Eigen::MatrixXd::Zero(m, n);
  out.U0.m = m;
  out.U0.coeffs = out.U_seq[0];
  out.objective = horizon_objective(problem, out.X_seq, out.U_seq);
  return out;
}

StepResult step_mean(const RHCProblem& problem, const EngineSettings& settings,
                     const WarmStart* warm, const std::vector<Eigen::MatrixXd>& gains) {
  BuiltQP built = build_qp_fixed_gain(problem, gains);
  bool use_warm = false;
  Eigen::VectorXd z0;
  if (settings.warm_start && warm != nullptr)
    z0 = warm_vector_mean(problem, *warm, built.layout, &use_warm);

  StepResult out;
  out.report = solve_convex(built.qp, settings.convex, use_warm ? &z0 : nullptr);
  out.degraded = out.report.status == SolveStatus::max_iterations;
  if (out.report.status == SolveStatus::infeasible ||
      out.report.status == SolveStatus::numeric_failure) {
    return out;
  }

  const int N = problem.horizon();
  out.ubar_seq = extract_controls(built.layout, out.report.x);
  out.gain_seq = gains;
  out.X_seq.resize(static_cast<std::size_t>(N) + 1);
  out.U_seq.resize(static_cast<std::size_t>(N));
  out.X_seq[0] = problem.initial.coeffs;
  for (int k = 0; k < N; ++k) {
    const std::size_t sk = static_cast<std::size_t>(k);
    out.U_seq[sk] = compose_control(problem.system, out.ubar_seq[sk], gains[sk], out.X_seq[sk]);
    out.X_seq[sk + 1] = problem.system.Abold * out.X_seq[sk] + problem.system.Bbold * out.U_seq[sk];
  }

  out.ubar0 = out.ubar_seq[0];
  out.gain0 = gains[0];
  out.U0.m = problem.system.m;
  out.U0.coeffs = out.U_seq[0];
  out.objective = horizon_objective(problem, out.X_seq, out.U_seq);
  return out;
}

StepResult step_variable(const RHCProblem& problem, const EngineSettings& settings,
                         const WarmStart* warm) {
  VariableGainGuess guess;
  bool use_guess = false;
  const std::size_t N = static_cast<std::size_t>(problem.horizon());
  if (settings.warm_start && warm != nullptr && warm->valid && warm->ubar.size() == N &&
      warm->gains.size() == N) {
    guess.ubar = warm->ubar;
    guess.gains = warm->gains;
    use_guess = true;
  }

  VariableGainSolution sol =
      solve_variable_gain(problem, use_guess ? &guess : nullptr, settings.variable);

  StepResult out;
  out.report = sol.report;
  out.degraded = sol.report.status == SolveStatus::max_iterations;
  if (sol.report.status == SolveStatus::infeasible ||
      sol.report.status == SolveStatus::numeric_failure) {
    return out;
  }

  out.ubar_seq = sol.ubar;
  out.gain_seq = sol.gains;
  out.X_seq.resize(N + 1);
  out.U_seq.resize(N);
  out.X_seq[0] = problem.initial.coeffs;
  for (std::size_t k = 0; k < N; ++k) {
    out.U_seq[k] = compose_control(problem.system, sol.ubar[k], sol.gains[k], out.X_seq[k]);
    out.X_seq[k + 1] = problem.system.Abold * out.X_seq[k] + problem.system.Bbold * out.U_seq[k];
  }

  out.ubar0 = sol.ubar[0];
  out.gain0 = sol.gains[0];
  out.U0.m = problem.system.m;
  out.U0.coeffs = out.U_seq[0];
  out.objective = horizon_objective(problem, out.X_seq, out.U_seq);
  return out;
}

std::vector<MarginRecord> record_margins(const RHCProblem& problem, int k,
                                         const Eigen::VectorXd& state,
                                         const Eigen::VectorXd* control) {
  std::vector<MarginRecord> out;
  for (std::size_t c = 0; c < problem.constraints.size(); ++c) {
    const LiftedConstraint& lc = problem.constraints[c];
    if (lc.target == LiftedConstraint::Target::state) {
      out.push_back({static_cast<int>(c), k, lc.margin(state)});
    } else if (control != nullptr) {
      out.push_back({static_cast<int>(c), k, lc.margin(*control)});
    }
  }
  return out;
}

StepRecord make_record(const RHCProblem& problem, int k, const PlantHandle& plant) {
  StepRecord rec;
  rec.k = k;
  rec.state = plant.chaos;
  if (plant.kind == PlantHandle::Kind::sampled_truth) rec.x_true = plant.x_true;
  rec.mean = mean(plant.chaos);
  rec.cov_trace = covariance(plant.chaos, *problem.system.tensors).trace();
  const int n = problem.system.n;
  rec.moments.resize(n, 4);
  for (int c = 0; c < n; ++c)
    for (int q = 1; q <= 4; ++q)
      rec.moments(c, q - 1) = moment(plant.chaos, q, c, *problem.system.basis);
  return rec;
}

void csv_cell(std::string& line, double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  line += buf;
}

}  // namespace

PlantHandle PlantHandle::surrogate(const ChaosState& X0) {
  PlantHandle p;
  p.kind = Kind::chaos_surrogate;
  p.chaos = X0;
  return p;
}

PlantHandle PlantHandle::truth(const UncertainSystem& sys, const Eigen::VectorXd& delta,
                               const Eigen::VectorXd& x0, const ChaosState& X0_surrogate) {
  check_support(sys.marginals, delta);
  if (x0.size() != sys.n) throw ConfigError("truth initial state has wrong dimension");
  PlantHandle p;
  p.kind = Kind::sampled_truth;
  p.chaos = X0_surrogate;
  p.delta = delta;
  p.A_true = sys.eval_A(delta);
  p.B_true = sys.eval_B(delta);
  p.x_true = x0;
  return p;
}

RHCProblem with_initial(const RHCProblem& problem, const ChaosState& state) {
  if (state.coeffs.size() != problem.nx()) {
    throw ConfigError("initial state has dimension " + std::to_string(state.coeffs.size()) +
                      ", expected " + std::to_string(problem.nx()));
  }
  RHCProblem out = problem;
  out.initial = state;
  return out;
}

StepResult rhc_step(const RHCProblem& problem, const EngineSettings& settings,
                    const WarmStart* warm) {
  check_initial_feasible(problem, settings.initial_feasibility_tol);
  switch (problem.mode) {
    case ControlMode::full_chaos:
      return step_full(problem, settings, warm);
    case ControlMode::mean_fixed_gain: {
      std::vector<Eigen::MatrixXd> gains(static_cast<std::size_t>(problem.horizon()),
                                         problem.fixed_gain);
      return step_mean(problem, settings, warm, gains);
    }
    case ControlMode::mean_variable_gain:
      return step_variable(problem, settings, warm);
  }
  throw ConfigError("unknown control mode");
}

WarmStart shift_warm_start(const RHCProblem& problem, const StepResult& result) {
  WarmStart w;
  const std::size_t N = static_cast<std::size_t>(problem.horizon());
  if (result.X_seq.size() != N + 1) return w;
  const ChaosSystem& sys = problem.system;
  const Eigen::VectorXd& XN = result.X_seq[N];

  w.X.resize(N + 1);
  for (std::size_t k = 0; k + 1 <= N; ++k) w.X[k] = result.X_seq[k + 1];

  if (problem.mode == ControlMode::full_chaos) {
    if (result.U_seq.size() != N) return w;
    w.U.resize(N);
    for (std::size_t k = 0; k + 1 < N; ++k) w.U[k] = result.U_seq[k + 1];
    w.U[N - 1] = problem.terminal.K_f * XN;
    w.X[N] = sys.Abold * w.X[N - 1] + sys.Bbold * w.U[N - 1];
  } else {
    if (result.ubar_seq.size() != N || result.gain_seq.size() != N) return w;
    w.ubar.resize(N);
    w.gains.resize(N);
    for (std::size_t k = 0; k + 1 < N; ++k) {
      w.ubar[k] = result.ubar_seq[k + 1];
      w.gains[k] = result.gain_seq[k + 1];
    }
    w.ubar[N - 1] = problem.terminal.gain_mean * XN.head(sys.n);
    w.gains[N - 1] = problem.terminal.gain_dev;
    const Eigen::VectorXd Ulast =
        compose_control(sys, w.ubar[N - 1], w.gains[N - 1], w.X[N - 1]);
    w.X[N] = sys.Abold * w.X[N - 1] + sys.Bbold * Ulast;
  }
  w.valid = true;
  return w;
}

ClosedLoopTrace run_closed_loop(const PlantHandle& plant, const RHCProblem& problem,
                                int steps, const EngineSettings& settings) {
  if (steps < 0) throw ConfigError("step count must be nonnegative");
  if (plant.chaos.coeffs.size() != problem.nx())
    throw ConfigError("plant surrogate state has wrong dimension");

  ClosedLoopTrace trace;
  trace.steps_requested = steps;
  trace.records.reserve(static_cast<std::size_t>(steps) + 1);

  PlantHandle current = plant;
  WarmStart warm;

  for (int k = 0; k < steps; ++k) {
    RHCProblem cur = with_initial(problem, current.chaos);
    StepResult sr;
    try {
      sr = rhc_step(cur, settings, warm.valid ? &warm : nullptr);
    } catch (const InfeasibleInitialError& e) {
      StepRecord rec = make_record(problem, k, current);
      rec.status = SolveStatus::infeasible;
      rec.margins = record_margins(problem, k, current.chaos.coeffs, nullptr);
      trace.records.push_back(std::move(rec));
      trace.aborted = true;
      trace.abort_reason = e.what();
      return trace;
    }

    StepRecord rec = make_record(problem, k, current);
    rec.status = sr.report.status;
    rec.iterations = sr.report.iterations;

    if (sr.report.status == SolveStatus::infeasible ||
        sr.report.status == SolveStatus::numeric_failure) {
      rec.margins = record_margins(problem, k, current.chaos.coeffs, nullptr);
      trace.records.push_back(std::move(rec));
      trace.aborted = true;
      trace.abort_reason = "horizon solve at step " + std::to_string(k) + " ended " +
                           to_string(sr.report.status);
      return trace;
    }

    rec.has_control = true;
    rec.ubar = sr.ubar0;
    rec.gain = sr.gain0;
    rec.control = sr.U0.coeffs;
    rec.objective = sr.objective;
    rec.degraded = sr.degraded;
    trace.degraded = trace.degraded || sr.degraded;
    rec.margins = record_margins(problem, k, current.chaos.coeffs, &sr.U0.coeffs);

    if (current.kind == PlantHandle::Kind::sampled_truth) {
      Eigen::VectorXd u_phys;
      if (problem.mode == ControlMode::full_chaos) {
        u_phys = eval_control(sr.U0, *problem.system.basis, current.delta);
      } else {
        const Eigen::VectorXd xm = mean(current.chaos);
        u_phys = sr.ubar0 + sr.gain0 * (current.x_true - xm);
      }
      rec.u_applied = u_phys;
      current.x_true = current.A_true * current.x_true + current.B_true * u_phys;
    }
    current.chaos = propagate(problem.system, current.chaos, sr.U0);

    trace.records.push_back(std::move(rec));
    warm = settings.warm_start ? shift_warm_start(problem, sr) : WarmStart{};
  }

  StepRecord last = make_record(problem, steps, current);
  last.margins = record_margins(problem, steps, current.chaos.coeffs, nullptr);
  trace.records.push_back(std::move(last));
  return trace;
}

MomentDecayReport check_moment_decay(const ClosedLoopTrace& trace,
                                     const std::vector<int>& orders, double tolerance,
                                     double bound_factor) {
  MomentDecayReport report;
  if (trace.records.empty()) {
    report.all_decayed = false;
    report.all_bounded = false;
    return report;
  }
  const int n = static_cast<int>(trace.records.front().moments.rows());
  for (int q : orders) {
    if (q < 1 || q > 4) throw ConfigError("moment decay checks cover orders 1 through 4");
    for (int c = 0; c < n; ++c) {
      MomentDecayEntry e;
      e.order = q;
      e.component = c;
      e.initial_abs = std::abs(trace.records.front().moments(c, q - 1));
      e.final_abs = std::abs(trace.records.back().moments(c, q - 1));
      e.max_abs = 0.0;
      for (const StepRecord& rec : trace.records)
        e.max_abs = std::max(e.max_abs, std::abs(rec.moments(c, q - 1)));
      e.decayed = e.final_abs <= tolerance * e.initial_abs;
      e.bounded = e.max_abs <= bound_factor * std::max(e.initial_abs, 1.0);
      report.all_decayed = report.all_decayed && e.decayed;
      report.all_bounded = report.all_bounded && e.bounded;
      report.entries.push_back(e);
    }
  }
  return report;
}

void write_trace_csv(const ClosedLoopTrace& trace, const RHCProblem& problem,
                     std::ostream& os) {
  const int n = problem.system.n;
  const int m = problem.system.m;
  const int nx = problem.nx();
  const int nuf = problem.nu_full();
  const std::size_t C = problem.constraints.size();

  std::string line = "k";
  auto col = [&line](const std::string& name) { line += "," + name; };
  for (int i = 0; i < nx; ++i) col("X" + std::to_string(i));
  for (int i = 0; i < n; ++i) col("xtrue" + std::to_string(i));
  for (int i = 0; i < n; ++i) col("mean" + std::to_string(i));
  col("cov_trace");
  for (int q = 1; q <= 4; ++q)
    for (int i = 0; i < n; ++i) col("m" + std::to_string(q) + "_" + std::to_string(i));
  for (int i = 0; i < m; ++i) col("ubar" + std::to_string(i));
  for (int a = 0; a < m; ++a)
    for (int b = 0; b < n; ++b) col("K" + std::to_string(a) + std::to_string(b));
  for (int i = 0; i < nuf; ++i) col("U" + std::to_string(i));
  for (int i = 0; i < m; ++i) col("uapp" + std::to_string(i));
  col("objective");
  col("status");
  col("iterations");
  col("degraded");
  for (std::size_t c = 0; c < C; ++c) col("margin" + std::to_string(c));
  os << line << "\n";

  for (const StepRecord& rec : trace.records) {
    line.clear();
    line += std::to_string(rec.k);
    auto num = [&line](double v) {
      line += ",";
      csv_cell(line, v);
    };
    auto blank = [&line](int count) {
      for (int i = 0; i < count; ++i) line += ",";
    };
    for (int i = 0; i < nx; ++i) num(rec.state.coeffs[i]);
    if (rec.x_true.size() == n)
      for (int i = 0; i < n; ++i) num(rec.x_true[i]);
    else
      blank(n);
    for (int i = 0; i < n; ++i) num(rec.mean[i]);
    num(rec.cov_trace);
    for (int q = 0; q < 4; ++q)
      for (int i = 0; i < n; ++i) num(rec.moments(i, q));
    if (rec.has_control) {
      for (int i = 0; i < m; ++i) num(rec.ubar[i]);
      for (int a = 0; a < m; ++a)
        for (int b = 0; b < n; ++b) num(rec.gain(a, b));
      for (int i = 0; i < nuf; ++i) num(rec.control[i]);
      if (rec.u_applied.size() == m)
        for (int i = 0; i < m; ++i) num(rec.u_applied[i]);
      else
        blank(m);
      num(rec.objective);
      line += "," + to_string(rec.status);
      line += "," + std::to_string(rec.iterations);
      line += rec.degraded ? ",1" : ",0";
    } else {
      blank(m + m * n + nuf + m + 1);
      line += "," + to_string(rec.status);
      line += "," + std::to_string(rec.iterations);
      line += ",0";
    }
    // Margin columns follow constraint order; control-target margins are
    // blank on records without a control.
    std::size_t idx = 0;
    for (std::size_t c = 0; c < C; ++c) {
      if (idx < rec.margins.size() &&
          rec.margins[idx].constraint == static_cast<int>(c)) {
        num(rec.margins[idx].margin);
        ++idx;
      } else {
        blank(1);
      }
    }
    os << line << "\n";
  }
}

std::string trace_summary_json(const ClosedLoopTrace& trace, const RHCProblem& problem,
                               const MomentDecayReport& decay) {
  nlohmann::json j;
  j["steps_requested"] = trace.steps_requested;
  j["records"] = trace.records.size();
  j["degraded"] = trace.degraded;
  j["aborted"] = trace.aborted;
  j["abort_reason"] = trace.abort_reason;

  if (!trace.records.empty()) {
    const StepRecord& first = trace.records.front();
    const StepRecord& last = trace.records.back();
    const double n0 = first.state.coeffs.norm();
    const double nf = last.state.coeffs.norm();
    j["initial_coeff_norm"] = n0;
    j["final_coeff_norm"] = nf;
    j["coeff_norm_ratio"] = n0 > 0.0 ? nf / n0 : 0.0;
    j["final_mean_norm"] = last.mean.norm();
    j["final_cov_trace"] = last.cov_trace;
    if (first.x_true.size() > 0 && last.x_true.size() > 0) {
      j["initial_truth_norm"] = first.x_true.norm();
      j["final_truth_norm"] = last.x_true.norm();
    }

    nlohmann::json margins = nlohmann::json::array();
    for (std::size_t c = 0; c < problem.constraints.size(); ++c) {
      double worst = std::numeric_limits<double>::infinity();
      int at = -1;
      for (const StepRecord& rec : trace.records)
        for (const MarginRecord& mr : rec.margins)
          if (mr.constraint == static_cast<int>(c) && mr.margin < worst) {
            worst = mr.margin;
            at = mr.step;
          }
      margins.push_back({{"constraint", c},
                         {"kind", to_string(problem.constraints[c].kind)},
                         {"worst_margin", at >= 0 ? worst : 0.0},
                         {"at_step", at}});
    }
    j["constraint_margins"] = margins;

    nlohmann::json statuses = nlohmann::json::object();
    long total_iterations = 0;
    int max_iterations = 0;
    double first_objective = 0.0, last_objective = 0.0;
    bool have_first = false;
    for (const StepRecord& rec : trace.records) {
      if (!rec.has_control) continue;
      const std::string s = to_string(rec.status);
      statuses[s] = statuses.value(s, 0) + 1;
      total_iterations += rec.iterations;
      max_iterations = std::max(max_iterations, rec.iterations);
      if (!have_first) {
        first_objective = rec.objective;
        have_first = true;
      }
      last_objective = rec.objective;
    }
    j["solve_status_counts"] = statuses;
    j["total_iterations"] = total_iterations;
    j["max_iterations_per_solve"] = max_iterations;
    if (have_first) {
      j["first_objective"] = first_objective;
      j["last_objective"] = last_objective;
    }
  }

  nlohmann::json d;
  d["all_decayed"] = decay.all_decayed;
  d["all_bounded"] = decay.all_bounded;
  nlohmann::json entries = nlohmann::json::array();
  for (const MomentDecayEntry& e : decay.entries) {
    entries.push_back({{"order", e.order},
                       {"component", e.component},
                       {"initial_abs", e.initial_abs},
                       {"final_abs", e.final_abs},
                       {"max_abs", e.max_abs},
                       {"decayed", e.decayed},
                       {"bounded", e.bounded}});
  }
  d["entries"] = entries;
  j["moment_decay"] = d;

  return j.dump(2);
}

}  // namespace pcrhc
