#include "pcrhc/transcription.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>

namespace pcrhc {

namespace {

Eigen::MatrixXd kron_diag(const Eigen::VectorXd& w, const Eigen::MatrixXd& M) {
  const int p1 = static_cast<int>(w.size());
  const int r = static_cast<int>(M.rows()), c = static_cast<int>(M.cols());
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(p1 * r, p1 * c);
  for (int i = 0; i < p1; ++i) out.block(i * r, i * c, r, c) = w(i) * M;
  return out;
}

Eigen::MatrixXd kron(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B) {
  Eigen::MatrixXd out(A.rows() * B.rows(), A.cols() * B.cols());
  for (int i = 0; i < A.rows(); ++i)
    for (int j = 0; j < A.cols(); ++j)
      out.block(i * B.rows(), j * B.cols(), B.rows(), B.cols()) = A(i, j) * B;
  return out;
}

void require_symmetric(const Eigen::MatrixXd& M, double tol, const char* what) {
  if (M.rows() != M.cols()) throw ConfigError(std::string(what) + " must be square");
  const double scale = std::max(1.0, M.size() ? M.cwiseAbs().maxCoeff() : 0.0);
  if ((M - M.transpose()).cwiseAbs().maxCoeff() > tol * scale)
    throw ConfigError(std::string(what) + " is not symmetric");
}

// T_x = M (x) K: lifted-control map acting on deviation blocks only.
Eigen::MatrixXd deviation_map(const ChaosSystem& sys, const Eigen::MatrixXd& K) {
  Eigen::MatrixXd T = Eigen::MatrixXd::Zero(sys.control_dim(), sys.state_dim());
  for (int i = 1; i < sys.blocks(); ++i) T.block(i * sys.m, i * sys.n, sys.m, sys.n) = K;
  return T;
}

// T_u = e1 (x) I_m.
Eigen::MatrixXd mean_map(const ChaosSystem& sys) {
  Eigen::MatrixXd T = Eigen::MatrixXd::Zero(sys.control_dim(), sys.m);
  T.topRows(sys.m).setIdentity();
  return T;
}

double spectral_radius(const Eigen::MatrixXd& M) {
  return M.eigenvalues().cwiseAbs().maxCoeff();
}

}  // namespace

std::string to_string(ConstraintKind k) {
  switch (k) {
    case ConstraintKind::expectation_quadratic_state: return "expectation-quadratic-state";
    case ConstraintKind::expectation_quadratic_control: return "expectation-quadratic-control";
    case ConstraintKind::variance_trace_state: return "variance-trace-state";
  }
  return "unknown";
}

std::string to_string(ControlMode m) {
  switch (m) {
    case ControlMode::full_chaos: return "full-chaos-control";
    case ControlMode::mean_fixed_gain: return "mean-plus-fixed-gain";
    case ControlMode::mean_variable_gain: return "mean-plus-variable-gain";
  }
  return "unknown";
}

void CostSpec::validate(int n, int m) const {
  if (N < 1) throw ConfigError("CostSpec: horizon must be >= 1");
  if (Q.rows() != n || Q.cols() != n) throw ConfigError("CostSpec: Q must be n x n");
  if (R.rows() != m || R.cols() != m) throw ConfigError("CostSpec: R must be m x m");
  require_symmetric(Q, 1e-12, "CostSpec Q");
  require_symmetric(R, 1e-12, "CostSpec R");
  if (Eigen::LLT<Eigen::MatrixXd>(Q).info() != Eigen::Success)
    throw ConfigError("CostSpec: Q must be positive definite");
  if (Eigen::LLT<Eigen::MatrixXd>(R).info() != Eigen::Success)
    throw ConfigError("CostSpec: R must be positive definite");
}

double LiftedConstraint::margin(const Eigen::VectorXd& v) const {
  double lhs = 0.0;
  if (has_quad()) lhs += v.dot(quad * v);
  if (has_lin()) lhs += lin.dot(v);
  return rhs - lhs;
}

std::pair<Eigen::MatrixXd, Eigen::MatrixXd> lift_cost(const CostSpec& cost,
                                                      const ProductTensors& tensors) {
  return {kron_diag(tensors.W, cost.Q), kron_diag(tensors.W, cost.R)};
}

LiftedConstraint lift_expectation_constraint(const ConstraintSpec& c,
                                             const ProductTensors& tensors,
                                             int block_dim, bool convex_mode) {
  if (c.kind == ConstraintKind::variance_trace_state)
    throw ConfigError("lift_expectation_constraint: wrong kind");
  const int p1 = static_cast<int>(tensors.W.size());
  const int L = block_dim * p1;

  const bool have_H = c.H.size() > 0 && c.H.cwiseAbs().maxCoeff() > 0.0;
  const bool have_G = c.G.size() > 0 && c.G.cwiseAbs().maxCoeff() > 0.0;
  if (!have_H && !have_G)
    throw ConfigError("constraint with zero H and zero G is vacuous");
  if (have_H) {
    if (c.H.rows() != block_dim || c.H.cols() != block_dim)
      throw ConfigError("constraint H dimension mismatch");
    require_symmetric(c.H, 1e-12, "constraint H");
  }
  if (have_G && (c.G.rows() != 1 || c.G.cols() != block_dim))
    throw ConfigError("constraint G must be a single row of matching width");

  const double sign = c.direction == ConstraintDirection::ge ? -1.0 : 1.0;
  LiftedConstraint out;
  out.kind = c.kind;
  out.target = c.kind == ConstraintKind::expectation_quadratic_control
                   ? LiftedConstraint::Target::control
                   : LiftedConstraint::Target::state;
  out.steps = c.steps;
  out.rhs = sign * c.bound;
  if (have_H) out.quad = sign * kron_diag(tensors.W, 0.5 * (c.H + c.H.transpose()));
  if (have_G) {
    out.lin = Eigen::RowVectorXd::Zero(L);
    out.lin.head(block_dim) = sign * c.G.row(0);
  }

  if (convex_mode && out.has_quad()) {
    const double scale = std::max(1.0, out.quad.cwiseAbs().maxCoeff());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(out.quad, Eigen::EigenvaluesOnly);
    if (es.eigenvalues().minCoeff() < -1e-10 * scale)
      throw ConvexityError("expectation constraint is not convex in canonical form");
  }
  return out;
}

LiftedConstraint lift_variance_constraint(double bound, const ProductTensors& tensors,
                                          int n, const std::vector<int>& steps) {
  if (bound < 0.0) throw ConfigError("variance bound must be nonnegative");
  const Eigen::MatrixXd core =
      Eigen::MatrixXd(tensors.W.asDiagonal()) - tensors.F * tensors.F.transpose();
  LiftedConstraint out;
  out.kind = ConstraintKind::variance_trace_state;
  out.target = LiftedConstraint::Target::state;
  out.quad = kron(core, Eigen::MatrixXd::Identity(n, n));
  out.rhs = bound;
  out.steps = steps;
  return out;
}

TerminalController synth_terminal(const ChaosSystem& sys, const Eigen::MatrixXd& Qbar,
                                  const Eigen::MatrixXd& Rbar, const DareOptions& options) {
  TerminalController t;
  t.dare = solve_dare(sys.Abold, sys.Bbold, Qbar, Rbar, options);
  t.P = 0.5 * (t.dare.P + t.dare.P.transpose());
  const Eigen::MatrixXd BtP = sys.Bbold.transpose() * t.P;
  const Eigen::MatrixXd S = Rbar + BtP * sys.Bbold;
  t.K_f = -S.ldlt().solve(BtP * sys.Abold);
  t.spectral_radius = spectral_radius(sys.Abold + sys.Bbold * t.K_f);
  if (!(t.spectral_radius < 1.0))
    throw SynthesisError("terminal closed loop is not contractive");
  const int m = sys.m, n = sys.n;
  t.gain_mean = t.K_f.topLeftCorner(m, n);
  t.gain_dev = Eigen::MatrixXd::Zero(m, n);
  const int p = sys.blocks() - 1;
  for (int i = 1; i <= p; ++i) t.gain_dev += t.K_f.block(i * m, i * n, m, n);
  if (p > 0) t.gain_dev /= static_cast<double>(p);
  return t;
}

int RHCProblem::nu_step() const {
  return mode == ControlMode::full_chaos ? system.control_dim() : system.m;
}

void check_initial_feasible(const RHCProblem& problem, double tol) {
  for (std::size_t i = 0; i < problem.constraints.size(); ++i) {
    const auto& c = problem.constraints[i];
    if (c.target != LiftedConstraint::Target::state) continue;
    if (std::find(c.steps.begin(), c.steps.end(), 0) == c.steps.end()) continue;
    const double mg = c.margin(problem.initial.coeffs);
    if (mg < -tol)
      throw InfeasibleInitialError("initial state violates constraint " + std::to_string(i) +
                                   " (" + to_string(c.kind) + ") by " + std::to_string(-mg));
  }
}

RHCProblem build_problem(const ChaosSystem& sys, const CostSpec& cost,
                         const std::vector<ConstraintSpec>& constraints,
                         ControlMode mode, const ChaosState& initial,
                         const DareOptions& dare_options) {
  cost.validate(sys.n, sys.m);
  if (initial.n != sys.n || initial.coeffs.size() != sys.state_dim())
    throw ConfigError("build_problem: initial state dimension mismatch");

  RHCProblem pb;
  pb.system = sys;
  pb.cost = cost;
  std::tie(pb.Qbar, pb.Rbar) = lift_cost(cost, *sys.tensors);
  pb.terminal = synth_terminal(sys, pb.Qbar, pb.Rbar, dare_options);
  pb.mode = mode;
  pb.fixed_gain = pb.terminal.gain_dev;
  pb.initial = initial;

  const int N = cost.N;
  for (const auto& spec : constraints) {
    const bool is_control = spec.kind == ConstraintKind::expectation_quadratic_control;
    const int last = is_control ? N - 1 : N;
    std::vector<int> steps = spec.steps;
    if (steps.empty())
      for (int s = 0; s <= last; ++s) steps.push_back(s);
    for (int s : steps)
      if (s < 0 || s > last)
        throw ConfigError("constraint step " + std::to_string(s) + " outside {0.." +
                          std::to_string(last) + "}");
    std::sort(steps.begin(), steps.end());
    steps.erase(std::unique(steps.begin(), steps.end()), steps.end());

    if (spec.kind == ConstraintKind::variance_trace_state) {
      if (spec.direction == ConstraintDirection::ge)
        throw ConvexityError("variance-trace constraint only supports <=");
      pb.constraints.push_back(lift_variance_constraint(spec.bound, *sys.tensors, sys.n, steps));
    } else {
      ConstraintSpec s2 = spec;
      s2.steps = steps;
      pb.constraints.push_back(lift_expectation_constraint(
          s2, *sys.tensors, is_control ? sys.m : sys.n, /*convex_mode=*/true));
    }
  }

  check_initial_feasible(pb);
  return pb;
}

// ---------------------------------------------------------------------------
// Horizon stacking
// ---------------------------------------------------------------------------

namespace {

BuiltQP assemble_horizon(const RHCProblem& pb, const std::vector<Eigen::MatrixXd>* gains) {
  const ChaosSystem& sys = pb.system;
  const int N = pb.horizon();
  const int nx = sys.state_dim();
  const int nuf = sys.control_dim();
  const bool mean_mode = gains != nullptr;
  const int nu = mean_mode ? sys.m : nuf;
  if (mean_mode && static_cast<int>(gains->size()) != N)
    throw ConfigError("gain sequence length must equal the horizon");

  BuiltQP out;
  out.layout.nx = nx;
  out.layout.nu = nu;
  out.layout.N = N;
  const int dim = out.layout.num_vars();
  const Eigen::VectorXd& X0 = pb.initial.coeffs;

  // Quadratic form V(z) = z'S z + sigma'z + c0; the QP takes H = 2S, f = sigma.
  Eigen::MatrixXd S = Eigen::MatrixXd::Zero(dim, dim);
  Eigen::VectorXd sigma = Eigen::VectorXd::Zero(dim);
  double c0 = X0.dot(pb.Qbar * X0);

  const Eigen::MatrixXd Tu = mean_mode ? mean_map(sys) : Eigen::MatrixXd();
  std::vector<Eigen::MatrixXd> Tx(mean_mode ? N : 0);
  if (mean_mode)
    for (int k = 0; k < N; ++k) Tx[k] = deviation_map(sys, (*gains)[k]);

  for (int k = 1; k < N; ++k)
    S.block(out.layout.x_offset(k), out.layout.x_offset(k), nx, nx) += pb.Qbar;
  S.block(out.layout.x_offset(N), out.layout.x_offset(N), nx, nx) += pb.terminal.P;

  for (int k = 0; k < N; ++k) {
    const int uo = out.layout.u_offset(k);
    if (!mean_mode) {
      S.block(uo, uo, nuf, nuf) += pb.Rbar;
      continue;
    }
    const Eigen::MatrixXd Tqu = Tu.transpose() * pb.Rbar * Tu;
    S.block(uo, uo, nu, nu) += Tqu;
    if (k == 0) {
      const Eigen::VectorXd u_const = Tx[0] * X0;
      sigma.segment(uo, nu) += 2.0 * Tu.transpose() * (pb.Rbar * u_const);
      c0 += u_const.dot(pb.Rbar * u_const);
    } else {
      const int xo = out.layout.x_offset(k);
      S.block(xo, xo, nx, nx) += Tx[k].transpose() * pb.Rbar * Tx[k];
      const Eigen::MatrixXd cross = Tx[k].transpose() * pb.Rbar * Tu;
      S.block(xo, uo, nx, nu) += cross;
      S.block(uo, xo, nu, nx) += cross.transpose();
    }
  }

  out.qp.H = S + S.transpose();
  out.qp.f = sigma;
  out.layout.constant = c0;

  // Dynamics equalities X(k+1) = A_cl(k) X(k) + B u(k).
  const Eigen::MatrixXd Bmean = sys.Bbold.leftCols(sys.m);
  out.qp.A_eq = Eigen::MatrixXd::Zero(N * nx, dim);
  out.qp.b_eq = Eigen::VectorXd::Zero(N * nx);
  for (int k = 0; k < N; ++k) {
    const Eigen::MatrixXd Acl =
        mean_mode ? Eigen::MatrixXd(sys.Abold + sys.Bbold * Tx[k]) : sys.Abold;
    out.qp.A_eq.block(k * nx, out.layout.x_offset(k + 1), nx, nx).setIdentity();
    if (k == 0) {
      out.qp.b_eq.segment(0, nx) = Acl * X0;
    } else {
      out.qp.A_eq.block(k * nx, out.layout.x_offset(k), nx, nx) = -Acl;
    }
    out.qp.A_eq.block(k * nx, out.layout.u_offset(k), nx, nu) =
        mean_mode ? Eigen::MatrixXd(-Bmean) : Eigen::MatrixXd(-sys.Bbold);
  }

  // Constraint instances.
  out.qp.A_in = Eigen::MatrixXd::Zero(0, dim);
  out.qp.b_in = Eigen::VectorXd::Zero(0);
  auto add_lin_row = [&](const Eigen::RowVectorXd& row, double rhs) {
    const int r = static_cast<int>(out.qp.A_in.rows());
    out.qp.A_in.conservativeResize(r + 1, dim);
    out.qp.A_in.row(r) = row;
    out.qp.b_in.conservativeResize(r + 1);
    out.qp.b_in(r) = rhs;
    return r;
  };

  for (std::size_t ci = 0; ci < pb.constraints.size(); ++ci) {
    const LiftedConstraint& con = pb.constraints[ci];
    const bool on_state = con.target == LiftedConstraint::Target::state;
    for (int s : con.steps) {
      if (on_state && s == 0) continue;  // checked against the fixed X(0)
      ConstraintInstanceRef ref;
      ref.constraint = static_cast<int>(ci);
      ref.step = s;
      if (on_state) {
        const int xo = out.layout.x_offset(s);
        if (con.has_quad()) {
          QuadConstraint qc;
          qc.Q = Eigen::MatrixXd::Zero(dim, dim);
          qc.Q.block(xo, xo, nx, nx) = con.quad;
          qc.g = Eigen::VectorXd::Zero(dim);
          if (con.has_lin()) qc.g.segment(xo, nx) = con.lin.transpose();
          qc.bound = con.rhs;
          ref.quad_index = static_cast<int>(out.qp.quad.size());
          out.qp.quad.push_back(std::move(qc));
        } else {
          Eigen::RowVectorXd row = Eigen::RowVectorXd::Zero(dim);
          row.segment(xo, nx) = con.lin;
          ref.lin_row = add_lin_row(row, con.rhs);
        }
      } else if (!mean_mode) {
        const int uo = out.layout.u_offset(s);
        if (con.has_quad()) {
          QuadConstraint qc;
          qc.Q = Eigen::MatrixXd::Zero(dim, dim);
          qc.Q.block(uo, uo, nuf, nuf) = con.quad;
          qc.g = Eigen::VectorXd::Zero(dim);
          if (con.has_lin()) qc.g.segment(uo, nuf) = con.lin.transpose();
          qc.bound = con.rhs;
          ref.quad_index = static_cast<int>(out.qp.quad.size());
          out.qp.quad.push_back(std::move(qc));
        } else {
          Eigen::RowVectorXd row = Eigen::RowVectorXd::Zero(dim);
          row.segment(uo, nuf) = con.lin;
          ref.lin_row = add_lin_row(row, con.rhs);
        }
      } else {
        // Compose with U(s) = Tx X(s) + Tu u(s); X(0) is a constant.
        const int uo = out.layout.u_offset(s);
        if (con.has_quad()) {
          QuadConstraint qc;
          qc.Q = Eigen::MatrixXd::Zero(dim, dim);
          qc.g = Eigen::VectorXd::Zero(dim);
          qc.bound = con.rhs;
          const Eigen::MatrixXd Quu = Tu.transpose() * con.quad * Tu;
          qc.Q.block(uo, uo, nu, nu) = Quu;
          if (s == 0) {
            const Eigen::VectorXd u_const = Tx[0] * X0;
            qc.g.segment(uo, nu) += 2.0 * Tu.transpose() * (con.quad * u_const);
            qc.bound -= u_const.dot(con.quad * u_const);
            if (con.has_lin()) {
              qc.g.segment(uo, nu) += (con.lin * Tu).transpose();
              qc.bound -= con.lin.dot(u_const);
            }
          } else {
            const int xo = out.layout.x_offset(s);
            qc.Q.block(xo, xo, nx, nx) = Tx[s].transpose() * con.quad * Tx[s];
            const Eigen::MatrixXd cross = Tx[s].transpose() * con.quad * Tu;
            qc.Q.block(xo, uo, nx, nu) = cross;
            qc.Q.block(uo, xo, nu, nx) = cross.transpose();
            if (con.has_lin()) {
              qc.g.segment(xo, nx) += (con.lin * Tx[s]).transpose();
              qc.g.segment(uo, nu) += (con.lin * Tu).transpose();
            }
          }
          ref.quad_index = static_cast<int>(out.qp.quad.size());
          out.qp.quad.push_back(std::move(qc));
        } else {
          Eigen::RowVectorXd row = Eigen::RowVectorXd::Zero(dim);
          double rhs = con.rhs;
          row.segment(uo, nu) = con.lin * Tu;
          if (s == 0) {
            rhs -= con.lin.dot(Tx[0] * X0);
          } else {
            row.segment(out.layout.x_offset(s), nx) = con.lin * Tx[s];
          }
          ref.lin_row = add_lin_row(row, rhs);
        }
      }
      out.instances.push_back(ref);
    }
  }

  out.qp.validate();
  return out;
}

}  // namespace

BuiltQP build_qp_full(const RHCProblem& problem) {
  if (problem.mode != ControlMode::full_chaos)
    throw ConfigError("build_qp_full requires full-chaos-control mode");
  return assemble_horizon(problem, nullptr);
}

BuiltQP build_qp_fixed_gain(const RHCProblem& problem,
                            const std::vector<Eigen::MatrixXd>& gains) {
  if (problem.mode == ControlMode::full_chaos)
    throw ConfigError("build_qp_fixed_gain requires a mean mode");
  for (const auto& K : gains)
    if (K.rows() != problem.system.m || K.cols() != problem.system.n)
      throw ConfigError("gain dimension mismatch");
  return assemble_horizon(problem, &gains);
}

std::vector<Eigen::VectorXd> extract_states(const RHCProblem& problem,
                                            const QPLayout& layout,
                                            const Eigen::VectorXd& z) {
  std::vector<Eigen::VectorXd> X(layout.N + 1);
  X[0] = problem.initial.coeffs;
  for (int k = 1; k <= layout.N; ++k) X[k] = z.segment(layout.x_offset(k), layout.nx);
  return X;
}

std::vector<Eigen::VectorXd> extract_controls(const QPLayout& layout,
                                              const Eigen::VectorXd& z) {
  std::vector<Eigen::VectorXd> U(layout.N);
  for (int k = 0; k < layout.N; ++k) U[k] = z.segment(layout.u_offset(k), layout.nu);
  return U;
}

Eigen::VectorXd compose_control(const ChaosSystem& sys, const Eigen::VectorXd& ubar,
                                const Eigen::MatrixXd& gain, const Eigen::VectorXd& X) {
  Eigen::VectorXd U = Eigen::VectorXd::Zero(sys.control_dim());
  U.head(sys.m) = ubar;
  for (int i = 1; i < sys.blocks(); ++i)
    U.segment(i * sys.m, sys.m) = gain * X.segment(i * sys.n, sys.n);
  return U;
}

double horizon_objective(const RHCProblem& problem,
                         const std::vector<Eigen::VectorXd>& states,
                         const std::vector<Eigen::VectorXd>& full_controls) {
  const int N = problem.horizon();
  double v = 0.0;
  for (int k = 0; k < N; ++k) {
    v += states[k].dot(problem.Qbar * states[k]);
    v += full_controls[k].dot(problem.Rbar * full_controls[k]);
  }
  v += states[N].dot(problem.terminal.P * states[N]);
  return v;
}

std::vector<MarginRecord> constraint_margins(const RHCProblem& problem,
                                             const std::vector<Eigen::VectorXd>& states,
                                             const std::vector<Eigen::VectorXd>& full_controls) {
  std::vector<MarginRecord> out;
  for (std::size_t ci = 0; ci < problem.constraints.size(); ++ci) {
    const auto& con = problem.constraints[ci];
    for (int s : con.steps) {
      MarginRecord rec;
      rec.constraint = static_cast<int>(ci);
      rec.step = s;
      rec.margin = con.target == LiftedConstraint::Target::state
                       ? con.margin(states[s])
                       : con.margin(full_controls[s]);
      out.push_back(rec);
    }
  }
  return out;
}

}  // namespace pcrhc
