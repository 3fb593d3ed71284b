#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Core>
#include <Eigen/Eigenvalues>

#include <cmath>
#include <vector>

#include "oracles.hpp"
#include "pcrhc/rng.hpp"
#include "pcrhc/transcription.hpp"
#include "pcrhc/validation.hpp"

using namespace pcrhc;

namespace {

UncertainSystem benchmark_system() {
  UncertainSystem s;
  s.n = 2;
  s.m = 1;
  s.d = 1;
  Eigen::MatrixXd A0(2, 2);
  A0 << 1.02, -0.1, 0.1, 0.98;
  Eigen::MatrixXd B0(2, 1);
  B0 << 0.1, 0.05;
  s.A_terms.push_back({MultiIndex{{0}}, A0});
  s.A_terms.push_back({MultiIndex{{1}}, 0.04 * Eigen::MatrixXd::Identity(2, 2)});
  s.B_terms.push_back({MultiIndex{{0}}, B0});
  s.marginals = {Marginal::uniform()};
  return s;
}

CostSpec benchmark_cost(int N = 10) {
  CostSpec c;
  c.Q = Eigen::Vector2d(2.0, 5.0).asDiagonal();
  c.R = Eigen::MatrixXd::Constant(1, 1, 1.0);
  c.N = N;
  return c;
}

ConstraintSpec mean_x1_floor() {
  ConstraintSpec c;
  c.kind = ConstraintKind::expectation_quadratic_state;
  c.G = Eigen::MatrixXd(1, 2);
  c.G << 1.0, 0.0;
  c.bound = -1.0;
  c.direction = ConstraintDirection::ge;
  return c;
}

RHCProblem benchmark_problem(ControlMode mode, int N = 10,
                             std::vector<ConstraintSpec> cons = {mean_x1_floor()}) {
  ChaosSystem sys = make_chaos_system(benchmark_system(), 4);
  ChaosState X0(2, sys.blocks());
  X0.block(0) = Eigen::Vector2d(-0.5, 1.0);
  return build_problem(sys, benchmark_cost(N), cons, mode, X0);
}

}  // namespace

TEST_CASE("cost validation enforces symmetry and positive definiteness") {
  CostSpec good = benchmark_cost();
  CHECK_NOTHROW(good.validate(2, 1));

  CostSpec asym = good;
  asym.Q(0, 1) = 0.5;  // Q(1,0) stays -0 => asymmetric
  CHECK_THROWS_AS(asym.validate(2, 1), ConfigError);

  CostSpec indef = good;
  indef.Q = Eigen::Vector2d(1.0, -1.0).asDiagonal();
  CHECK_THROWS_AS(indef.validate(2, 1), ConfigError);

  CostSpec zeroN = good;
  zeroN.N = 0;
  CHECK_THROWS_AS(zeroN.validate(2, 1), ConfigError);

  CHECK_THROWS_AS(good.validate(3, 1), ConfigError);  // dimension mismatch
}

TEST_CASE("cost lifting is the norm-weighted Kronecker product") {
  BasisSet flat({Marginal::uniform()}, 0);
  ProductTensors t0 = build_tensors(flat);
  CostSpec c0;
  c0.Q = Eigen::MatrixXd::Constant(1, 1, 3.0);
  c0.R = Eigen::MatrixXd::Constant(1, 1, 2.0);
  auto [Q0, R0] = lift_cost(c0, t0);
  CHECK(Q0.rows() == 1);
  CHECK(Q0(0, 0) == doctest::Approx(3.0).epsilon(1e-15));

  BasisSet leg({Marginal::uniform()}, 2);
  ProductTensors t2 = build_tensors(leg);
  CostSpec cs;
  cs.Q = Eigen::MatrixXd::Constant(1, 1, 2.0);
  cs.R = Eigen::MatrixXd::Constant(1, 1, 1.0);
  auto [Qs, Rs] = lift_cost(cs, t2);
  Eigen::Vector3d expect(2.0, 2.0 / 3.0, 2.0 / 5.0);
  for (int i = 0; i < 3; ++i) {
    CHECK(std::abs(Qs(i, i) - expect(i)) <= 1e-13);
    for (int j = 0; j < 3; ++j)
      if (i != j) CHECK(Qs(i, j) == 0.0);
  }

  BasisSet b4({Marginal::uniform()}, 4);
  ProductTensors t4 = build_tensors(b4);
  auto [Qb, Rb] = lift_cost(benchmark_cost(), t4);
  REQUIRE(Qb.rows() == 10);
  REQUIRE(Rb.rows() == 5);
  for (int i = 0; i < 5; ++i) {
    Eigen::MatrixXd blk = Qb.block(2 * i, 2 * i, 2, 2);
    Eigen::MatrixXd want = t4.W(i) * Eigen::Vector2d(2.0, 5.0).asDiagonal().toDenseMatrix();
    CHECK((blk - want).cwiseAbs().maxCoeff() <= 1e-13);
    CHECK(std::abs(Rb(i, i) - t4.W(i)) <= 1e-13);
  }
}

TEST_CASE("mean-floor constraint lifts to a single linear row on block 0") {
  BasisSet b4({Marginal::uniform()}, 4);
  ProductTensors t = build_tensors(b4);
  LiftedConstraint lc = lift_expectation_constraint(mean_x1_floor(), t, 2, true);
  CHECK(lc.target == LiftedConstraint::Target::state);
  CHECK_FALSE(lc.has_quad());
  REQUIRE(lc.has_lin());
  REQUIRE(lc.lin.size() == 10);

  // semantics: margin >= 0 exactly when E[x1] >= -1
  ChaosState X(2, 5);
  X.block(0) = Eigen::Vector2d(-0.5, 7.0);
  X.block(2) = Eigen::Vector2d(4.0, 4.0);  // higher blocks must not matter
  CHECK(lc.margin(X.coeffs) == doctest::Approx(0.5).epsilon(1e-14));
  X.block(0) = Eigen::Vector2d(-1.5, 0.0);
  CHECK(lc.margin(X.coeffs) == doctest::Approx(-0.5).epsilon(1e-14));
  X.block(0) = Eigen::Vector2d(-1.0, 0.0);
  CHECK(std::abs(lc.margin(X.coeffs)) <= 1e-14);
}

TEST_CASE("vacuous constraints are rejected") {
  BasisSet b({Marginal::uniform()}, 2);
  ProductTensors t = build_tensors(b);
  ConstraintSpec c;
  c.kind = ConstraintKind::expectation_quadratic_state;
  // H and G both empty
  CHECK_THROWS_AS(lift_expectation_constraint(c, t, 1, true), ConfigError);
}

TEST_CASE("quadratic expectation constraint lifts to the weighted quadratic") {
  BasisSet b({Marginal::uniform()}, 1);
  ProductTensors t = build_tensors(b);
  ConstraintSpec c;
  c.kind = ConstraintKind::expectation_quadratic_state;
  c.H = Eigen::MatrixXd::Identity(1, 1);
  c.bound = 0.8;
  c.direction = ConstraintDirection::le;
  LiftedConstraint lc = lift_expectation_constraint(c, t, 1, true);
  REQUIRE(lc.has_quad());
  REQUIRE(lc.quad.rows() == 2);
  CHECK(std::abs(lc.quad(0, 0) - 1.0) <= 1e-13);
  CHECK(std::abs(lc.quad(1, 1) - 1.0 / 3.0) <= 1e-13);
  CHECK(std::abs(lc.quad(0, 1)) <= 1e-15);

  Eigen::Vector2d v(0.5, 0.9);
  const double expect = 0.8 - (0.25 + 0.81 / 3.0);
  CHECK(lc.margin(v) == doctest::Approx(expect).epsilon(1e-13));
}

TEST_CASE("indefinite quadratic terms are rejected only when nonconvex") {
  BasisSet b({Marginal::uniform()}, 1);
  ProductTensors t = build_tensors(b);
  ConstraintSpec c;
  c.kind = ConstraintKind::expectation_quadratic_state;
  c.H = -Eigen::MatrixXd::Identity(1, 1);
  c.bound = -0.5;
  c.direction = ConstraintDirection::le;
  CHECK_THROWS_AS(lift_expectation_constraint(c, t, 1, true), ConvexityError);
  // with direction >= the negation is PSD, hence convex
  c.direction = ConstraintDirection::ge;
  CHECK_NOTHROW(lift_expectation_constraint(c, t, 1, true));
}

TEST_CASE("control expectation constraints target the control vector") {
  BasisSet b({Marginal::uniform()}, 2);
  ProductTensors t = build_tensors(b);
  ConstraintSpec c;
  c.kind = ConstraintKind::expectation_quadratic_control;
  c.H = Eigen::MatrixXd::Identity(1, 1);
  c.bound = 2.0;
  LiftedConstraint lc = lift_expectation_constraint(c, t, 1, true);
  CHECK(lc.target == LiftedConstraint::Target::control);
  CHECK(lc.quad.rows() == 3);
}

TEST_CASE("variance-trace constraint structure") {
  BasisSet b2({Marginal::uniform()}, 2);
  ProductTensors t2 = build_tensors(b2);
  LiftedConstraint lc = lift_variance_constraint(0.5, t2, 1, {});
  REQUIRE(lc.quad.rows() == 3);
  CHECK(std::abs(lc.quad(0, 0)) <= 1e-15);
  CHECK(std::abs(lc.quad(1, 1) - 1.0 / 3.0) <= 1e-13);
  CHECK(std::abs(lc.quad(2, 2) - 1.0 / 5.0) <= 1e-13);

  Eigen::Vector3d det(3.0, 0.0, 0.0);
  CHECK(lc.margin(det) == doctest::Approx(0.5).epsilon(1e-14));
  Eigen::Vector3d spread(0.0, 1.0, 1.0);
  CHECK(lc.margin(spread) == doctest::Approx(0.5 - 8.0 / 15.0).epsilon(1e-12));
}

TEST_CASE("variance quadratic equals the covariance trace") {
  BasisSet b({Marginal::uniform()}, 4);
  ProductTensors t = build_tensors(b);
  LiftedConstraint lc = lift_variance_constraint(0.0, t, 2, {});
  REQUIRE(lc.quad.rows() == 10);

  // exactly n zero eigenvalues
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(lc.quad);
  int zeros = 0;
  for (int i = 0; i < 10; ++i)
    if (std::abs(es.eigenvalues()(i)) < 1e-12) ++zeros;
  CHECK(zeros == 2);
  CHECK(es.eigenvalues().minCoeff() >= -1e-12);

  CounterRng rng(9);
  ChaosState X(2, 5);
  for (int trial = 0; trial < 20; ++trial) {
    for (int i = 0; i < 10; ++i) X.coeffs(i) = 2.0 * rng.next_uniform01() - 1.0;
    const double quad_form = X.coeffs.dot(lc.quad * X.coeffs);
    const double tr = covariance(X, t).trace();
    CHECK(std::abs(quad_form - tr) <= 1e-12 * std::max(1.0, tr));
  }
}

TEST_CASE("terminal synthesis on scalar systems matches the fixed-point oracle") {
  UncertainSystem s;
  s.n = 1;
  s.m = 1;
  s.d = 1;
  s.marginals = {Marginal::uniform()};
  s.B_terms = {{MultiIndex{{0}}, Eigen::MatrixXd::Constant(1, 1, 1.0)}};

  s.A_terms = {{MultiIndex{{0}}, Eigen::MatrixXd::Constant(1, 1, 0.0)}};
  ChaosSystem dead = make_chaos_system(s, 0);
  Eigen::MatrixXd Q1 = Eigen::MatrixXd::Identity(1, 1);
  TerminalController tc = synth_terminal(dead, Q1, Q1);
  CHECK(tc.P(0, 0) == doctest::Approx(1.0).epsilon(1e-12));

  s.A_terms = {{MultiIndex{{0}}, Eigen::MatrixXd::Constant(1, 1, 1.0)}};
  ChaosSystem unit = make_chaos_system(s, 0);
  TerminalController tg = synth_terminal(unit, Q1, Q1);
  const double golden = (1.0 + std::sqrt(5.0)) / 2.0;
  CHECK(tg.P(0, 0) == doctest::Approx(golden).epsilon(1e-10));
  CHECK(tg.P(0, 0) == doctest::Approx(oracles::scalar_dare(1.0, 1.0, 1.0, 1.0)).epsilon(1e-10));
}

TEST_CASE("terminal synthesis on the lifted benchmark plant") {
  ChaosSystem sys = make_chaos_system(benchmark_system(), 4);
  BasisSet b({Marginal::uniform()}, 4);
  ProductTensors t = build_tensors(b);
  auto [Qbar, Rbar] = lift_cost(benchmark_cost(), t);
  TerminalController tc = synth_terminal(sys, Qbar, Rbar);

  REQUIRE(tc.P.rows() == 10);
  CHECK((tc.P - tc.P.transpose()).cwiseAbs().maxCoeff() <= 1e-10);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(tc.P);
  CHECK(es.eigenvalues().minCoeff() >= -1e-8);
  CHECK(tc.spectral_radius < 1.0);
  CHECK(tc.dare.residual <= 1e-9 * std::max(1.0, tc.P.norm()));

  REQUIRE(tc.K_f.rows() == 5);
  REQUIRE(tc.K_f.cols() == 10);
  CHECK((tc.gain_mean - tc.K_f.block(0, 0, 1, 2)).cwiseAbs().maxCoeff() <= 1e-14);
  Eigen::MatrixXd devsum = Eigen::MatrixXd::Zero(1, 2);
  for (int i = 1; i < 5; ++i) devsum += tc.K_f.block(i, 2 * i, 1, 2);
  CHECK((tc.gain_dev - devsum / 4.0).cwiseAbs().maxCoeff() <= 1e-12);

  // closed-loop spectral radius computed from scratch
  Eigen::MatrixXd Acl = sys.Abold + sys.Bbold * tc.K_f;
  Eigen::EigenSolver<Eigen::MatrixXd> ces(Acl);
  const double rho = ces.eigenvalues().cwiseAbs().maxCoeff();
  CHECK(std::abs(rho - tc.spectral_radius) <= 1e-10);
  CHECK(rho < 1.0);
}

TEST_CASE("terminal cost certifies the one-step decrease identity") {
  ChaosSystem sys = make_chaos_system(benchmark_system(), 4);
  BasisSet b({Marginal::uniform()}, 4);
  ProductTensors t = build_tensors(b);
  auto [Qbar, Rbar] = lift_cost(benchmark_cost(), t);
  TerminalController tc = synth_terminal(sys, Qbar, Rbar);

  Eigen::MatrixXd Acl = sys.Abold + sys.Bbold * tc.K_f;
  Eigen::MatrixXd Weight = Qbar + tc.K_f.transpose() * Rbar * tc.K_f;
  CounterRng rng(31);
  for (int trial = 0; trial < 100; ++trial) {
    Eigen::VectorXd X(10);
    for (int i = 0; i < 10; ++i) X(i) = 2.0 * rng.next_uniform01() - 1.0;
    const Eigen::VectorXd Xn = Acl * X;
    const double decrease = X.dot(tc.P * X) - Xn.dot(tc.P * Xn);
    const double stage = X.dot(Weight * X);
    CHECK(std::abs(decrease - stage) <= 1e-8 * std::max(1.0, std::abs(stage)));
  }
}

TEST_CASE("lifted quadratic cost equals the sampled expectation") {
  ChaosSystem sys = make_chaos_system(benchmark_system(), 4);
  BasisSet b({Marginal::uniform()}, 4);
  ProductTensors t = build_tensors(b);
  auto [Qbar, Rbar] = lift_cost(benchmark_cost(), t);

  CounterRng rng(77);
  ChaosState X(2, 5);
  for (int i = 0; i < 10; ++i) X.coeffs(i) = 2.0 * rng.next_uniform01() - 1.0;
  const double lifted = X.coeffs.dot(Qbar * X.coeffs);

  SampleSet samples = sample_delta({Marginal::uniform()}, 100000, 99);
  const Eigen::Matrix2d Q = Eigen::Vector2d(2.0, 5.0).asDiagonal();
  double sum = 0.0, sumsq = 0.0;
  for (int j = 0; j < samples.count(); ++j) {
    const Eigen::VectorXd x = eval_state(X, b, samples.samples.row(j).transpose());
    const double v = x.dot(Q * x);
    sum += v;
    sumsq += v * v;
  }
  const double M = samples.count();
  const double mc = sum / M;
  const double se = std::sqrt((sumsq / M - mc * mc) / M);
  CHECK(std::abs(lifted - mc) <= 3.0 * se);
}

TEST_CASE("problem building and layout per mode") {
  RHCProblem pv = benchmark_problem(ControlMode::mean_variable_gain);
  CHECK(pv.nx() == 10);
  CHECK(pv.nu_full() == 5);
  CHECK(pv.nu_step() == 1);
  CHECK(pv.horizon() == 10);
  CHECK(pv.constraints.size() == 1);

  RHCProblem pf = benchmark_problem(ControlMode::full_chaos);
  CHECK(pf.nu_step() == 5);

  // fixed-gain mode carries the structured terminal deviation gain
  RHCProblem pg = benchmark_problem(ControlMode::mean_fixed_gain);
  CHECK(pg.fixed_gain.rows() == 1);
  CHECK(pg.fixed_gain.cols() == 2);
}

TEST_CASE("infeasible initial states are rejected at build time") {
  ChaosSystem sys = make_chaos_system(benchmark_system(), 4);
  ChaosState bad(2, 5);
  bad.block(0) = Eigen::Vector2d(-2.0, 0.0);  // E[x1] = -2 < -1
  CHECK_THROWS_AS(build_problem(sys, benchmark_cost(), {mean_x1_floor()},
                                ControlMode::mean_fixed_gain, bad),
                  InfeasibleInitialError);

  ChaosState edge(2, 5);
  edge.block(0) = Eigen::Vector2d(-1.0, 0.0);  // exactly on the bound
  CHECK_NOTHROW(build_problem(sys, benchmark_cost(), {mean_x1_floor()},
                              ControlMode::mean_fixed_gain, edge));
}

TEST_CASE("check_initial_feasible honors its tolerance") {
  RHCProblem p = benchmark_problem(ControlMode::mean_fixed_gain);
  ChaosState near(2, 5);
  near.block(0) = Eigen::Vector2d(-1.0 - 1e-10, 0.0);
  RHCProblem pn = p;
  pn.initial = near;
  CHECK_NOTHROW(check_initial_feasible(pn, 1e-8));
  ChaosState beyond(2, 5);
  beyond.block(0) = Eigen::Vector2d(-1.0 - 1e-6, 0.0);
  pn.initial = beyond;
  CHECK_THROWS_AS(check_initial_feasible(pn, 1e-8), InfeasibleInitialError);
}

TEST_CASE("decision layout offsets") {
  RHCProblem p = benchmark_problem(ControlMode::full_chaos);
  BuiltQP built = build_qp_full(p);
  const QPLayout& L = built.layout;
  CHECK(L.nx == 10);
  CHECK(L.nu == 5);
  CHECK(L.N == 10);
  CHECK(L.num_vars() == 150);
  CHECK(L.x_offset(1) == 0);
  CHECK(L.x_offset(10) == 90);
  CHECK(L.u_offset(0) == 100);
  CHECK(L.u_offset(9) == 145);
  CHECK(built.qp.num_vars() == 150);
}

TEST_CASE("stacked dynamics and cost agree with an explicit rollout (full mode)") {
  RHCProblem p = benchmark_problem(ControlMode::full_chaos);
  BuiltQP built = build_qp_full(p);
  built.qp.validate();

  CounterRng rng(41);
  const int N = p.horizon();
  std::vector<Eigen::VectorXd> U(N), X(N + 1);
  X[0] = p.initial.coeffs;
  for (int k = 0; k < N; ++k) {
    U[k] = Eigen::VectorXd(5);
    for (int i = 0; i < 5; ++i) U[k](i) = 0.1 * (2.0 * rng.next_uniform01() - 1.0);
    X[k + 1] = p.system.Abold * X[k] + p.system.Bbold * U[k];
  }
  Eigen::VectorXd z(built.layout.num_vars());
  for (int k = 1; k <= N; ++k) z.segment(built.layout.x_offset(k), 10) = X[k];
  for (int k = 0; k < N; ++k) z.segment(built.layout.u_offset(k), 5) = U[k];

  // dynamics rows are satisfied by the exact rollout
  CHECK((built.qp.A_eq * z - built.qp.b_eq).cwiseAbs().maxCoeff() <= 1e-10);

  // QP objective (plus the stored constant) equals the horizon cost
  const double qp_obj = built.qp.objective(z) + built.layout.constant;
  const double direct = horizon_objective(p, X, U);
  CHECK(std::abs(qp_obj - direct) <= 1e-9 * std::max(1.0, std::abs(direct)));

  // extraction round-trips the packed variables
  auto Xs = extract_states(p, built.layout, z);
  auto Us = extract_controls(built.layout, z);
  REQUIRE(Xs.size() == static_cast<std::size_t>(N + 1));
  for (int k = 0; k <= N; ++k) CHECK((Xs[k] - X[k]).cwiseAbs().maxCoeff() == 0.0);
  for (int k = 0; k < N; ++k) CHECK((Us[k] - U[k]).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("stacked dynamics and cost agree with an explicit rollout (mean mode)") {
  RHCProblem p = benchmark_problem(ControlMode::mean_fixed_gain);
  std::vector<Eigen::MatrixXd> gains(p.horizon(), p.fixed_gain);
  BuiltQP built = build_qp_fixed_gain(p, gains);
  built.qp.validate();

  CounterRng rng(43);
  const int N = p.horizon();
  std::vector<Eigen::VectorXd> ubar(N), X(N + 1), U(N);
  X[0] = p.initial.coeffs;
  for (int k = 0; k < N; ++k) {
    ubar[k] = Eigen::VectorXd(1);
    ubar[k](0) = 0.2 * (2.0 * rng.next_uniform01() - 1.0);
    U[k] = compose_control(p.system, ubar[k], gains[k], X[k]);
    X[k + 1] = p.system.Abold * X[k] + p.system.Bbold * U[k];
  }
  Eigen::VectorXd z(built.layout.num_vars());
  for (int k = 1; k <= N; ++k) z.segment(built.layout.x_offset(k), 10) = X[k];
  for (int k = 0; k < N; ++k) z.segment(built.layout.u_offset(k), 1) = ubar[k];

  CHECK((built.qp.A_eq * z - built.qp.b_eq).cwiseAbs().maxCoeff() <= 1e-10);
  const double qp_obj = built.qp.objective(z) + built.layout.constant;
  const double direct = horizon_objective(p, X, U);
  CHECK(std::abs(qp_obj - direct) <= 1e-9 * std::max(1.0, std::abs(direct)));
}

TEST_CASE("compose_control applies the mean input and deviation feedback") {
  ChaosSystem sys = make_chaos_system(benchmark_system(), 4);
  CounterRng rng(47);
  Eigen::VectorXd ubar(1);
  ubar << 0.37;
  Eigen::MatrixXd K(1, 2);
  K << 0.5, -0.25;
  Eigen::VectorXd X(10);
  for (int i = 0; i < 10; ++i) X(i) = 2.0 * rng.next_uniform01() - 1.0;
  Eigen::VectorXd U = compose_control(sys, ubar, K, X);
  REQUIRE(U.size() == 5);
  CHECK(U(0) == doctest::Approx(0.37).epsilon(1e-15));
  for (int i = 1; i < 5; ++i) {
    const double expect = K(0, 0) * X(2 * i) + K(0, 1) * X(2 * i + 1);
    CHECK(U(i) == doctest::Approx(expect).epsilon(1e-13));
  }
}

TEST_CASE("constraint instances appear only at their listed steps") {
  ConstraintSpec var;
  var.kind = ConstraintKind::variance_trace_state;
  var.bound = 10.0;
  var.steps = {10};  // terminal only
  RHCProblem p = benchmark_problem(ControlMode::full_chaos, 10, {var});
  BuiltQP built = build_qp_full(p);
  REQUIRE(built.instances.size() == 1);
  CHECK(built.instances[0].step == 10);
  CHECK(built.instances[0].quad_index >= 0);
  CHECK(built.instances[0].lin_row == -1);
  CHECK(built.qp.quad.size() == 1);
}

TEST_CASE("margin records re-evaluate the lifted constraints exactly") {
  RHCProblem p = benchmark_problem(ControlMode::full_chaos);
  CounterRng rng(53);
  const int N = p.horizon();
  std::vector<Eigen::VectorXd> U(N), X(N + 1);
  X[0] = p.initial.coeffs;
  for (int k = 0; k < N; ++k) {
    U[k] = Eigen::VectorXd(5);
    for (int i = 0; i < 5; ++i) U[k](i) = 0.1 * (2.0 * rng.next_uniform01() - 1.0);
    X[k + 1] = p.system.Abold * X[k] + p.system.Bbold * U[k];
  }
  auto records = constraint_margins(p, X, U);
  REQUIRE_FALSE(records.empty());
  for (const MarginRecord& r : records) {
    const LiftedConstraint& c = p.constraints[r.constraint];
    const Eigen::VectorXd& v =
        c.target == LiftedConstraint::Target::state ? X[r.step] : U[r.step];
    CHECK(std::abs(r.margin - c.margin(v)) <= 1e-12 * std::max(1.0, std::abs(r.margin)));
  }
}
