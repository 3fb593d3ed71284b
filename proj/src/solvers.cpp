#include "pcrhc/solvers.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>

#include "pcrhc/rng.hpp"
#include "pcrhc/transcription.hpp"

namespace pcrhc {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double inf_norm(const Eigen::VectorXd& v) {
  return v.size() == 0 ? 0.0 : v.lpNorm<Eigen::Infinity>();
}

bool all_finite(const Eigen::VectorXd& v) { return v.allFinite(); }

}  // namespace

std::string to_string(SolveStatus s) {
  switch (s) {
    case SolveStatus::optimal: return "optimal";
    case SolveStatus::infeasible: return "infeasible";
    case SolveStatus::max_iterations: return "max-iterations";
    case SolveStatus::numeric_failure: return "numeric-failure";
  }
  return "unknown";
}

void QPData::validate() const {
  const int n = num_vars();
  if (H.rows() != n || H.cols() != n) throw ConfigError("QPData: Hessian must be square");
  if (f.size() != n) throw ConfigError("QPData: linear term size mismatch");
  const double hscale = std::max(1.0, H.size() ? H.cwiseAbs().maxCoeff() : 0.0);
  if ((H - H.transpose()).cwiseAbs().maxCoeff() > 1e-10 * hscale)
    throw ConfigError("QPData: Hessian not symmetric");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (H + H.transpose()),
                                                    Eigen::EigenvaluesOnly);
  if (es.eigenvalues().minCoeff() < -1e-10 * hscale)
    throw ConvexityError("QPData: Hessian not positive semidefinite");
  if (A_eq.rows() != b_eq.size()) throw ConfigError("QPData: equality rhs mismatch");
  if (A_eq.rows() > 0 && A_eq.cols() != n) throw ConfigError("QPData: equality column mismatch");
  if (A_in.rows() != b_in.size()) throw ConfigError("QPData: inequality rhs mismatch");
  if (A_in.rows() > 0 && A_in.cols() != n) throw ConfigError("QPData: inequality column mismatch");
  for (const auto& qc : quad) {
    if (qc.Q.rows() != n || qc.Q.cols() != n || qc.g.size() != n)
      throw ConfigError("QPData: quadratic constraint dimension mismatch");
    const double qscale = std::max(1.0, qc.Q.cwiseAbs().maxCoeff());
    if ((qc.Q - qc.Q.transpose()).cwiseAbs().maxCoeff() > 1e-10 * qscale)
      throw ConfigError("QPData: quadratic constraint matrix not symmetric");
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> qes(0.5 * (qc.Q + qc.Q.transpose()),
                                                       Eigen::EigenvaluesOnly);
    if (qes.eigenvalues().minCoeff() < -1e-10 * qscale)
      throw ConvexityError("QPData: quadratic constraint matrix not positive semidefinite");
  }
}

double QPData::objective(const Eigen::VectorXd& x) const {
  return 0.5 * x.dot(H * x) + f.dot(x);
}

double QPData::violation(const Eigen::VectorXd& x) const {
  double v = 0.0;
  if (A_eq.rows() > 0) v = std::max(v, inf_norm(A_eq * x - b_eq));
  if (A_in.rows() > 0) v = std::max(v, std::max(0.0, (A_in * x - b_in).maxCoeff()));
  for (const auto& qc : quad)
    v = std::max(v, x.dot(qc.Q * x) + qc.g.dot(x) - qc.bound);
  return std::max(v, 0.0);
}

// ---------------------------------------------------------------------------
// solve_convex
// ---------------------------------------------------------------------------

namespace {

struct ConeBlock {
  enum class Type { zero, nonneg, soc };
  Type type;
  int start;
  int size;
};

// Constraint system G x + h in K, K a product of {0}, R+, and second-order
// cone blocks. Quadratic rows x'Qx + g'x <= b become the cone vector
// [(1 + b - g'x)/2; L'x; (1 - b + g'x)/2] with Q = L L'.
struct ConeData {
  Eigen::MatrixXd G;
  Eigen::VectorXd h;
  std::vector<ConeBlock> blocks;
  int n_eq = 0;
  int n_in = 0;
  std::vector<int> soc_start;  // per quad constraint
  std::vector<int> soc_size;
};

ConeData build_cones(const QPData& d) {
  const int n = d.num_vars();
  ConeData c;
  c.n_eq = static_cast<int>(d.A_eq.rows());
  c.n_in = static_cast<int>(d.A_in.rows());
  std::vector<Eigen::MatrixXd> L;  // per quad: n x rank factor
  int soc_rows = 0;
  for (const auto& qc : d.quad) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (qc.Q + qc.Q.transpose()));
    const Eigen::VectorXd ev = es.eigenvalues();
    const double lmax = std::max(ev.size() ? ev.maxCoeff() : 0.0, 0.0);
    const double cut = 1e-12 * std::max(1.0, lmax);
    int rank = 0;
    for (int i = 0; i < ev.size(); ++i)
      if (ev(i) > cut) ++rank;
    Eigen::MatrixXd Lj(n, std::max(rank, 1));
    Lj.setZero();
    int col = 0;
    for (int i = 0; i < ev.size(); ++i)
      if (ev(i) > cut) Lj.col(col++) = es.eigenvectors().col(i) * std::sqrt(ev(i));
    L.push_back(Lj);
    soc_rows += static_cast<int>(Lj.cols()) + 2;
  }
  const int rows = c.n_eq + c.n_in + soc_rows;
  c.G.setZero(rows, n);
  c.h.setZero(rows);
  int at = 0;
  if (c.n_eq > 0) {
    c.G.topRows(c.n_eq) = d.A_eq;
    c.h.head(c.n_eq) = -d.b_eq;
    c.blocks.push_back({ConeBlock::Type::zero, 0, c.n_eq});
    at = c.n_eq;
  }
  if (c.n_in > 0) {
    c.G.middleRows(at, c.n_in) = -d.A_in;
    c.h.segment(at, c.n_in) = d.b_in;
    c.blocks.push_back({ConeBlock::Type::nonneg, at, c.n_in});
    at += c.n_in;
  }
  for (std::size_t j = 0; j < d.quad.size(); ++j) {
    const auto& qc = d.quad[j];
    const int r = static_cast<int>(L[j].cols());
    const int size = r + 2;
    c.soc_start.push_back(at);
    c.soc_size.push_back(size);
    c.G.row(at) = -0.5 * qc.g.transpose();
    c.h(at) = 0.5 * (1.0 + qc.bound);
    c.G.middleRows(at + 1, r) = L[j].transpose();
    c.G.row(at + 1 + r) = 0.5 * qc.g.transpose();
    c.h(at + 1 + r) = 0.5 * (1.0 - qc.bound);
    c.blocks.push_back({ConeBlock::Type::soc, at, size});
    at += size;
  }
  return c;
}

void project_cone(const ConeData& c, Eigen::VectorXd& v) {
  v += c.h;
  for (const auto& b : c.blocks) {
    switch (b.type) {
      case ConeBlock::Type::zero:
        v.segment(b.start, b.size).setZero();
        break;
      case ConeBlock::Type::nonneg:
        v.segment(b.start, b.size) = v.segment(b.start, b.size).cwiseMax(0.0);
        break;
      case ConeBlock::Type::soc: {
        const double t = v(b.start);
        const double nu = v.segment(b.start + 1, b.size - 1).norm();
        if (nu <= t) break;
        if (nu <= -t) {
          v.segment(b.start, b.size).setZero();
        } else {
          const double s = 0.5 * (t + nu);
          v(b.start) = s;
          v.segment(b.start + 1, b.size - 1) *= s / nu;
        }
        break;
      }
    }
  }
  v -= c.h;
}

// Farkas-type check: G'w ~ 0, w in the polar of K, and the shifted support
// -h'w strictly negative. Scale-relative tolerances; heuristic by design.
bool is_infeasibility_certificate(const ConeData& c, const Eigen::VectorXd& w, double eps) {
  const double nw = inf_norm(w);
  if (nw < 1e-13 || !all_finite(w)) return false;
  if ((c.G.transpose() * w).lpNorm<Eigen::Infinity>() > eps * nw) return false;
  for (const auto& b : c.blocks) {
    if (b.type == ConeBlock::Type::nonneg) {
      if (w.segment(b.start, b.size).maxCoeff() > eps * nw) return false;
    } else if (b.type == ConeBlock::Type::soc) {
      const double t = w(b.start);
      const double nu = w.segment(b.start + 1, b.size - 1).norm();
      if (nu > -t + eps * nw) return false;
    }
  }
  return -c.h.dot(w) < -eps * nw;
}

struct PolishResult {
  bool ok = false;
  Eigen::VectorXd x;
  Eigen::VectorXd nu;                // equality multipliers
  Eigen::VectorXd lambda;            // full-length inequality multipliers
  std::vector<double> mu;            // per quad constraint
  double stationarity = kInf;
  double violation = kInf;
};

// Active-set refinement: Newton on the equality-constrained KKT system of the
// detected active set, with drop/add rounds for sign and feasibility repair.
PolishResult polish_solution(const QPData& d, const Eigen::VectorXd& x0,
                             const Eigen::VectorXd& lambda_hint,
                             const std::vector<double>& mu_hint) {
  const int n = d.num_vars();
  const int n_eq = static_cast<int>(d.A_eq.rows());
  const int n_in = static_cast<int>(d.A_in.rows());
  const int n_q = static_cast<int>(d.quad.size());
  PolishResult out;

  std::vector<char> act_lin(n_in, 0), act_quad(n_q, 0);
  for (int i = 0; i < n_in; ++i) {
    const double slack = d.b_in(i) - d.A_in.row(i).dot(x0);
    if (slack <= 1e-6 * (1.0 + std::abs(d.b_in(i))) ||
        (lambda_hint.size() == n_in && lambda_hint(i) > 1e-8))
      act_lin[i] = 1;
  }
  for (int j = 0; j < n_q; ++j) {
    const double slack = d.quad[j].bound - (x0.dot(d.quad[j].Q * x0) + d.quad[j].g.dot(x0));
    if (slack <= 1e-6 * (1.0 + std::abs(d.quad[j].bound)) ||
        (static_cast<int>(mu_hint.size()) == n_q && mu_hint[j] > 1e-8))
      act_quad[j] = 1;
  }

  Eigen::VectorXd x = x0;
  Eigen::VectorXd nu = Eigen::VectorXd::Zero(n_eq);
  std::vector<double> lam(n_in, 0.0), mu(n_q, 0.0);

  const double fscale = std::max({1.0, inf_norm(d.f), d.H.size() ? d.H.cwiseAbs().maxCoeff() : 0.0});
  for (int round = 0; round < 20; ++round) {
    std::vector<int> al, aq;
    for (int i = 0; i < n_in; ++i)
      if (act_lin[i]) al.push_back(i);
    for (int j = 0; j < n_q; ++j)
      if (act_quad[j]) aq.push_back(j);
    const int na = static_cast<int>(al.size());
    const int nq = static_cast<int>(aq.size());
    const int dim = n + n_eq + na + nq;

    // Newton iterations on the active KKT system.
    double last_fn = kInf;
    for (int it = 0; it < 30; ++it) {
      Eigen::VectorXd F(dim);
      Eigen::VectorXd stat = d.H * x + d.f;
      if (n_eq > 0) stat += d.A_eq.transpose() * nu;
      for (int a = 0; a < na; ++a) stat += lam[al[a]] * d.A_in.row(al[a]).transpose();
      for (int q = 0; q < nq; ++q)
        stat += mu[aq[q]] * (2.0 * d.quad[aq[q]].Q * x + d.quad[aq[q]].g);
      F.head(n) = stat;
      if (n_eq > 0) F.segment(n, n_eq) = d.A_eq * x - d.b_eq;
      for (int a = 0; a < na; ++a)
        F(n + n_eq + a) = d.A_in.row(al[a]).dot(x) - d.b_in(al[a]);
      for (int q = 0; q < nq; ++q)
        F(n + n_eq + na + q) =
            x.dot(d.quad[aq[q]].Q * x) + d.quad[aq[q]].g.dot(x) - d.quad[aq[q]].bound;
      const double fn = inf_norm(F);
      if (fn <= 1e-13 * fscale) break;
      if (it > 0 && fn > 0.9 * last_fn && fn <= 1e-9 * fscale) break;
      if (it > 2 && fn > 0.99 * last_fn) break;  // stagnated
      last_fn = fn;

      Eigen::MatrixXd J = Eigen::MatrixXd::Zero(dim, dim);
      Eigen::MatrixXd Hk = d.H;
      for (int q = 0; q < nq; ++q) Hk += 2.0 * mu[aq[q]] * d.quad[aq[q]].Q;
      J.topLeftCorner(n, n) = Hk;
      if (n_eq > 0) {
        J.block(0, n, n, n_eq) = d.A_eq.transpose();
        J.block(n, 0, n_eq, n) = d.A_eq;
      }
      for (int a = 0; a < na; ++a) {
        J.block(0, n + n_eq + a, n, 1) = d.A_in.row(al[a]).transpose();
        J.block(n + n_eq + a, 0, 1, n) = d.A_in.row(al[a]);
      }
      for (int q = 0; q < nq; ++q) {
        const Eigen::VectorXd gq = 2.0 * d.quad[aq[q]].Q * x + d.quad[aq[q]].g;
        J.block(0, n + n_eq + na + q, n, 1) = gq;
        J.block(n + n_eq + na + q, 0, 1, n) = gq.transpose();
      }
      Eigen::VectorXd delta = J.completeOrthogonalDecomposition().solve(-F);
      if (!all_finite(delta)) return out;
      x += delta.head(n);
      if (n_eq > 0) nu += delta.segment(n, n_eq);
      for (int a = 0; a < na; ++a) lam[al[a]] += delta(n + n_eq + a);
      for (int q = 0; q < nq; ++q) mu[aq[q]] += delta(n + n_eq + na + q);
    }

    // Sign repair: drop the most negative active multiplier.
    int drop_lin = -1, drop_quad = -1;
    double worst = -1e-9;
    for (int a = 0; a < na; ++a)
      if (lam[al[a]] < worst) { worst = lam[al[a]]; drop_lin = al[a]; drop_quad = -1; }
    for (int q = 0; q < nq; ++q)
      if (mu[aq[q]] < worst) { worst = mu[aq[q]]; drop_quad = aq[q]; drop_lin = -1; }
    if (drop_lin >= 0) { act_lin[drop_lin] = 0; lam[drop_lin] = 0.0; continue; }
    if (drop_quad >= 0) { act_quad[drop_quad] = 0; mu[drop_quad] = 0.0; continue; }

    // Feasibility repair: activate the most violated inactive constraint.
    int add_lin = -1, add_quad = -1;
    double viol = 1e-9;
    for (int i = 0; i < n_in; ++i) {
      if (act_lin[i]) continue;
      const double v = d.A_in.row(i).dot(x) - d.b_in(i);
      if (v > viol * (1.0 + std::abs(d.b_in(i)))) { viol = v; add_lin = i; add_quad = -1; }
    }
    for (int j = 0; j < n_q; ++j) {
      if (act_quad[j]) continue;
      const double v = x.dot(d.quad[j].Q * x) + d.quad[j].g.dot(x) - d.quad[j].bound;
      if (v > viol * (1.0 + std::abs(d.quad[j].bound))) { viol = v; add_quad = j; add_lin = -1; }
    }
    if (add_lin >= 0) { act_lin[add_lin] = 1; continue; }
    if (add_quad >= 0) { act_quad[add_quad] = 1; continue; }
    break;
  }

  if (!all_finite(x) || !all_finite(nu)) return out;
  Eigen::VectorXd stat = d.H * x + d.f;
  if (n_eq > 0) stat += d.A_eq.transpose() * nu;
  out.lambda = Eigen::VectorXd::Zero(n_in);
  for (int i = 0; i < n_in; ++i)
    if (act_lin[i]) out.lambda(i) = std::max(lam[i], 0.0);
  out.mu.assign(n_q, 0.0);
  for (int j = 0; j < n_q; ++j)
    if (act_quad[j]) out.mu[j] = std::max(mu[j], 0.0);
  if (n_in > 0) stat += d.A_in.transpose() * out.lambda;
  for (int j = 0; j < n_q; ++j)
    stat += out.mu[j] * (2.0 * d.quad[j].Q * x + d.quad[j].g);
  out.x = x;
  out.nu = nu;
  out.stationarity = inf_norm(stat);
  out.violation = d.violation(x);
  out.ok = true;
  return out;
}

}  // namespace

SolveReport solve_convex(const QPData& data, const ConvexSettings& settings,
                         const Eigen::VectorXd* warm_start) {
  const int n = data.num_vars();
  SolveReport rep;
  rep.x = Eigen::VectorXd::Zero(n);
  rep.y_eq = Eigen::VectorXd::Zero(data.A_eq.rows());
  rep.y_in = Eigen::VectorXd::Zero(data.A_in.rows());
  rep.y_quad.assign(data.quad.size(), 0.0);

  // Fold rank-zero quadratic rows into plain linear rows. quad_as_lin maps
  // an original quad index to its appended linear row (-1 if kept);
  // quad_origin maps the reduced quad list back to original positions.
  QPData d = data;
  std::vector<int> quad_as_lin(data.quad.size(), -1);
  std::vector<int> quad_origin;
  {
    std::vector<QuadConstraint> kept;
    for (std::size_t j = 0; j < d.quad.size(); ++j) {
      const double qn = d.quad[j].Q.size() ? d.quad[j].Q.cwiseAbs().maxCoeff() : 0.0;
      if (qn <= 1e-14) {
        const int row = static_cast<int>(d.A_in.rows());
        d.A_in.conservativeResize(row + 1, n);
        d.A_in.row(row) = d.quad[j].g.transpose();
        d.b_in.conservativeResize(row + 1);
        d.b_in(row) = d.quad[j].bound;
        quad_as_lin[j] = row;
      } else {
        kept.push_back(d.quad[j]);
        quad_origin.push_back(static_cast<int>(j));
      }
    }
    d.quad = kept;
  }

  auto finish = [&](SolveStatus st, const Eigen::VectorXd& x, int iters,
                    double rprim, double rdual) {
    rep.status = st;
    rep.x = x;
    rep.iterations = iters;
    rep.objective = data.objective(x);
    rep.residuals.primal = rprim;
    rep.residuals.dual = rdual;
    rep.residuals.constraint_violation = data.violation(x);
  };

  // Direct KKT fast path: no inequality-type rows at all.
  if (d.A_in.rows() == 0 && d.quad.empty()) {
    const int ne = static_cast<int>(d.A_eq.rows());
    Eigen::MatrixXd K = Eigen::MatrixXd::Zero(n + ne, n + ne);
    K.topLeftCorner(n, n) = d.H;
    if (ne > 0) {
      K.topRightCorner(n, ne) = d.A_eq.transpose();
      K.bottomLeftCorner(ne, n) = d.A_eq;
    }
    Eigen::VectorXd rhs(n + ne);
    rhs.head(n) = -d.f;
    if (ne > 0) rhs.tail(ne) = d.b_eq;
    Eigen::VectorXd sol = K.completeOrthogonalDecomposition().solve(rhs);
    if (all_finite(sol)) {
      const Eigen::VectorXd x = sol.head(n);
      const Eigen::VectorXd nu = ne > 0 ? Eigen::VectorXd(sol.tail(ne)) : Eigen::VectorXd();
      Eigen::VectorXd stat = d.H * x + d.f;
      if (ne > 0) stat += d.A_eq.transpose() * nu;
      const double rdual = inf_norm(stat);
      const double rprim = ne > 0 ? inf_norm(d.A_eq * x - d.b_eq) : 0.0;
      if (rprim <= settings.eps_primal && rdual <= settings.eps_dual) {
        finish(SolveStatus::optimal, x, 1, rprim, rdual);
        rep.y_eq = nu;
        rep.notes.push_back("direct KKT solve");
        return rep;
      }
      // Unbounded below shows up as a consistent-normal-equations solution
      // with a large stationarity residual; fall through to ADMM which will
      // certify or max out.
    }
  }

  const ConeData cones = build_cones(d);
  const int rows = static_cast<int>(cones.G.rows());
  const double eps_p = settings.eps_primal;
  const double eps_d = settings.eps_dual;

  Eigen::VectorXd x = (warm_start && warm_start->size() == n) ? *warm_start
                                                              : Eigen::VectorXd::Zero(n);
  if (!all_finite(x)) x.setZero();
  Eigen::VectorXd z = cones.G * x;
  project_cone(cones, z);
  Eigen::VectorXd y = Eigen::VectorXd::Zero(rows);

  double rho = std::max(settings.rho, 1e-9);
  auto rho_vec = [&](double r) {
    Eigen::VectorXd rv = Eigen::VectorXd::Constant(rows, r);
    for (const auto& b : cones.blocks)
      if (b.type == ConeBlock::Type::zero)
        rv.segment(b.start, b.size).setConstant(r * settings.rho_eq_scale);
    return rv;
  };
  Eigen::VectorXd R = rho_vec(rho);

  Eigen::LDLT<Eigen::MatrixXd> kkt;
  double jitter = 0.0;
  auto factor = [&]() {
    Eigen::MatrixXd M = d.H + settings.sigma * Eigen::MatrixXd::Identity(n, n);
    if (rows > 0) M += cones.G.transpose() * R.asDiagonal() * cones.G;
    for (int attempt = 0; attempt < 4; ++attempt) {
      kkt.compute(M + jitter * Eigen::MatrixXd::Identity(n, n));
      if (kkt.info() == Eigen::Success) {
        if (jitter > 0.0) rep.notes.push_back("factorization jitter applied");
        return true;
      }
      jitter = jitter == 0.0 ? 1e-9 : jitter * 10.0;
    }
    return false;
  };
  if (!factor()) {
    finish(SolveStatus::numeric_failure, x, 0, kInf, kInf);
    rep.notes.push_back("KKT factorization failed");
    return rep;
  }

  double best_score = kInf;
  Eigen::VectorXd best_x = x, best_y = y;
  Eigen::VectorXd y_prev_check = y;
  int polish_attempts = 0;
  int it = 0;
  bool converged = false, infeasible = false, numeric_bad = false;
  double r_prim = kInf, r_dual = kInf;

  for (it = 1; it <= settings.max_iterations; ++it) {
    Eigen::VectorXd rhs = settings.sigma * x - d.f;
    if (rows > 0) rhs += cones.G.transpose() * (R.cwiseProduct(z) - y);
    const Eigen::VectorXd xt = kkt.solve(rhs);
    const Eigen::VectorXd xn = settings.alpha * xt + (1.0 - settings.alpha) * x;
    if (rows > 0) {
      const Eigen::VectorXd zt = cones.G * xt;
      Eigen::VectorXd zh = settings.alpha * zt + (1.0 - settings.alpha) * z;
      Eigen::VectorXd zc = zh + y.cwiseQuotient(R);
      project_cone(cones, zc);
      y += R.cwiseProduct(zh - zc);
      z = zc;
    }
    x = xn;

    if (!all_finite(x) || (rows > 0 && (!all_finite(y) || !all_finite(z)))) {
      numeric_bad = true;
      break;
    }

    if (it % settings.check_interval != 0 && it != settings.max_iterations) continue;

    r_prim = rows > 0 ? inf_norm(cones.G * x - z) : 0.0;
    Eigen::VectorXd stat = d.H * x + d.f;
    if (rows > 0) stat += cones.G.transpose() * y;
    r_dual = inf_norm(stat);
    const double score = std::max(r_prim, r_dual);
    if (score < best_score) { best_score = score; best_x = x; best_y = y; }

    if (r_prim <= eps_p && r_dual <= eps_d) { converged = true; break; }

    if (settings.polish && polish_attempts < 6 && r_prim <= 1e4 * eps_p &&
        r_dual <= 1e4 * eps_d) {
      ++polish_attempts;
      Eigen::VectorXd lam_hint = Eigen::VectorXd::Zero(d.A_in.rows());
      if (cones.n_in > 0) lam_hint = (-y.segment(cones.n_eq, cones.n_in)).cwiseMax(0.0);
      std::vector<double> mu_hint(d.quad.size(), 0.0);
      for (std::size_t j = 0; j < d.quad.size(); ++j) {
        const int s = cones.soc_start[j], sz = cones.soc_size[j];
        mu_hint[j] = std::max(0.5 * (y(s + sz - 1) - y(s)), 0.0);
      }
      PolishResult pol = polish_solution(d, x, lam_hint, mu_hint);
      if (pol.ok && pol.stationarity <= eps_d && pol.violation <= eps_p) {
        finish(SolveStatus::optimal, pol.x, it, pol.violation, pol.stationarity);
        rep.y_eq = pol.nu;
        rep.y_in.setZero(data.A_in.rows());
        if (data.A_in.rows() > 0) rep.y_in = pol.lambda.head(data.A_in.rows());
        for (std::size_t j = 0; j < quad_as_lin.size(); ++j)
          rep.y_quad[j] = quad_as_lin[j] >= 0 ? pol.lambda(quad_as_lin[j]) : 0.0;
        for (std::size_t jj = 0; jj < quad_origin.size(); ++jj)
          rep.y_quad[quad_origin[jj]] = pol.mu[jj];
        rep.notes.push_back("polished");
        return rep;
      }
    }

    // Infeasibility heuristic on the dual-variable drift over the window.
    if (it >= 2 * settings.check_interval && rows > 0) {
      const Eigen::VectorXd dy = y - y_prev_check;
      if (inf_norm(dy) > 1e-10 * (1.0 + inf_norm(y)) && r_prim > eps_p) {
        if (is_infeasibility_certificate(cones, dy, settings.eps_infeasible) ||
            is_infeasibility_certificate(cones, Eigen::VectorXd(-dy), settings.eps_infeasible)) {
          infeasible = true;
          break;
        }
      }
    }
    y_prev_check = y;

    if (settings.adaptive_rho && rows > 0) {
      const double prim_scale =
          std::max({inf_norm(cones.G * x), inf_norm(z), 1e-12});
      const double dual_scale =
          std::max({inf_norm(d.H * x), inf_norm(d.f), inf_norm(cones.G.transpose() * y), 1e-12});
      const double ratio = (r_prim / prim_scale) / std::max(r_dual / dual_scale, 1e-16);
      const double proposal = std::clamp(rho * std::sqrt(ratio), 1e-6, 1e6);
      if (proposal > 5.0 * rho || proposal < rho / 5.0) {
        rho = proposal;
        R = rho_vec(rho);
        if (!factor()) { numeric_bad = true; break; }
      }
    }
  }

  if (numeric_bad) {
    finish(SolveStatus::numeric_failure, best_score < kInf ? best_x : Eigen::VectorXd::Zero(n),
           it, r_prim, r_dual);
    rep.notes.push_back("non-finite iterate");
    return rep;
  }
  if (infeasible) {
    finish(SolveStatus::infeasible, x, it, r_prim, r_dual);
    return rep;
  }

  if (!converged) { x = best_x; y = best_y; }

  // Final polish from the best iterate.
  PolishResult pol;
  if (settings.polish) {
    Eigen::VectorXd lam_hint = Eigen::VectorXd::Zero(d.A_in.rows());
    if (cones.n_in > 0) lam_hint = (-y.segment(cones.n_eq, cones.n_in)).cwiseMax(0.0);
    std::vector<double> mu_hint(d.quad.size(), 0.0);
    for (std::size_t j = 0; j < d.quad.size(); ++j) {
      const int s = cones.soc_start[j], sz = cones.soc_size[j];
      mu_hint[j] = std::max(0.5 * (y(s + sz - 1) - y(s)), 0.0);
    }
    pol = polish_solution(d, x, lam_hint, mu_hint);
  }

  const bool use_polish =
      pol.ok && std::max(pol.stationarity, pol.violation) <=
                    std::max({r_dual, r_prim, eps_d});
  if (use_polish) {
    const bool good = pol.stationarity <= eps_d && pol.violation <= eps_p;
    finish(good || converged ? SolveStatus::optimal : SolveStatus::max_iterations, pol.x, it,
           pol.violation, pol.stationarity);
    rep.y_eq = pol.nu;
    if (data.A_in.rows() > 0) rep.y_in = pol.lambda.head(data.A_in.rows());
    for (std::size_t j = 0; j < quad_as_lin.size(); ++j)
      rep.y_quad[j] = quad_as_lin[j] >= 0 ? pol.lambda(quad_as_lin[j]) : 0.0;
    for (std::size_t jj = 0; jj < quad_origin.size(); ++jj)
      rep.y_quad[quad_origin[jj]] = pol.mu[jj];
    rep.notes.push_back("polished");
    return rep;
  }

  finish(converged ? SolveStatus::optimal : SolveStatus::max_iterations, x, it, r_prim, r_dual);
  if (cones.n_eq > 0) rep.y_eq = y.head(cones.n_eq);
  if (cones.n_in > 0) {
    const Eigen::VectorXd lam = (-y.segment(cones.n_eq, cones.n_in)).cwiseMax(0.0);
    rep.y_in = lam.head(data.A_in.rows());
    for (std::size_t j = 0; j < quad_as_lin.size(); ++j)
      if (quad_as_lin[j] >= 0) rep.y_quad[j] = lam(quad_as_lin[j]);
  }
  for (std::size_t jj = 0; jj < quad_origin.size(); ++jj) {
    const int s = cones.soc_start[jj], sz = cones.soc_size[jj];
    rep.y_quad[quad_origin[jj]] = std::max(0.5 * (y(s + sz - 1) - y(s)), 0.0);
  }
  return rep;
}

// ---------------------------------------------------------------------------
// solve_dare
// ---------------------------------------------------------------------------

namespace {

double dare_residual(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B,
                     const Eigen::MatrixXd& Q, const Eigen::MatrixXd& R,
                     const Eigen::MatrixXd& P) {
  const Eigen::MatrixXd BPA = B.transpose() * P * A;
  const Eigen::MatrixXd S = R + B.transpose() * P * B;
  const Eigen::MatrixXd res =
      A.transpose() * P * A - P - BPA.transpose() * S.ldlt().solve(BPA) + Q;
  return res.norm();
}

}  // namespace

DareResult solve_dare(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B,
                      const Eigen::MatrixXd& Q, const Eigen::MatrixXd& R,
                      const DareOptions& options) {
  const int n = static_cast<int>(A.rows());
  const int m = static_cast<int>(B.cols());
  if (A.cols() != n || B.rows() != n || Q.rows() != n || Q.cols() != n || R.rows() != m ||
      R.cols() != m)
    throw ConfigError("solve_dare: dimension mismatch");
  {
    const double qs = std::max(1.0, Q.size() ? Q.cwiseAbs().maxCoeff() : 0.0);
    if ((Q - Q.transpose()).cwiseAbs().maxCoeff() > 1e-10 * qs)
      throw ConfigError("solve_dare: Q not symmetric");
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> qe(0.5 * (Q + Q.transpose()),
                                                      Eigen::EigenvaluesOnly);
    if (qe.eigenvalues().minCoeff() < -1e-10 * qs)
      throw ConfigError("solve_dare: Q not positive semidefinite");
  }
  Eigen::LLT<Eigen::MatrixXd> rllt(0.5 * (R + R.transpose()));
  if (rllt.info() != Eigen::Success)
    throw ConfigError("solve_dare: R not positive definite");

  // Structure-preserving doubling on (A_k, G_k, H_k); H_k converges to P.
  Eigen::MatrixXd Ak = A;
  Eigen::MatrixXd Gk = B * rllt.solve(B.transpose());
  Gk = 0.5 * (Gk + Gk.transpose()).eval();
  Eigen::MatrixXd Hk = 0.5 * (Q + Q.transpose());
  const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(n, n);

  DareResult out;
  out.residual_history.push_back(dare_residual(A, B, Q, R, Hk));
  bool converged = false;
  for (int it = 1; it <= options.max_iterations; ++it) {
    const Eigen::MatrixXd W = I + Gk * Hk;
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(W);
    const Eigen::MatrixXd V1 = lu.solve(Ak);
    const Eigen::MatrixXd V2 = lu.solve(Gk);
    Eigen::MatrixXd Hn = Hk + V1.transpose() * Hk * Ak;
    Eigen::MatrixXd Gn = Gk + Ak * V2 * Ak.transpose();
    Hn = 0.5 * (Hn + Hn.transpose()).eval();
    Gn = 0.5 * (Gn + Gn.transpose()).eval();
    const Eigen::MatrixXd An = Ak * V1;
    const double change = (Hn - Hk).norm();
    Ak = An;
    Gk = Gn;
    Hk = Hn;
    out.iterations = it;
    out.residual_history.push_back(dare_residual(A, B, Q, R, Hk));
    if (!Hk.allFinite()) throw SynthesisError("solve_dare: iterate diverged");
    if (change <= options.tolerance * std::max(1.0, Hk.norm())) {
      converged = true;
      break;
    }
  }
  if (!converged)
    throw SynthesisError("solve_dare: doubling iteration did not converge");
  out.P = Hk;
  out.residual = out.residual_history.back();
  if (out.residual > options.residual_tolerance * std::max(1.0, out.P.norm()))
    throw NumericError("solve_dare: residual above tolerance");
  return out;
}

// ---------------------------------------------------------------------------
// solve_variable_gain
// ---------------------------------------------------------------------------

namespace {

// Exact rollout of the surrogate under per-step (ubar, K).
std::vector<Eigen::VectorXd> rollout(const RHCProblem& pb,
                                     const std::vector<Eigen::VectorXd>& ubar,
                                     const std::vector<Eigen::MatrixXd>& gains) {
  const int N = pb.horizon();
  std::vector<Eigen::VectorXd> X(N + 1);
  X[0] = pb.initial.coeffs;
  const Eigen::MatrixXd Bmean = pb.system.Bbold.leftCols(pb.system.m);
  for (int k = 0; k < N; ++k) {
    const Eigen::MatrixXd Acl = closed_loop_matrix(pb.system, gains[k]);
    X[k + 1] = Acl * X[k] + Bmean * ubar[k];
  }
  return X;
}

std::vector<Eigen::VectorXd> full_controls(const RHCProblem& pb,
                                           const std::vector<Eigen::VectorXd>& ubar,
                                           const std::vector<Eigen::MatrixXd>& gains,
                                           const std::vector<Eigen::VectorXd>& X) {
  std::vector<Eigen::VectorXd> U(pb.horizon());
  for (int k = 0; k < pb.horizon(); ++k)
    U[k] = compose_control(pb.system, ubar[k], gains[k], X[k]);
  return U;
}

double total_violation(const RHCProblem& pb, const std::vector<Eigen::VectorXd>& X,
                       const std::vector<Eigen::VectorXd>& U) {
  double sum = 0.0;
  for (const auto& rec : constraint_margins(pb, X, U))
    sum += std::max(0.0, -rec.margin);
  return sum;
}

double max_violation(const RHCProblem& pb, const std::vector<Eigen::VectorXd>& X,
                     const std::vector<Eigen::VectorXd>& U) {
  double v = 0.0;
  for (const auto& rec : constraint_margins(pb, X, U))
    v = std::max(v, -rec.margin);
  return std::max(v, 0.0);
}

// (M (x) E_ab) X as a lifted control vector: block i >= 1 holds e_a x_{i,b}.
Eigen::VectorXd basis_direction(const RHCProblem& pb, const Eigen::VectorXd& X, int a, int b) {
  const int m = pb.system.m, n = pb.system.n;
  const int blocks = pb.system.blocks();
  Eigen::VectorXd v = Eigen::VectorXd::Zero(pb.system.control_dim());
  for (int i = 1; i < blocks; ++i) v(i * m + a) = X(i * n + b);
  return v;
}

struct StartResult {
  bool usable = false;
  bool converged = false;
  bool feasible = false;
  double objective = kInf;
  double stationarity = kInf;
  double violation = kInf;
  std::vector<Eigen::VectorXd> ubar;
  std::vector<Eigen::MatrixXd> gains;
  std::vector<Eigen::VectorXd> states;
  int outer_iterations = 0;
  SolveStatus inner_status = SolveStatus::numeric_failure;
  std::vector<std::string> notes;
};

}  // namespace

VariableGainSolution solve_variable_gain(const RHCProblem& problem,
                                         const VariableGainGuess* guess,
                                         const VariableGainSettings& settings) {
  if (problem.mode != ControlMode::mean_variable_gain)
    throw ConfigError("solve_variable_gain: problem mode must be mean-plus-variable-gain");
  const int N = problem.horizon();
  const int m = problem.system.m;
  const int n = problem.system.n;
  const int n_param = N * m * n;

  // Starts in priority order: caller guess, terminal deviation gain, zero
  // gain, seeded perturbations of the terminal gain; first `starts` used.
  std::vector<std::vector<Eigen::MatrixXd>> starts;
  auto push_start = [&](const std::vector<Eigen::MatrixXd>& g) {
    for (const auto& have : starts) {
      bool same = true;
      for (int k = 0; k < N && same; ++k) same = (have[k] - g[k]).cwiseAbs().maxCoeff() < 1e-14;
      if (same) return;
    }
    starts.push_back(g);
  };
  const int cap = std::max(1, settings.starts);
  if (guess != nullptr && static_cast<int>(guess->gains.size()) == N)
    push_start(guess->gains);
  push_start(std::vector<Eigen::MatrixXd>(N, problem.terminal.gain_dev));
  push_start(std::vector<Eigen::MatrixXd>(N, Eigen::MatrixXd::Zero(m, n)));
  {
    CounterRng rng(settings.seed, 0x7061696e);
    const double scale = 0.1 * std::max(1.0, problem.terminal.gain_dev.norm());
    while (static_cast<int>(starts.size()) < cap) {
      std::vector<Eigen::MatrixXd> g(N);
      for (int k = 0; k < N; ++k) {
        g[k] = problem.terminal.gain_dev;
        for (int a = 0; a < m; ++a)
          for (int b = 0; b < n; ++b) g[k](a, b) += scale * rng.next_normal();
      }
      push_start(g);
    }
  }
  if (static_cast<int>(starts.size()) > cap) starts.resize(cap);

  const Eigen::MatrixXd Bmean = problem.system.Bbold.leftCols(m);
  const Eigen::LLT<Eigen::MatrixXd> lltQ(problem.Qbar);
  const Eigen::LLT<Eigen::MatrixXd> lltR(problem.Rbar);
  Eigen::MatrixXd Cq = lltQ.matrixL().transpose();
  Eigen::MatrixXd Cr = lltR.matrixL().transpose();
  Eigen::MatrixXd Cp;
  {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(problem.terminal.P);
    Cp = es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal() *
         es.eigenvectors().transpose();
  }
  const int nx = problem.nx();
  const int nuf = problem.system.control_dim();
  const int res_dim = (N - 1) * nx + N * nuf + nx;

  auto run_start = [&](const std::vector<Eigen::MatrixXd>& start0) {
    StartResult best;
    std::vector<Eigen::MatrixXd> gains = start0;
    std::optional<Eigen::VectorXd> warm;
    std::optional<SolveReport> pending;  // accepted trial's solve, for reuse
    double lm_nu = 1e-4;
    double mu_pen = 0.0;
    int outer = 0;
    bool converged = false;
    std::string stop_note;

    for (outer = 1; outer <= settings.max_outer; ++outer) {
      BuiltQP built = build_qp_fixed_gain(problem, gains);
      SolveReport rep;
      if (pending) {
        rep = std::move(*pending);
        pending.reset();
      } else {
        rep = solve_convex(built.qp, settings.convex, warm ? &*warm : nullptr);
      }
      if (rep.status == SolveStatus::infeasible ||
          rep.status == SolveStatus::numeric_failure) {
        best.inner_status = rep.status;
        best.notes.push_back("inner solve " + to_string(rep.status));
        return best;
      }
      warm = rep.x;
      std::vector<Eigen::VectorXd> ubar = extract_controls(built.layout, rep.x);
      std::vector<Eigen::VectorXd> X = rollout(problem, ubar, gains);
      std::vector<Eigen::VectorXd> U = full_controls(problem, ubar, gains, X);
      const double obj = horizon_objective(problem, X, U);
      const double viol = max_violation(problem, X, U);
      if (mu_pen == 0.0) mu_pen = 1e6 * std::max(1.0, std::abs(obj));

      // Gain-gradient of the Lagrangian from the inner multipliers. With ubar
      // and the states at their inner optimum this is the reduced gradient of
      // the constrained value function in the gains (envelope theorem), so it
      // doubles as the stationarity measure and as the step direction's
      // gradient below.
      Eigen::VectorXd grad_L = Eigen::VectorXd::Zero(n_param);
      for (int k = 0; k < N; ++k) {
        Eigen::VectorXd w = 2.0 * problem.Rbar * U[k];
        w -= problem.system.Bbold.transpose() * rep.y_eq.segment(k * nx, nx);
        for (std::size_t idx = 0; idx < built.instances.size(); ++idx) {
          const auto& inst = built.instances[idx];
          if (inst.step != k) continue;
          const auto& con = problem.constraints[inst.constraint];
          if (con.target != LiftedConstraint::Target::control) continue;
          const double mult = inst.quad_index >= 0 ? rep.y_quad[inst.quad_index]
                                                   : rep.y_in(inst.lin_row);
          if (mult <= 0.0) continue;
          Eigen::VectorXd gcon = Eigen::VectorXd::Zero(nuf);
          if (con.has_quad()) gcon += 2.0 * con.quad * U[k];
          if (con.has_lin()) gcon += con.lin.transpose();
          w += mult * gcon;
        }
        for (int a = 0; a < m; ++a)
          for (int b = 0; b < n; ++b) {
            double g = 0.0;
            for (int i = 1; i < problem.system.blocks(); ++i)
              g += w(i * m + a) * X[k](i * n + b);
            grad_L((k * m + a) * n + b) = g;
          }
      }
      const double stat =
          std::max(rep.residuals.dual, grad_L.lpNorm<Eigen::Infinity>());

      const bool record = viol <= settings.constraint_tol + 1e-12
                              ? (!best.feasible || obj < best.objective)
                              : (!best.feasible && obj < best.objective);
      if (record) {
        best.usable = true;
        best.feasible = viol <= settings.constraint_tol + 1e-12;
        best.objective = obj;
        best.stationarity = stat;
        best.violation = viol;
        best.ubar = ubar;
        best.gains = gains;
        best.states = X;
        best.inner_status = rep.status;
      }
      if (stat <= settings.stationarity_tol && viol <= settings.constraint_tol) {
        converged = true;
        break;
      }

      // Gauss-Newton curvature of the cost in the stacked gains (forward
      // sensitivities, ubar frozen). Paired with grad_L it yields a damped
      // step on the reduced problem; trial merits re-solve the inner QP so
      // ubar tracks the trial gains and active constraints stay respected.
      Eigen::MatrixXd J(res_dim, n_param);
      for (int k = 0; k < N; ++k)
        for (int a = 0; a < m; ++a)
          for (int b = 0; b < n; ++b) {
            const int col = (k * m + a) * n + b;
            const Eigen::VectorXd dU0 = basis_direction(problem, X[k], a, b);
            std::vector<Eigen::VectorXd> S(N + 1, Eigen::VectorXd::Zero(nx));
            S[k + 1] = problem.system.Bbold * dU0;
            for (int j = k + 1; j < N; ++j)
              S[j + 1] = closed_loop_matrix(problem.system, gains[j]) * S[j];
            Eigen::VectorXd cvec = Eigen::VectorXd::Zero(res_dim);
            int at = 0;
            for (int j = 1; j < N; ++j) { cvec.segment(at, nx) = Cq * S[j]; at += nx; }
            for (int j = 0; j < N; ++j) {
              Eigen::VectorXd dU = Eigen::VectorXd::Zero(nuf);
              if (j == k) dU += dU0;
              if (j > k) {
                // (M (x) K_j) S_j: deviation blocks only
                for (int i = 1; i < problem.system.blocks(); ++i)
                  dU.segment(i * m, m) += gains[j] * S[j].segment(i * n, n);
              }
              cvec.segment(at, nuf) = Cr * dU;
              at += nuf;
            }
            cvec.segment(at, nx) = Cp * S[N];
            J.col(col) = cvec;
          }
      const Eigen::MatrixXd JtJ = J.transpose() * J;
      const double merit0 = obj + mu_pen * total_violation(problem, X, U);

      bool accepted = false;
      double step_norm = 0.0;
      if (grad_L.lpNorm<Eigen::Infinity>() <= 1e-14 * std::max(1.0, std::abs(obj))) {
        accepted = true;  // flat in the gains (e.g. no deviation modes)
      } else {
        for (int trial = 0; trial < 8; ++trial) {
          Eigen::MatrixXd Mlm = 2.0 * JtJ;
          Mlm.diagonal().array() +=
              lm_nu * std::max(1.0, 2.0 * JtJ.trace() / n_param);
          const Eigen::VectorXd delta = Mlm.ldlt().solve(-grad_L);
          if (!all_finite(delta)) { lm_nu *= 10.0; continue; }
          std::vector<Eigen::MatrixXd> gn = gains;
          for (int k = 0; k < N; ++k)
            for (int a = 0; a < m; ++a)
              for (int b = 0; b < n; ++b) gn[k](a, b) += delta((k * m + a) * n + b);
          BuiltQP bn = build_qp_fixed_gain(problem, gn);
          SolveReport repn = solve_convex(bn.qp, settings.convex, warm ? &*warm : nullptr);
          if (repn.status == SolveStatus::infeasible ||
              repn.status == SolveStatus::numeric_failure) {
            lm_nu = std::min(lm_nu * 10.0, 1e12);
            continue;
          }
          const auto ubar_n = extract_controls(bn.layout, repn.x);
          const auto Xn = rollout(problem, ubar_n, gn);
          const auto Un = full_controls(problem, ubar_n, gn, Xn);
          const double merit1 =
              horizon_objective(problem, Xn, Un) + mu_pen * total_violation(problem, Xn, Un);
          const double pred = -delta.dot(grad_L) - delta.dot(JtJ * delta);
          if (std::isfinite(merit1) &&
              merit0 - merit1 >= 1e-4 * std::max(pred, 0.0) && merit1 <= merit0) {
            gains = gn;
            pending = std::move(repn);
            step_norm = delta.lpNorm<Eigen::Infinity>();
            lm_nu = std::max(lm_nu / 3.0, 1e-12);
            accepted = true;
            break;
          }
          lm_nu = std::min(lm_nu * 10.0, 1e12);
        }
      }
      if (!accepted) {
        stop_note = "gain line search failed";
        break;
      }
      if (step_norm <= settings.step_tol) {
        stop_note = "gain step below tolerance";
        break;
      }
    }

    best.outer_iterations = std::min(outer, settings.max_outer);
    best.converged = converged;
    if (!stop_note.empty()) best.notes.push_back(stop_note);
    return best;
  };

  StartResult best;
  int total_outer = 0;
  int si = 0;
  for (const auto& s : starts) {
    StartResult r = run_start(s);
    total_outer += r.outer_iterations;
    ++si;
    if (!r.usable) continue;
    const bool better =
        !best.usable ||
        (r.feasible && !best.feasible) ||
        (r.feasible == best.feasible && r.objective < best.objective - 1e-12) ||
        (r.feasible == best.feasible && std::abs(r.objective - best.objective) <= 1e-12 &&
         r.converged && !best.converged);
    if (better) best = r;
  }

  VariableGainSolution sol;
  if (!best.usable) {
    sol.report.status = best.inner_status == SolveStatus::infeasible
                            ? SolveStatus::infeasible
                            : SolveStatus::numeric_failure;
    sol.report.notes = best.notes;
    sol.report.notes.push_back("no usable start");
    return sol;
  }
  sol.ubar = best.ubar;
  sol.gains = best.gains;
  sol.states = best.states;
  sol.objective = best.objective;
  sol.stationarity = best.stationarity;
  sol.report.status = best.converged ? SolveStatus::optimal : SolveStatus::max_iterations;
  sol.report.objective = best.objective;
  sol.report.iterations = total_outer;
  sol.report.residuals.primal = best.violation;
  sol.report.residuals.dual = best.stationarity;
  sol.report.residuals.constraint_violation = best.violation;
  sol.report.notes = best.notes;
  if (sol.report.x.size() == 0) sol.report.x = Eigen::VectorXd::Zero(0);
  return sol;
}

}  // namespace pcrhc
