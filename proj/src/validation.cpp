#include "pcrhc/validation.hpp"

#include <Eigen/Dense>

#include <boost/math/distributions/beta.hpp>
#include <boost/math/distributions/gamma.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <thread>

#include "json.hpp"
#include "pcrhc/rng.hpp"

namespace pcrhc {

namespace {

// Pairwise reduction in a fixed tree order (halving splits), independent of
// how the values were produced.
double pairwise_sum(const double* v, std::ptrdiff_t count) {
  if (count <= 8) {
    double s = 0.0;
    for (std::ptrdiff_t i = 0; i < count; ++i) s += v[i];
    return s;
  }
  const std::ptrdiff_t half = count / 2;
  return pairwise_sum(v, half) + pairwise_sum(v + half, count - half);
}

double column_moment(const Eigen::MatrixXd& states, int component, int power,
                     double shift, std::vector<double>& scratch) {
  const std::ptrdiff_t M = states.rows();
  scratch.resize(static_cast<std::size_t>(M));
  for (std::ptrdiff_t j = 0; j < M; ++j) {
    const double centered = states(j, component) - shift;
    double p = 1.0;
    for (int q = 0; q < power; ++q) p *= centered;
    scratch[static_cast<std::size_t>(j)] = p;
  }
  return pairwise_sum(scratch.data(), M) / static_cast<double>(M);
}

double draw_component(const Marginal& m, const CounterRng& rng, std::uint64_t i) {
  switch (m.kind) {
    case DistKind::uniform:
      return 2.0 * rng.uniform01(i) - 1.0;
    case DistKind::gaussian:
      return rng.normal(i);
    case DistKind::gamma: {
      boost::math::gamma_distribution<double> dist(m.a, 1.0);
      return boost::math::quantile(dist, rng.uniform01(i));
    }
    case DistKind::beta: {
      boost::math::beta_distribution<double> dist(m.a, m.b);
      return 2.0 * boost::math::quantile(dist, rng.uniform01(i)) - 1.0;
    }
  }
  throw ConfigError("unsupported marginal distribution");
}

void simulate_range(const UncertainSystem& sys, const SampleSet& samples,
                    const EnsemblePolicy& policy, int steps, const Eigen::VectorXd& x0,
                    std::vector<Eigen::MatrixXd>& states, int lo, int hi) {
  for (int j = lo; j < hi; ++j) {
    const Eigen::VectorXd delta = samples.samples.row(j).transpose();
    const Eigen::MatrixXd A = sys.eval_A(delta);
    const Eigen::MatrixXd B = sys.eval_B(delta);
    Eigen::VectorXd x = x0;
    states[0].row(j) = x.transpose();
    for (int k = 0; k < steps; ++k) {
      Eigen::VectorXd u;
      if (policy.kind == EnsemblePolicy::Kind::open_loop_chaos) {
        u = eval_control(policy.chaos_controls[static_cast<std::size_t>(k)],
                         *policy.basis, delta);
      } else {
        const std::size_t sk = static_cast<std::size_t>(k);
        u = policy.ubar[sk] + policy.gains[sk] * (x - policy.means[sk]);
      }
      x = A * x + B * u;
      states[static_cast<std::size_t>(k) + 1].row(j) = x.transpose();
    }
  }
}

}  // namespace

SampleSet sample_delta(const std::vector<Marginal>& marginals, int M, std::uint64_t seed) {
  if (M < 1) throw ConfigError("sample count must be at least 1");
  if (marginals.empty()) throw ConfigError("sampling requires at least one marginal");
  for (const Marginal& m : marginals) {
    if (m.kind == DistKind::gamma && !(m.a > 0.0))
      throw ConfigError("gamma marginal needs shape > 0");
    if (m.kind == DistKind::beta && !(m.a > 0.0 && m.b > 0.0))
      throw ConfigError("beta marginal needs both shapes > 0");
  }

  SampleSet set;
  set.seed = seed;
  set.marginals = marginals;
  const int d = static_cast<int>(marginals.size());
  set.samples.resize(M, d);
  for (int j = 0; j < d; ++j) {
    const CounterRng rng(seed, static_cast<std::uint64_t>(j));
    const Marginal& m = marginals[static_cast<std::size_t>(j)];
    for (int i = 0; i < M; ++i)
      set.samples(i, j) = draw_component(m, rng, static_cast<std::uint64_t>(i));
  }
  return set;
}

EnsemblePolicy EnsemblePolicy::open_loop(std::vector<ChaosControl> controls,
                                         std::shared_ptr<const BasisSet> basis) {
  EnsemblePolicy p;
  p.kind = Kind::open_loop_chaos;
  p.chaos_controls = std::move(controls);
  p.basis = std::move(basis);
  return p;
}

EnsemblePolicy EnsemblePolicy::zero(int m, std::shared_ptr<const BasisSet> basis, int steps) {
  if (m < 1 || steps < 0) throw ConfigError("zero policy needs m >= 1 and steps >= 0");
  std::vector<ChaosControl> controls(static_cast<std::size_t>(steps),
                                     ChaosControl(m, static_cast<int>(basis->size())));
  return open_loop(std::move(controls), std::move(basis));
}

EnsemblePolicy EnsemblePolicy::feedback(std::vector<Eigen::VectorXd> ubar,
                                        std::vector<Eigen::MatrixXd> gains,
                                        std::vector<Eigen::VectorXd> means) {
  EnsemblePolicy p;
  p.kind = Kind::mean_feedback;
  p.ubar = std::move(ubar);
  p.gains = std::move(gains);
  p.means = std::move(means);
  return p;
}

Ensemble simulate_ensemble(const UncertainSystem& sys, const SampleSet& samples,
                           const EnsemblePolicy& policy, int steps,
                           const Eigen::VectorXd& x0, int threads) {
  sys.validate();
  if (steps < 0) throw ConfigError("step count must be nonnegative");
  if (samples.dim() != sys.d)
    throw ConfigError("sample dimension does not match the system's uncertainty dimension");
  if (x0.size() != sys.n) throw ConfigError("initial state has wrong dimension");

  const std::size_t need = static_cast<std::size_t>(steps);
  if (policy.kind == EnsemblePolicy::Kind::open_loop_chaos) {
    if (policy.basis == nullptr) throw ConfigError("open-loop policy needs a basis");
    if (policy.chaos_controls.size() < need)
      throw ConfigError("open-loop policy is shorter than the requested horizon");
    for (const ChaosControl& u : policy.chaos_controls)
      if (u.m != sys.m || u.coeffs.size() != sys.m * static_cast<int>(policy.basis->size()))
        throw ConfigError("open-loop policy control has wrong dimensions");
  } else {
    if (policy.ubar.size() < need || policy.gains.size() < need || policy.means.size() < need)
      throw ConfigError("feedback policy is shorter than the requested horizon");
    for (std::size_t k = 0; k < need; ++k) {
      if (policy.ubar[k].size() != sys.m || policy.gains[k].rows() != sys.m ||
          policy.gains[k].cols() != sys.n || policy.means[k].size() != sys.n)
        throw ConfigError("feedback policy entry has wrong dimensions");
    }
  }

  Ensemble ens;
  const int M = samples.count();
  ens.states.assign(static_cast<std::size_t>(steps) + 1, Eigen::MatrixXd::Zero(M, sys.n));

  const int workers = std::max(1, std::min(threads, M));
  if (workers == 1) {
    simulate_range(sys, samples, policy, steps, x0, ens.states, 0, M);
  } else {
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    const int chunk = (M + workers - 1) / workers;
    for (int w = 0; w < workers; ++w) {
      const int lo = w * chunk;
      const int hi = std::min(M, lo + chunk);
      if (lo >= hi) break;
      pool.emplace_back([&, lo, hi] {
        simulate_range(sys, samples, policy, steps, x0, ens.states, lo, hi);
      });
    }
    for (std::thread& t : pool) t.join();
  }
  return ens;
}

double MomentReport::max_discrepancy(int order) const {
  double worst = 0.0;
  for (std::size_t c = 0; c < orders.size(); ++c) {
    if (orders[c] != order) continue;
    for (const Step& s : steps)
      worst = std::max(worst, s.discrepancy.col(static_cast<Eigen::Index>(c)).maxCoeff());
  }
  return worst;
}

double MomentReport::worst() const {
  double worst = 0.0;
  for (const Step& s : steps)
    if (s.discrepancy.size() > 0) worst = std::max(worst, s.discrepancy.maxCoeff());
  return worst;
}

MomentReport compare_moments(const Ensemble& ensemble,
                             const std::vector<ChaosState>& trajectory,
                             const std::vector<int>& orders, const BasisSet& basis,
                             const ProductTensors& tensors) {
  if (ensemble.states.size() != trajectory.size())
    throw ConfigError("ensemble and surrogate trajectory have different step counts");
  if (ensemble.states.empty()) throw ConfigError("empty ensemble");
  for (int q : orders)
    if (q < 1 || q > 4)
      throw ConfigError("moments above order 4 are not validated (requested order " +
                        std::to_string(q) + ")");

  const int n = static_cast<int>(ensemble.states.front().cols());
  const int M = ensemble.count();
  const int O = static_cast<int>(orders.size());

  MomentReport report;
  report.orders = orders;
  report.steps.resize(trajectory.size());
  std::vector<double> scratch;

  for (std::size_t k = 0; k < trajectory.size(); ++k) {
    MomentReport::Step& step = report.steps[k];
    step.k = static_cast<int>(k);
    step.gpc.resize(n, O);
    step.mc.resize(n, O);
    step.se.resize(n, O);
    step.discrepancy.resize(n, O);

    const ChaosState& X = trajectory[k];
    if (X.coeffs.size() != n * static_cast<int>(basis.size()))
      throw ConfigError("surrogate trajectory entry has wrong dimension");
    const Eigen::VectorXd gpc_mean = mean(X);
    const Eigen::MatrixXd gpc_cov = covariance(X, tensors);
    const Eigen::MatrixXd& S = ensemble.states[k];

    for (int c = 0; c < n; ++c) {
      const double mc_mean = column_moment(S, c, 1, 0.0, scratch);
      const double m2 = column_moment(S, c, 2, mc_mean, scratch);
      for (int oc = 0; oc < O; ++oc) {
        const int q = orders[static_cast<std::size_t>(oc)];
        double gpc = 0.0, mc = 0.0, se = 0.0;
        switch (q) {
          case 1:
            gpc = gpc_mean[c];
            mc = mc_mean;
            se = std::sqrt(std::max(m2, 0.0) / M);
            break;
          case 2: {
            const double m4 = column_moment(S, c, 4, mc_mean, scratch);
            gpc = gpc_cov(c, c);
            mc = m2 * static_cast<double>(M) / std::max(1, M - 1);
            se = std::sqrt(std::max(m4 - m2 * m2, 0.0) / M);
            break;
          }
          default: {
            const double rq = column_moment(S, c, q, 0.0, scratch);
            const double r2q = column_moment(S, c, 2 * q, 0.0, scratch);
            gpc = moment(X, q, c, basis);
            mc = rq;
            se = std::sqrt(std::max(r2q - rq * rq, 0.0) / M);
            break;
          }
        }
        step.gpc(c, oc) = gpc;
        step.mc(c, oc) = mc;
        // A standard error below the roundoff scale of the estimate itself
        // (degenerate ensembles) carries no information; floor it there so
        // exact agreement reads as zero discrepancy instead of 0/0.
        const double se_floor = 1e-13 * std::max(1.0, std::abs(mc));
        step.se(c, oc) = std::max(se, se_floor);
        step.discrepancy(c, oc) = std::abs(gpc - mc) / step.se(c, oc);
      }
    }
  }
  return report;
}

std::string to_json(const MomentReport& report) {
  nlohmann::json j;
  j["orders"] = report.orders;
  nlohmann::json steps = nlohmann::json::array();
  for (const MomentReport::Step& s : report.steps) {
    nlohmann::json row;
    row["k"] = s.k;
    for (std::size_t oc = 0; oc < report.orders.size(); ++oc) {
      const std::string key = "order" + std::to_string(report.orders[oc]);
      nlohmann::json block;
      const Eigen::Index col = static_cast<Eigen::Index>(oc);
      for (Eigen::Index c = 0; c < s.gpc.rows(); ++c) {
        block["gpc"].push_back(s.gpc(c, col));
        block["mc"].push_back(s.mc(c, col));
        block["se"].push_back(s.se(c, col));
        block["discrepancy"].push_back(s.discrepancy(c, col));
      }
      row[key] = block;
    }
    steps.push_back(row);
  }
  j["steps"] = steps;
  for (int q : report.orders)
    j["max_discrepancy"]["order" + std::to_string(q)] = report.max_discrepancy(q);
  j["worst"] = report.worst();
  return j.dump(2);
}

void write_ensemble_csv(const Ensemble& ensemble, std::ostream& os) {
  if (ensemble.states.empty()) return;
  const int n = static_cast<int>(ensemble.states.front().cols());
  os << "sample,k";
  for (int c = 0; c < n; ++c) os << ",x" << c;
  os << "\n";
  char buf[40];
  for (int j = 0; j < ensemble.count(); ++j) {
    for (std::size_t k = 0; k < ensemble.states.size(); ++k) {
      os << j << "," << k;
      for (int c = 0; c < n; ++c) {
        std::snprintf(buf, sizeof(buf), "%.17g", ensemble.states[k](j, c));
        os << "," << buf;
      }
      os << "\n";
    }
  }
}

BruteForceResult brute_force_qp(const QPData& qp, double tol) {
  qp.validate();
  if (!qp.quad.empty())
    throw ConfigError("the brute-force oracle covers linearly constrained QPs only");
  const int n = qp.num_vars();
  const int me = static_cast<int>(qp.A_eq.rows());
  const int mi = static_cast<int>(qp.A_in.rows());
  if (mi > 20) throw LimitError("brute-force oracle capped at 20 inequality rows");

  BruteForceResult best;
  best.objective = std::numeric_limits<double>::infinity();

  for (std::uint32_t mask = 0; mask < (1u << mi); ++mask) {
    std::vector<int> active;
    for (int i = 0; i < mi; ++i)
      if (mask & (1u << i)) active.push_back(i);
    const int ma = static_cast<int>(active.size());

    Eigen::MatrixXd K = Eigen::MatrixXd::Zero(n + me + ma, n + me + ma);
    Eigen::VectorXd r(n + me + ma);
    K.topLeftCorner(n, n) = qp.H;
    r.head(n) = -qp.f;
    if (me > 0) {
      K.block(0, n, n, me) = qp.A_eq.transpose();
      K.block(n, 0, me, n) = qp.A_eq;
      r.segment(n, me) = qp.b_eq;
    }
    for (int i = 0; i < ma; ++i) {
      K.block(0, n + me + i, n, 1) = qp.A_in.row(active[static_cast<std::size_t>(i)]).transpose();
      K.block(n + me + i, 0, 1, n) = qp.A_in.row(active[static_cast<std::size_t>(i)]);
      r[n + me + i] = qp.b_in[active[static_cast<std::size_t>(i)]];
    }

    Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(K);
    const Eigen::VectorXd sol = cod.solve(r);
    if ((K * sol - r).lpNorm<Eigen::Infinity>() > tol * (1.0 + r.lpNorm<Eigen::Infinity>()))
      continue;  // this active set has no stationary point
    const Eigen::VectorXd x = sol.head(n);

    bool ok = true;
    if (me > 0 && (qp.A_eq * x - qp.b_eq).lpNorm<Eigen::Infinity>() > tol) ok = false;
    for (int i = 0; ok && i < mi; ++i)
      if (qp.A_in.row(i).dot(x) > qp.b_in[i] + tol) ok = false;
    if (!ok) continue;

    const double obj = qp.objective(x);
    if (obj < best.objective - 1e-14) {
      best.feasible = true;
      best.objective = obj;
      best.x = x;
    }
  }
  return best;
}

}  // namespace pcrhc
