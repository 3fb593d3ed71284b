#include "pcrhc/galerkin.hpp"

#include <cmath>
#include <utility>

namespace pcrhc {

void UncertainSystem::validate() const {
  if (n < 1 || m < 1 || d < 1)
    throw ConfigError("UncertainSystem: n, m, d must be positive");
  if (static_cast<int>(marginals.size()) != d)
    throw ConfigError("UncertainSystem: need one marginal per dimension");
  if (A_terms.empty()) throw ConfigError("UncertainSystem: A(Delta) has no terms");
  if (B_terms.empty()) throw ConfigError("UncertainSystem: B(Delta) has no terms");
  auto check = [&](const std::vector<PolyTerm>& terms, int rows, int cols,
                   const char* what) {
    for (const PolyTerm& t : terms) {
      if (static_cast<int>(t.exponents.exponents.size()) != d)
        throw ConfigError(std::string(what) + ": exponent dimension mismatch");
      for (int e : t.exponents.exponents)
        if (e < 0) throw ConfigError(std::string(what) + ": negative exponent");
      if (t.coeff.rows() != rows || t.coeff.cols() != cols)
        throw ConfigError(std::string(what) + ": coefficient matrix shape mismatch");
    }
  };
  check(A_terms, n, n, "A_terms");
  check(B_terms, n, m, "B_terms");
}

int UncertainSystem::max_monomial_degree() const {
  int deg = 0;
  for (const PolyTerm& t : A_terms) deg = std::max(deg, t.exponents.total_degree());
  for (const PolyTerm& t : B_terms) deg = std::max(deg, t.exponents.total_degree());
  return deg;
}

namespace {

double eval_monomial(const MultiIndex& mi, const Eigen::VectorXd& delta) {
  double v = 1.0;
  for (int j = 0; j < static_cast<int>(mi.exponents.size()); ++j)
    for (int e = 0; e < mi.exponents[j]; ++e) v *= delta(j);
  return v;
}

Eigen::MatrixXd eval_poly_matrix(const std::vector<PolyTerm>& terms, int rows,
                                 int cols, const Eigen::VectorXd& delta) {
  Eigen::MatrixXd M = Eigen::MatrixXd::Zero(rows, cols);
  for (const PolyTerm& t : terms) M += eval_monomial(t.exponents, delta) * t.coeff;
  return M;
}

}  // namespace

Eigen::MatrixXd UncertainSystem::eval_A(const Eigen::VectorXd& delta) const {
  return eval_poly_matrix(A_terms, n, n, delta);
}

Eigen::MatrixXd UncertainSystem::eval_B(const Eigen::VectorXd& delta) const {
  return eval_poly_matrix(B_terms, n, m, delta);
}

std::vector<Eigen::MatrixXd> project_matrix(const std::vector<PolyTerm>& terms,
                                            const BasisSet& basis,
                                            int rows, int cols,
                                            ProjectionDiagnostics* diag) {
  const int p1 = basis.size();
  int term_degree = 0;
  for (const PolyTerm& t : terms)
    term_degree = std::max(term_degree, t.exponents.total_degree());

  // integrand degrees: term_degree + r (numerators), 2r (norms),
  // 2*term_degree (diagnostics); one rule covers all three
  int qdeg = std::max({term_degree + basis.max_degree(), 2 * term_degree,
                       2 * basis.max_degree()});
  int nodes = (qdeg + 1 + 1) / 2 + 1;
  QuadratureRule rule = tensor_quadrature(basis.families(), nodes);

  // Constant terms project exactly onto phi_0; only the varying part goes
  // through quadrature, so a constant system keeps exact zero coefficients.
  Eigen::MatrixXd constant_part = Eigen::MatrixXd::Zero(rows, cols);
  std::vector<PolyTerm> varying;
  for (const PolyTerm& t : terms) {
    if (t.exponents.total_degree() == 0)
      constant_part += t.coeff;
    else
      varying.push_back(t);
  }

  std::vector<Eigen::MatrixXd> coeffs(p1, Eigen::MatrixXd::Zero(rows, cols));
  Eigen::VectorXd norms = Eigen::VectorXd::Zero(p1);
  double total_energy = 0.0;

  for (int node = 0; node < rule.num_nodes(); ++node) {
    Eigen::VectorXd pt = rule.nodes.row(node).transpose();
    double w = rule.weights(node);
    Eigen::MatrixXd M = eval_poly_matrix(varying, rows, cols, pt);
    for (int i = 0; i < p1; ++i) {
      double phi = basis.eval(i, pt);
      coeffs[i] += (w * phi) * M;
      norms(i) += w * phi * phi;
    }
    total_energy += w * (M + constant_part).squaredNorm();
  }
  for (int i = 0; i < p1; ++i) coeffs[i] /= norms(i);
  coeffs[0] += constant_part;

  if (diag != nullptr) {
    double captured = 0.0;
    for (int i = 0; i < p1; ++i)
      captured += norms(i) * coeffs[i].squaredNorm();
    double residual = std::max(0.0, total_energy - captured);
    diag->relative_truncation_energy =
        total_energy > 0.0 ? residual / total_energy : 0.0;
    diag->truncated = term_degree > basis.max_degree();
  }
  return coeffs;
}

ChaosSystem assemble(const std::vector<Eigen::MatrixXd>& A_coeffs,
                     const std::vector<Eigen::MatrixXd>& B_coeffs,
                     std::shared_ptr<const BasisSet> basis,
                     std::shared_ptr<const ProductTensors> tensors) {
  const int p1 = basis->size();
  if (static_cast<int>(A_coeffs.size()) != p1 ||
      static_cast<int>(B_coeffs.size()) != p1)
    throw ConfigError("assemble: need p+1 coefficient matrices");
  const int n = static_cast<int>(A_coeffs[0].rows());
  const int m = static_cast<int>(B_coeffs[0].cols());

  ChaosSystem sys;
  sys.basis = std::move(basis);
  sys.tensors = std::move(tensors);
  sys.n = n;
  sys.m = m;
  sys.Abold = Eigen::MatrixXd::Zero(n * p1, n * p1);
  sys.Bbold = Eigen::MatrixXd::Zero(n * p1, m * p1);

  const ProductTensors& t = *sys.tensors;
  for (int i = 0; i < p1; ++i) {
    const double inv_h2 = 1.0 / t.W(i);
    for (int k = 0; k < p1; ++k) {
      Eigen::MatrixXd Ablk = Eigen::MatrixXd::Zero(n, n);
      Eigen::MatrixXd Bblk = Eigen::MatrixXd::Zero(n, m);
      for (int j = 0; j < p1; ++j) {
        const double e = t.E[i](j, k);
        if (e == 0.0) continue;
        Ablk += e * A_coeffs[j];
        Bblk += e * B_coeffs[j];
      }
      sys.Abold.block(i * n, k * n, n, n) = inv_h2 * Ablk;
      sys.Bbold.block(i * n, k * m, n, m) = inv_h2 * Bblk;
    }
  }
  return sys;
}

ChaosSystem make_chaos_system(const UncertainSystem& sys, int order,
                              ProjectionDiagnostics* diag) {
  sys.validate();
  auto basis = std::make_shared<BasisSet>(sys.marginals, order);
  auto tensors = std::make_shared<ProductTensors>(build_tensors(*basis));
  ProjectionDiagnostics diag_a, diag_b;
  auto A_coeffs = project_matrix(sys.A_terms, *basis, sys.n, sys.n,
                                 diag ? &diag_a : nullptr);
  auto B_coeffs = project_matrix(sys.B_terms, *basis, sys.n, sys.m,
                                 diag ? &diag_b : nullptr);
  if (diag != nullptr) {
    diag->truncated = diag_a.truncated || diag_b.truncated;
    diag->relative_truncation_energy = std::max(
        diag_a.relative_truncation_energy, diag_b.relative_truncation_energy);
  }
  return assemble(A_coeffs, B_coeffs, std::move(basis), std::move(tensors));
}

ChaosState propagate(const ChaosSystem& sys, const ChaosState& X,
                     const ChaosControl& U) {
  if (X.coeffs.size() != sys.state_dim() || U.coeffs.size() != sys.control_dim())
    throw ConfigError("propagate: dimension mismatch");
  ChaosState next(sys.n, sys.blocks());
  next.coeffs = sys.Abold * X.coeffs + sys.Bbold * U.coeffs;
  return next;
}

std::vector<ChaosState> propagate_open_loop(const ChaosSystem& sys,
                                            const ChaosState& X0, int steps) {
  std::vector<ChaosState> traj;
  traj.reserve(steps + 1);
  traj.push_back(X0);
  ChaosControl zero(sys.m, sys.blocks());
  for (int k = 0; k < steps; ++k)
    traj.push_back(propagate(sys, traj.back(), zero));
  return traj;
}

Eigen::MatrixXd closed_loop_matrix(const ChaosSystem& sys,
                                   const Eigen::MatrixXd& K) {
  if (K.rows() != sys.m || K.cols() != sys.n)
    throw ConfigError("closed_loop_matrix: K must be m x n");
  const int p1 = sys.blocks();
  Eigen::MatrixXd MK = Eigen::MatrixXd::Zero(sys.m * p1, sys.n * p1);
  for (int i = 1; i < p1; ++i)
    MK.block(i * sys.m, i * sys.n, sys.m, sys.n) = K;
  return sys.Abold + sys.Bbold * MK;
}

Eigen::VectorXd mean(const ChaosState& X) { return X.block(0); }

Eigen::MatrixXd covariance(const ChaosState& X, const ProductTensors& tensors) {
  const int n = X.n;
  if (X.blocks() != tensors.size())
    throw ConfigError("covariance: tensor size mismatch");
  Eigen::MatrixXd C = Eigen::MatrixXd::Zero(n, n);
  for (int i = 1; i < X.blocks(); ++i) {
    Eigen::VectorXd xi = X.block(i);
    C += tensors.W(i) * xi * xi.transpose();
  }
  return C;
}

double moment(const ChaosState& X, int q, int component, const BasisSet& basis,
              const MomentOptions& options) {
  if (q < 1) throw DomainError("moment: order must be >= 1");
  if (component < 0 || component >= X.n)
    throw DomainError("moment: component out of range");
  const int p1 = basis.size();
  double terms = std::pow(static_cast<double>(p1), q);
  if (terms > options.term_cap)
    throw LimitError("moment: contraction term count exceeds cap");

  QuadratureRule rule = tensor_quadrature(
      basis.families(), nodes_for_product(q, std::max(1, basis.max_degree())));
  Eigen::MatrixXd phi(p1, rule.num_nodes());
  for (int node = 0; node < rule.num_nodes(); ++node) {
    Eigen::VectorXd pt = rule.nodes.row(node).transpose();
    for (int i = 0; i < p1; ++i) phi(i, node) = basis.eval(i, pt);
  }
  Eigen::VectorXd xc(p1);
  for (int i = 0; i < p1; ++i) xc(i) = X.block(i)(component);

  // q-fold contraction over index tuples, odometer order
  std::vector<int> idx(q, 0);
  double total = 0.0;
  const std::int64_t count = static_cast<std::int64_t>(terms);
  for (std::int64_t t = 0; t < count; ++t) {
    double coeff = 1.0;
    for (int a = 0; a < q; ++a) coeff *= xc(idx[a]);
    if (coeff != 0.0) {
      double inner = 0.0;
      for (int node = 0; node < rule.num_nodes(); ++node) {
        double prod = rule.weights(node);
        for (int a = 0; a < q; ++a) prod *= phi(idx[a], node);
        inner += prod;
      }
      total += coeff * inner;
    }
    for (int a = q - 1; a >= 0; --a) {
      if (++idx[a] < p1) break;
      idx[a] = 0;
    }
  }
  return total;
}

Eigen::VectorXd eval_state(const ChaosState& X, const BasisSet& basis,
                           const Eigen::VectorXd& delta) {
  Eigen::VectorXd x = Eigen::VectorXd::Zero(X.n);
  for (int i = 0; i < X.blocks(); ++i) x += basis.eval(i, delta) * X.block(i);
  return x;
}

Eigen::VectorXd eval_control(const ChaosControl& U, const BasisSet& basis,
                             const Eigen::VectorXd& delta) {
  Eigen::VectorXd u = Eigen::VectorXd::Zero(U.m);
  for (int i = 0; i < U.blocks(); ++i) u += basis.eval(i, delta) * U.block(i);
  return u;
}

}  // namespace pcrhc
