#include "pcrhc/basis.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <limits>

namespace pcrhc {

std::string to_string(DistKind k) {
  switch (k) {
    case DistKind::gaussian: return "gaussian";
    case DistKind::uniform: return "uniform";
    case DistKind::gamma: return "gamma";
    case DistKind::beta: return "beta";
  }
  return "?";
}

std::string to_string(FamilyKind k) {
  switch (k) {
    case FamilyKind::hermite: return "hermite";
    case FamilyKind::legendre: return "legendre";
    case FamilyKind::laguerre: return "laguerre";
    case FamilyKind::jacobi: return "jacobi";
  }
  return "?";
}

double Marginal::raw_moment(int q) const {
  if (q < 0) throw DomainError("raw_moment: order must be nonnegative");
  if (q == 0) return 1.0;
  switch (kind) {
    case DistKind::gaussian: {
      if (q % 2 == 1) return 0.0;
      double v = 1.0;  // (q-1)!!
      for (int i = q - 1; i > 0; i -= 2) v *= i;
      return v;
    }
    case DistKind::uniform:
      return (q % 2 == 1) ? 0.0 : 1.0 / (q + 1);
    case DistKind::gamma: {
      double v = 1.0;  // rising factorial a (a+1) ... (a+q-1)
      for (int i = 0; i < q; ++i) v *= a + i;
      return v;
    }
    case DistKind::beta: {
      // x = 2y - 1 with y ~ Beta(a, b) on [0, 1].
      // E[y^j] = prod_{i<j} (a+i)/(a+b+i)
      std::vector<double> ymom(q + 1, 1.0);
      for (int j = 1; j <= q; ++j)
        ymom[j] = ymom[j - 1] * (a + j - 1) / (a + b + j - 1);
      double v = 0.0, binom = 1.0;
      for (int j = 0; j <= q; ++j) {
        if (j > 0) binom = binom * (q - j + 1) / j;
        double sign = ((q - j) % 2 == 0) ? 1.0 : -1.0;
        v += binom * std::pow(2.0, j) * sign * ymom[j];
      }
      return v;
    }
  }
  return 0.0;
}

PolynomialFamily PolynomialFamily::for_marginal(const Marginal& m) {
  switch (m.kind) {
    case DistKind::gaussian:
      return {FamilyKind::hermite, 0.0, 0.0};
    case DistKind::uniform:
      return {FamilyKind::legendre, 0.0, 0.0};
    case DistKind::gamma:
      if (!(m.a > 0.0))
        throw ConfigError("gamma marginal requires shape > 0");
      return {FamilyKind::laguerre, m.a - 1.0, 0.0};
    case DistKind::beta:
      if (!(m.a > 0.0) || !(m.b > 0.0))
        throw ConfigError("beta marginal requires shapes > 0");
      return {FamilyKind::jacobi, m.b - 1.0, m.a - 1.0};
  }
  throw ConfigError("unknown marginal kind");
}

PolynomialFamily PolynomialFamily::paired(FamilyKind kind, const Marginal& m) {
  PolynomialFamily matched = for_marginal(m);
  if (matched.kind != kind)
    throw ConfigError("polynomial family " + to_string(kind) +
                      " does not match distribution " + to_string(m.kind));
  return matched;
}

namespace {

void check_support(const PolynomialFamily& family, double x) {
  switch (family.kind) {
    case FamilyKind::legendre:
    case FamilyKind::jacobi:
      if (x < -1.0 || x > 1.0)
        throw DomainError("point outside [-1, 1]");
      break;
    case FamilyKind::laguerre:
      if (x < 0.0) throw DomainError("point outside [0, inf)");
      break;
    case FamilyKind::hermite:
      break;
  }
}

}  // namespace

double eval_poly(const PolynomialFamily& family, int degree, double point,
                 bool strict_domain) {
  if (degree < 0) throw DomainError("eval_poly: degree must be >= 0");
  if (strict_domain) check_support(family, point);
  if (degree == 0) return 1.0;

  const double x = point;
  const double al = family.alpha, be = family.beta;
  double pm1 = 1.0;  // degree n-1
  double p = 0.0;    // degree n

  switch (family.kind) {
    case FamilyKind::hermite:
      p = x;
      for (int n = 1; n < degree; ++n) {
        double next = x * p - n * pm1;
        pm1 = p;
        p = next;
      }
      return p;
    case FamilyKind::legendre:
      p = x;
      for (int n = 1; n < degree; ++n) {
        double next = ((2 * n + 1) * x * p - n * pm1) / (n + 1);
        pm1 = p;
        p = next;
      }
      return p;
    case FamilyKind::laguerre:
      p = 1.0 + al - x;
      for (int n = 1; n < degree; ++n) {
        double next = ((2 * n + 1 + al - x) * p - (n + al) * pm1) / (n + 1);
        pm1 = p;
        p = next;
      }
      return p;
    case FamilyKind::jacobi:
      p = (al + 1.0) + (al + be + 2.0) * (x - 1.0) / 2.0;
      for (int n = 2; n <= degree; ++n) {
        double s = 2.0 * n + al + be;
        double c1 = 2.0 * n * (n + al + be) * (s - 2.0);
        double c2 = s - 1.0;
        double c3 = s * (s - 2.0);
        double c4 = al * al - be * be;
        double c5 = 2.0 * (n + al - 1.0) * (n + be - 1.0) * s;
        double next = (c2 * (c3 * x + c4) * p - c5 * pm1) / c1;
        pm1 = p;
        p = next;
      }
      return p;
  }
  throw DomainError("unknown polynomial family");
}

int MultiIndex::total_degree() const {
  int s = 0;
  for (int e : exponents) s += e;
  return s;
}

std::uint64_t basis_size(int d, int r) {
  if (d < 1) throw DomainError("basis_size: d must be >= 1");
  if (r < 0) throw DomainError("basis_size: r must be >= 0");
  // C(d+r, r), multiply/divide so every intermediate is itself a binomial
  std::uint64_t result = 1;
  int k = std::min(d, r);
  for (int i = 1; i <= k; ++i) {
    std::uint64_t num = static_cast<std::uint64_t>(d + r - k + i);
    std::uint64_t tmp;
    if (__builtin_mul_overflow(result, num, &tmp))
      throw OverflowError("basis_size: binomial overflows 64-bit range");
    result = tmp / static_cast<std::uint64_t>(i);
  }
  return result;
}

namespace {

void emit_compositions(int remaining, int dims, std::vector<int>& current,
                       std::vector<MultiIndex>& out) {
  if (dims == 1) {
    current.push_back(remaining);
    out.push_back(MultiIndex{current});
    current.pop_back();
    return;
  }
  for (int e = remaining; e >= 0; --e) {
    current.push_back(e);
    emit_compositions(remaining - e, dims - 1, current, out);
    current.pop_back();
  }
}

}  // namespace

BasisSet::BasisSet(std::vector<Marginal> marginals, int max_degree)
    : marginals_(std::move(marginals)), max_degree_(max_degree) {
  if (marginals_.empty()) throw ConfigError("BasisSet: need at least one marginal");
  if (max_degree_ < 0) throw ConfigError("BasisSet: order must be >= 0");
  families_.reserve(marginals_.size());
  for (const Marginal& m : marginals_)
    families_.push_back(PolynomialFamily::for_marginal(m));

  std::uint64_t expected = basis_size(dim(), max_degree_);
  std::vector<int> scratch;
  for (int deg = 0; deg <= max_degree_; ++deg)
    emit_compositions(deg, dim(), scratch, terms_);
  if (terms_.size() != expected)
    throw NumericError("BasisSet: term enumeration mismatch");
}

double BasisSet::eval(int term, const Eigen::VectorXd& point) const {
  const MultiIndex& mi = terms_.at(term);
  double v = 1.0;
  for (int j = 0; j < dim(); ++j)
    v *= eval_poly(families_[j], mi.exponents[j], point(j));
  return v;
}

namespace {

// Monic three-term recurrence coefficients x pi_k = pi_{k+1} + a_k pi_k +
// b_k pi_{k-1} for the family's probability-density weight.
void recurrence_coeffs(const PolynomialFamily& f, int k, double* a, double* b) {
  const double al = f.alpha, be = f.beta;
  switch (f.kind) {
    case FamilyKind::hermite:
      *a = 0.0;
      *b = k;
      return;
    case FamilyKind::legendre:
      *a = 0.0;
      *b = (k == 0) ? 1.0 : k * k / (4.0 * k * k - 1.0);
      return;
    case FamilyKind::laguerre:
      *a = 2.0 * k + al + 1.0;
      *b = k * (k + al);
      return;
    case FamilyKind::jacobi: {
      double s = 2.0 * k + al + be;
      *a = (k == 0) ? (be - al) / (al + be + 2.0)
                    : (be * be - al * al) / (s * (s + 2.0));
      if (k == 0)
        *b = 1.0;
      else if (k == 1)
        *b = 4.0 * (al + 1.0) * (be + 1.0) /
             ((al + be + 2.0) * (al + be + 2.0) * (al + be + 3.0));
      else
        *b = 4.0 * k * (k + al) * (k + be) * (k + al + be) /
             (s * s * (s + 1.0) * (s - 1.0));
      return;
    }
  }
}

}  // namespace

QuadratureRule gauss_quadrature(const PolynomialFamily& family, int n_nodes) {
  if (n_nodes < 1) throw DomainError("gauss_quadrature: need n_nodes >= 1");
  Eigen::VectorXd diag(n_nodes), subdiag(n_nodes);
  for (int k = 0; k < n_nodes; ++k) {
    double a, b;
    recurrence_coeffs(family, k, &a, &b);
    diag(k) = a;
    if (k > 0) subdiag(k - 1) = std::sqrt(b);
  }
  subdiag(n_nodes - 1) = 0.0;

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es;
  es.computeFromTridiagonal(diag, subdiag.head(std::max(0, n_nodes - 1)),
                            Eigen::ComputeEigenvectors);
  if (es.info() != Eigen::Success)
    throw NumericError("gauss_quadrature: tridiagonal eigensolve failed");

  QuadratureRule rule;
  rule.nodes = es.eigenvalues();
  rule.nodes.resize(n_nodes, 1);
  rule.weights.resize(n_nodes);
  // density is normalized, mu_0 = 1
  for (int i = 0; i < n_nodes; ++i) {
    double v0 = es.eigenvectors()(0, i);
    rule.weights(i) = v0 * v0;
  }
  return rule;
}

QuadratureRule tensor_quadrature(const std::vector<PolynomialFamily>& families,
                                 int nodes_per_dim) {
  const int d = static_cast<int>(families.size());
  std::vector<QuadratureRule> uni;
  uni.reserve(d);
  for (const PolynomialFamily& f : families)
    uni.push_back(gauss_quadrature(f, nodes_per_dim));

  std::int64_t total = 1;
  for (int j = 0; j < d; ++j) {
    total *= nodes_per_dim;
    if (total > (std::int64_t{1} << 31))
      throw LimitError("tensor_quadrature: node count too large");
  }

  QuadratureRule rule;
  rule.nodes.resize(total, d);
  rule.weights.resize(total);
  std::vector<int> idx(d, 0);
  for (std::int64_t row = 0; row < total; ++row) {
    double w = 1.0;
    for (int j = 0; j < d; ++j) {
      rule.nodes(row, j) = uni[j].nodes(idx[j], 0);
      w *= uni[j].weights(idx[j]);
    }
    rule.weights(row) = w;
    // odometer, last dimension fastest
    for (int j = d - 1; j >= 0; --j) {
      if (++idx[j] < nodes_per_dim) break;
      idx[j] = 0;
    }
  }
  return rule;
}

int nodes_for_product(int q, int r) {
  return (q * r + 1 + 1) / 2 + 1;  // ceil((q r + 1)/2) + 1
}

namespace {

// Basis values at quadrature nodes, row i = phi_i at every node.
Eigen::MatrixXd basis_values(const BasisSet& basis, const QuadratureRule& rule) {
  const int p1 = basis.size();
  Eigen::MatrixXd phi(p1, rule.num_nodes());
  for (int node = 0; node < rule.num_nodes(); ++node) {
    Eigen::VectorXd pt = rule.nodes.row(node).transpose();
    for (int i = 0; i < p1; ++i) phi(i, node) = basis.eval(i, pt);
  }
  return phi;
}

}  // namespace

ProductTensors build_tensors(const BasisSet& basis) {
  const int p1 = basis.size();
  QuadratureRule rule =
      tensor_quadrature(basis.families(), nodes_for_product(3, basis.max_degree()));
  Eigen::MatrixXd phi = basis_values(basis, rule);

  // Gram matrix <phi_i phi_j>, checked diagonal before use
  Eigen::MatrixXd gram = phi * rule.weights.asDiagonal() * phi.transpose();
  for (int i = 0; i < p1; ++i) {
    for (int j = 0; j < p1; ++j) {
      if (i == j) continue;
      double scale = std::max(1.0, std::sqrt(gram(i, i) * gram(j, j)));
      if (std::abs(gram(i, j)) > 1e-12 * scale)
        throw NumericError("build_tensors: basis is not orthogonal");
    }
  }

  ProductTensors t;
  t.W = gram.diagonal();
  if (std::abs(t.W(0) - 1.0) > 1e-12)
    throw NumericError("build_tensors: <phi_0^2> != 1");
  t.W(0) = 1.0;

  // <phi_i> = delta_i0: exact by orthogonality to phi_0 = 1, and verified
  // above through the Gram check to 1e-12. Using the exact value keeps
  // mean-extraction and variance tensors free of quadrature roundoff.
  t.F = Eigen::VectorXd::Zero(p1);
  t.F(0) = 1.0;

  t.E.reserve(p1);
  for (int i = 0; i < p1; ++i) {
    Eigen::MatrixXd Ei(p1, p1);
    for (int j = 0; j < p1; ++j) {
      for (int k = j; k < p1; ++k) {
        double s = 0.0;
        for (int node = 0; node < rule.num_nodes(); ++node)
          s += rule.weights(node) * phi(i, node) * phi(j, node) * phi(k, node);
        Ei(j, k) = s;
        Ei(k, j) = s;
      }
    }
    // Triple products with an index 0 are Gram entries, diagonal exactly.
    if (i == 0) {
      Ei = Eigen::MatrixXd(t.W.asDiagonal());
    } else {
      for (int k = 0; k < p1; ++k) {
        Ei(0, k) = k == i ? t.W(i) : 0.0;
        Ei(k, 0) = Ei(0, k);
      }
    }
    t.E.push_back(std::move(Ei));
  }
  return t;
}

double nproduct(const BasisSet& basis, std::span<const int> indices) {
  if (indices.empty()) throw DomainError("nproduct: need at least one index");
  for (int i : indices)
    if (i < 0 || i >= basis.size())
      throw DomainError("nproduct: basis index out of range");
  const int q = static_cast<int>(indices.size());
  QuadratureRule rule = tensor_quadrature(
      basis.families(), nodes_for_product(q, std::max(1, basis.max_degree())));
  Eigen::MatrixXd phi = basis_values(basis, rule);
  double s = 0.0;
  for (int node = 0; node < rule.num_nodes(); ++node) {
    double prod = rule.weights(node);
    for (int i : indices) prod *= phi(i, node);
    s += prod;
  }
  return s;
}

}  // namespace pcrhc
