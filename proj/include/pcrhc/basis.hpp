#ifndef PCRHC_BASIS_HPP_
#define PCRHC_BASIS_HPP_

#include <Eigen/Core>

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "pcrhc/errors.hpp"

namespace pcrhc {

// ---------------------------------------------------------------------------
// Distributions and polynomial families
// ---------------------------------------------------------------------------

enum class DistKind { gaussian, uniform, gamma, beta };
enum class FamilyKind { hermite, legendre, laguerre, jacobi };

std::string to_string(DistKind k);
std::string to_string(FamilyKind k);

/// One marginal of the uncertainty vector. Supports:
///   gaussian       standard normal on R
///   uniform        uniform on [-1, 1]
///   gamma          shape `a` (> 0), unit scale, on [0, inf)
///   beta           shape (a, b), mapped affinely onto [-1, 1]
struct Marginal {
  DistKind kind = DistKind::uniform;
  double a = 0.0;
  double b = 0.0;

  static Marginal gaussian() { return {DistKind::gaussian, 0.0, 0.0}; }
  static Marginal uniform() { return {DistKind::uniform, 0.0, 0.0}; }
  static Marginal gamma(double shape) { return {DistKind::gamma, shape, 0.0}; }
  static Marginal beta(double a, double b) { return {DistKind::beta, a, b}; }

  /// Analytic raw moment E[Delta^q] of the marginal.
  double raw_moment(int q) const;
};

/// A classical orthogonal polynomial family whose weight function is the
/// probability density of the paired distribution. Probabilists' Hermite
/// pairs with the standard normal so that the density is the weight with no
/// rescaling; degree 0 is identically 1 for every family.
struct PolynomialFamily {
  FamilyKind kind = FamilyKind::legendre;
  double alpha = 0.0;  // jacobi/laguerre shape, > -1
  double beta = 0.0;   // jacobi only, > -1

  /// The family matched to a marginal (Gaussian-Hermite, Uniform-Legendre,
  /// Gamma-Laguerre, Beta-Jacobi). Gamma shape a maps to Laguerre alpha=a-1,
  /// Beta(a, b) on [-1,1] maps to Jacobi alpha=b-1, beta=a-1.
  static PolynomialFamily for_marginal(const Marginal& m);

  /// Validates a (family, distribution) pair against the matching above.
  /// Throws ConfigError on a mismatched pair.
  static PolynomialFamily paired(FamilyKind kind, const Marginal& m);
};

/// Value of the classical orthogonal polynomial of `degree` at `point`,
/// evaluated by the three-term recurrence. With strict_domain set, points
/// outside the family's support are rejected with DomainError.
double eval_poly(const PolynomialFamily& family, int degree, double point,
                 bool strict_domain = false);

// ---------------------------------------------------------------------------
// Multivariate basis
// ---------------------------------------------------------------------------

/// Exponent vector of a d-variate monomial / tensor-product basis term.
struct MultiIndex {
  std::vector<int> exponents;

  int total_degree() const;
  bool operator==(const MultiIndex& other) const = default;
};

/// Number of basis terms p+1 = (d+r)! / (d! r!).
/// Throws OverflowError if the count does not fit in 64 bits.
std::uint64_t basis_size(int d, int r);

/// Tensor-product orthogonal-polynomial basis truncated by total degree.
/// Terms are ordered graded-lexicographically: total degree ascending and,
/// within a degree, exponent tuples in lexicographically descending order.
/// Term 0 is always the all-zeros index (the constant polynomial).
class BasisSet {
 public:
  BasisSet(std::vector<Marginal> marginals, int max_degree);

  int dim() const { return static_cast<int>(marginals_.size()); }
  int max_degree() const { return max_degree_; }
  int size() const { return static_cast<int>(terms_.size()); }  // p + 1
  const std::vector<MultiIndex>& terms() const { return terms_; }
  const std::vector<PolynomialFamily>& families() const { return families_; }
  const std::vector<Marginal>& marginals() const { return marginals_; }

  /// phi_i(point), the product of univariate polynomials per dimension.
  double eval(int term, const Eigen::VectorXd& point) const;

 private:
  std::vector<Marginal> marginals_;
  std::vector<PolynomialFamily> families_;
  int max_degree_ = 0;
  std::vector<MultiIndex> terms_;
};

// ---------------------------------------------------------------------------
// Quadrature
// ---------------------------------------------------------------------------

/// Gaussian quadrature for a probability density: weights sum to one and the
/// rule integrates polynomials up to degree 2*n-1 exactly.
struct QuadratureRule {
  Eigen::MatrixXd nodes;   // n_nodes x d
  Eigen::VectorXd weights; // n_nodes
  int num_nodes() const { return static_cast<int>(weights.size()); }
};

/// Univariate Gauss rule via Golub-Welsch on the recurrence Jacobi matrix.
QuadratureRule gauss_quadrature(const PolynomialFamily& family, int n_nodes);

/// Tensor-product rule with `nodes_per_dim` univariate nodes per dimension.
QuadratureRule tensor_quadrature(const std::vector<PolynomialFamily>& families,
                                 int nodes_per_dim);

/// Per-dimension node count for exact q-fold products of basis polynomials
/// of degree <= r, with one node of margin: ceil((q*r+1)/2) + 1.
int nodes_for_product(int q, int r);

// ---------------------------------------------------------------------------
// Inner-product tensors
// ---------------------------------------------------------------------------

/// W, E_i and F of the Galerkin projection:
///   W   diag of squared norms <phi_i^2>, W_00 = 1
///   E_i (E_i)_{jk} = <phi_i phi_j phi_k>, symmetric, E_0 = W
///   F   <phi_i> = (1, 0, ..., 0)
struct ProductTensors {
  Eigen::VectorXd W;               // p+1 diagonal entries
  std::vector<Eigen::MatrixXd> E;  // p+1 matrices of size (p+1) x (p+1)
  Eigen::VectorXd F;               // p+1
  int size() const { return static_cast<int>(W.size()); }
};

/// Computes the tensors by tensorized Gaussian quadrature exact for triple
/// products. The Gram matrix <phi_i phi_j> is formed in full and checked
/// against h_i^2 delta_ij to 1e-12 before its diagonal is accepted as W.
ProductTensors build_tensors(const BasisSet& basis);

/// q-fold inner product <phi_{i1} ... phi_{iq}> under the joint density.
double nproduct(const BasisSet& basis, std::span<const int> indices);

}  // namespace pcrhc

#endif  // PCRHC_BASIS_HPP_
