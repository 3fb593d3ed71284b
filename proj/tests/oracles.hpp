#ifndef PCRHC_TESTS_ORACLES_HPP_
#define PCRHC_TESTS_ORACLES_HPP_

// Test-only oracles: symbolic polynomial arithmetic in the monomial basis
// integrated against analytic distribution moments. Every inner product the
// library computes by Gaussian quadrature can be cross-checked here through
// an entirely different path (coefficient recurrences + closed-form moments).

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "pcrhc/basis.hpp"

namespace oracles {

// Dense univariate polynomial, c[k] the coefficient of x^k.
struct Poly {
  std::vector<double> c;

  int degree() const { return static_cast<int>(c.size()) - 1; }
  double eval(double x) const {
    double v = 0.0;
    for (int k = degree(); k >= 0; --k) v = v * x + c[k];
    return v;
  }
};

inline Poly constant(double v) { return Poly{{v}}; }

inline Poly mul(const Poly& a, const Poly& b) {
  Poly r;
  r.c.assign(a.c.size() + b.c.size() - 1, 0.0);
  for (std::size_t i = 0; i < a.c.size(); ++i)
    for (std::size_t j = 0; j < b.c.size(); ++j) r.c[i + j] += a.c[i] * b.c[j];
  return r;
}

inline Poly add(const Poly& a, const Poly& b) {
  Poly r;
  r.c.assign(std::max(a.c.size(), b.c.size()), 0.0);
  for (std::size_t i = 0; i < a.c.size(); ++i) r.c[i] += a.c[i];
  for (std::size_t i = 0; i < b.c.size(); ++i) r.c[i] += b.c[i];
  return r;
}

inline Poly scale(const Poly& a, double s) {
  Poly r = a;
  for (double& v : r.c) v *= s;
  return r;
}

// Closed-form raw moments E[x^q] of the supported marginals, written out
// independently of the library implementation.
inline double moment_uniform(int q) { return q % 2 ? 0.0 : 1.0 / (q + 1); }

inline double moment_gaussian(int q) {
  if (q % 2) return 0.0;
  double v = 1.0;
  for (int i = q - 1; i > 0; i -= 2) v *= i;  // (q-1)!!
  return v;
}

inline double moment_gamma(double shape, int q) {
  double v = 1.0;
  for (int i = 0; i < q; ++i) v *= shape + i;
  return v;
}

// x = 2y - 1, y ~ Beta(a, b): binomial expansion over E[y^j].
inline double moment_beta(double a, double b, int q) {
  double v = 0.0;
  for (int j = 0; j <= q; ++j) {
    double binom = 1.0;
    for (int i = 1; i <= j; ++i) binom = binom * (q - i + 1) / i;
    double ym = 1.0;
    for (int i = 0; i < j; ++i) ym *= (a + i) / (a + b + i);
    const double sign = ((q - j) % 2 == 0) ? 1.0 : -1.0;
    v += binom * std::ldexp(1.0, j) * sign * ym;
  }
  return v;
}

inline double moment(const pcrhc::Marginal& m, int q) {
  switch (m.kind) {
    case pcrhc::DistKind::uniform: return moment_uniform(q);
    case pcrhc::DistKind::gaussian: return moment_gaussian(q);
    case pcrhc::DistKind::gamma: return moment_gamma(m.a, q);
    case pcrhc::DistKind::beta: return moment_beta(m.a, m.b, q);
  }
  throw std::logic_error("oracle moment: unknown marginal");
}

// E[p(x)] under the marginal: coefficient-weighted moment sum.
inline double integrate(const Poly& p, const pcrhc::Marginal& m) {
  double v = 0.0;
  for (int k = 0; k <= p.degree(); ++k) v += p.c[k] * moment(m, k);
  return v;
}

// Monomial coefficients of the classical orthogonal polynomial of the family
// paired with the marginal, built by the standard three-term recurrences in
// coefficient space (the library evaluates pointwise; this path never does).
inline Poly family_poly(const pcrhc::Marginal& m, int degree) {
  if (degree == 0) return constant(1.0);
  Poly pm1 = constant(1.0);
  Poly p;
  const Poly x{{0.0, 1.0}};
  switch (m.kind) {
    case pcrhc::DistKind::uniform:  // Legendre
      p = x;
      for (int n = 1; n < degree; ++n) {
        Poly next = scale(add(scale(mul(x, p), 2.0 * n + 1.0), scale(pm1, -double(n))),
                          1.0 / (n + 1.0));
        pm1 = p;
        p = next;
      }
      return p;
    case pcrhc::DistKind::gaussian:  // probabilists' Hermite
      p = x;
      for (int n = 1; n < degree; ++n) {
        Poly next = add(mul(x, p), scale(pm1, -double(n)));
        pm1 = p;
        p = next;
      }
      return p;
    case pcrhc::DistKind::gamma: {  // generalized Laguerre, alpha = shape - 1
      const double al = m.a - 1.0;
      p = add(constant(1.0 + al), scale(x, -1.0));
      for (int n = 1; n < degree; ++n) {
        Poly next = scale(add(add(scale(p, 2.0 * n + 1.0 + al), scale(mul(x, p), -1.0)),
                              scale(pm1, -(n + al))),
                          1.0 / (n + 1.0));
        pm1 = p;
        p = next;
      }
      return p;
    }
    case pcrhc::DistKind::beta: {  // Jacobi, alpha = b - 1, beta = a - 1
      const double al = m.b - 1.0, be = m.a - 1.0;
      p = add(constant(al + 1.0 - (al + be + 2.0) / 2.0), scale(x, (al + be + 2.0) / 2.0));
      for (int n = 2; n <= degree; ++n) {
        const double s = 2.0 * n + al + be;
        const double c1 = 2.0 * n * (n + al + be) * (s - 2.0);
        const double c2 = s - 1.0;
        const double c3 = s * (s - 2.0);
        const double c4 = al * al - be * be;
        const double c5 = 2.0 * (n + al - 1.0) * (n + be - 1.0) * s;
        Poly next = scale(add(mul(add(scale(x, c3), constant(c4)), scale(p, c2)),
                              scale(pm1, -c5)),
                          1.0 / c1);
        pm1 = p;
        p = next;
      }
      return p;
    }
  }
  throw std::logic_error("oracle family_poly: unknown marginal");
}

// <phi_{i1} ... phi_{iq}> for a tensor-product basis: per-dimension product
// of analytic integrals of the multiplied univariate polynomials.
inline double nproduct(const std::vector<pcrhc::Marginal>& marginals,
                       const std::vector<pcrhc::MultiIndex>& terms,
                       const std::vector<int>& indices) {
  double v = 1.0;
  for (std::size_t dimension = 0; dimension < marginals.size(); ++dimension) {
    Poly prod = constant(1.0);
    for (int idx : indices)
      prod = mul(prod, family_poly(marginals[dimension],
                                   terms[idx].exponents[dimension]));
    v *= integrate(prod, marginals[dimension]);
  }
  return v;
}

// Scalar DARE fixed point p = q + a^2 p - (a b p)^2 / (r + b^2 p), iterated
// from p = q; converges for stabilizable scalars.
inline double scalar_dare(double a, double b, double q, double r) {
  double p = q;
  for (int it = 0; it < 10000; ++it) {
    const double next = q + a * a * p - (a * b * p) * (a * b * p) / (r + b * b * p);
    if (std::abs(next - p) <= 1e-15 * std::max(1.0, std::abs(next))) return next;
    p = next;
  }
  return p;
}

}  // namespace oracles

#endif  // PCRHC_TESTS_ORACLES_HPP_
