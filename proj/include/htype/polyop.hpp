#pragma once

#include "htype/common.hpp"

#include <map>
#include <string>
#include <vector>

namespace htype {

/// Exponent vector over the coordinates (x^1..x^n, z^1..z^m).
using Exponent = std::vector<int>;

/// Polynomial in (x, z): exponent -> coefficient.
struct Poly {
  int N = 0;
  std::map<Exponent, double> c;

  Poly() = default;
  explicit Poly(int dim) : N(dim) {}

  static Poly constant(int dim, double v) {
    Poly p(dim);
    if (v != 0.0) p.c[Exponent(dim, 0)] = v;
    return p;
  }
  static Poly coordinate(int dim, int k, double v = 1.0) {
    Poly p(dim);
    Exponent e(dim, 0);
    e[k] = 1;
    if (v != 0.0) p.c[e] = v;
    return p;
  }

  bool zero() const { return c.empty(); }

  void add(const Exponent& e, double v) {
    if (v == 0.0) return;
    auto it = c.find(e);
    if (it == c.end()) {
      c.emplace(e, v);
    } else {
      it->second += v;
      if (it->second == 0.0) c.erase(it);
    }
  }

  Poly& operator+=(const Poly& o) {
    for (const auto& [e, v] : o.c) add(e, v);
    return *this;
  }
  friend Poly operator+(Poly a, const Poly& b) { return a += b; }
  friend Poly operator*(double s, Poly p) {
    if (s == 0.0) return Poly(p.N);
    for (auto& [e, v] : p.c) v *= s;
    return p;
  }
  friend Poly operator*(const Poly& a, const Poly& b) {
    Poly r(a.N);
    for (const auto& [ea, va] : a.c)
      for (const auto& [eb, vb] : b.c) {
        Exponent e(a.N);
        for (int k = 0; k < a.N; ++k) e[k] = ea[k] + eb[k];
        r.add(e, va * vb);
      }
    return r;
  }

  Poly derivative(int k) const {
    Poly r(N);
    for (const auto& [e, v] : c)
      if (e[k] > 0) {
        Exponent f = e;
        f[k] -= 1;
        r.add(f, v * e[k]);
      }
    return r;
  }

  double operator()(const Vec& y) const {
    double s = 0.0;
    for (const auto& [e, v] : c) {
      double t = v;
      for (int k = 0; k < N; ++k)
        for (int j = 0; j < e[k]; ++j) t *= y(k);
      s += t;
    }
    return s;
  }

  /// Drop coefficients below tol (relative to the largest).
  void prune(double tol = 1e-14) {
    double mx = 0.0;
    for (const auto& [e, v] : c) mx = std::max(mx, std::abs(v));
    for (auto it = c.begin(); it != c.end();) it = std::abs(it->second) <= tol * mx ? c.erase(it) : std::next(it);
  }
};

/// Weighted degree with w(x) = 1, w(z) = 2.
inline int weighted_degree(int n, const Exponent& e) {
  int d = 0;
  for (std::size_t k = 0; k < e.size(); ++k) d += (static_cast<int>(k) < n ? 1 : 2) * e[k];
  return d;
}

/// Vector field with polynomial components in the coordinate basis.
using PolyField = std::vector<Poly>;

inline PolyField zero_field(int N) { return PolyField(N, Poly(N)); }

inline PolyField operator*(const Poly& f, const PolyField& V) {
  PolyField r;
  for (const Poly& p : V) r.push_back(f * p);
  return r;
}

inline PolyField operator+(PolyField a, const PolyField& b) {
  for (std::size_t k = 0; k < a.size(); ++k) a[k] += b[k];
  return a;
}

/// V(f) for a polynomial f.
inline Poly apply(const PolyField& V, const Poly& f) {
  Poly r(f.N);
  for (std::size_t k = 0; k < V.size(); ++k) r += V[k] * f.derivative(static_cast<int>(k));
  return r;
}

/**
 * @brief Differential operator with polynomial coefficients: sum over
 *        derivative multi-indices D of coeff_D(x, z) d^D.
 */
struct PolyDiffOp {
  int n = 0, m = 0;
  int order = 0;  // declared homogeneous order
  std::map<Exponent, Poly> terms;

  PolyDiffOp() = default;
  PolyDiffOp(int n_, int m_, int order_) : n(n_), m(m_), order(order_) {}

  int N() const { return n + m; }

  void add(const Exponent& d, const Poly& p) {
    if (p.zero()) return;
    auto it = terms.find(d);
    if (it == terms.end()) {
      terms.emplace(d, p);
    } else {
      it->second += p;
      if (it->second.zero()) terms.erase(it);
    }
  }

  PolyDiffOp& operator+=(const PolyDiffOp& o) {
    for (const auto& [d, p] : o.terms) add(d, p);
    return *this;
  }

  bool zero() const { return terms.empty(); }

  std::size_t term_count() const {
    std::size_t k = 0;
    for (const auto& [d, p] : terms) k += p.c.size();
    return k;
  }

  /// Largest deviation of a term's weight (coefficient weight minus derivative weight) from `order`; 0 if homogeneous.
  int weight_defect() const {
    int worst = 0;
    for (const auto& [d, p] : terms)
      for (const auto& [e, v] : p.c) worst = std::max(worst, std::abs(weighted_degree(n, e) - weighted_degree(n, d) - order));
    return worst;
  }

  void prune(double tol = 1e-14) {
    for (auto it = terms.begin(); it != terms.end();) {
      it->second.prune(tol);
      it = it->second.zero() ? terms.erase(it) : std::next(it);
    }
  }

  /**
   * @brief Apply to a function given its derivatives at y.
   *
   * deriv(D) returns d^D f(y).
   */
  template <class Deriv>
  double apply(const Vec& y, Deriv&& deriv) const {
    double s = 0.0;
    for (const auto& [d, p] : terms) s += p(y) * deriv(d);
    return s;
  }
};

/// First-order operator of a field.
inline PolyDiffOp as_operator(const PolyField& V, int n, int m, int order) {
  PolyDiffOp op(n, m, order);
  const int N = n + m;
  for (int k = 0; k < N; ++k) {
    Exponent d(N, 0);
    d[k] = 1;
    op.add(d, V[k]);
  }
  return op;
}

/// Multiplication operator by a function (order = weight of f).
inline PolyDiffOp multiplication(const Poly& f, int n, int m, int order) {
  PolyDiffOp op(n, m, order);
  op.add(Exponent(n + m, 0), f);
  return op;
}

/// Composition V o W of two fields: V^b W^c d_b d_c + V^b (d_b W^c) d_c.
inline PolyDiffOp compose(const PolyField& V, const PolyField& W, int n, int m, int order) {
  PolyDiffOp op(n, m, order);
  const int N = n + m;
  for (int b = 0; b < N; ++b) {
    if (V[b].zero()) continue;
    for (int c = 0; c < N; ++c) {
      if (W[c].zero()) continue;
      Exponent d(N, 0);
      d[b] += 1;
      d[c] += 1;
      op.add(d, V[b] * W[c]);
      Exponent d1(N, 0);
      d1[c] = 1;
      op.add(d1, V[b] * W[c].derivative(b));
    }
  }
  return op;
}

}  // namespace htype
