#pragma once

#include "htype/connection.hpp"
#include "htype/parallel.hpp"
#include "htype/polyop.hpp"
#include "htype/privileged.hpp"
#include "htype/volume.hpp"

#include <boost/math/quadrature/gauss.hpp>

#include <array>
#include <cmath>
#include <functional>
#include <numbers>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace htype {

class QuadratureError : public Error {
 public:
  QuadratureError(const std::string& what, double bound) : Error(what), tail_bound(bound) {}
  double tail_bound;
};

namespace detail {

/// P-point Gauss-Legendre rule on [-1, 1] as (node, weight) pairs.
template <unsigned P>
const std::vector<std::pair<double, double>>& gauss_rule() {
  static const std::vector<std::pair<double, double>> rule = [] {
    using G = boost::math::quadrature::gauss<double, P>;
    const auto& x = G::abscissa();
    const auto& w = G::weights();
    std::vector<std::pair<double, double>> r;
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (x[i] == 0.0) {
        r.emplace_back(0.0, w[i]);
      } else {
        r.emplace_back(-x[i], w[i]);
        r.emplace_back(x[i], w[i]);
      }
    }
    std::sort(r.begin(), r.end());
    return r;
  }();
  return rule;
}

/// Composite rule on [a, b] with `panels` equal panels.
template <unsigned P>
std::vector<std::pair<double, double>> composite_rule(double a, double b, int panels) {
  std::vector<std::pair<double, double>> out;
  const double h = (b - a) / panels;
  for (int k = 0; k < panels; ++k) {
    const double c = a + (k + 0.5) * h;
    for (const auto& [x, w] : gauss_rule<P>()) out.emplace_back(c + 0.5 * h * x, 0.5 * h * w);
  }
  return out;
}

inline double sphere_area(int k) {  // |S^{k-1}|
  return 2.0 * std::pow(std::numbers::pi, 0.5 * k) / std::tgamma(0.5 * k);
}

/// psi_nu(s) = s^{-nu} J_nu(s) for nu, nu+1, nu+2; nu >= -1/2 and nu integer or half-integer.
inline std::array<double, 3> psi3(double nu, double s) {
  std::array<double, 3> out{};
  if (s < 2.0) {
    const double q = -0.25 * s * s;
    for (int k = 0; k < 3; ++k) {
      const double v = nu + k;
      double term = 1.0 / std::tgamma(v + 1.0), sum = term;
      for (int j = 0; j < 60; ++j) {
        term *= q / ((j + 1.0) * (v + j + 1.0));
        sum += term;
        if (std::abs(term) < 1e-18 * std::abs(sum)) break;
      }
      out[k] = sum * std::pow(2.0, -v);
    }
    return out;
  }
  const double twice = 2.0 * nu;
  if (std::abs(twice - std::round(twice)) < 1e-12 && static_cast<long>(std::round(twice)) % 2 != 0) {
    // half-integer: spherical Bessel functions by upward recurrence
    const double c = std::sqrt(2.0 / std::numbers::pi);
    const int l0 = static_cast<int>(std::round(nu - 0.5));  // -1 for nu = -1/2
    const double sn = std::sin(s), cs = std::cos(s);
    double jm1 = cs / s, j0 = sn / s;  // j_{-1}, j_0
    std::vector<double> j{jm1, j0};
    for (int l = 0; l < l0 + 2; ++l) j.push_back((2.0 * l + 1.0) / s * j[l + 1] - j[l]);
    for (int k = 0; k < 3; ++k) {
      const int l = l0 + k;  // psi_{l+1/2} = c s^{-l} j_l, with j_{-1} = cos(s)/s giving c cos(s)
      out[k] = c * j[l + 1] * std::pow(s, -l);
    }
    return out;
  }
  for (int k = 0; k < 3; ++k) out[k] = std::cyl_bessel_j(nu + k, s) * std::pow(s, -(nu + k));
  return out;
}

/// log(sinh u) for u > 0 without overflow.
inline double log_sinh(double u) { return u + std::log1p(-std::exp(-2.0 * u)) - std::numbers::ln2; }

/// Mehler factors at time t: W = (2 rho t / sinh 2 rho t)^{n/2} and g = rho coth(2 rho t) / 2, with d/drho.
struct Mehler {
  double W, dW, g, dg;
};

inline Mehler mehler(int n, double t, double rho) {
  const double u = 2.0 * rho * t;
  Mehler r{};
  if (u < 1e-4) {
    const double u2 = u * u;
    const double f = 1.0 - u2 / 6.0;
    r.W = std::pow(f, 0.5 * n);
    r.dW = r.W * 0.5 * n * (-u / 3.0) * 2.0 * t;
    r.g = (1.0 + u2 / 3.0) / (4.0 * t);
    r.dg = 0.5 * (2.0 * u / 3.0);
    return r;
  }
  const double ls = log_sinh(u);
  r.W = std::exp(0.5 * n * (std::log(u) - ls));
  const double e2 = std::exp(-2.0 * u);
  const double coth = (1.0 + e2) / (1.0 - e2);
  r.dW = r.W * 0.5 * n * (1.0 / u - coth) * 2.0 * t;
  r.g = 0.5 * rho * coth;
  const double u_sinh2 = 4.0 * u * e2 / ((1.0 - e2) * (1.0 - e2));
  r.dg = 0.5 * (coth - u_sinh2);
  return r;
}

}  // namespace detail

/// Kernel derivative moments at (t, |x|^2, |z|): d_x K = -2 x I10, d_z K = z I01, and so on.
struct KernelMoments {
  double I00 = 0, I10 = 0, I20 = 0, I01 = 0, I02 = 0, I11 = 0;
};

/// Value, gradient and Hessian of the kernel at one point.
struct KernelJet {
  double value = 0.0;
  Vec grad;
  Mat hess;

  double derivative(const Exponent& d) const {
    int ord = 0, a = -1, b = -1;
    for (std::size_t k = 0; k < d.size(); ++k)
      for (int j = 0; j < d[k]; ++j) {
        (ord == 0 ? a : b) = static_cast<int>(k);
        ++ord;
      }
    if (ord == 0) return value;
    if (ord == 1) return grad(a);
    if (ord == 2) return hess(a, b);
    throw Error("kernel jet holds derivatives up to order 2");
  }
};

struct LambdaQuadrature {
  double radius = 0.0;     // truncation of |lambda| at t = 1
  int nodes_per_panel = 20;
  double panel = 2.0;      // panel width at t = 1; narrowed to 24/|z| for oscillation
  double tail_bound = 0.0;  // bound on the truncated tail relative to K(1;0,0)
};

/**
 * @brief Heat kernel of sum X_a^2 on the H-type group of (n, m), against
 *        Lebesgue measure in exponential coordinates.
 *
 * K(t;x,z) = (2pi)^{-m} int e^{-i<lambda,z>} M_t^lambda(x) dlambda, reduced
 * to a radial integral in |lambda| with the Bessel form of the sphere
 * average. Depends on x and z only through |x| and |z|.
 */
class GroupKernel {
 public:
  GroupKernel(int n, int m, double tail_tol = 1e-12) : n_(n), m_(m), nu_(0.5 * m - 1.0) {
    if (n < 1 || m < 1) throw Error("group kernel needs n, m >= 1");
    choose_radius(tail_tol);
  }
  explicit GroupKernel(const CliffordRep& rep, double tail_tol = 1e-12) : GroupKernel(rep.n, rep.m, tail_tol) {}

  int n() const { return n_; }
  int m() const { return m_; }
  int Q() const { return n_ + 2 * m_; }
  const LambdaQuadrature& quadrature() const { return quad_; }

  KernelMoments moments(double t, double x2, double r, bool derivatives = true) const {
    if (!(t > 0.0)) throw Error("heat kernel needs t > 0");
    const double pref = std::pow(2.0 * std::numbers::pi, -0.5 * m_) * std::pow(4.0 * std::numbers::pi * t, -0.5 * n_);
    double lam = (derivatives ? quad_.radius : radius0_) / t;
    if (x2 > 0.0) lam = std::min(lam, 100.0 * 2.0 / x2 + 2.0 / t);  // e^{-g|x|^2} <= e^{-rho |x|^2 / 2}
    // 20-point panels resolve a phase span of 24 below 1e-13
    double h = quad_.panel / t;
    if (r > 0.0) h = std::min(h, 24.0 / r);
    const int panels = std::max(1, static_cast<int>(std::ceil(lam / h)));
    h = lam / panels;
    KernelMoments out;
    const auto& rule = detail::gauss_rule<20>();
    for (int p = 0; p < panels; ++p) {
      const double c = (p + 0.5) * h;
      for (const auto& [xi, wi] : rule) {
        const double rho = c + 0.5 * h * xi;
        const double w = 0.5 * h * wi;
        const detail::Mehler mh = detail::mehler(n_, t, rho);
        const double base = w * pref * std::pow(rho, m_ - 1) * mh.W * std::exp(-mh.g * x2);
        const auto ps = detail::psi3(nu_, rho * r);
        out.I00 += base * ps[0];
        if (!derivatives) continue;
        const double r2 = rho * rho;
        out.I10 += base * mh.g * ps[0];
        out.I20 += base * mh.g * mh.g * ps[0];
        out.I01 += -base * r2 * ps[1];
        out.I02 += base * r2 * r2 * ps[2];
        out.I11 += -base * mh.g * r2 * ps[1];
      }
    }
    return out;
  }

  double operator()(double t, const Vec& y) const {
    const double x2 = y.head(n_).squaredNorm();
    const double r = y.tail(m_).norm();
    return moments(t, x2, r, false).I00;
  }

  double operator()(double t, const Vec& x, const Vec& z) const {
    Vec y(n_ + m_);
    y << x, z;
    return (*this)(t, y);
  }

  KernelJet jet(double t, const Vec& y) const {
    const int N = n_ + m_;
    const Vec x = y.head(n_), z = y.tail(m_);
    const KernelMoments k = moments(t, x.squaredNorm(), z.norm(), true);
    KernelJet j;
    j.value = k.I00;
    j.grad = Vec::Zero(N);
    j.hess = Mat::Zero(N, N);
    for (int a = 0; a < n_; ++a) {
      j.grad(a) = -2.0 * x(a) * k.I10;
      for (int b = 0; b < n_; ++b) j.hess(a, b) = 4.0 * x(a) * x(b) * k.I20 - (a == b ? 2.0 * k.I10 : 0.0);
      for (int i = 0; i < m_; ++i) j.hess(a, n_ + i) = j.hess(n_ + i, a) = -2.0 * x(a) * z(i) * k.I11;
    }
    for (int i = 0; i < m_; ++i) {
      j.grad(n_ + i) = z(i) * k.I01;
      for (int l = 0; l < m_; ++l) j.hess(n_ + i, n_ + l) = (i == l ? k.I01 : 0.0) + z(i) * z(l) * k.I02;
    }
    return j;
  }

 private:
  void choose_radius(double tail_tol) {
    // Integrand of I_{pk} at t = 1 is bounded for rho >= 1 by
    // pref * rho^{m-1} * (4.1 rho e^{-2 rho})^{n/2} * (0.52 rho)^p * rho^{2k} * psi_max.
    const double pref = std::pow(2.0 * std::numbers::pi, -0.5 * m_) * std::pow(4.0 * std::numbers::pi, -0.5 * n_);
    quad_.radius = radius0_ = 60.0;
    const double k0 = moments(1.0, 0.0, 0.0, false).I00;
    auto radius_for = [&](int order, double* tail) {
      for (double lam = 4.0;; lam += 1.0) {
        double bound = 0.0;
        for (int p = 0; p <= order; ++p)
          for (int k = 0; p + k <= order; ++k) {
            const double a = m_ - 1 + 0.5 * n_ + p + 2 * k;
            if (lam * n_ <= 2.0 * a) {
              bound = HUGE_VAL;
              continue;
            }
            const double psimax = std::pow(2.0, -(nu_ + k)) / std::tgamma(nu_ + k + 1.0);
            const double c = pref * std::pow(4.1, 0.5 * n_) * std::pow(0.52, p) * psimax;
            bound = std::max(bound, c * std::pow(lam, a) * std::exp(-n_ * lam) / (n_ - a / lam));
          }
        if (bound <= tail_tol * k0) {
          *tail = bound / k0;
          return lam;
        }
        if (lam > 2000.0) throw QuadratureError("lambda truncation insufficient for requested tail tolerance", bound / k0);
      }
    };
    double tail0 = 0.0;
    radius0_ = radius_for(0, &tail0);
    quad_.radius = radius_for(2, &quad_.tail_bound);
    quad_.panel = 2.0;
  }

  int n_, m_;
  double nu_;
  double radius0_ = 0.0;  // truncation for values only
  LambdaQuadrature quad_;
};


// ---------------------------------------------------------------------------
// Polynomial frame fields and the operators of the expansion.

/// X^_a = d_a + J^i_{ab} x^b d_{z_i}.
inline std::vector<PolyField> group_fields(int n, int m, const std::vector<Mat>& J) {
  const int N = n + m;
  std::vector<PolyField> X(n, zero_field(N));
  for (int a = 0; a < n; ++a) {
    X[a][a] = Poly::constant(N, 1.0);
    for (int i = 0; i < m; ++i)
      for (int b = 0; b < n; ++b) X[a][n + i] += Poly::coordinate(N, b, J[i](b, a));
  }
  return X;
}

/// Sum of X^_a o X^_a, the (negated) nilpotent sub-Laplacian as an operator of order -2.
inline PolyDiffOp group_sublaplacian(int n, int m, const std::vector<Mat>& J) {
  PolyDiffOp L(n, m, -2);
  for (const PolyField& X : group_fields(n, m, J)) L += compose(X, X, n, m, -2);
  return L;
}

struct AOperators {
  PolyDiffOp A_minus1;  // order -1
  PolyDiffOp A0;        // order 0
  double parallel_torsion_residual = 0.0;
};

/**
 * @brief Order -1 and order 0 parts of sum X_a^2 + omega_a X_a in the
 *        privileged chart at q.
 *
 * X_a = X^_a + X_a^(0) + X_a^(1) + ..., with
 * X^(0)_a = (1/3) J^{i(1)}_{ab} x^b Z^_i,
 * X^(1)_a = f^b_a X^_b + h^i_a Z^_i and the first-order term
 * (1/2) R^b_{g b a} x^g X^_a from omega_a.
 */
/// Homogeneous parts X^_a, X_a^(0), X_a^(1) of the frame as polynomial fields.
struct ExpansionFields {
  std::vector<PolyField> Xh, X0, X1;
};

inline ExpansionFields expansion_fields(const TaylorTensors& T) {
  const int n = T.n, m = T.m, N = n + m;
  auto X = [&](int k) { return Poly::coordinate(N, k); };
  ExpansionFields F{group_fields(n, m, T.J), std::vector<PolyField>(n, zero_field(N)), std::vector<PolyField>(n, zero_field(N))};
  auto& X0 = F.X0;
  auto& X1 = F.X1;
  const auto& Xh = F.Xh;
  for (int a = 0; a < n; ++a) {
    for (int i = 0; i < m; ++i)
      for (int b = 0; b < n; ++b)
        for (int g = 0; g < n; ++g) X0[a][n + i] += (2.0 / 3.0 * T.dJ[g][i](b, a)) * (X(g) * X(b));

    for (int b = 0; b < n; ++b) {
      Poly f(N);
      for (int g = 0; g < n; ++g)
        for (int d = 0; d < n; ++d) f += (T.R(b, a, g, d) / 6.0) * (X(g) * X(d));
      if (!f.zero()) X1[a] = X1[a] + f * Xh[b];
    }
    for (int i = 0; i < m; ++i) {
      Poly h(N);
      for (int b = 0; b < n; ++b)
        for (int j = 0; j < m; ++j) h += (T.R(n + i, a, b, n + j) / 8.0) * (X(n + j) * X(b));
      for (int b = 0; b < n; ++b)
        for (int g = 0; g < n; ++g)
          for (int bp = 0; bp < n; ++bp)
            for (int gp = 0; gp < n; ++gp)
              h += (T.Jc(i, b, g) * T.R(g, a, bp, gp) / 24.0) * (X(b) * X(bp) * X(gp));
      // (1/4) x^b J^{i(2)}_{ab}
      for (int b = 0; b < n; ++b) {
        for (int g = 0; g < n; ++g)
          for (int d = 0; d < n; ++d) h += (0.125 * T.XX[i][g][d](b, a)) * (X(b) * X(g) * X(d));
        for (int j = 0; j < m; ++j) h += (0.125 * T.dJ[n + j][i](b, a)) * (X(b) * X(n + j));
      }
      X1[a][n + i] += 2.0 * h;
    }
  }
  return F;
}

inline AOperators assemble_A_ops(const FoliationModel& M, const Vec& p = Vec()) {
  const TaylorTensors T = taylor_tensors(M, p);
  const int n = M.n, m = M.m, N = n + m;
  const ExpansionFields F = expansion_fields(T);
  const auto& Xh = F.Xh;
  const auto& X0 = F.X0;
  const auto& X1 = F.X1;

  AOperators out{PolyDiffOp(n, m, -1), PolyDiffOp(n, m, 0), 0.0};
  for (int a = 0; a < n; ++a) {
    out.A_minus1 += compose(Xh[a], X0[a], n, m, -1);
    out.A_minus1 += compose(X0[a], Xh[a], n, m, -1);
    out.A0 += compose(Xh[a], X1[a], n, m, 0);
    out.A0 += compose(X1[a], Xh[a], n, m, 0);
    out.A0 += compose(X0[a], X0[a], n, m, 0);
    Poly drift(N);
    for (int g = 0; g < n; ++g)
      for (int b = 0; b < n; ++b) drift += Poly::coordinate(N, g, 0.5 * T.R(b, g, b, a));
    if (!drift.zero()) out.A0 += as_operator(drift * Xh[a], n, m, 0);
  }
  out.parallel_torsion_residual = detail::parallel_torsion_residual(n, T.dJ);
  return out;
}


// ---------------------------------------------------------------------------
// Second heat invariant.

namespace detail {

struct Dual {
  double v = 0.0, d = 0.0;
};
inline Dual operator+(Dual a, Dual b) { return {a.v + b.v, a.d + b.d}; }
inline Dual operator-(Dual a, Dual b) { return {a.v - b.v, a.d - b.d}; }
inline Dual operator*(Dual a, Dual b) { return {a.v * b.v, a.v * b.d + a.d * b.v}; }
inline Dual operator*(double s, Dual a) { return {s * a.v, s * a.d}; }

/// One monomial term of A in the partial Fourier picture.
struct FourierTerm {
  double coeff = 0.0;  // includes (-i)^p, p even
  std::vector<int> P, dx, dz;
  int zj = -1;  // index of the z factor, or -1
};

/**
 * @brief Terms of A surviving the parity selection.
 *
 * A term x^P z^Z d^D contributes through d_x moments that vanish unless
 * P_a + D_a is even for every a, and through a polynomial of degree
 * |D_z| + |Z| in lambda/|lambda| whose sphere average vanishes when odd.
 */
inline std::vector<FourierTerm> fourier_terms(const PolyDiffOp& A) {
  const int n = A.n, m = A.m;
  std::vector<FourierTerm> out;
  for (const auto& [D, poly] : A.terms) {
    int ord = 0;
    for (int k = 0; k < n + m; ++k) ord += D[k];
    if (ord > 2) throw Error("Duhamel evaluation handles operators of order <= 2");
    for (const auto& [E, c] : poly.c) {
      FourierTerm t;
      t.P.assign(E.begin(), E.begin() + n);
      t.dx.assign(D.begin(), D.begin() + n);
      t.dz.assign(D.begin() + n, D.end());
      int zdeg = 0;
      for (int i = 0; i < m; ++i)
        if (E[n + i] > 0) {
          zdeg += E[n + i];
          t.zj = i;
        }
      if (zdeg > 1) throw Error("Duhamel evaluation handles coefficients of degree <= 1 in z");
      bool even = true;
      for (int a = 0; a < n; ++a) even = even && (t.P[a] + t.dx[a]) % 2 == 0;
      int p = zdeg;
      for (int i = 0; i < m; ++i) p += t.dz[i];
      if (!even || p % 2 != 0) continue;
      t.coeff = (p % 4 == 0 ? 1.0 : -1.0) * c;
      out.push_back(std::move(t));
    }
  }
  return out;
}

/**
 * @brief lambda-integrand of int K_s (A K_{1-s}) dxi at |lambda| = rho,
 *        including rho^{m-1} |S^{m-1}| (2 pi)^{-m}.
 *
 * The z-integral is done by Plancherel: K^_s(x, lambda) = M_s^{|lambda|}(x),
 * d_z -> -i lambda and z -> -i d_lambda on the second factor; the x-integral
 * is a product of one-dimensional Gaussian moments.
 */
inline double duhamel_integrand(int n, int m, const std::vector<FourierTerm>& terms, double s, double rho) {
  const Mehler ms = mehler(n, s, rho), mt = mehler(n, 1.0 - s, rho);
  const double C = std::pow(4.0 * std::numbers::pi * s, -0.5 * n) * ms.W;
  const double nt = std::pow(4.0 * std::numbers::pi * (1.0 - s), -0.5 * n);
  const double Cp = nt * mt.W, dCp = nt * mt.dW;
  const Dual B{mt.g, mt.dg};
  const Dual c = Dual{ms.g, 0.0} + B;
  // phi[e][k] = int x^e d^k e^{-b x^2} e^{-a x^2} dx, as a function of |mu| through b
  int emax = 0;
  for (const auto& t : terms)
    for (int a = 0; a < n; ++a) emax = std::max(emax, t.P[a] + 2);
  std::vector<Dual> mom(emax + 1);
  for (int e = 0; e <= emax; e += 2) {
    const double q = 0.5 * (e + 1);
    const double v = std::tgamma(q) * std::pow(c.v, -q);
    mom[e] = {v, -q * v / c.v * c.d};
  }
  auto phi = [&](int e, int k) -> Dual {
    if (k == 0) return mom[e];
    if (k == 1) return -2.0 * (B * mom[e + 1]);
    return 4.0 * (B * B * mom[e + 2]) - 2.0 * (B * mom[e]);
  };
  double sum = 0.0;
  for (const auto& t : terms) {
    Dual X{1.0, 0.0};
    for (int a = 0; a < n; ++a) X = X * phi(t.P[a], t.dx[a]);
    int dzt = 0;
    for (int i = 0; i < m; ++i) dzt += t.dz[i];
    double acc = 0.0;
    for (int k = 0; k < m; ++k) {  // omega = e_k; the integrand is even in omega
      bool on_k = true;
      for (int i = 0; i < m; ++i) on_k = on_k && (i == k || t.dz[i] == 0);
      const double mono = on_k ? std::pow(rho, dzt) : 0.0;
      if (t.zj < 0) {
        acc += Cp * mono * X.v;
        continue;
      }
      double dmono = 0.0;
      if (t.dz[t.zj] > 0) {
        bool rest_on_k = true;
        for (int i = 0; i < m; ++i) rest_on_k = rest_on_k && (i == k || t.dz[i] - (i == t.zj ? 1 : 0) == 0);
        if (rest_on_k) dmono = t.dz[t.zj] * std::pow(rho, dzt - 1);
      }
      acc += (t.zj == k ? (dCp * X.v + Cp * X.d) * mono : 0.0) + Cp * X.v * dmono;
    }
    sum += t.coeff * acc / m;
  }
  return C * sum * std::pow(rho, m - 1) * sphere_area(m) * std::pow(2.0 * std::numbers::pi, -m);
}

}  // namespace detail

/// int K(s;0,xi) (A K(1-s;.,0))(xi) dxi at one s, by the Fourier-side rule.
inline double duhamel_spatial(const PolyDiffOp& A, double s, double rho_panel = 1.0) {
  const auto terms = detail::fourier_terms(A);
  if (terms.empty()) return 0.0;
  const double lam = 50.0 / A.n + 10.0;
  double f = 0.0;
  for (const auto& [r, w] : detail::composite_rule<20>(0.0, lam, std::max(1, static_cast<int>(std::ceil(lam / rho_panel)))))
    f += w * detail::duhamel_integrand(A.n, A.m, terms, s, r);
  return f;
}

struct C1Options {
  int s_panels = 2;          // Gauss panels per half of [0, 1] in sqrt(s) or sqrt(1 - s)
  double rho_panel = 1.0;    // panel width in |lambda|
  double tolerance = 1e-8;   // requested absolute accuracy
  int threads = 0;
};

struct C1Estimate {
  double value = 0.0;  // against Lebesgue measure in privileged coordinates
  double error = 0.0;
  bool partial = false;  // error above the requested tolerance
  double popp_factor = 1.0;  // multiply Lebesgue-normalized values by this for Popp normalization
  double value_popp = 0.0;
  double error_popp = 0.0;
  int s_nodes = 0;
  int rho_nodes = 0;
  std::size_t terms = 0;
  double parallel_torsion_residual = 0.0;
};

/// Popp density of the nilpotent approximation in privileged coordinates is (4n)^{-m/2}.
inline double popp_kernel_factor(int n, int m) { return std::pow(4.0 * n, 0.5 * m); }

/**
 * @brief c1 = int_0^1 int K(s;0,xi) (A K(1-s;.,0))(xi) dxi ds for a
 *        weight-0 operator A.
 *
 * s is integrated by Gauss rules in sqrt(s) on [0, 1/2] and in sqrt(1-s) on
 * [1/2, 1]; |lambda| by composite Gauss panels. The error is the difference
 * from the same panels with 10-point rules.
 */
inline C1Estimate duhamel_c1(const PolyDiffOp& A, const C1Options& opt = {}) {
  const int n = A.n, m = A.m;
  C1Estimate out;
  out.popp_factor = popp_kernel_factor(n, m);
  out.terms = A.term_count();
  const auto terms = detail::fourier_terms(A);
  if (terms.empty()) return out;

  const double lam = 50.0 / n + 10.0;
  const int rp = std::max(1, static_cast<int>(std::ceil(lam / opt.rho_panel)));
  const auto rho20 = detail::composite_rule<20>(0.0, lam, rp);
  const auto rho10 = detail::composite_rule<10>(0.0, lam, rp);
  out.rho_nodes = static_cast<int>(rho20.size());

  struct Node {
    double s, w;
    bool fine;
  };
  std::vector<Node> nodes;
  const double half = std::sqrt(0.5);
  auto add_rule = [&](const std::vector<std::pair<double, double>>& r, bool fine) {
    for (const auto& [u, w] : r) {
      nodes.push_back({u * u, 2.0 * u * w, fine});
      nodes.push_back({1.0 - u * u, 2.0 * u * w, fine});
    }
  };
  add_rule(detail::composite_rule<20>(0.0, half, opt.s_panels), true);
  add_rule(detail::composite_rule<10>(0.0, half, opt.s_panels), false);

  std::vector<std::array<double, 2>> vals(nodes.size());
  parallel_blocks(static_cast<int>(nodes.size()), opt.threads > 0 ? opt.threads : default_threads(), [&](int k) {
    const Node& nd = nodes[k];
    double f = 0.0, g = 0.0;
    for (const auto& [r, w] : rho20) f += w * detail::duhamel_integrand(n, m, terms, nd.s, r);
    if (nd.fine)
      for (const auto& [r, w] : rho10) g += w * detail::duhamel_integrand(n, m, terms, nd.s, r);
    vals[k] = {f, g};
  });
  double fine = 0.0, coarse_s = 0.0, coarse_rho = 0.0;
  for (std::size_t k = 0; k < nodes.size(); ++k) {
    if (nodes[k].fine) {
      fine += nodes[k].w * vals[k][0];
      coarse_rho += nodes[k].w * vals[k][1];
      ++out.s_nodes;
    } else {
      coarse_s += nodes[k].w * vals[k][0];
    }
  }
  out.value = fine;
  out.error = std::abs(fine - coarse_s) + std::abs(fine - coarse_rho);
  out.partial = out.error > opt.tolerance;
  out.value_popp = out.value * out.popp_factor;
  out.error_popp = out.error * out.popp_factor;
  return out;
}

/// c1 at the base point of a model (parallel horizontal torsion required).
inline C1Estimate c1_estimate(const FoliationModel& M, const Vec& p = Vec(), const C1Options& opt = {}, double torsion_tol = 1e-10) {
  const AOperators ops = assemble_A_ops(M, p);
  if (ops.parallel_torsion_residual > torsion_tol)
    throw Error("c1 formula requires horizontally parallel torsion; residual " + std::to_string(ops.parallel_torsion_residual));
  C1Estimate e = duhamel_c1(ops.A0, opt);
  e.parallel_torsion_residual = ops.parallel_torsion_residual;
  return e;
}


struct C1MonteCarloOptions {
  int samples_per_node = 4000;
  unsigned long long seed = 7;
  int threads = 0;
};

struct C1MonteCarlo {
  double value = 0.0;
  double stderr_ = 0.0;
  double max_node_variance = 0.0;  // largest per-node variance of the weighted integrand
  long samples = 0;
  int s_nodes = 0;
};

/**
 * @brief Independent c1 estimate in physical space.
 *
 * For each s node (10-point Gauss in sqrt(s) and sqrt(1-s)) the spatial
 * integral is sampled from x ~ N(0, 3 s(1-s)), z_i ~ Laplace with rate
 * 0.4 (pi/2) / (s(1-s) sqrt(m)), which has heavier tails than
 * K(s;.) K(1-s;.) in every direction. Kernel values and derivatives come from
 * the lambda quadrature of GroupKernel.
 */
inline C1MonteCarlo duhamel_c1_monte_carlo(const PolyDiffOp& A, const C1MonteCarloOptions& opt = {}) {
  const int n = A.n, m = A.m, N = n + m;
  C1MonteCarlo out;
  if (A.zero()) return out;
  const GroupKernel K(n, m);
  struct Node {
    double s, w;
  };
  std::vector<Node> nodes;
  const double half = std::sqrt(0.5);
  for (const auto& [u, w] : detail::composite_rule<10>(0.0, half, 1)) {
    nodes.push_back({u * u, 2.0 * u * w});
    nodes.push_back({1.0 - u * u, 2.0 * u * w});
  }
  out.s_nodes = static_cast<int>(nodes.size());
  std::vector<std::array<double, 2>> res(nodes.size());
  parallel_blocks(static_cast<int>(nodes.size()), opt.threads > 0 ? opt.threads : default_threads(), [&](int k) {
    const double s = nodes[k].s, q = s * (1.0 - s);
    std::seed_seq seq{static_cast<std::uint32_t>(opt.seed & 0xffffffffu), static_cast<std::uint32_t>(opt.seed >> 32),
                      static_cast<std::uint32_t>(k)};
    std::mt19937_64 rng(seq);
    const double sx = std::sqrt(3.0 * q);
    const double rate = 0.4 * 0.5 * std::numbers::pi / (q * std::sqrt(static_cast<double>(m)));
    std::normal_distribution<double> nd(0.0, sx);
    std::exponential_distribution<double> ed(rate);
    std::uniform_int_distribution<int> sign(0, 1);
    const double log_norm_x = -0.5 * n * std::log(2.0 * std::numbers::pi * sx * sx);
    double mean = 0.0, m2 = 0.0;
    for (int j = 0; j < opt.samples_per_node; ++j) {
      Vec xi(N);
      double logq = log_norm_x;
      for (int a = 0; a < n; ++a) {
        xi(a) = nd(rng);
        logq -= 0.5 * xi(a) * xi(a) / (sx * sx);
      }
      for (int i = 0; i < m; ++i) {
        const double e = ed(rng);
        xi(n + i) = sign(rng) ? e : -e;
        logq += std::log(0.5 * rate) - rate * e;
      }
      const KernelJet jet = K.jet(1.0 - s, xi);
      const double a = A.apply(xi, [&](const Exponent& d) { return jet.derivative(d); });
      const double f = K(s, xi) * a * std::exp(-logq);
      const double delta = f - mean;
      mean += delta / (j + 1);
      m2 += delta * (f - mean);
    }
    res[k] = {mean, opt.samples_per_node > 1 ? m2 / (opt.samples_per_node - 1) : 0.0};
  });
  double var = 0.0;
  for (std::size_t k = 0; k < nodes.size(); ++k) {
    out.value += nodes[k].w * res[k][0];
    var += nodes[k].w * nodes[k].w * res[k][1] / opt.samples_per_node;
    out.max_node_variance = std::max(out.max_node_variance, res[k][1]);
  }
  out.stderr_ = std::sqrt(var);
  out.samples = static_cast<long>(nodes.size()) * opt.samples_per_node;
  return out;
}

/// c0 = (4n)^{m/2} K(1;0,0): the on-diagonal leading coefficient against Popp measure.
struct C0Value {
  double value = 0.0;
  double kernel_at_origin = 0.0;  // K(1;0,0) against Lebesgue measure
  double popp_factor = 1.0;
  std::string justification;
};

inline C0Value c0(const FoliationModel& M) {
  const GroupKernel K(M.n, M.m);
  C0Value v;
  v.kernel_at_origin = K.moments(1.0, 0.0, 0.0, false).I00;
  v.popp_factor = popp_kernel_factor(M.n, M.m);
  v.value = v.popp_factor * v.kernel_at_origin;
  v.justification =
      "kernel computed against Lebesgue measure in privileged coordinates; the nilpotent Popp density there is "
      "(4n)^{-m/2}, so Popp-normalized coefficients are Lebesgue ones times (4n)^{m/2}";
  return v;
}

// ---------------------------------------------------------------------------
// Kernel contracts.

struct KernelContracts {
  double homogeneity = 0.0;    // max relative |4^{Q/2} K(4;2x,4z) - K(1;x,z)| / K(1;x,z)
  double normalization = 0.0;  // |int K(1;.) - 1|
  double pde = 0.0;            // max |(d_t - sum X^2) K| on the test points
  double semigroup = 0.0;      // max |K(t1+t2) - K(t1) * K(t2)| relative to K(t1+t2;0)
  bool semigroup_checked = false;
};

inline std::vector<Vec> kernel_test_points(int n, int m) {
  std::vector<Vec> pts;
  pts.push_back(Vec::Zero(n + m));
  for (const Vec& y : koranyi_samples(n, m, 6, 1.0, 17)) pts.push_back(y);
  for (const Vec& y : koranyi_samples(n, m, 4, 2.0, 19)) pts.push_back(y);
  return pts;
}

inline double kernel_homogeneity(const GroupKernel& K, const std::vector<Vec>& pts) {
  const int n = K.n();
  double worst = 0.0;
  for (const Vec& y : pts) {
    Vec y2 = y;
    y2.head(n) *= 2.0;
    y2.tail(K.m()) *= 4.0;
    const double a = std::pow(4.0, 0.5 * K.Q()) * K(4.0, y2), b = K(1.0, y);
    worst = std::max(worst, std::abs(a - b) / b);
  }
  return worst;
}

/// int K(t;.) dLebesgue - 1, in polar coordinates for |x| and |z|.
inline double kernel_normalization(const GroupKernel& K, double t = 1.0, int threads = 0) {
  const int n = K.n(), m = K.m();
  const double ax = 13.0 * std::sqrt(t), hb = 2.0 * t;
  const auto ra = detail::composite_rule<20>(0.0, ax, 7);
  std::vector<double> rows(ra.size());
  parallel_blocks(static_cast<int>(ra.size()), threads > 0 ? threads : default_threads(), [&](int i) {
    const auto [a, wa] = ra[i];
    double acc = 0.0;
    // |z| panels until two panels in a row add less than 1e-14 of the row; the z-spread grows with |x|
    int quiet = 0;
    for (int p = 0; p < 200 && quiet < 2; ++p) {
      double panel = 0.0;
      for (const auto& [b, wb] : detail::composite_rule<20>(p * hb, (p + 1) * hb, 1))
        panel += wb * std::pow(b, m - 1) * K.moments(t, a * a, b, false).I00;
      acc += panel;
      quiet = std::abs(panel) <= 1e-14 * std::abs(acc) ? quiet + 1 : 0;
    }
    rows[i] = wa * std::pow(a, n - 1) * acc;
  });
  double total = 0.0;
  for (double r : rows) total += r;
  return std::abs(total * detail::sphere_area(n) * detail::sphere_area(m) - 1.0);
}

/// max |d_t K - sum X^_a^2 K| at the points, d_t by a five-point difference.
inline double kernel_pde_residual(const GroupKernel& K, const std::vector<Mat>& J, const std::vector<Vec>& pts, double t = 1.0) {
  const PolyDiffOp L = group_sublaplacian(K.n(), K.m(), J);
  const double h = 1e-3 * t;
  double worst = 0.0;
  for (const Vec& y : pts) {
    const double dt = (K(t - 2 * h, y) - 8 * K(t - h, y) + 8 * K(t + h, y) - K(t + 2 * h, y)) / (12 * h);
    const KernelJet jet = K.jet(t, y);
    const double lk = L.apply(y, [&](const Exponent& d) { return jet.derivative(d); });
    worst = std::max(worst, std::abs(dt - lk));
  }
  return worst;
}

/// Group law (x,z)*(x',z') = (x+x', z+z'+B(x,x')), B^i = J^i_{ab} x'^a x^b, matching the fields X^_a.
inline Vec group_product(int n, int m, const std::vector<Mat>& J, const Vec& g, const Vec& h) {
  Vec r = g + h;
  for (int i = 0; i < m; ++i) r(n + i) += h.head(n).dot(J[i] * g.head(n));
  return r;
}

/**
 * @brief max over points of |K(t1+t2; y) - int K(t1; w) K(t2; w^{-1} y) dw|
 *        relative to K(t1+t2; 0), by a product Gauss rule with `nodes`
 *        points per axis (20 per panel).
 */
inline double kernel_semigroup(const GroupKernel& K, const std::vector<Mat>& J, const std::vector<Vec>& pts, double t1 = 0.5,
                               double t2 = 0.5, int panels = 2, int threads = 0) {
  const int n = K.n(), m = K.m(), N = n + m;
  const double tm = std::max(t1, t2);
  const double lx = 8.0 * std::sqrt(tm), lz = 14.0 * tm;
  const auto rx = detail::composite_rule<20>(-lx, lx, panels);
  const auto rz = detail::composite_rule<20>(-lz, lz, panels);
  std::vector<const std::vector<std::pair<double, double>>*> axes;
  for (int k = 0; k < N; ++k) axes.push_back(k < n ? &rx : &rz);
  long total = 1;
  for (const auto* a : axes) total *= static_cast<long>(a->size());
  std::vector<Vec> w(total);
  std::vector<double> wt(total), k1(total);
  for (long idx = 0; idx < total; ++idx) {
    Vec v(N);
    double q = 1.0;
    long r = idx;
    for (int k = N - 1; k >= 0; --k) {
      const long sz = static_cast<long>(axes[k]->size());
      v(k) = (*axes[k])[r % sz].first;
      q *= (*axes[k])[r % sz].second;
      r /= sz;
    }
    w[idx] = v;
    wt[idx] = q;
  }
  const int th = threads > 0 ? threads : default_threads();
  const int blocks = static_cast<int>(std::min<long>(total, 256));
  auto sum_blocks = [&](auto&& term) {
    std::vector<double> part(blocks, 0.0);
    parallel_blocks(blocks, th, [&](int b) {
      double acc = 0.0;
      for (long idx = b; idx < total; idx += blocks) acc += term(idx);
      part[b] = acc;
    });
    double t = 0.0;
    for (double v : part) t += v;
    return t;
  };
  sum_blocks([&](long idx) {
    k1[idx] = K(t1, w[idx]);
    return 0.0;
  });
  const double ref = K(t1 + t2, Vec::Zero(N));
  double worst = 0.0;
  for (const Vec& y : pts) {
    const double conv = sum_blocks([&](long idx) { return wt[idx] * k1[idx] * K(t2, group_product(n, m, J, -w[idx], y)); });
    worst = std::max(worst, std::abs(conv - K(t1 + t2, y)) / ref);
  }
  return worst;
}

inline KernelContracts kernel_contracts(const CliffordRep& rep, bool semigroup = true, int threads = 0) {
  const GroupKernel K(rep);
  const std::vector<Mat>& J = rep.J;
  const auto pts = kernel_test_points(rep.n, rep.m);
  KernelContracts c;
  c.homogeneity = kernel_homogeneity(K, pts);
  c.normalization = kernel_normalization(K, 1.0, threads);
  c.pde = kernel_pde_residual(K, J, pts);
  if (semigroup && rep.n + rep.m <= 3) {
    std::vector<Vec> sp(pts.begin(), pts.begin() + 3);
    c.semigroup = kernel_semigroup(K, J, sp, 0.5, 0.5, 2, threads);
    c.semigroup_checked = true;
  }
  return c;
}

// ---------------------------------------------------------------------------
// Universal constants.

struct C1Site {
  std::string label;
  int n = 0, m = 0;
  double c1 = 0.0, error = 0.0;
  double kappa_h = 0.0, tau_v = 0.0;
};

struct UniversalFit {
  double C1 = 0.0, C2 = 0.0;
  double C1_error = 0.0, C2_error = 0.0;
  double residual = 0.0;  // ||c1 - fit|| / ||c1||
  int sites = 0;
  bool mixed_dimensions = false;
};

class RankDeficient : public Error {
 public:
  RankDeficient(const std::string& what, Vec direction, double coefficient, double residual)
      : Error(what), direction(std::move(direction)), coefficient(coefficient), residual(residual) {}
  Vec direction;       // unit vector in the (kappa_H, tau_V) plane spanned by the sites
  double coefficient;  // c1 = coefficient * <direction, (kappa_H, tau_V)> along it
  double residual;
};

/**
 * @brief Weighted least squares of c1 on (kappa_H, tau_V).
 *
 * Weights are 1/error^2 with errors floored at 1e-12 |c1|_max. Throws
 * RankDeficient, carrying the identifiable combination, when the sites do not
 * span the (kappa_H, tau_V) plane, and Error for fewer than 3 spanning sites.
 */
inline UniversalFit fit_universal_constants(const std::vector<C1Site>& sites) {
  if (sites.empty()) throw Error("no evaluation sites");
  const int k = static_cast<int>(sites.size());
  Mat X(k, 2);
  Vec y(k), w(k);
  double cmax = 0.0;
  for (const auto& s : sites) cmax = std::max(cmax, std::abs(s.c1));
  UniversalFit f;
  f.sites = k;
  for (int i = 0; i < k; ++i) {
    X(i, 0) = sites[i].kappa_h;
    X(i, 1) = sites[i].tau_v;
    y(i) = sites[i].c1;
    w(i) = 1.0 / std::max(sites[i].error, 1e-12 * std::max(cmax, 1e-300));
    f.mixed_dimensions = f.mixed_dimensions || sites[i].n != sites[0].n || sites[i].m != sites[0].m;
  }
  const Mat Xw = w.asDiagonal() * X;
  const Vec yw = w.asDiagonal() * y;
  Eigen::JacobiSVD<Mat> svd(X, Eigen::ComputeFullV);
  const Vec sv = svd.singularValues();
  if (sv.size() < 2 || sv(0) == 0.0 || sv(1) <= 1e-8 * sv(0)) {
    const Vec d = svd.matrixV().col(0);
    const Vec proj = X * d;
    const double den = (w.array().square() * proj.array().square()).sum();
    const double gamma = den > 0.0 ? (w.array().square() * proj.array() * y.array()).sum() / den : 0.0;
    const double yn = y.norm();
    const double res = yn > 0.0 ? (y - gamma * proj).norm() / yn : 0.0;
    throw RankDeficient(
        "rank-deficient design: the sites span only the direction (" + std::to_string(d(0)) + ", " + std::to_string(d(1)) +
            ") of (kappa_H, tau_V); add a site with tau_V independent of kappa_H (for m = 1 models tau_V = 0)",
        d, gamma, res);
  }
  // rank is settled first so two collinear sites still report the identifiable direction
  if (k < 3) throw Error("need at least 3 evaluation sites, got " + std::to_string(k));
  const Mat G = Xw.transpose() * Xw;
  const Vec beta = G.ldlt().solve(Xw.transpose() * yw);
  const Mat cov = G.inverse();
  f.C1 = beta(0);
  f.C2 = beta(1);
  f.C1_error = std::sqrt(cov(0, 0));
  f.C2_error = std::sqrt(cov(1, 1));
  const double yn = y.norm();
  f.residual = yn > 0.0 ? (y - X * beta).norm() / yn : 0.0;
  return f;
}

// ---------------------------------------------------------------------------
// Intrinsic sub-Laplacian in a privileged chart.

/**
 * @brief Delta_sub f = -(sum X_a^2 f + omega_a X_a f), omega_a = omega^b_a(X_b),
 *        with frame fields and connection forms from the chart.
 *
 * Derivatives of f and of the frame are taken by five-point differences
 * with step h.
 */
class SubLaplacian {
 public:
  explicit SubLaplacian(const PrivilegedChart& chart, double h = 1e-3) : chart_(&chart), h_(h) {}

  /// omega_a at y.
  Vec drift(const Vec& y) const {
    const int n = chart_->n(), N = chart_->N();
    const Mat X = chart_->frame_fields(y);
    const auto Om = chart_->connection_forms(y);
    Vec w = Vec::Zero(n);
    for (int a = 0; a < n; ++a)
      for (int b = 0; b < n; ++b)
        for (int c = 0; c < N; ++c) w(a) += Om[c](b, a) * X(c, b);
    return w;
  }

  double apply(const std::function<double(const Vec&)>& f, const Vec& y) const {
    const int n = chart_->n();
    const Mat X = chart_->frame_fields(y);
    const Vec w = drift(y);
    double out = 0.0;
    for (int a = 0; a < n; ++a) {
      auto Xf = [&](const Vec& p) { return gradient(f, p).dot(chart_->frame_fields(p).col(a)); };
      const Vec v = X.col(a);
      const double second = five_point([&](double e) { return Xf(y + e * v); });
      out += second + w(a) * gradient(f, y).dot(v);
    }
    return -out;
  }

  /// Same operator in divergence form, -(1/P) d_k(P X_a^k X_a f), with P the Popp density.
  double apply_divergence(const std::function<double(const Vec&)>& f, const Vec& y) const {
    const int n = chart_->n(), N = chart_->N();
    double out = 0.0;
    for (int k = 0; k < N; ++k) {
      auto flux = [&](double e) {
        Vec p = y;
        p(k) += e;
        const Mat X = chart_->frame_fields(p);
        const Vec g = gradient(f, p);
        double s = 0.0;
        for (int a = 0; a < n; ++a) s += X(k, a) * g.dot(X.col(a));
        return popp_density(*chart_, p) * s;
      };
      out += five_point(flux);
    }
    return -out / popp_density(*chart_, y);
  }

 private:
  template <class F>
  double five_point(F&& g) const {
    return (g(-2 * h_) - 8 * g(-h_) + 8 * g(h_) - g(2 * h_)) / (12 * h_);
  }
  Vec gradient(const std::function<double(const Vec&)>& f, const Vec& p) const {
    Vec g(p.size());
    for (int k = 0; k < p.size(); ++k)
      g(k) = five_point([&](double e) {
        Vec q = p;
        q(k) += e;
        return f(q);
      });
    return g;
  }

  const PrivilegedChart* chart_;
  double h_;
};

}  // namespace htype
