#pragma once

#include "htype/clifford.hpp"
#include "htype/common.hpp"
#include "htype/models.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <optional>
#include <random>
#include <vector>

namespace htype {

/**
 * @brief Bott connection coefficients at a point.
 *
 * G(c, a, b) = Gamma^b_{ca} = omega^b_a(Y_c), i.e. nabla_{Y_c} Y_a = sum_b G(c, a, b) Y_b.
 * dG[d] holds Y_d(G) (exact zero for homogeneous models).
 */
struct ConnectionCoeffs {
  Tensor3 G;
  std::vector<Tensor3> dG;
  Tensor3 C;                // structure functions at the point
  std::vector<Tensor3> dC;  // their frame derivatives
};

/// R(d, a, b, c) = R^d_{abc} = nu^d(R(Y_a, Y_b) Y_c).
using CurvatureTensor = Tensor4;

namespace detail {

inline Tensor3 bott_from_structure(int n, int m, const Tensor3& C) {
  const int N = n + m;
  Tensor3 G(N);
  auto horiz = [n](int a) { return a < n; };
  for (int c = 0; c < N; ++c)
    for (int a = 0; a < N; ++a)
      for (int b = 0; b < N; ++b) {
        double v = 0.0;
        if (horiz(c) && horiz(a) && horiz(b)) {
          v = 0.5 * (C(b, c, a) - C(c, a, b) + C(a, b, c));
        } else if (!horiz(c) && horiz(a) && horiz(b)) {
          v = C(b, c, a);
        } else if (horiz(c) && !horiz(a) && !horiz(b)) {
          v = C(b, c, a);
        } else if (!horiz(c) && !horiz(a) && !horiz(b)) {
          v = 0.5 * (C(b, c, a) - C(c, a, b) + C(a, b, c));
        }
        G(c, a, b) = v;
      }
  return G;
}

}  // namespace detail

/**
 * @brief Solve the Bott connection axioms in closed form.
 *
 * Horizontal and vertical blocks come from the cyclic Koszul formula on the
 * corresponding structure constants; Gamma^b_{i a} = C^b_{i a} (horizontal
 * part of T(X, Z) = 0) and Gamma^j_{a i} = C^j_{a i} (vertical part).
 */
inline ConnectionCoeffs solve_bott(const FoliationModel& M, const Vec& p = Vec()) {
  ConnectionCoeffs K;
  K.C = structure(M, p);
  K.dC = structure_derivative(M, p);
  K.G = detail::bott_from_structure(M.n, M.m, K.C);
  const int N = M.N();
  K.dG.assign(N, Tensor3(N));
  if (!M.homogeneous()) {
    // Gamma is linear in C, so Y_d(Gamma) is Gamma built from Y_d(C).
    for (int d = 0; d < N; ++d) K.dG[d] = detail::bott_from_structure(M.n, M.m, K.dC[d]);
  }
  return K;
}

/// Torsion components T^d_{ab} = G(a, b, d) - G(b, a, d) - C(d, a, b).
inline Tensor3 torsion(const ConnectionCoeffs& K) {
  const int N = K.G.N;
  Tensor3 T(N);
  for (int d = 0; d < N; ++d)
    for (int a = 0; a < N; ++a)
      for (int b = 0; b < N; ++b) T(d, a, b) = K.G(a, b, d) - K.G(b, a, d) - K.C(d, a, b);
  return T;
}

struct AxiomResiduals {
  double metricity = 0.0;
  double splitting = 0.0;
  double torsion_hh = 0.0;  // horizontal part of T(H, H)
  double torsion_hv = 0.0;
  double torsion_vv = 0.0;
  double max() const { return std::max({metricity, splitting, torsion_hh, torsion_hv, torsion_vv}); }
};

inline AxiomResiduals axiom_residuals(int n, const ConnectionCoeffs& K) {
  AxiomResiduals r;
  const int N = K.G.N;
  auto h = [n](int a) { return a < n; };
  for (int c = 0; c < N; ++c)
    for (int a = 0; a < N; ++a)
      for (int b = 0; b < N; ++b) {
        r.metricity = std::max(r.metricity, std::abs(K.G(c, a, b) + K.G(c, b, a)));
        if (h(a) != h(b)) r.splitting = std::max(r.splitting, std::abs(K.G(c, a, b)));
      }
  Tensor3 T = torsion(K);
  for (int d = 0; d < N; ++d)
    for (int a = 0; a < N; ++a)
      for (int b = 0; b < N; ++b) {
        const double t = std::abs(T(d, a, b));
        if (h(a) && h(b)) {
          if (h(d)) r.torsion_hh = std::max(r.torsion_hh, t);
        } else if (h(a) != h(b)) {
          r.torsion_hv = std::max(r.torsion_hv, t);
        } else {
          r.torsion_vv = std::max(r.torsion_vv, t);
        }
      }
  return r;
}

/**
 * @brief Perturbation test of uniqueness.
 *
 * Each single entry, and each metric-compatible skew pair, of Gamma is moved by
 * eps; returns the smallest resulting axiom residual over all perturbations.
 */
inline double uniqueness_margin(int n, const ConnectionCoeffs& K, double eps = 1e-6) {
  const int N = K.G.N;
  double worst = 1e300;
  ConnectionCoeffs P = K;
  for (std::size_t idx = 0; idx < K.G.d.size(); ++idx) {
    P.G.d[idx] += eps;
    worst = std::min(worst, axiom_residuals(n, P).max());
    P.G.d[idx] = K.G.d[idx];
  }
  for (int c = 0; c < N; ++c)
    for (int a = 0; a < N; ++a)
      for (int b = a + 1; b < N; ++b) {
        P.G(c, a, b) += eps;
        P.G(c, b, a) -= eps;
        worst = std::min(worst, axiom_residuals(n, P).max());
        P.G(c, a, b) = K.G(c, a, b);
        P.G(c, b, a) = K.G(c, b, a);
      }
  return worst;
}

/**
 * @brief Curvature R^d_{abc} = Y_a(G^d_{bc}) - Y_b(G^d_{ac}) + G^e_{bc} G^d_{ae}
 *        - G^e_{ac} G^d_{be} - C^e_{ab} G^d_{ec}, with G^d_{bc} = G(b, c, d).
 *
 * On G/K the k-part of [Y_a, Y_b] acts on the frame through ad, which adds
 * -sum_k Ck(a, b) ad_k(d, c).
 */
inline CurvatureTensor curvature(const FoliationModel& M, const ConnectionCoeffs& K) {
  const int N = M.N();
  CurvatureTensor R(N);
  const Tensor3& G = K.G;
  for (int d = 0; d < N; ++d)
    for (int a = 0; a < N; ++a)
      for (int b = 0; b < N; ++b)
        for (int c = 0; c < N; ++c) {
          double s = K.dG[a](b, c, d) - K.dG[b](a, c, d);
          for (int e = 0; e < N; ++e) s += G(b, c, e) * G(a, e, d) - G(a, c, e) * G(b, e, d) - K.C(e, a, b) * G(e, c, d);
          R(d, a, b, c) = s;
        }
  if (M.homogeneous() && M.k > 0) {
    IsotropyData I = isotropy(M);
    for (int kk = 0; kk < M.k; ++kk)
      for (int d = 0; d < N; ++d)
        for (int a = 0; a < N; ++a)
          for (int b = 0; b < N; ++b)
            for (int c = 0; c < N; ++c) R(d, a, b, c) -= I.Ck[kk](a, b) * I.ad[kk](d, c);
  }
  return R;
}

inline double kappa_h(int n, const CurvatureTensor& R) {
  double s = 0.0;
  for (int a = 0; a < n; ++a)
    for (int b = 0; b < n; ++b) s += R(a, a, b, b);
  return s;
}

inline double kappa_h(const FoliationModel& M, const Vec& p = Vec()) { return kappa_h(M.n, curvature(M, solve_bott(M, p))); }

/// Column-acting J matrices read from the structure functions.
inline std::vector<Mat> j_matrices(int n, int m, const Tensor3& C) {
  std::vector<Mat> J;
  for (int i = 0; i < m; ++i) {
    Mat A(n, n);
    for (int a = 0; a < n; ++a)
      for (int b = 0; b < n; ++b) A(b, a) = -C(n + i, a, b);
    J.push_back(A);
  }
  return J;
}

/**
 * @brief Covariant derivatives of J: out[c][j] = (nabla_{Y_c} J)_{Z_j}, n x n,
 *        for every frame direction c.
 */
inline std::vector<std::vector<Mat>> nabla_j_all(int n, int m, const ConnectionCoeffs& K) {
  const int N = n + m;
  std::vector<Mat> J = j_matrices(n, m, K.C);
  std::vector<std::vector<Mat>> out(N, std::vector<Mat>(m));
  for (int c = 0; c < N; ++c) {
    Mat D(n, n);
    for (int g = 0; g < n; ++g)
      for (int b = 0; b < n; ++b) D(g, b) = K.G(c, b, g);
    std::vector<Mat> dJ = j_matrices(n, m, K.dC[c]);
    for (int j = 0; j < m; ++j) {
      Mat A = D * J[j] - J[j] * D + dJ[j];
      for (int kk = 0; kk < m; ++kk) A -= K.G(c, n + j, n + kk) * J[kk];
      out[c][j] = A;
    }
  }
  return out;
}

/// (nabla_{Z_i} J)_{Z_j} as out[i][j].
inline std::vector<std::vector<Mat>> nabla_j(const FoliationModel& M, const Vec& p = Vec()) {
  auto all = nabla_j_all(M.n, M.m, solve_bott(M, p));
  return std::vector<std::vector<Mat>>(all.begin() + M.n, all.end());
}

struct InvariantsReport {
  double kappa_h = 0.0;
  double tau_v = 0.0;
  std::optional<double> kappa_v;
  Eigen::MatrixXi sigma;
  Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> sigma_indeterminate;
  std::vector<std::vector<Vec>> n_eigenvalues;  // [i][j], ascending
  double parallel_torsion_residual = 0.0;
  double max_abs_r = 0.0;
};

namespace detail {

inline double parallel_torsion_residual(int n, const std::vector<std::vector<Mat>>& dJ) {
  double r = 0.0;
  for (int c = 0; c < n; ++c)
    for (const Mat& A : dJ[c]) r = std::max(r, max_abs(A));
  return r;
}

}  // namespace detail

/// Signature count with |lambda| < 1e-8 ||N|| treated as zero; flags near-threshold eigenvalues.
inline int signature(const Vec& ev, double norm, bool* indeterminate = nullptr) {
  const double zero = 1e-8 * norm;
  int s = 0;
  bool ind = false;
  for (int i = 0; i < ev.size(); ++i) {
    const double a = std::abs(ev(i));
    if (a > zero && a < 1e3 * zero) ind = true;
    if (a < zero) continue;
    s += ev(i) > 0 ? 1 : -1;
  }
  if (indeterminate) *indeterminate = ind;
  return s;
}

inline InvariantsReport invariants_from(const FoliationModel& M, const ConnectionCoeffs& K, const CurvatureTensor& R) {
  const int n = M.n, m = M.m;
  InvariantsReport out;
  out.kappa_h = kappa_h(n, R);
  out.max_abs_r = R.max_abs();
  auto dJ = nabla_j_all(n, m, K);
  out.parallel_torsion_residual = detail::parallel_torsion_residual(n, dJ);
  std::vector<Mat> J = j_matrices(n, m, K.C);
  out.sigma = Eigen::MatrixXi::Zero(m, m);
  out.sigma_indeterminate.setConstant(m, m, false);
  out.n_eigenvalues.assign(m, std::vector<Vec>(m));
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < m; ++j) {
      Mat Mij = J[j] * J[i] * dJ[n + i][j];
      out.tau_v += Mij.trace();
      Mat Nij = 0.5 * (Mij + Mij.transpose());
      Eigen::SelfAdjointEigenSolver<Mat> es(Nij);
      out.n_eigenvalues[i][j] = es.eigenvalues();
      const double norm = Nij.norm();
      bool ind = false;
      out.sigma(i, j) = norm > 0 ? signature(es.eigenvalues(), norm, &ind) : 0;
      out.sigma_indeterminate(i, j) = ind;
    }
  // Vertical sectional curvatures on coordinate planes and random planes.
  if (m >= 2) {
    std::vector<double> ks;
    auto sec = [&](const Vec& z, const Vec& w) {
      double s = 0.0;
      for (int a = 0; a < m; ++a)
        for (int b = 0; b < m; ++b)
          for (int c = 0; c < m; ++c)
            for (int d = 0; d < m; ++d) s += R(n + d, n + a, n + b, n + c) * z(a) * w(b) * w(c) * z(d);
      const double area = z.squaredNorm() * w.squaredNorm() - std::pow(z.dot(w), 2);
      return s / area;
    };
    for (int i = 0; i < m; ++i)
      for (int j = i + 1; j < m; ++j) ks.push_back(sec(Vec::Unit(m, i), Vec::Unit(m, j)));
    std::mt19937_64 rng(12345);
    std::normal_distribution<double> nd;
    for (int t = 0; t < 8; ++t) {
      Vec z(m), w(m);
      for (int a = 0; a < m; ++a) {
        z(a) = nd(rng);
        w(a) = nd(rng);
      }
      ks.push_back(sec(z, w));
    }
    const double k0 = ks.front();
    bool constant = true;
    for (double kv : ks)
      if (std::abs(kv - k0) > 1e-8 * std::max(1.0, std::abs(k0))) constant = false;
    if (constant) out.kappa_v = k0;
  }
  return out;
}

inline InvariantsReport invariants(const FoliationModel& M, const Vec& p = Vec()) {
  ConnectionCoeffs K = solve_bott(M, p);
  return invariants_from(M, K, curvature(M, K));
}

/**
 * @brief Second frame derivatives X_b X_g (J^i_{ad}) at the base point of a special frame.
 *
 * With horizontally parallel torsion the symmetric part vanishes and the
 * antisymmetric part is -1/2 J^j_{bg} Z_j(J^i_{ad}), where
 * Z_j(J^i_{ad})(q) = <(nabla_{Z_j} J)_{Z_i} X_a, X_d>.
 * Returned as XX[i][b][g] = n x n matrix with entry (d, a) = X_b X_g (J^i_{ad}).
 */
inline std::vector<std::vector<std::vector<Mat>>> special_frame_second_derivatives(int n, int m, const ConnectionCoeffs& K) {
  auto dJ = nabla_j_all(n, m, K);
  std::vector<Mat> J = j_matrices(n, m, K.C);
  std::vector<std::vector<std::vector<Mat>>> XX(m, std::vector<std::vector<Mat>>(n, std::vector<Mat>(n)));
  for (int i = 0; i < m; ++i)
    for (int b = 0; b < n; ++b)
      for (int g = 0; g < n; ++g) {
        Mat A = Mat::Zero(n, n);
        for (int j = 0; j < m; ++j) A -= 0.5 * J[j](g, b) * dJ[n + j][i];
        XX[i][b][g] = A;
      }
  return XX;
}

// ---------------------------------------------------------------------------
// Identity battery.

struct IdentityReport {
  double structure_a = 0.0;
  double structure_b = 0.0;
  double structure_c = 0.0;
  double bianchi = 0.0;        // cyclic R = cyclic (nabla T + T(T))
  double bianchi_vertical = 0.0;  // horizontal part of cyclic R(H,H)H
  double fat = 0.0;            // [X, J_Z X]_V + |X|^2 Z
  double b_matrix = 0.0;       // B - n Id
  double nablaJ_antisym = 0.0;
  double nablaJ_skew = 0.0;
  double nablaJ_anticommute = 0.0;
  double nablaJ_norm = 0.0;
  double n_eigen = 0.0;
  double mn_trace = 0.0;
  double n_sym = 0.0;
  double sigma_mod4 = 0.0;
  double trace1 = 0.0, trace2 = 0.0, trace3 = 0.0, trace4 = 0.0, trace5 = 0.0;
  // Same traces against the unweighted, opposite-sign forms kappa_H + 2 tau_V, 2 kappa_H + 4 tau_V,
  // tau_V / 2 and -tau_V / 2; informational, not part of pass().
  double alt_form1 = 0.0, alt_form2 = 0.0, alt_form4 = 0.0, alt_form5 = 0.0;
  double parallel_torsion = 0.0;
  double tol = 0.0;

  std::vector<std::pair<std::string, double>> entries() const {
    return {{"structure_a", structure_a},
            {"structure_b", structure_b},
            {"structure_c", structure_c},
            {"first_bianchi", bianchi},
            {"first_bianchi_vertical", bianchi_vertical},
            {"fat_bracket", fat},
            {"b_matrix", b_matrix},
            {"nablaJ_antisymmetry", nablaJ_antisym},
            {"nablaJ_skew", nablaJ_skew},
            {"nablaJ_anticommute", nablaJ_anticommute},
            {"nablaJ_norm", nablaJ_norm},
            {"N_eigenvalues", n_eigen},
            {"trace_M_equals_trace_N", mn_trace},
            {"N_symmetric_part", n_sym},
            {"sigma_mod_4", sigma_mod4},
            {"trace_identity_1", trace1},
            {"trace_identity_2", trace2},
            {"trace_identity_3", trace3},
            {"trace_identity_4", trace4},
            {"trace_identity_5", trace5}};
  }
  double max() const {
    double r = 0.0;
    for (auto& e : entries()) r = std::max(r, e.second);
    return r;
  }
  bool pass() const { return max() <= tol; }
};

namespace detail {

// Forms evaluated on the extended basis of g = m + k (homogeneous) or the frame (chart):
// theta/eta(a, A), omega(b, a, A). Isotropy directions see omega = ad.
struct FormData {
  int N = 0, G = 0;
  std::vector<double> bracket;  // (G)^3, [e_A, e_B] = sum bracket(F, A, B) e_F
  std::vector<Mat> omega;       // omega[A](b, a) = omega^b_a(e_A)
  double br(int F, int A, int B) const { return bracket[(static_cast<std::size_t>(F) * G + A) * G + B]; }
};

inline FormData form_data(const FoliationModel& M, const ConnectionCoeffs& K) {
  FormData f;
  f.N = M.N();
  f.G = M.homogeneous() ? M.G() : M.N();
  const int G = f.G, N = f.N;
  f.bracket.assign(static_cast<std::size_t>(G) * G * G, 0.0);
  for (int F = 0; F < G; ++F)
    for (int A = 0; A < G; ++A)
      for (int B = 0; B < G; ++B)
        f.bracket[(static_cast<std::size_t>(F) * G + A) * G + B] = M.homogeneous() ? M.cf(F, A, B) : K.C(F, A, B);
  f.omega.assign(G, Mat::Zero(N, N));
  for (int A = 0; A < N; ++A)
    for (int a = 0; a < N; ++a)
      for (int b = 0; b < N; ++b) f.omega[A](b, a) = K.G(A, a, b);
  for (int A = N; A < G; ++A)
    for (int a = 0; a < N; ++a)
      for (int b = 0; b < N; ++b) f.omega[A](b, a) = M.cf(b, A, a);
  return f;
}

}  // namespace detail

/**
 * @brief Residuals of the identity battery at p.
 *
 * XX supplies the special-frame second derivatives of J used by trace
 * identities (3)-(5); pass the output of special_frame_second_derivatives
 * or of the privileged-coordinate extraction.
 */
inline IdentityReport check_identities(const FoliationModel& M, const Vec& p = Vec(), double tol = 1e-10, unsigned seed = 7) {
  IdentityReport rep;
  rep.tol = tol;
  const int n = M.n, m = M.m, N = M.N();
  ConnectionCoeffs K = solve_bott(M, p);
  CurvatureTensor R = curvature(M, K);
  Tensor3 T = torsion(K);
  std::vector<Mat> J = j_matrices(n, m, K.C);
  auto dJ = nabla_j_all(n, m, K);
  auto h = [n](int a) { return a < n; };

  // Structure equations on the extended basis.
  detail::FormData f = detail::form_data(M, K);
  const int G = f.G;
  auto theta = [&](int a, int A) { return (A < N && A == a) ? 1.0 : 0.0; };
  auto d_omega_deriv = [&](int A, int B, int b, int a) {
    // Y_A(omega^b_a(Y_B)) for frame directions (chart models only).
    if (A >= N || B >= N) return 0.0;
    return K.dG[A](B, a, b);
  };
  for (int A = 0; A < G; ++A)
    for (int B = 0; B < G; ++B) {
      for (int al = 0; al < n; ++al) {
        double lhs = -f.br(al, A, B);
        double rhs = 0.0;
        for (int be = 0; be < n; ++be) rhs += theta(be, A) * f.omega[B](al, be) - theta(be, B) * f.omega[A](al, be);
        rep.structure_a = std::max(rep.structure_a, std::abs(lhs - rhs));
      }
      for (int i = 0; i < m; ++i) {
        double lhs = -f.br(n + i, A, B);
        double rhs = 0.0;
        for (int be = 0; be < n; ++be)
          for (int ga = 0; ga < n; ++ga) rhs += 0.5 * J[i](ga, be) * (theta(be, A) * theta(ga, B) - theta(be, B) * theta(ga, A));
        for (int kk = 0; kk < m; ++kk)
          rhs += theta(n + kk, A) * f.omega[B](n + i, n + kk) - theta(n + kk, B) * f.omega[A](n + i, n + kk);
        rep.structure_b = std::max(rep.structure_b, std::abs(lhs - rhs));
      }
      for (int a = 0; a < N; ++a)
        for (int b = 0; b < N; ++b) {
          double lhs = d_omega_deriv(A, B, b, a) - d_omega_deriv(B, A, b, a);
          for (int F = 0; F < G; ++F) lhs -= f.br(F, A, B) * f.omega[F](b, a);
          double rhs = (A < N && B < N) ? R(b, A, B, a) : 0.0;
          for (int c = 0; c < N; ++c) rhs += f.omega[A](c, a) * f.omega[B](b, c) - f.omega[B](c, a) * f.omega[A](b, c);
          rep.structure_c = std::max(rep.structure_c, std::abs(lhs - rhs));
        }
    }

  // First Bianchi: cyclic R^d_{abc} = cyclic [(nabla_a T)^d_{bc} + T^d(T(b,c), a)].
  auto nablaT = [&](int e, int d, int a, int b) {
    double s = 0.0;
    // Y_e(T^d_{ab}) for chart models: T is built from G and C.
    s += K.dG[e](a, b, d) - K.dG[e](b, a, d) - K.dC[e](d, a, b);
    for (int f2 = 0; f2 < N; ++f2) s += K.G(e, f2, d) * T(f2, a, b) - K.G(e, a, f2) * T(d, f2, b) - K.G(e, b, f2) * T(d, a, f2);
    return s;
  };
  auto TT = [&](int d, int b, int c, int a) {
    double s = 0.0;
    for (int f2 = 0; f2 < N; ++f2) s += T(f2, b, c) * T(d, f2, a);
    return s;
  };
  for (int d = 0; d < N; ++d)
    for (int a = 0; a < N; ++a)
      for (int b = 0; b < N; ++b)
        for (int c = 0; c < N; ++c) {
          const double lhs = R(d, a, b, c) + R(d, b, c, a) + R(d, c, a, b);
          const double rhs = nablaT(a, d, b, c) + nablaT(b, d, c, a) + nablaT(c, d, a, b) + TT(d, b, c, a) + TT(d, c, a, b) +
                             TT(d, a, b, c);
          rep.bianchi = std::max(rep.bianchi, std::abs(lhs - rhs));
          if (h(a) && h(b) && h(c) && h(d)) rep.bianchi_vertical = std::max(rep.bianchi_vertical, std::abs(lhs));
        }

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  auto randvec = [&](int k) {
    Vec v(k);
    for (int i = 0; i < k; ++i) v(i) = nd(rng);
    return v;
  };

  // [X, J_Z X]_V = -|X|^2 Z.
  for (int t = 0; t < 5; ++t) {
    Vec x = randvec(n), z = randvec(m);
    Mat Jz = Mat::Zero(n, n);
    for (int i = 0; i < m; ++i) Jz += z(i) * J[i];
    Vec y = Jz * x;
    for (int i = 0; i < m; ++i) {
      double s = 0.0;
      for (int a = 0; a < n; ++a)
        for (int b = 0; b < n; ++b) s += x(a) * y(b) * K.C(n + i, a, b);
      rep.fat = std::max(rep.fat, std::abs(s + x.squaredNorm() * z(i)));
    }
  }

  // B = n Id with b^i_{ab} = C^{n+i}_{ab}.
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < m; ++j) {
      double s = 0.0;
      for (int a = 0; a < n; ++a)
        for (int b = 0; b < n; ++b) s += K.C(n + i, a, b) * K.C(n + j, a, b);
      rep.b_matrix = std::max(rep.b_matrix, std::abs(s - (i == j ? n : 0)));
    }

  rep.parallel_torsion = detail::parallel_torsion_residual(n, dJ);

  // nabla J and the operators M, N.
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < m; ++j) {
      const Mat& A = dJ[n + i][j];
      rep.nablaJ_antisym = std::max(rep.nablaJ_antisym, max_abs(A + dJ[n + j][i]));
      rep.nablaJ_skew = std::max(rep.nablaJ_skew, max_abs(A + A.transpose()));
      rep.nablaJ_anticommute = std::max(rep.nablaJ_anticommute, max_abs(A * J[j] + J[j] * A));
      const double rzw = R(n + i, n + i, n + j, n + j);
      rep.nablaJ_norm = std::max(rep.nablaJ_norm, max_abs(A.transpose() * A - rzw * Mat::Identity(n, n)));
      Mat Mij = J[j] * J[i] * A;
      Mat Nij = 0.5 * (Mij + Mij.transpose());
      rep.mn_trace = std::max(rep.mn_trace, std::abs(Mij.trace() - Nij.trace()));
      Mat Nlem = Mij + (i == j ? 1.0 : 0.0) * A;
      rep.n_sym = std::max(rep.n_sym, max_abs(Nlem - Nij));
      if (i != j) {
        Eigen::SelfAdjointEigenSolver<Mat> es(Nij);
        const double lam = std::sqrt(std::max(0.0, rzw));
        for (int e = 0; e < n; ++e) rep.n_eigen = std::max(rep.n_eigen, std::abs(std::abs(es.eigenvalues()(e)) - lam));
        const int sg = signature(es.eigenvalues(), std::max(Nij.norm(), 1e-300));
        const int r4 = ((sg % 4) + 4) % 4;
        if (rep.parallel_torsion <= tol && m >= 2) rep.sigma_mod4 = std::max(rep.sigma_mod4, static_cast<double>(r4));
      }
    }
  // Random unit vertical pairs, orthonormalised, for the eigenvalue formula.
  for (int t = 0; t < 3 && m >= 2; ++t) {
    Vec z = randvec(m).normalized(), w = randvec(m);
    w = (w - w.dot(z) * z).normalized();
    Mat Jz = Mat::Zero(n, n), Jw = Mat::Zero(n, n), DzW = Mat::Zero(n, n);
    for (int i = 0; i < m; ++i) {
      Jz += z(i) * J[i];
      Jw += w(i) * J[i];
    }
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < m; ++j) DzW += z(i) * w(j) * dJ[n + i][j];
    Mat Mzw = Jw * Jz * DzW;
    Mat Nzw = 0.5 * (Mzw + Mzw.transpose());
    double rzw = 0.0;
    for (int a = 0; a < m; ++a)
      for (int b = 0; b < m; ++b)
        for (int c = 0; c < m; ++c)
          for (int d = 0; d < m; ++d) rzw += R(n + d, n + a, n + b, n + c) * z(a) * w(b) * w(c) * z(d);
    Eigen::SelfAdjointEigenSolver<Mat> es(Nzw);
    const double lam = std::sqrt(std::max(0.0, rzw));
    for (int e = 0; e < n; ++e) rep.n_eigen = std::max(rep.n_eigen, std::abs(std::abs(es.eigenvalues()(e)) - lam));
  }

  // Trace identities.
  InvariantsReport inv = invariants_from(M, K, R);
  double t1 = 0.0, t2 = 0.0;
  for (int i = 0; i < m; ++i)
    for (int al = 0; al < n; ++al)
      for (int ga = 0; ga < n; ++ga)
        for (int be = 0; be < n; ++be)
          for (int de = 0; de < n; ++de) {
            const double jj = J[i](ga, al) * J[i](de, be);
            t1 += jj * R(be, al, de, ga);
            t2 += jj * R(be, al, ga, de);
          }
  // Summing the i index turns the kappa_H term into m * kappa_H.
  rep.trace1 = std::abs(t1 - (m * inv.kappa_h + 2.0 * inv.tau_v));
  rep.trace2 = std::abs(t2 - (2.0 * m * inv.kappa_h + 4.0 * inv.tau_v));
  rep.alt_form1 = std::abs(t1 - (inv.kappa_h + 2.0 * inv.tau_v));
  rep.alt_form2 = std::abs(t2 - (2.0 * inv.kappa_h + 4.0 * inv.tau_v));
  if (rep.parallel_torsion <= tol) {
    auto XX = special_frame_second_derivatives(n, m, K);
    // XX[i][b][g](d, a) = X_b X_g (J^i_{ad}).
    double t3 = 0.0, t4 = 0.0, t5 = 0.0;
    for (int i = 0; i < m; ++i)
      for (int al = 0; al < n; ++al)
        for (int be = 0; be < n; ++be)
          for (int ga = 0; ga < n; ++ga) {
            t3 += J[i](be, al) * XX[i][ga][ga](be, al);
            t4 += J[i](be, al) * XX[i][be][ga](ga, al);
            t5 += J[i](be, al) * XX[i][ga][be](ga, al);
          }
    rep.trace3 = std::abs(t3);
    // [X_b, X_g]_V = -J^j_{bg} Z_j fixes the signs: (4) = -tau_V / 2, (5) = tau_V / 2.
    rep.trace4 = std::abs(t4 + 0.5 * inv.tau_v);
    rep.trace5 = std::abs(t5 - 0.5 * inv.tau_v);
    rep.alt_form4 = std::abs(t4 - 0.5 * inv.tau_v);
    rep.alt_form5 = std::abs(t5 + 0.5 * inv.tau_v);
  }
  return rep;
}

struct FlatnessResult {
  bool flat = false;
  bool applicable = true;
  double max_abs_r = 0.0;
  double parallel_torsion = 0.0;
};

inline FlatnessResult flatness_check(const FoliationModel& M, const std::vector<Vec>& points, double tol = 1e-10) {
  FlatnessResult r;
  std::vector<Vec> pts = points;
  if (pts.empty()) pts.push_back(M.homogeneous() ? Vec() : M.chart_base);
  for (const Vec& p : pts) {
    ConnectionCoeffs K = solve_bott(M, p);
    r.max_abs_r = std::max(r.max_abs_r, curvature(M, K).max_abs());
    r.parallel_torsion = std::max(r.parallel_torsion, detail::parallel_torsion_residual(M.n, nabla_j_all(M.n, M.m, K)));
  }
  r.applicable = r.parallel_torsion <= tol;
  r.flat = r.applicable && r.max_abs_r <= tol;
  return r;
}

/**
 * @brief Model with the frame rotated by the block matrix diag(A, B).
 *
 * New frame Y'_a = sum_b O(b, a) Y_b; homogeneous only.
 */
inline FoliationModel rotate_frame(const FoliationModel& M, const Mat& O) {
  if (!M.homogeneous()) throw Error("rotate_frame: homogeneous models only");
  const int N = M.N(), G = M.G();
  Mat Oe = Mat::Identity(G, G);
  Oe.topLeftCorner(N, N) = O;
  FoliationModel R = M;
  std::vector<Mat> mats(G);
  for (int a = 0; a < G; ++a) {
    mats[a] = Mat::Zero(M.rho[0].rows(), M.rho[0].cols());
    for (int b = 0; b < G; ++b) mats[a] += Oe(b, a) * M.rho[b];
  }
  R.rho = mats;
  R.full = detail::structure_from_basis(mats);
  if (R.kind == ModelKind::group) {
    // Keep the explicit chart consistent with the rotated structure.
    Tensor3 C = structure(R);
    R.rep = extract_J(R, C);
  }
  return R;
}

/// Random element of O(n) x O(m) as a block-diagonal matrix (deterministic in seed).
inline Mat random_block_rotation(int n, int m, unsigned long long seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  auto orth = [&](int k) {
    Mat A(k, k);
    for (int i = 0; i < k; ++i)
      for (int j = 0; j < k; ++j) A(i, j) = nd(rng);
    Eigen::HouseholderQR<Mat> qr(A);
    Mat Q = qr.householderQ();
    return Q;
  };
  Mat O = Mat::Zero(n + m, n + m);
  O.topLeftCorner(n, n) = orth(n);
  O.bottomRightCorner(m, m) = orth(m);
  return O;
}

}  // namespace htype
