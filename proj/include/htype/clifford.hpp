#pragma once

#include "htype/common.hpp"

#include <json.hpp>

#include <algorithm>
#include <string>
#include <vector>

namespace htype {

/**
 * @brief m skew-orthogonal complex structures on R^n.
 *
 * J[i] is the matrix of J_{Z_i} acting on column vectors in an orthonormal
 * basis X_1..X_n, so the component J^i_{ab} = g(J_{Z_i} X_a, X_b) = J[i](b, a).
 */
struct CliffordRep {
  int n = 0;
  int m = 0;
  std::vector<Mat> J;

  double comp(int i, int a, int b) const { return J[i](b, a); }

  /// J_z = sum z^i J[i].
  Mat Jz(const Vec& z) const {
    Mat r = Mat::Zero(n, n);
    for (int i = 0; i < m; ++i) r += z(i) * J[i];
    return r;
  }
};

/// Dimension of an irreducible real Cl_m module (Radon-Hurwitz table).
inline int irreducible_dim(int m) {
  static const int base[9] = {1, 2, 4, 4, 8, 8, 8, 8, 16};
  if (m < 1) throw Error("irreducible_dim: m must be positive");
  int scale = 1;
  while (m > 8) {
    m -= 8;
    scale *= 16;
  }
  return base[m] * scale;
}

inline bool admissible(int n, int m) {
  if (n < 1 || m < 1) return false;
  return n % irreducible_dim(m) == 0;
}

namespace detail {

// Cayley-Dickson product on R^(2^k): (a,b)(c,d) = (ac - conj(d) b, d a + b conj(c)).
inline Vec cd_conj(const Vec& x) {
  Vec r = -x;
  r(0) = x(0);
  return r;
}

inline Vec cd_mul(const Vec& x, const Vec& y) {
  const int d = static_cast<int>(x.size());
  if (d == 1) return Vec::Constant(1, x(0) * y(0));
  const int h = d / 2;
  Vec a = x.head(h), b = x.tail(h), c = y.head(h), e = y.tail(h);
  Vec r(d);
  r.head(h) = cd_mul(a, c) - cd_mul(cd_conj(e), b);
  r.tail(h) = cd_mul(e, a) + cd_mul(b, cd_conj(c));
  return r;
}

/// Left multiplication by the imaginary unit e_k in the 2^p-dimensional algebra.
inline Mat left_unit(int dim, int k) {
  Mat L(dim, dim);
  Vec u = Vec::Zero(dim);
  u(k) = 1.0;
  for (int j = 0; j < dim; ++j) {
    Vec e = Vec::Zero(dim);
    e(j) = 1.0;
    L.col(j) = cd_mul(u, e);
  }
  return L;
}

inline Mat kron(const Mat& A, const Mat& B) {
  Mat r(A.rows() * B.rows(), A.cols() * B.cols());
  for (int i = 0; i < A.rows(); ++i)
    for (int j = 0; j < A.cols(); ++j) r.block(i * B.rows(), j * B.cols(), B.rows(), B.cols()) = A(i, j) * B;
  return r;
}

// Irreducible generators for Cl_m.
inline std::vector<Mat> irreducible(int m) {
  std::vector<Mat> g;
  if (m <= 7) {
    const int d = irreducible_dim(m);
    for (int k = 1; k <= m; ++k) g.push_back(left_unit(d, k));
    return g;
  }
  if (m == 8) {
    Mat sz(2, 2), eps(2, 2);
    sz << 1, 0, 0, -1;
    eps << 0, -1, 1, 0;
    for (int k = 1; k <= 7; ++k) g.push_back(kron(sz, left_unit(8, k)));
    g.push_back(kron(eps, Mat::Identity(8, 8)));
    return g;
  }
  // m = 8 + k: K_a (x) I and omega (x) J_i, omega = K_1 ... K_8.
  std::vector<Mat> K = irreducible(8);
  std::vector<Mat> Jk = irreducible(m - 8);
  Mat omega = Mat::Identity(16, 16);
  for (const Mat& k : K) omega = omega * k;
  const int dk = irreducible_dim(m - 8);
  for (const Mat& k : K) g.push_back(kron(k, Mat::Identity(dk, dk)));
  for (const Mat& j : Jk) g.push_back(kron(omega, j));
  return g;
}

}  // namespace detail

/**
 * @brief Deterministic H-type representation for admissible (n, m).
 *
 * Reducible modules are block-diagonal copies of the irreducible one.
 */
inline CliffordRep build_rep(int n, int m) {
  if (n < 1 || m < 1) throw Error("build_rep: n and m must be positive");
  const int d = irreducible_dim(m);
  if (n % d != 0)
    throw Error("build_rep: (" + std::to_string(n) + "," + std::to_string(m) + ") is not admissible; n must be a multiple of d(m) = " +
                std::to_string(d));
  std::vector<Mat> g = detail::irreducible(m);
  CliffordRep rep;
  rep.n = n;
  rep.m = m;
  for (const Mat& gi : g) {
    Mat Ji = Mat::Zero(n, n);
    for (int b = 0; b < n / d; ++b) Ji.block(b * d, b * d, d, d) = gi;
    rep.J.push_back(Ji);
  }
  return rep;
}

struct CliffordResidual {
  double skew = 0.0;
  double orthogonal = 0.0;
  double square = 0.0;
  double polarization = 0.0;
  double tol = 0.0;

  double max() const { return std::max({skew, orthogonal, square, polarization}); }
  bool pass() const { return max() <= tol; }
};

inline CliffordResidual verify_htype(const CliffordRep& rep, double tol = 1e-12) {
  CliffordResidual r;
  r.tol = tol;
  const Mat I = Mat::Identity(rep.n, rep.n);
  for (int i = 0; i < rep.m; ++i) {
    const Mat& A = rep.J[i];
    r.skew = std::max(r.skew, max_abs(A.transpose() + A));
    r.orthogonal = std::max(r.orthogonal, max_abs(A.transpose() * A - I));
    r.square = std::max(r.square, max_abs(A * A + I));
    // i == j is the square condition again (twice over), so only distinct pairs here
    for (int j = i + 1; j < rep.m; ++j) r.polarization = std::max(r.polarization, max_abs(A * rep.J[j] + rep.J[j] * A));
  }
  return r;
}

inline nlohmann::json to_json(const CliffordRep& rep) {
  nlohmann::json j;
  j["n"] = rep.n;
  j["m"] = rep.m;
  j["J"] = nlohmann::json::array();
  for (const Mat& A : rep.J) {
    nlohmann::json rows = nlohmann::json::array();
    for (int r = 0; r < A.rows(); ++r) {
      std::vector<double> row(A.cols());
      for (int c = 0; c < A.cols(); ++c) row[c] = A(r, c);
      rows.push_back(row);
    }
    j["J"].push_back(rows);
  }
  return j;
}

inline CliffordRep rep_from_json(const nlohmann::json& j) {
  CliffordRep rep;
  rep.n = j.at("n").get<int>();
  rep.m = j.at("m").get<int>();
  for (const auto& rows : j.at("J")) {
    Mat A(rep.n, rep.n);
    for (int r = 0; r < rep.n; ++r)
      for (int c = 0; c < rep.n; ++c) A(r, c) = rows.at(r).at(c).get<double>();
    rep.J.push_back(A);
  }
  if (static_cast<int>(rep.J.size()) != rep.m) throw Error("rep_from_json: J count differs from m");
  return rep;
}

}  // namespace htype
