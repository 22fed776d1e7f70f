#pragma once

#include "htype/clifford.hpp"
#include "htype/common.hpp"

#include <json.hpp>

#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace htype {

enum class ModelKind { group, constant_structure, chart };

inline const char* kind_name(ModelKind k) {
  switch (k) {
    case ModelKind::group: return "group";
    case ModelKind::constant_structure: return "constant-structure";
    case ModelKind::chart: return "chart-based";
  }
  return "?";
}

/**
 * @brief H-type foliation presented by an adapted orthonormal frame.
 *
 * Frame index a in [0, n+m): a < n horizontal, a >= n vertical. Structure
 * constants are stored as C(c, a, b) = coefficient of Y_c in [Y_a, Y_b].
 *
 * Homogeneous models (group and constant-structure kinds) live on G/K for a
 * matrix Lie algebra g = m + k; basis elements 0..N-1 span m (the frame),
 * N..N+k-1 span the isotropy k. `full` holds the structure constants of g.
 * Chart-based models supply frame fields on an open set of R^N instead.
 */
struct FoliationModel {
  int n = 0;
  int m = 0;
  ModelKind kind = ModelKind::group;
  std::string id;
  std::string label;
  double scale = 1.0;

  // Homogeneous data.
  int k = 0;
  std::vector<double> full;  // (N+k)^3
  std::vector<Mat> rho;      // matrices of the N+k basis elements
  Vec origin;                // point of the representation space fixed by K

  // Group models keep their Clifford data for the explicit chart.
  std::optional<CliffordRep> rep;

  // Chart-based models: columns of frame(p) are Y_a(p) in chart coordinates.
  std::function<Mat(const Vec&)> frame;
  std::function<bool(const Vec&)> in_domain;
  Vec chart_base;

  int N() const { return n + m; }
  int G() const { return n + m + k; }
  bool homogeneous() const { return kind != ModelKind::chart; }

  double cf(int c, int a, int b) const {
    const std::size_t g = static_cast<std::size_t>(G());
    return full[(static_cast<std::size_t>(c) * g + a) * g + b];
  }
  double& cf(int c, int a, int b) {
    const std::size_t g = static_cast<std::size_t>(G());
    return full[(static_cast<std::size_t>(c) * g + a) * g + b];
  }
};

// ---------------------------------------------------------------------------
// Explicit H-type group chart.

/// Columns are X_1..X_n, Z_1..Z_m at (x, z): X_a = d_a + J^i_{ab} x^b d_{z_i}, Z_i = 2 d_{z_i}.
inline Mat group_frame(const CliffordRep& rep, const Vec& p) {
  const int n = rep.n, m = rep.m, N = n + m;
  Mat F = Mat::Zero(N, N);
  for (int a = 0; a < n; ++a) {
    F(a, a) = 1.0;
    for (int i = 0; i < m; ++i) {
      double s = 0.0;
      for (int b = 0; b < n; ++b) s += rep.comp(i, a, b) * p(b);
      F(n + i, a) = s;
    }
  }
  for (int i = 0; i < m; ++i) F(n + i, n + i) = 2.0;
  return F;
}

/// B^i(x, x') = x^T J[i] x'.
inline Vec group_cocycle(const CliffordRep& rep, const Vec& x, const Vec& xp) {
  Vec b(rep.m);
  for (int i = 0; i < rep.m; ++i) b(i) = x.dot(rep.J[i] * xp);
  return b;
}

inline Vec group_mul(const CliffordRep& rep, const Vec& p, const Vec& q) {
  const int n = rep.n, m = rep.m;
  Vec r(n + m);
  r.head(n) = p.head(n) + q.head(n);
  r.tail(m) = p.tail(m) + q.tail(m) + group_cocycle(rep, p.head(n), q.head(n));
  return r;
}

inline Vec group_inverse(const Vec& p) { return -p; }

inline Vec dilate(int n, const Vec& p, double t) {
  Vec r = p;
  r.head(n) *= t;
  r.tail(p.size() - n) *= t * t;
  return r;
}

/// Matrix of the group element (x, z): [[1,0,0],[x,I,0],[z,S(x),I]], S(x)_{ib} = -sum_a J^i_{ab} x^a.
inline Mat group_matrix(const CliffordRep& rep, const Vec& p) {
  const int n = rep.n, m = rep.m, r = 1 + n + m;
  Mat g = Mat::Identity(r, r);
  g.block(1, 0, n, 1) = p.head(n);
  g.block(1 + n, 0, m, 1) = p.tail(m);
  for (int i = 0; i < m; ++i)
    for (int b = 0; b < n; ++b) {
      double s = 0.0;
      for (int a = 0; a < n; ++a) s -= rep.comp(i, a, b) * p(a);
      g(1 + n + i, 1 + b) = s;
    }
  return g;
}

// ---------------------------------------------------------------------------
// Construction helpers.

namespace detail {

/// Structure constants of a matrix basis, by least squares on the span.
inline std::vector<double> structure_from_basis(const std::vector<Mat>& mats) {
  const int G = static_cast<int>(mats.size());
  const int r = static_cast<int>(mats[0].size());
  Mat B(r, G);
  for (int a = 0; a < G; ++a) B.col(a) = Eigen::Map<const Vec>(mats[a].data(), r);
  Eigen::ColPivHouseholderQR<Mat> qr(B);
  if (qr.rank() < G) throw Error("structure_from_basis: basis matrices are linearly dependent");
  std::vector<double> C(static_cast<std::size_t>(G) * G * G, 0.0);
  for (int a = 0; a < G; ++a)
    for (int b = 0; b < G; ++b) {
      Mat X = mats[a] * mats[b] - mats[b] * mats[a];
      Vec v = Eigen::Map<const Vec>(X.data(), r);
      Vec c = qr.solve(v);
      if ((B * c - v).cwiseAbs().maxCoeff() > 1e-10 * (1.0 + v.cwiseAbs().maxCoeff()))
        throw Error("structure_from_basis: basis does not close under brackets");
      for (int e = 0; e < G; ++e) {
        double val = c(e);
        if (std::abs(val) < 1e-13) val = 0.0;
        C[(static_cast<std::size_t>(e) * G + a) * G + b] = val;
      }
    }
  return C;
}

/// Real 4x4 matrix of left multiplication by the quaternion (w, x, y, z).
inline Mat quat_left(double w, double x, double y, double z) {
  Mat L(4, 4);
  L << w, -x, -y, -z,
       x, w, -z, y,
       y, z, w, -x,
       z, -y, x, w;
  return L;
}

inline Mat quat_unit(int l, double s = 1.0) {
  double q[4] = {0, 0, 0, 0};
  q[l] = s;
  return quat_left(q[0], q[1], q[2], q[3]);
}

/// Real 8x8 form of the quaternionic matrix [[a, -conj(q)], [q, b]] acting on H^2.
inline Mat sp2_element(const Mat& a, const Mat& q, const Mat& b) {
  Mat qc = q.transpose();  // left multiplication by conj(q) is the transpose
  Mat r = Mat::Zero(8, 8);
  r.block(0, 0, 4, 4) = a;
  r.block(0, 4, 4, 4) = -qc;
  r.block(4, 0, 4, 4) = q;
  r.block(4, 4, 4, 4) = b;
  return r;
}

inline FoliationModel homogeneous_from_basis(int n, int m, std::vector<Mat> mats, Vec origin) {
  FoliationModel M;
  M.n = n;
  M.m = m;
  M.k = static_cast<int>(mats.size()) - n - m;
  M.full = structure_from_basis(mats);
  M.rho = std::move(mats);
  M.origin = std::move(origin);
  M.kind = ModelKind::constant_structure;
  return M;
}

}  // namespace detail

inline std::string format_scale(double s) {
  std::ostringstream os;
  os.precision(12);
  os << s;
  return os.str();
}

/// H-type group with explicit frame X_a = d_a + J^i_{ab} x^b d_{z_i}, Z_i = 2 d_{z_i}.
inline FoliationModel htype_group(const CliffordRep& rep) {
  const int n = rep.n, m = rep.m, N = n + m, r = 1 + N;
  std::vector<Mat> mats;
  for (int a = 0; a < n; ++a) {
    Mat A = Mat::Zero(r, r);
    A(1 + a, 0) = 1.0;
    for (int i = 0; i < m; ++i)
      for (int b = 0; b < n; ++b) A(1 + n + i, 1 + b) = -rep.comp(i, a, b);
    mats.push_back(A);
  }
  for (int i = 0; i < m; ++i) {
    Mat A = Mat::Zero(r, r);
    A(1 + n + i, 0) = 2.0;
    mats.push_back(A);
  }
  Vec o = Vec::Zero(r);
  o(0) = 1.0;
  FoliationModel M = detail::homogeneous_from_basis(n, m, mats, o);
  M.kind = ModelKind::group;
  M.rep = rep;
  M.id = "group:" + std::to_string(n) + "," + std::to_string(m);
  M.label = "H-type group (n=" + std::to_string(n) + ", m=" + std::to_string(m) + ")";
  return M;
}

/**
 * @brief SU(2) frame on the round 3-sphere of radius `scale`.
 *
 * X_1 = mu i, X_2 = mu j, Z = -2 mu^2 k with mu = 1/scale, so
 * c^3_{12} = -1 and c^1_{23} = c^2_{31} = -4/scale^2.
 */
inline FoliationModel hopf_s3(double scale = 1.0) {
  if (!(scale > 0)) throw Error("hopf_s3: scale must be positive");
  const double mu = 1.0 / scale;
  std::vector<Mat> mats = {detail::quat_unit(1, mu), detail::quat_unit(2, mu), detail::quat_unit(3, -2.0 * mu * mu)};
  Vec o = Vec::Zero(4);
  o(0) = 1.0;
  FoliationModel M = detail::homogeneous_from_basis(2, 1, mats, o);
  M.scale = scale;
  M.id = "hopf-s3@" + format_scale(scale);
  M.label = "Hopf fibration S3 -> S2, radius " + format_scale(scale) + ", a = " + format_scale(-4.0 * mu * mu);
  return M;
}

/**
 * @brief Quaternionic Hopf fibration S^7 = Sp(2)/Sp(1) -> S^4.
 *
 * Horizontal basis mu*[[0,-conj(e_l)],[e_l,0]], vertical 2 mu^2 [[e_l,0],[0,0]],
 * isotropy [[0,0],[0,e_l]], mu = 1/scale; the orbit of (1, 0) in H^2.
 */
inline FoliationModel quaternionic_hopf_s7(double scale = 1.0) {
  if (!(scale > 0)) throw Error("quaternionic_hopf_s7: scale must be positive");
  const double mu = 1.0 / scale;
  const Mat Z4 = Mat::Zero(4, 4);
  std::vector<Mat> mats;
  for (int l = 0; l < 4; ++l) mats.push_back(detail::sp2_element(Z4, detail::quat_unit(l, mu), Z4));
  for (int l = 1; l < 4; ++l) mats.push_back(detail::sp2_element(detail::quat_unit(l, 2.0 * mu * mu), Z4, Z4));
  for (int l = 1; l < 4; ++l) mats.push_back(detail::sp2_element(Z4, Z4, detail::quat_unit(l)));
  Vec o = Vec::Zero(8);
  o(0) = 1.0;
  FoliationModel M = detail::homogeneous_from_basis(4, 3, mats, o);
  M.scale = scale;
  M.id = "qhopf-s7@" + format_scale(scale);
  M.label = "quaternionic Hopf fibration S7 -> S4, radius " + format_scale(scale);
  return M;
}

/**
 * @brief Model given by frame fields on an open subset of R^N.
 *
 * `frame(p)` returns the N x N matrix whose columns are Y_1..Y_N at p.
 */
inline FoliationModel chart_model(int n, int m, std::function<Mat(const Vec&)> frame, Vec base,
                                  std::function<bool(const Vec&)> in_domain = nullptr, std::string label = "chart model") {
  FoliationModel M;
  M.n = n;
  M.m = m;
  M.kind = ModelKind::chart;
  M.frame = std::move(frame);
  M.chart_base = std::move(base);
  M.in_domain = in_domain ? std::move(in_domain) : [](const Vec&) { return true; };
  M.id = "chart";
  M.label = std::move(label);
  return M;
}

// ---------------------------------------------------------------------------
// Structure functions at a point.

namespace detail {

/// Richardson-extrapolated 5-point central derivative of f(h) at h = 0.
template <class F>
auto central_derivative(F&& f, double h) {
  auto d5 = [&](double s) {
    auto a = f(2 * s), b = f(s), c = f(-s), e = f(-2 * s);
    return ((-a + 8.0 * b - 8.0 * c + e) / (12.0 * s)).eval();
  };
  auto D1 = d5(h);
  auto D2 = d5(h / 2);
  return ((16.0 * D2 - D1) / 15.0).eval();
}

inline Vec tensor_to_vec(const Tensor3& t) { return Eigen::Map<const Vec>(t.d.data(), static_cast<Eigen::Index>(t.d.size())); }

inline Tensor3 vec_to_tensor(int N, const Vec& v) {
  Tensor3 t(N);
  for (std::size_t i = 0; i < t.d.size(); ++i) t.d[i] = v(static_cast<Eigen::Index>(i));
  return t;
}

}  // namespace detail

/// Frame-field derivatives dF/dp_j for chart models (finite differences).
inline std::vector<Mat> frame_jacobian(const FoliationModel& M, const Vec& p, double h = 1e-3) {
  const int N = M.N();
  std::vector<Mat> D(N);
  for (int j = 0; j < N; ++j) {
    auto f = [&](double s) {
      Vec q = p;
      q(j) += s;
      return M.frame(q);
    };
    D[j] = detail::central_derivative(f, h);
  }
  return D;
}

/// C(c, a, b) restricted to the frame directions, at p (chart coordinates for chart models; ignored otherwise).
inline Tensor3 structure(const FoliationModel& M, const Vec& p = Vec()) {
  const int N = M.N();
  Tensor3 C(N);
  if (M.homogeneous()) {
    for (int c = 0; c < N; ++c)
      for (int a = 0; a < N; ++a)
        for (int b = 0; b < N; ++b) C(c, a, b) = M.cf(c, a, b);
    return C;
  }
  const Mat F = M.frame(p);
  const std::vector<Mat> D = frame_jacobian(M, p);
  Eigen::PartialPivLU<Mat> lu(F);
  for (int a = 0; a < N; ++a)
    for (int b = 0; b < N; ++b) {
      Vec br = Vec::Zero(N);
      for (int j = 0; j < N; ++j) br += D[j].col(b) * F(j, a) - D[j].col(a) * F(j, b);
      Vec c = lu.solve(br);
      for (int e = 0; e < N; ++e) C(e, a, b) = c(e);
    }
  return C;
}

/// Y_d(C) for each frame direction d; zero for homogeneous models.
inline std::vector<Tensor3> structure_derivative(const FoliationModel& M, const Vec& p = Vec(), double h = 1e-3) {
  const int N = M.N();
  std::vector<Tensor3> out(N, Tensor3(N));
  if (M.homogeneous()) return out;
  const Mat F = M.frame(p);
  for (int d = 0; d < N; ++d) {
    auto f = [&](double s) { return detail::tensor_to_vec(structure(M, p + s * F.col(d))); };
    out[d] = detail::vec_to_tensor(N, detail::central_derivative(f, h));
  }
  return out;
}

/// Isotropy parts: Ck[k](a, b) = k-component of [Y_a, Y_b]; ad[k](d, c) = Y_d-component of [K_k, Y_c].
struct IsotropyData {
  std::vector<Mat> Ck;
  std::vector<Mat> ad;
};

inline IsotropyData isotropy(const FoliationModel& M) {
  IsotropyData I;
  const int N = M.N();
  for (int kk = 0; kk < M.k; ++kk) {
    Mat ck(N, N), ad(N, N);
    for (int a = 0; a < N; ++a)
      for (int b = 0; b < N; ++b) {
        ck(a, b) = M.cf(N + kk, a, b);
        ad(a, b) = M.cf(a, N + kk, b);
      }
    I.Ck.push_back(ck);
    I.ad.push_back(ad);
  }
  return I;
}

/// J[i](b, a) = J^i_{ab} = -C(n+i, a, b).
inline CliffordRep extract_J(const FoliationModel& M, const Tensor3& C) {
  CliffordRep r;
  r.n = M.n;
  r.m = M.m;
  for (int i = 0; i < M.m; ++i) {
    Mat A(M.n, M.n);
    for (int a = 0; a < M.n; ++a)
      for (int b = 0; b < M.n; ++b) A(b, a) = -C(M.n + i, a, b);
    r.J.push_back(A);
  }
  return r;
}

// ---------------------------------------------------------------------------
// Validation.

struct ModelReport {
  double antisymmetry = 0.0;
  double jacobi = 0.0;
  double integrability = 0.0;
  double htype = 0.0;
  int min_rank = 0;
  int points = 0;
  double tol = 0.0;
  bool pass(int N) const {
    return antisymmetry <= tol && jacobi <= tol && integrability <= tol && htype <= tol && min_rank == N;
  }
};

namespace detail {

inline double jacobi_residual(const FoliationModel& M) {
  const int G = M.G();
  double r = 0.0;
  for (int a = 0; a < G; ++a)
    for (int b = 0; b < G; ++b)
      for (int c = 0; c < G; ++c)
        for (int e = 0; e < G; ++e) {
          double s = 0.0;
          for (int d = 0; d < G; ++d)
            s += M.cf(d, b, c) * M.cf(e, a, d) + M.cf(d, c, a) * M.cf(e, b, d) + M.cf(d, a, b) * M.cf(e, c, d);
          r = std::max(r, std::abs(s));
        }
  return r;
}

// Jacobi for frame fields with variable structure functions:
// sum_cyc Y_a(C^e_{bc}) + C^d_{bc} C^e_{ad} = 0.
inline double jacobi_residual(const Tensor3& C, const std::vector<Tensor3>& dC) {
  const int N = C.N;
  double r = 0.0;
  for (int a = 0; a < N; ++a)
    for (int b = 0; b < N; ++b)
      for (int c = 0; c < N; ++c)
        for (int e = 0; e < N; ++e) {
          double s = dC[a](e, b, c) + dC[b](e, c, a) + dC[c](e, a, b);
          for (int d = 0; d < N; ++d) s += C(d, b, c) * C(e, a, d) + C(d, c, a) * C(e, b, d) + C(d, a, b) * C(e, c, d);
          r = std::max(r, std::abs(s));
        }
  return r;
}

inline int bracket_rank(const FoliationModel& M, const Tensor3& C) {
  const int n = M.n, N = M.N();
  Mat S = Mat::Zero(N, n + n * n);
  for (int a = 0; a < n; ++a) S(a, a) = 1.0;
  for (int a = 0; a < n; ++a)
    for (int b = 0; b < n; ++b)
      for (int c = 0; c < N; ++c) S(c, n + a * n + b) = C(c, a, b);
  Eigen::ColPivHouseholderQR<Mat> qr(S);
  qr.setThreshold(1e-10);
  return static_cast<int>(qr.rank());
}

}  // namespace detail

inline ModelReport validate_model(const FoliationModel& M, const std::vector<Vec>& points, double tol = 1e-12) {
  ModelReport R;
  R.tol = tol;
  R.min_rank = M.N();
  const int n = M.n, N = M.N();
  std::vector<Vec> pts = points;
  if (pts.empty()) pts.push_back(M.homogeneous() ? Vec() : M.chart_base);
  const double hom_jacobi = M.homogeneous() ? detail::jacobi_residual(M) : 0.0;
  for (const Vec& p : pts) {
    if (!M.homogeneous() && !M.in_domain(p)) throw Error("validate_model: sample point outside chart domain");
    Tensor3 C = structure(M, p);
    for (int c = 0; c < N; ++c)
      for (int a = 0; a < N; ++a)
        for (int b = 0; b < N; ++b) R.antisymmetry = std::max(R.antisymmetry, std::abs(C(c, a, b) + C(c, b, a)));
    if (M.homogeneous()) {
      R.jacobi = std::max(R.jacobi, hom_jacobi);
    } else {
      R.jacobi = std::max(R.jacobi, detail::jacobi_residual(C, structure_derivative(M, p)));
    }
    for (int g = 0; g < n; ++g)
      for (int i = n; i < N; ++i)
        for (int j = n; j < N; ++j) R.integrability = std::max(R.integrability, std::abs(C(g, i, j)));
    R.htype = std::max(R.htype, verify_htype(extract_J(M, C)).max());
    R.min_rank = std::min(R.min_rank, detail::bracket_rank(M, C));
    ++R.points;
  }
  return R;
}

// ---------------------------------------------------------------------------
// Registry: "group:n,m", "hopf-s3", "qhopf-s7", optionally suffixed "@scale".

inline FoliationModel model_by_id(const std::string& id, std::optional<double> scale_override = std::nullopt) {
  std::string name = id;
  double scale = 1.0;
  const auto at = id.find('@');
  if (at != std::string::npos) {
    name = id.substr(0, at);
    try {
      scale = std::stod(id.substr(at + 1));
    } catch (const std::exception&) {
      throw Error("model id '" + id + "': bad scale");
    }
  }
  if (scale_override) scale = *scale_override;
  if (name.rfind("group:", 0) == 0) {
    int n = 0, m = 0;
    char comma = 0;
    std::istringstream is(name.substr(6));
    if (!(is >> n >> comma >> m) || comma != ',') throw Error("model id '" + id + "': expected group:n,m");
    return htype_group(build_rep(n, m));
  }
  if (name == "hopf-s3") return hopf_s3(scale);
  if (name == "qhopf-s7") return quaternionic_hopf_s7(scale);
  throw Error("unknown model id '" + id + "' (known: group:n,m, hopf-s3, qhopf-s7)");
}

inline nlohmann::json structure_json(const FoliationModel& M) {
  nlohmann::json j;
  j["id"] = M.id;
  j["label"] = M.label;
  j["kind"] = kind_name(M.kind);
  j["n"] = M.n;
  j["m"] = M.m;
  j["scale"] = M.scale;
  j["isotropy_dim"] = M.k;
  nlohmann::json entries = nlohmann::json::array();
  const int G = M.homogeneous() ? M.G() : 0;
  for (int c = 0; c < G; ++c)
    for (int a = 0; a < G; ++a)
      for (int b = a + 1; b < G; ++b)
        if (M.cf(c, a, b) != 0.0) entries.push_back({{"c", c + 1}, {"a", a + 1}, {"b", b + 1}, {"value", M.cf(c, a, b)}});
  j["structure_constants"] = entries;
  j["convention"] = "[Y_a, Y_b] = sum_c value * Y_c, indices 1-based; a <= n horizontal, n < a <= n+m vertical, above n+m isotropy";
  return j;
}

}  // namespace htype
