#include "htype/models.hpp"
#include "htype/polyop.hpp"

#include <gtest/gtest.h>

#include <array>
#include <random>

using namespace htype;

namespace {

// Frame fields of the group written out directly as polynomials.
std::vector<PolyField> explicit_fields(const CliffordRep& rep) {
  const int n = rep.n, m = rep.m, N = n + m;
  std::vector<PolyField> out;
  for (int a = 0; a < n; ++a) {
    PolyField V = zero_field(N);
    V[a] = Poly::constant(N, 1.0);
    for (int i = 0; i < m; ++i)
      for (int b = 0; b < n; ++b) V[n + i] += Poly::coordinate(N, b, rep.J[i](b, a));
    out.push_back(V);
  }
  for (int i = 0; i < m; ++i) {
    PolyField V = zero_field(N);
    V[n + i] = Poly::constant(N, 2.0);
    out.push_back(V);
  }
  return out;
}

PolyField bracket(const PolyField& V, const PolyField& W) {
  PolyField r(V.size(), Poly(V[0].N));
  for (std::size_t c = 0; c < V.size(); ++c) r[c] = apply(V, W[c]) + (-1.0) * apply(W, V[c]);
  return r;
}

Vec random_point(std::mt19937_64& rng, int N, double s = 1.0) {
  std::normal_distribution<double> nd(0.0, s);
  Vec p(N);
  for (int k = 0; k < N; ++k) p(k) = nd(rng);
  return p;
}

using Quat = std::array<double, 4>;
Quat qmul(const Quat& a, const Quat& b) {
  return {a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3], a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
          a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1], a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0]};
}
Quat qcomm(const Quat& a, const Quat& b) {
  Quat x = qmul(a, b), y = qmul(b, a);
  return {x[0] - y[0], x[1] - y[1], x[2] - y[2], x[3] - y[3]};
}

}  // namespace

TEST(Models, GroupBracketsMatchStructureConstants) {
  for (auto [n, m] : {std::pair{2, 1}, {4, 3}, {8, 7}}) {
    const CliffordRep rep = build_rep(n, m);
    const FoliationModel M = htype_group(rep);
    const auto F = explicit_fields(rep);
    const Tensor3 C = structure(M);
    const int N = n + m;
    std::mt19937_64 rng(5);
    const Vec p = random_point(rng, N);
    for (int a = 0; a < N; ++a)
      for (int b = 0; b < N; ++b) {
        const PolyField br = bracket(F[a], F[b]);
        for (int k = 0; k < N; ++k) {
          double want = 0.0;
          for (int c = 0; c < N; ++c) want += C(c, a, b) * F[c][k](p);
          EXPECT_NEAR(br[k](p), want, 1e-12) << a << " " << b;
        }
      }
  }
}

TEST(Models, HeisenbergBracketSign) {
  const CliffordRep rep = build_rep(2, 1);
  const auto F = explicit_fields(rep);
  const PolyField br = bracket(F[0], F[1]);
  // [X1, X2] = -J^1_{12} Z_1 with J^1_{12} = J[0](1, 0)
  const Vec p = Vec::Zero(3);
  EXPECT_DOUBLE_EQ(br[2](p), -rep.J[0](1, 0) * 2.0);
  EXPECT_EQ(structure(htype_group(rep))(2, 0, 1), -1.0);
}

TEST(Models, GroupFrameMatchesExplicitFields) {
  const CliffordRep rep = build_rep(4, 3);
  const auto F = explicit_fields(rep);
  std::mt19937_64 rng(8);
  for (int t = 0; t < 5; ++t) {
    const Vec p = random_point(rng, 7);
    const Mat X = group_frame(rep, p);
    for (int a = 0; a < 7; ++a)
      for (int k = 0; k < 7; ++k) EXPECT_NEAR(X(k, a), F[a][k](p), 1e-14);
  }
}

TEST(Models, CocycleVanishesOnDiagonal) {
  const CliffordRep rep = build_rep(8, 7);
  std::mt19937_64 rng(9);
  for (int t = 0; t < 10; ++t) {
    const Vec x = random_point(rng, 8);
    EXPECT_LE(group_cocycle(rep, x, x).cwiseAbs().maxCoeff(), 1e-13);
  }
}

TEST(Models, DilationsAreAutomorphisms) {
  const CliffordRep rep = build_rep(4, 3);
  std::mt19937_64 rng(10);
  for (double t : {0.3, 1.7, 4.0}) {
    const Vec w = random_point(rng, 7), v = random_point(rng, 7);
    const Vec lhs = dilate(4, group_mul(rep, w, v), t);
    const Vec rhs = group_mul(rep, dilate(4, w, t), dilate(4, v, t));
    EXPECT_LE((lhs - rhs).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Models, LeftInvariance) {
  for (auto [n, m] : {std::pair{2, 1}, {4, 3}}) {
    const CliffordRep rep = build_rep(n, m);
    const int N = n + m;
    std::mt19937_64 rng(12);
    for (int t = 0; t < 10; ++t) {
      const Vec a = random_point(rng, N), p = random_point(rng, N);
      // Left translation is affine in p, so a unit central difference is its exact differential.
      Mat D(N, N);
      for (int k = 0; k < N; ++k) {
        const Vec e = Vec::Unit(N, k);
        D.col(k) = 0.5 * (group_mul(rep, a, p + e) - group_mul(rep, a, p - e));
      }
      const Mat lhs = D * group_frame(rep, p);
      const Mat rhs = group_frame(rep, group_mul(rep, a, p));
      EXPECT_LE(max_abs(lhs - rhs), 1e-12);
    }
  }
}

TEST(Models, GroupInverse) {
  const CliffordRep rep = build_rep(4, 3);
  std::mt19937_64 rng(13);
  const Vec p = random_point(rng, 7);
  EXPECT_LE(group_mul(rep, p, group_inverse(p)).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(Models, GroupValidatesAtRandomPoints) {
  const FoliationModel M = htype_group(build_rep(2, 1));
  std::mt19937_64 rng(14);
  std::vector<Vec> pts;
  for (int k = 0; k < 100; ++k) pts.push_back(random_point(rng, 3));
  const ModelReport r = validate_model(M, pts);
  EXPECT_EQ(r.points, 100);
  EXPECT_EQ(r.antisymmetry, 0.0);
  EXPECT_EQ(r.jacobi, 0.0);
  EXPECT_EQ(r.integrability, 0.0);
  EXPECT_EQ(r.htype, 0.0);
  EXPECT_TRUE(r.pass(3));
}

TEST(Models, TamperedModelFailsHtype) {
  FoliationModel M = htype_group(build_rep(2, 1));
  M.cf(2, 0, 1) = -2.0;
  M.cf(2, 1, 0) = 2.0;
  const ModelReport r = validate_model(M, {});
  EXPECT_DOUBLE_EQ(r.htype, 3.0);
  EXPECT_FALSE(r.pass(3));
}

TEST(Models, HopfConstantsFromQuaternions) {
  for (double s : {0.5, 1.0, 2.0}) {
    const double mu = 1.0 / s;
    const Quat X1{0, mu, 0, 0}, X2{0, 0, mu, 0}, Z{0, 0, 0, -2 * mu * mu};
    // [X1, X2] = c Z, [X2, Z] = a X1, [Z, X1] = a X2
    const double c312 = qcomm(X1, X2)[3] / Z[3];
    const double a1 = qcomm(X2, Z)[1] / X1[1];
    const double a2 = qcomm(Z, X1)[2] / X2[2];
    const Tensor3 C = structure(hopf_s3(s));
    EXPECT_DOUBLE_EQ(C(2, 0, 1), c312);
    EXPECT_DOUBLE_EQ(C(2, 0, 1), -1.0);
    EXPECT_NEAR(C(0, 1, 2), a1, 1e-14);
    EXPECT_NEAR(C(1, 2, 0), a2, 1e-14);
  }
}

TEST(Models, HopfValidates) {
  for (double s : {1.0, 2.0}) {
    const FoliationModel M = hopf_s3(s);
    const ModelReport r = validate_model(M, {});
    EXPECT_LE(r.jacobi, 1e-12);
    EXPECT_EQ(r.htype, 0.0);
    EXPECT_EQ(r.min_rank, 3);
    EXPECT_TRUE(r.pass(3));
  }
}

TEST(Models, QuaternionicHopfValidates) {
  for (double s : {1.0, 2.0}) {
    const FoliationModel M = quaternionic_hopf_s7(s);
    const ModelReport r = validate_model(M, {});
    EXPECT_LE(r.jacobi, 1e-12);
    EXPECT_LE(r.htype, 1e-14);
    EXPECT_EQ(r.integrability, 0.0);
    EXPECT_TRUE(r.pass(7));
    const Tensor3 C = structure(M);
    EXPECT_LE(verify_htype(extract_J(M, C)).max(), 1e-14);
    // vertical-vertical brackets stay vertical
    for (int i = 4; i < 7; ++i)
      for (int j = 4; j < 7; ++j)
        for (int g = 0; g < 4; ++g) EXPECT_EQ(C(g, i, j), 0.0);
  }
}

TEST(Models, Registry) {
  EXPECT_EQ(model_by_id("group:4,3").n, 4);
  EXPECT_EQ(model_by_id("hopf-s3").m, 1);
  EXPECT_DOUBLE_EQ(model_by_id("qhopf-s7@2").scale, 2.0);
  EXPECT_DOUBLE_EQ(model_by_id("hopf-s3", 0.5).scale, 0.5);
  EXPECT_THROW(model_by_id("sphere"), Error);
  EXPECT_THROW(model_by_id("group:3,1"), Error);
  EXPECT_THROW(model_by_id("hopf-s3@x"), Error);
  EXPECT_THROW(hopf_s3(-1.0), Error);
}

TEST(Models, ChartModelMatchesGroup) {
  const CliffordRep rep = build_rep(2, 1);
  const FoliationModel M = chart_model(2, 1, [rep](const Vec& p) { return group_frame(rep, p); }, Vec::Zero(3));
  std::mt19937_64 rng(15);
  std::vector<Vec> pts;
  for (int k = 0; k < 5; ++k) pts.push_back(random_point(rng, 3, 0.5));
  const ModelReport r = validate_model(M, pts, 1e-8);
  EXPECT_TRUE(r.pass(3));
  const Tensor3 C = structure(M, pts[0]), G = structure(htype_group(rep));
  for (std::size_t k = 0; k < C.d.size(); ++k) EXPECT_NEAR(C.d[k], G.d[k], 1e-9);
}

TEST(Models, StructureJson) {
  const auto j = structure_json(hopf_s3(1.0));
  EXPECT_EQ(j["n"], 2);
  EXPECT_EQ(j["structure_constants"].size(), 3u);
}
