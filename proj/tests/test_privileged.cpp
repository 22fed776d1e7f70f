#include "htype/privileged.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace htype;

namespace {

Vec random_point(std::mt19937_64& rng, int N, double s = 1.0) {
  std::normal_distribution<double> nd(0.0, s);
  Vec p(N);
  for (int k = 0; k < N; ++k) p(k) = nd(rng);
  return p;
}

}  // namespace

TEST(Privileged, KoranyiNormIsHomogeneous) {
  std::mt19937_64 rng(1);
  const Vec y = random_point(rng, 7);
  for (double t : {0.1, 2.5}) EXPECT_NEAR(koranyi_norm(4, dilate(4, y, t)), t * koranyi_norm(4, y), 1e-13);
  for (const Vec& s : koranyi_samples(4, 3, 20, 0.7, 3)) EXPECT_NEAR(koranyi_norm(4, s), 0.7, 1e-12);
}

TEST(Privileged, GroupChartIsExponentialCoordinates) {
  // On the group the ray from e with data (x, z) ends at (x, z): the z drift
  // J x . x vanishes by skew symmetry and the Z field integrates to t^2 z.
  for (auto [n, m] : {std::pair{2, 1}, {4, 3}}) {
    const CliffordRep rep = build_rep(n, m);
    const FoliationModel M = htype_group(rep);
    const PrivilegedChart chart(M);
    std::mt19937_64 rng(2);
    for (int k = 0; k < 4; ++k) {
      const Vec y = random_point(rng, n + m, 0.6);
      const ModelPoint p = chart.forward(y);
      const Vec want = group_matrix(rep, y) * M.origin;
      EXPECT_LE((p.p - want).cwiseAbs().maxCoeff(), 1e-9);
    }
  }
}

TEST(Privileged, GroupCoframeIsLeftInvariant) {
  const CliffordRep rep = build_rep(4, 3);
  const FoliationModel M = htype_group(rep);
  const PrivilegedChart chart(M, {}, {}, 1e-12);
  std::mt19937_64 rng(3);
  for (int k = 0; k < 3; ++k) {
    const Vec y = random_point(rng, 7, 0.5);
    EXPECT_LE(max_abs(chart.coframe(y) * group_frame(rep, y) - Mat::Identity(7, 7)), 1e-9);
  }
}

TEST(Privileged, RayScaling) {
  const FoliationModel M = hopf_s3(1.0);
  const ModelPoint q = base_point(M);
  const Vec X3 = (Vec(3) << 0.4, 0.2, 0.0).finished(), Z3 = (Vec(3) << 0.0, 0.0, 0.3).finished();
  for (double t : {0.5, 0.8}) {
    const ParabolicState a = integrate_parabolic(M, q, t * X3, t * t * Z3, 1.0, 1e-12);
    const ParabolicState b = integrate_parabolic(M, q, X3, Z3, t, 1e-12);
    EXPECT_LE((a.p.p - b.p.p).cwiseAbs().maxCoeff(), 1e-9);
  }
}

TEST(Privileged, FlowIsReversible) {
  for (const char* id : {"hopf-s3", "qhopf-s7"}) {
    const FoliationModel M = model_by_id(id);
    const ModelPoint q = base_point(M);
    std::mt19937_64 rng(4);
    const Vec y = random_point(rng, M.N(), 0.4);
    Vec X = Vec::Zero(M.N()), Z = Vec::Zero(M.N());
    X.head(M.n) = y.head(M.n);
    Z.tail(M.m) = y.tail(M.m);
    const ParabolicState s = integrate_parabolic(M, q, X, Z, 0.9, 1e-12);
    const ParabolicState back = ParabolicFlow(M).flow(s, {-0.9}, 1e-12).back();
    EXPECT_LE((back.p.p - q.p).cwiseAbs().maxCoeff(), 1e-9) << id;
    EXPECT_LE((back.v - X).cwiseAbs().maxCoeff(), 1e-9) << id;
  }
}

TEST(Privileged, SpecialFrameIsOrthonormalAndSplit) {
  const FoliationModel M = quaternionic_hopf_s7(1.0);
  std::mt19937_64 rng(5);
  const Vec y = random_point(rng, 7, 0.5);
  Vec X = Vec::Zero(7), Z = Vec::Zero(7);
  X.head(4) = y.head(4);
  Z.tail(3) = y.tail(3);
  const Mat E = special_frame(M, base_point(M), X, Z, 1.0, 1e-12);
  EXPECT_LE(max_abs(E.transpose() * E - Mat::Identity(7, 7)), 1e-10);
  EXPECT_LE(max_abs(E.topRightCorner(4, 3)), 1e-10);
  EXPECT_LE(max_abs(E.bottomLeftCorner(3, 4)), 1e-10);
}

TEST(Privileged, InverseRoundTrip) {
  for (const char* id : {"hopf-s3", "qhopf-s7", "group:4,3"}) {
    const FoliationModel M = model_by_id(id);
    const PrivilegedChart chart(M, {}, {}, 1e-12);
    EXPECT_LE(chart_inverse(chart, chart.base()).cwiseAbs().maxCoeff(), 1e-12);
    std::mt19937_64 rng(6);
    for (int k = 0; k < 3; ++k) {
      const Vec y = random_point(rng, M.N(), 0.3);
      const Vec back = chart_inverse(chart, chart.forward(y));
      EXPECT_LE((back - y).cwiseAbs().maxCoeff(), 1e-8) << id;
    }
  }
}

TEST(Privileged, RotatedFrameRotatesCoordinates) {
  const FoliationModel M = quaternionic_hopf_s7(1.0);
  const Mat O = random_block_rotation(4, 3, 7);
  const PrivilegedChart plain(M, {}, {}, 1e-12), rotated(M, {}, O, 1e-12);
  std::mt19937_64 rng(8);
  const Vec y = random_point(rng, 7, 0.3);
  const ModelPoint p = plain.forward(O * y);
  EXPECT_LE((rotated.forward(y).p - p.p).cwiseAbs().maxCoeff(), 1e-9);
  EXPECT_LE((chart_inverse(rotated, p) - y).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(Privileged, ThirdOrderCoframeFromCurvature) {
  const FoliationModel M = hopf_s3(1.0);
  const PrivilegedChart chart(M, {}, {}, 1e-12);
  const CurvatureTensor R = curvature(M, solve_bott(M));
  const std::vector<Vec> ys = koranyi_samples(2, 1, 4, 1.0, 9);
  const SeriesEvaluator eval = [&](const Vec& y, const std::vector<double>& ts) {
    std::vector<Mat> out;
    for (const auto& s : chart.samples(y, ts, false)) out.push_back(chart.coframe_raw(s));
    return out;
  };
  const HomogeneousPart h = extract_homogeneous(eval, 3, 1, ys);
  for (std::size_t k = 0; k < ys.size(); ++k) {
    const Vec& y = ys[k];
    Mat want = Mat::Zero(2, 2);
    for (int a = 0; a < 2; ++a)
      for (int d = 0; d < 2; ++d)
        for (int b = 0; b < 2; ++b)
          for (int g = 0; g < 2; ++g) want(a, d) += R(a, g, d, b) * y(b) * y(g) / 6.0;
    EXPECT_LE(max_abs(h.values[k].topLeftCorner(2, 2) - want), 1e-6);
  }
  // the hopf horizontal curvature is not zero, so this order is a real check
  EXPECT_GT(std::abs(R(0, 0, 1, 1)), 1.0);
}

TEST(Privileged, TaylorCheckGroupsExact) {
  for (const char* id : {"group:2,1", "group:4,3"}) {
    const TaylorReport r = taylor_check(model_by_id(id), 1e-12, 3);
    EXPECT_TRUE(r.pass()) << id << " " << r.max_residual();
  }
}

TEST(Privileged, TaylorCheckCurvedModels) {
  for (const char* id : {"hopf-s3", "qhopf-s7", "hopf-s3@2"}) {
    const TaylorReport r = taylor_check(model_by_id(id), 1e-5, 3);
    EXPECT_TRUE(r.pass()) << id << " " << r.max_residual();
    for (const auto& e : r.entries)
      if (e.name.rfind("generator", 0) == 0) EXPECT_LE(e.residual, 1e-8) << id << " " << e.name;
  }
}
