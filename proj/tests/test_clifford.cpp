#include "htype/clifford.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace htype;

namespace {

// Radon-Hurwitz number: n = 2^(4a+b) * odd gives rho(n) = 8a + 2^b, and R^n
// carries m anticommuting complex structures iff m <= rho(n) - 1.
int radon_hurwitz(int n) {
  int e = 0;
  while (n % 2 == 0) {
    n /= 2;
    ++e;
  }
  return 8 * (e / 4) + (1 << (e % 4));
}

double brute_residual(const CliffordRep& rep) {
  double worst = 0.0;
  for (int i = 0; i < rep.m; ++i)
    for (int j = 0; j < rep.m; ++j)
      for (int r = 0; r < rep.n; ++r)
        for (int c = 0; c < rep.n; ++c) {
          double s = 0.0;
          for (int k = 0; k < rep.n; ++k) s += rep.J[i](r, k) * rep.J[j](k, c) + rep.J[j](r, k) * rep.J[i](k, c);
          const double want = (i == j && r == c) ? -2.0 : 0.0;
          worst = std::max(worst, std::abs(s - want));
          if (i == j) worst = std::max(worst, std::abs(rep.J[i](r, c) + rep.J[i](c, r)));
        }
  return worst;
}

}  // namespace

TEST(Clifford, AdmissibleMatchesRadonHurwitz) {
  for (int n = 1; n <= 64; ++n)
    for (int m = 1; m <= 24; ++m) EXPECT_EQ(admissible(n, m), m <= radon_hurwitz(n) - 1) << n << "," << m;
}

TEST(Clifford, SmallCases) {
  EXPECT_TRUE(admissible(2, 1));
  EXPECT_FALSE(admissible(3, 1));
  EXPECT_TRUE(admissible(4, 3));
  EXPECT_FALSE(admissible(4, 4));
  EXPECT_TRUE(admissible(8, 7));
  EXPECT_TRUE(admissible(16, 8));
}

TEST(Clifford, ComplexStructureOnPlane) {
  const CliffordRep rep = build_rep(2, 1);
  const Vec e1 = Vec::Unit(2, 0), e2 = Vec::Unit(2, 1);
  EXPECT_EQ((rep.J[0] * e1 - e2).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ((rep.J[0] * e2 + e1).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(verify_htype(rep).max(), 0.0);
}

TEST(Clifford, QuaternionicTriple) {
  const CliffordRep rep = build_rep(4, 3);
  const Mat P = rep.J[0] * rep.J[1];
  const double plus = max_abs(P - rep.J[2]), minus = max_abs(P + rep.J[2]);
  EXPECT_EQ(std::min(plus, minus), 0.0);
  EXPECT_LE(verify_htype(rep).max(), 1e-14);
}

TEST(Clifford, OctonionicType) {
  const CliffordRep rep = build_rep(8, 7);
  EXPECT_LE(brute_residual(rep), 1e-14);
  EXPECT_LE(verify_htype(rep).max(), 1e-14);
}

TEST(Clifford, SweepUpTo24) {
  int count = 0;
  for (int n = 1; n <= 23; ++n)
    for (int m = 1; n + m <= 24; ++m) {
      if (!admissible(n, m)) {
        EXPECT_THROW(build_rep(n, m), Error);
        continue;
      }
      const CliffordRep rep = build_rep(n, m);
      ASSERT_EQ(rep.n, n);
      ASSERT_EQ(static_cast<int>(rep.J.size()), m);
      EXPECT_LE(brute_residual(rep), 1e-12) << n << "," << m;
      EXPECT_TRUE(verify_htype(rep, 1e-12).pass()) << n << "," << m;
      ++count;
    }
  EXPECT_GT(count, 20);
}

TEST(Clifford, RejectionNamesIrreducibleDimension) {
  try {
    build_rep(6, 3);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("d(m) = 4"), std::string::npos) << e.what();
  }
}

TEST(Clifford, ScaledMatrixResidual) {
  CliffordRep rep = build_rep(2, 1);
  rep.J[0] *= 2.0;
  EXPECT_DOUBLE_EQ(verify_htype(rep).square, 3.0);
  EXPECT_FALSE(verify_htype(rep).pass());
}

TEST(Clifford, Deterministic) {
  const CliffordRep a = build_rep(16, 8), b = build_rep(16, 8);
  for (int i = 0; i < 8; ++i) EXPECT_EQ(max_abs(a.J[i] - b.J[i]), 0.0);
}

TEST(Clifford, RandomDirectionsAnticommute) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> nd;
  for (auto [n, m] : {std::pair{4, 3}, {8, 7}, {16, 8}, {8, 5}}) {
    const CliffordRep rep = build_rep(n, m);
    for (int trial = 0; trial < 10; ++trial) {
      Vec z(m), w(m);
      for (int i = 0; i < m; ++i) {
        z(i) = nd(rng);
        w(i) = nd(rng);
      }
      z.normalize();
      w.normalize();
      const Mat Jz = rep.Jz(z), Jw = rep.Jz(w);
      const Mat I = Mat::Identity(n, n);
      EXPECT_LE(max_abs(Jz * Jw + Jw * Jz + 2.0 * z.dot(w) * I), 1e-12);
      EXPECT_LE(max_abs(Jz.transpose() * Jz - I), 1e-12);
    }
  }
}

TEST(Clifford, JsonRoundTrip) {
  const CliffordRep rep = build_rep(8, 6);
  const CliffordRep back = rep_from_json(to_json(rep));
  ASSERT_EQ(back.m, rep.m);
  for (int i = 0; i < rep.m; ++i) EXPECT_EQ(max_abs(back.J[i] - rep.J[i]), 0.0);
}
