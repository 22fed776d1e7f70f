#include "htype/connection.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace htype;

namespace {

// Bott connection as the solution of its axioms written as a plain linear system.
struct AxiomSolve {
  Tensor3 G;
  int rank = 0;
  int unknowns = 0;
};

AxiomSolve solve_axioms(int n, const Tensor3& C) {
  const int N = C.N, U = N * N * N;
  auto idx = [N](int c, int a, int b) { return (c * N + a) * N + b; };
  auto h = [n](int a) { return a < n; };
  std::vector<std::vector<std::pair<int, double>>> eqs;
  std::vector<double> rhs;
  for (int c = 0; c < N; ++c)
    for (int a = 0; a < N; ++a)
      for (int b = 0; b < N; ++b) {
        eqs.push_back({{idx(c, a, b), 1.0}, {idx(c, b, a), 1.0}});
        rhs.push_back(0.0);
        if (h(a) != h(b)) {
          eqs.push_back({{idx(c, a, b), 1.0}});
          rhs.push_back(0.0);
        }
      }
  // T^d_{ab} = Gamma^d_{ab} - Gamma^d_{ba} - C^d_{ab}, Gamma^d_{ab} = G(a, b, d)
  for (int d = 0; d < N; ++d)
    for (int a = 0; a < N; ++a)
      for (int b = 0; b < N; ++b) {
        const bool constrained = (h(a) && h(b)) ? h(d) : true;
        if (!constrained) continue;
        eqs.push_back({{idx(a, b, d), 1.0}, {idx(b, a, d), -1.0}});
        rhs.push_back(C(d, a, b));
      }
  Mat A = Mat::Zero(static_cast<int>(eqs.size()), U);
  Vec y(static_cast<int>(eqs.size()));
  for (std::size_t r = 0; r < eqs.size(); ++r) {
    for (auto [k, v] : eqs[r]) A(static_cast<int>(r), k) += v;
    y(static_cast<int>(r)) = rhs[r];
  }
  Eigen::ColPivHouseholderQR<Mat> qr(A);
  AxiomSolve out;
  out.unknowns = U;
  out.rank = static_cast<int>(qr.rank());
  const Vec g = qr.solve(y);
  out.G = Tensor3(N);
  for (int k = 0; k < U; ++k) out.G.d[k] = g(k);
  return out;
}

std::vector<FoliationModel> builtins() {
  return {htype_group(build_rep(2, 1)), htype_group(build_rep(4, 3)), hopf_s3(1.0), quaternionic_hopf_s7(1.0)};
}

}  // namespace

TEST(Connection, SolveMatchesAxiomSystem) {
  for (const auto& M : builtins()) {
    const ConnectionCoeffs K = solve_bott(M);
    const AxiomSolve ref = solve_axioms(M.n, K.C);
    EXPECT_EQ(ref.rank, ref.unknowns) << M.id;
    for (std::size_t k = 0; k < ref.G.d.size(); ++k) EXPECT_NEAR(K.G.d[k], ref.G.d[k], 1e-12) << M.id;
  }
}

TEST(Connection, AxiomsAndUniqueness) {
  for (const auto& M : builtins()) {
    const ConnectionCoeffs K = solve_bott(M);
    EXPECT_LE(axiom_residuals(M.n, K).max(), 1e-12) << M.id;
    EXPECT_GT(uniqueness_margin(M.n, K, 1e-6), 0.5e-6) << M.id;
  }
}

TEST(Connection, GroupIsFlat) {
  const FoliationModel M = htype_group(build_rep(4, 3));
  const ConnectionCoeffs K = solve_bott(M);
  EXPECT_EQ(K.G.max_abs(), 0.0);
  EXPECT_EQ(curvature(M, K).max_abs(), 0.0);
  for (const auto& row : nabla_j(M))
    for (const Mat& A : row) EXPECT_EQ(max_abs(A), 0.0);
}

TEST(Connection, MetricityExactOnQuaternionicHopf) {
  const ConnectionCoeffs K = solve_bott(quaternionic_hopf_s7(1.0));
  EXPECT_EQ(axiom_residuals(4, K).metricity, 0.0);
}

// Hand Koszul computation on the su(2) frame: [X1, X2] = -Z, [X2, Z] = a X1,
// [Z, X1] = a X2 with a = -4/s^2. Horizontal Gamma vanishes, nabla_Z X1 = a X2,
// nabla_Z X2 = -a X1, so R(X1, X2) X2 = nabla_Z X2 = -a X1 and kappa_H = -2a = 8/s^2.
TEST(Connection, HopfKappaMatchesHandKoszul) {
  for (double s : {0.5, 1.0, 2.0}) {
    const FoliationModel M = hopf_s3(s);
    const double a = -4.0 / (s * s);
    const ConnectionCoeffs K = solve_bott(M);
    EXPECT_NEAR(K.G(2, 0, 1), a, 1e-13);
    EXPECT_NEAR(K.G(2, 1, 0), -a, 1e-13);
    const CurvatureTensor R = curvature(M, K);
    EXPECT_NEAR(R(0, 0, 1, 1), -a, 1e-12);
    EXPECT_NEAR(kappa_h(M), 8.0 / (s * s), 1e-12);
    EXPECT_NEAR(kappa_h(M) * s * s, 8.0, 1e-12);
  }
}

TEST(Connection, CurvatureBlocks) {
  for (const auto& M : builtins()) {
    const CurvatureTensor R = curvature(M, solve_bott(M));
    const int n = M.n, N = M.N();
    for (int d = 0; d < N; ++d)
      for (int a = 0; a < N; ++a)
        for (int b = 0; b < N; ++b)
          for (int c = 0; c < N; ++c) {
            EXPECT_EQ(R(d, a, b, c), -R(d, b, a, c));
            if ((d < n) != (c < n)) EXPECT_EQ(R(d, a, b, c), 0.0) << M.id;
          }
  }
}

TEST(Connection, QuaternionicHopfNablaJ) {
  const FoliationModel M = quaternionic_hopf_s7(1.0);
  const auto D = nabla_j(M);
  const auto K = solve_bott(M);
  const auto J = j_matrices(4, 3, K.C);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      EXPECT_LE(max_abs(D[i][j] + D[i][j].transpose()), 1e-12);
      EXPECT_LE(max_abs(D[i][j] * J[j] + J[j] * D[i][j]), 1e-12);
      EXPECT_LE(max_abs(D[i][j] + D[j][i]), 1e-12);
    }
  EXPECT_GT(max_abs(D[0][1]), 0.1);
}

TEST(Connection, QuaternionicHopfValues) {
  for (double s : {1.0, 2.0}) {
    const InvariantsReport inv = invariants(quaternionic_hopf_s7(s));
    ASSERT_TRUE(inv.kappa_v.has_value());
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j)
        if (i != j) {
          EXPECT_EQ(inv.sigma(i, j), -4);
          EXPECT_FALSE(inv.sigma_indeterminate(i, j));
        }
    EXPECT_NEAR(inv.tau_v, -24.0 * std::sqrt(*inv.kappa_v), 1e-10);
    EXPECT_LE(inv.parallel_torsion_residual, 1e-12);
  }
}

TEST(Connection, ScalingLaws) {
  const InvariantsReport a = invariants(quaternionic_hopf_s7(1.0)), b = invariants(quaternionic_hopf_s7(2.0));
  EXPECT_NEAR(b.kappa_h * 4.0, a.kappa_h, 1e-10);
  // vertical directions carry weight 2
  EXPECT_NEAR(b.tau_v * 4.0, a.tau_v, 1e-10);
  EXPECT_NEAR(*b.kappa_v * 16.0, *a.kappa_v, 1e-10);
}

TEST(Connection, TauVanishesForRankOne) {
  for (double s : {0.5, 1.0, 2.0}) EXPECT_EQ(invariants(hopf_s3(s)).tau_v, 0.0);
  EXPECT_EQ(invariants(htype_group(build_rep(2, 1))).tau_v, 0.0);
}

TEST(Connection, TauIsFrameIndependent) {
  const FoliationModel M = quaternionic_hopf_s7(1.0);
  const double t0 = invariants(M).tau_v, k0 = invariants(M).kappa_h;
  for (unsigned long long seed : {1ull, 2ull, 3ull}) {
    const FoliationModel R = rotate_frame(M, random_block_rotation(4, 3, seed));
    EXPECT_NEAR(invariants(R).tau_v, t0, 1e-10);
    EXPECT_NEAR(invariants(R).kappa_h, k0, 1e-10);
  }
}

TEST(Connection, TraceMEqualsTraceNAndEigenvalues) {
  const FoliationModel M = quaternionic_hopf_s7(1.0);
  const ConnectionCoeffs K = solve_bott(M);
  const CurvatureTensor R = curvature(M, K);
  const auto D = nabla_j(M);
  const auto J = j_matrices(4, 3, K.C);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      const Mat Mij = J[j] * J[i] * D[i][j];
      const Mat Nij = 0.5 * (Mij + Mij.transpose());
      EXPECT_NEAR(Mij.trace(), Nij.trace(), 1e-12);
      if (i == j) continue;
      const double k = R(4 + i, 4 + i, 4 + j, 4 + j);
      Eigen::SelfAdjointEigenSolver<Mat> es(Nij);
      for (int e = 0; e < 4; ++e) EXPECT_NEAR(std::abs(es.eigenvalues()(e)), std::sqrt(k), 1e-10);
    }
}

TEST(Connection, IdentityBatteryOnBuiltins) {
  for (const auto& M : builtins()) {
    for (unsigned seed = 1; seed <= 20; ++seed) {
      const IdentityReport r = check_identities(M, Vec(), 1e-10, seed);
      EXPECT_TRUE(r.pass()) << M.id << " " << r.max();
    }
  }
}

TEST(Connection, GroupIdentitiesExactlyZero) {
  const IdentityReport r = check_identities(htype_group(build_rep(2, 1)));
  for (auto& [k, v] : r.entries()) EXPECT_LE(v, 1e-15) << k;
}

TEST(Connection, TraceIdentityOneOnQuaternionicHopf) {
  const IdentityReport r = check_identities(quaternionic_hopf_s7(1.0));
  EXPECT_LE(r.trace1, 1e-10);
  EXPECT_LE(r.bianchi, 1e-12);
  EXPECT_LE(check_identities(hopf_s3(1.0)).bianchi, 1e-12);
}

TEST(Connection, Flatness) {
  EXPECT_TRUE(flatness_check(htype_group(build_rep(2, 1)), {}).flat);
  EXPECT_TRUE(flatness_check(htype_group(build_rep(4, 3)), {}).flat);
  const FlatnessResult h = flatness_check(hopf_s3(1.0), {});
  EXPECT_FALSE(h.flat);
  EXPECT_TRUE(h.applicable);
  EXPECT_GT(h.max_abs_r, 1.0);
  const FlatnessResult q = flatness_check(quaternionic_hopf_s7(1.0), {});
  EXPECT_FALSE(q.flat);
  EXPECT_TRUE(q.applicable);
}

// Rescaling the Heisenberg frame by a non-constant factor, X'_a = f X_a and
// Z' = f^2 Z, keeps the H-type normalization but the torsion is no longer
// horizontally parallel, so the criterion must be flagged inapplicable.
TEST(Connection, FlatnessHypothesisFlag) {
  const CliffordRep rep = build_rep(2, 1);
  auto frame = [rep](const Vec& p) {
    Mat F = group_frame(rep, p);
    const double f = 1.0 + 0.3 * p(0);
    F.leftCols(2) *= f;
    F.col(2) *= f * f;
    return F;
  };
  const FoliationModel M = chart_model(2, 1, frame, Vec::Zero(3));
  EXPECT_TRUE(validate_model(M, {Vec::Zero(3)}, 1e-8).pass(3));
  const FlatnessResult r = flatness_check(M, {Vec::Zero(3)}, 1e-8);
  EXPECT_GT(r.parallel_torsion, 1e-3);
  EXPECT_FALSE(r.applicable);
  EXPECT_FALSE(r.flat);
}
