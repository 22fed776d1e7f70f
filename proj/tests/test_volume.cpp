#include "htype/volume.hpp"

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

BallVolumeOptions small_budget(double budget, int threads = 1) {
  BallVolumeOptions o;
  o.budget = budget;
  o.shells = 64;
  o.threads = threads;
  return o;
}

}  // namespace

TEST(Volume, HausdorffDimension) {
  EXPECT_EQ(hausdorff_dimension(2, 1), 4);
  EXPECT_EQ(hausdorff_dimension(4, 3), 10);
  EXPECT_EQ(theoretical_constants(8, 7).Q, 22);
}

TEST(Volume, HeisenbergConstantsClosedForm) {
  const VolumeConstants c = theoretical_constants(2, 1);
  const double pi = std::numbers::pi;
  EXPECT_NEAR(c.ball, pi * pi / 2.0, 1e-13);
  EXPECT_NEAR(c.x1_moment, pi / 3.0, 1e-13);
  EXPECT_NEAR(c.a, pi * pi / (4.0 * std::sqrt(2.0)), 1e-13);
  EXPECT_NEAR(c.b, pi / (36.0 * std::sqrt(2.0)), 1e-13);
}

TEST(Volume, ConstantsMatchQuadratureAndSampling) {
  for (auto [n, m] : {std::pair{2, 1}, {4, 3}, {8, 7}}) {
    const VolumeConstants c = theoretical_constants(n, m);
    EXPECT_NEAR(c.ball_quadrature / c.ball, 1.0, 1e-10);
    EXPECT_NEAR(c.x1_quadrature / c.x1_moment, 1.0, 1e-10);
    EXPECT_NEAR(c.normalization, std::pow(4.0 * n, -0.5 * m), 1e-15);
  }
  // hit-or-miss in the enclosing cube
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const int total = 400000;
  int hit = 0;
  double x1 = 0.0;
  for (int k = 0; k < total; ++k) {
    Vec y(7);
    for (int i = 0; i < 7; ++i) y(i) = u(rng);
    if (koranyi_norm(4, y) <= 1.0) {
      ++hit;
      x1 += y(0) * y(0);
    }
  }
  const VolumeConstants c = theoretical_constants(4, 3);
  EXPECT_NEAR(128.0 * hit / total / c.ball, 1.0, 0.02);
  EXPECT_NEAR(128.0 * x1 / total / c.x1_moment, 1.0, 0.03);
}

TEST(Volume, GroupPoppDensity) {
  for (auto [n, m] : {std::pair{2, 1}, {4, 3}}) {
    const FoliationModel M = htype_group(build_rep(n, m));
    const PrivilegedChart chart(M, {}, {}, 1e-12);
    std::mt19937_64 rng(2);
    const double want = std::pow(static_cast<double>(n), -0.5 * m) * std::pow(2.0, -m);
    for (int k = 0; k < 3; ++k) EXPECT_NEAR(popp_density(chart, random_point(rng, n + m, 0.5)), want, 1e-10);
  }
}

TEST(Volume, GroupVolumesAreExact) {
  const FoliationModel M = htype_group(build_rep(4, 3));
  const PrivilegedChart chart(M);
  const BallVolumes b = ball_volumes(chart, {0.1, 0.2, 0.4}, small_budget(2000));
  const double a = theoretical_constants(4, 3).a;
  for (std::size_t k = 0; k < b.radii.size(); ++k) {
    EXPECT_NEAR(b.normalized[k] / a, 1.0, 1e-9);
    // variance by cancellation, so only sqrt(eps) survives
    EXPECT_LE(b.stderrs[k], 1e-6 * b.volumes[k]);
  }
  EXPECT_NEAR(b.volumes[1] / b.volumes[0], std::pow(2.0, 10), 1e-6);
  EXPECT_NEAR(b.volumes[2] / b.volumes[1], std::pow(2.0, 10), 1e-6);
}

TEST(Volume, PositiveCurvatureShrinksBalls) {
  const FoliationModel M = hopf_s3(1.0);
  const PrivilegedChart chart(M);
  const BallVolumes b = ball_volumes(chart, {0.3}, small_budget(50000));
  const double flat = theoretical_constants(2, 1).a * std::pow(0.3, 4);
  EXPECT_LT(b.volumes[0] + 5.0 * b.stderrs[0], flat);
}

TEST(Volume, HopfExpansionFit) {
  const FoliationModel M = hopf_s3(1.0);
  const PrivilegedChart chart(M);
  BallVolumeOptions o = small_budget(4e5);
  o.shells = 128;
  const VolumeReport r = expansion_fit(chart, default_radii(), o);
  EXPECT_NEAR(r.kappa_h, 8.0, 1e-10);
  EXPECT_NEAR(r.b_expected, -8.0 * std::numbers::pi / (36.0 * std::sqrt(2.0)), 1e-12);
  EXPECT_LE(r.a_rel_error, 5e-3);
  EXPECT_LE(std::abs(r.b_hat - r.b_expected), 5.0 * r.b_err + 0.05 * std::abs(r.b_expected));
}

TEST(Volume, DeterministicAcrossThreadCounts) {
  const FoliationModel M = hopf_s3(1.0);
  const PrivilegedChart chart(M);
  const BallVolumes a = ball_volumes(chart, {0.2, 0.3}, small_budget(5000, 1));
  const BallVolumes b = ball_volumes(chart, {0.2, 0.3}, small_budget(5000, 3));
  for (int k = 0; k < 2; ++k) {
    EXPECT_EQ(a.volumes[k], b.volumes[k]);
    EXPECT_EQ(a.stderrs[k], b.stderrs[k]);
  }
}

TEST(Volume, FrameRotationLeavesVolumeUnchanged) {
  const FoliationModel M = quaternionic_hopf_s7(1.0);
  const PrivilegedChart plain(M), rotated(M, {}, random_block_rotation(4, 3, 4));
  const BallVolumes a = ball_volumes(plain, {0.3}, small_budget(20000));
  const BallVolumes b = ball_volumes(rotated, {0.3}, small_budget(20000));
  EXPECT_NEAR(a.volumes[0], b.volumes[0], 5.0 * std::hypot(a.stderrs[0], b.stderrs[0]));
}

TEST(Volume, RejectsBadInput) {
  const FoliationModel M = hopf_s3(1.0);
  const PrivilegedChart chart(M);
  EXPECT_THROW(ball_volumes(chart, {}), Error);
  EXPECT_THROW(ball_volumes(chart, {0.1, -0.2}), Error);
  EXPECT_THROW(expansion_fit(chart, {0.1, 0.2, 0.3}), Error);
}
