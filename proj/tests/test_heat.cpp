#include "htype/heat.hpp"

#include <boost/math/quadrature/ooura_fourier_integrals.hpp>
#include <gtest/gtest.h>

#include <random>

using namespace htype;

namespace {

// Heisenberg kernel at t = 1 by Ooura's method for the cosine transform in lambda:
// K = (1/pi) int_0^inf cos(lambda z) (4 pi)^{-1} (2 lambda / sinh 2 lambda) e^{-|x|^2 lambda coth(2 lambda) / 2}.
double heisenberg_oracle(double x2, double z) {
  auto f = [x2](double l) {
    if (l < 1e-8) return 1.0 / (4.0 * std::numbers::pi) * std::exp(-x2 / 4.0);
    const double u = 2.0 * l;
    return 1.0 / (4.0 * std::numbers::pi) * (u / std::sinh(u)) * std::exp(-0.5 * x2 * l / std::tanh(u));
  };
  if (z == 0.0) {
    double s = 0.0;
    for (const auto& [r, w] : detail::composite_rule<20>(0.0, 40.0, 40)) s += w * f(r);
    return s / std::numbers::pi;
  }
  boost::math::quadrature::ooura_fourier_cos<double> oc;
  return oc.integrate(f, std::abs(z)).first / std::numbers::pi;
}

// t^2 trace of exp(-t Delta) on SU(2), Delta = -(X1^2 + X2^2) with X1 = i, X2 = j:
// on V_l the eigenvalues are l(l+2) - (l-2q)^2, q = 0..l, each with multiplicity l+1.
double su2_trace(double t) {
  long double s = 0.0;
  const int L = static_cast<int>(60.0 / t) + 10;
  for (int l = 0; l <= L; ++l)
    for (int q = 0; q <= l; ++q) {
      const double e = l * (l + 2.0) - (l - 2.0 * q) * (l - 2.0 * q);
      s += (l + 1) * std::exp(-t * e);
    }
  return static_cast<double>(t * t * s);
}

C1Site site(const std::string& label, const FoliationModel& M) {
  const C1Estimate e = c1_estimate(M);
  const InvariantsReport inv = invariants(M);
  return {label, M.n, M.m, e.value_popp, e.error_popp, inv.kappa_h, inv.tau_v};
}

}  // namespace

TEST(Heat, KernelAtOriginClosedForms) {
  // int_0^inf u/sinh u = pi^2/4 and int_0^inf u^4/sinh^2 u = pi^4/30
  EXPECT_NEAR(GroupKernel(2, 1)(1.0, Vec::Zero(3)) * 32.0, 1.0, 1e-10);
  EXPECT_NEAR(GroupKernel(4, 3)(1.0, Vec::Zero(7)) * 7680.0, 1.0, 1e-10);
}

TEST(Heat, HeisenbergKernelMatchesOoura) {
  const GroupKernel K(2, 1);
  for (double x : {0.0, 0.5, 1.5, 4.0})
    for (double z : {0.0, 0.3, 2.0, 7.5}) {
      const Vec y = (Vec(3) << x / std::sqrt(2.0), x / std::sqrt(2.0), z).finished();
      const double want = heisenberg_oracle(x * x, z);
      EXPECT_NEAR(K(1.0, y) / want, 1.0, 1e-8) << x << " " << z;
    }
}

TEST(Heat, KernelContractsHeisenberg) {
  const KernelContracts c = kernel_contracts(build_rep(2, 1), true, 1);
  EXPECT_LE(c.homogeneity, 1e-12);
  EXPECT_LE(c.normalization, 1e-9);
  EXPECT_LE(c.pde, 1e-9);
  EXPECT_TRUE(c.semigroup_checked);
  EXPECT_LE(c.semigroup, 1e-6);
}

TEST(Heat, KernelContractsQuaternionic) {
  const KernelContracts c = kernel_contracts(build_rep(4, 3), false, 1);
  EXPECT_LE(c.homogeneity, 1e-12);
  EXPECT_LE(c.normalization, 1e-9);
  EXPECT_LE(c.pde, 1e-9);
  EXPECT_FALSE(c.semigroup_checked);
}

TEST(Heat, KernelJetMatchesDifferences) {
  const GroupKernel K(4, 3);
  std::mt19937_64 rng(3);
  std::normal_distribution<double> nd(0.0, 0.7);
  Vec y(7);
  for (int k = 0; k < 7; ++k) y(k) = nd(rng);
  const KernelJet j = K.jet(0.8, y);
  const double h = 1e-4;
  for (int k = 0; k < 7; ++k) {
    const Vec e = h * Vec::Unit(7, k);
    EXPECT_NEAR(j.grad(k), (K(0.8, y + e) - K(0.8, y - e)) / (2 * h), 1e-8 * std::abs(j.value) + 1e-12);
  }
  EXPECT_NEAR(j.value, K(0.8, y), 1e-15);
}

TEST(Heat, FlatModelsHaveZeroC1) {
  for (auto [n, m] : {std::pair{2, 1}, {4, 3}}) {
    const C1Estimate e = c1_estimate(htype_group(build_rep(n, m)));
    EXPECT_EQ(e.value, 0.0);
    EXPECT_EQ(e.error, 0.0);
  }
  PolyDiffOp null(2, 1, 0);
  EXPECT_EQ(duhamel_c1(null).value, 0.0);
  EXPECT_EQ(duhamel_c1_monte_carlo(null).value, 0.0);
}

TEST(Heat, HopfC1AgainstSpectralOracle) {
  // t^2 trace = c0' (1 + (c1/c0) t + ...), so the ratio does not depend on how volume is normalized
  const double ts[4] = {0.005, 0.01, 0.02, 0.04};
  Mat X(4, 4);
  Vec y(4);
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 4; ++j) X(i, j) = std::pow(ts[i], j);
    y(i) = su2_trace(ts[i]);
  }
  const Vec c = X.colPivHouseholderQr().solve(y);
  const FoliationModel M = hopf_s3(1.0);
  const C1Estimate e = c1_estimate(M);
  const C0Value z = c0(M);
  EXPECT_NEAR(e.value / z.kernel_at_origin, c(1) / c(0), 1e-5);
  EXPECT_LE(e.error, 1e-12);
  EXPECT_FALSE(e.partial);
  EXPECT_NEAR(e.popp_factor, std::sqrt(8.0), 1e-14);
}

TEST(Heat, C1ScalesLikeCurvature) {
  const double a = c1_estimate(hopf_s3(1.0)).value, b = c1_estimate(hopf_s3(2.0)).value;
  EXPECT_NEAR(a / b, 4.0, 1e-10);
  const double p = c1_estimate(quaternionic_hopf_s7(1.0)).value, q = c1_estimate(quaternionic_hopf_s7(2.0)).value;
  EXPECT_NEAR(p / q, 4.0, 1e-8);
}

TEST(Heat, MonteCarloAgreesWithFourier) {
  const AOperators A = assemble_A_ops(hopf_s3(1.0));
  EXPECT_TRUE(A.A_minus1.zero());
  C1MonteCarloOptions o;
  o.samples_per_node = 2000;
  o.threads = 1;
  const C1MonteCarlo mc = duhamel_c1_monte_carlo(A.A0, o);
  const double fourier = duhamel_c1(A.A0).value;
  EXPECT_NEAR(mc.value, fourier, 5.0 * mc.stderr_);
  EXPECT_LE(mc.stderr_, 0.05 * std::abs(fourier));
}

TEST(Heat, C1InvariantUnderFrameRotation) {
  const FoliationModel M = quaternionic_hopf_s7(1.0);
  const FoliationModel R = rotate_frame(M, random_block_rotation(4, 3, 21));
  EXPECT_NEAR(c1_estimate(R).value / c1_estimate(M).value, 1.0, 1e-8);
}

TEST(Heat, OperatorsAreHomogeneous) {
  const AOperators A = assemble_A_ops(quaternionic_hopf_s7(1.0));
  EXPECT_TRUE(A.A_minus1.zero());
  EXPECT_EQ(A.A0.weight_defect(), 0);
  EXPECT_LE(A.parallel_torsion_residual, 1e-12);
  const CliffordRep rep = build_rep(4, 3);
  EXPECT_EQ(group_sublaplacian(4, 3, rep.J).weight_defect(), 0);
}

TEST(Heat, RankDeficientSitesReportIdentifiableDirection) {
  const std::vector<C1Site> sites = {site("group", htype_group(build_rep(2, 1))), site("hopf1", hopf_s3(1.0)),
                                     site("hopf2", hopf_s3(2.0))};
  try {
    fit_universal_constants(sites);
    FAIL() << "expected RankDeficient";
  } catch (const RankDeficient& e) {
    EXPECT_NEAR(std::abs(e.direction(0)), 1.0, 1e-12);
    EXPECT_LE(e.residual, 1e-10);
    EXPECT_NEAR(e.coefficient * e.direction(0), sites[1].c1 / sites[1].kappa_h, 1e-10);
  }
  EXPECT_THROW(fit_universal_constants({sites[0], sites[1]}), Error);
}

TEST(Heat, MixedSitesFit) {
  const std::vector<C1Site> sites = {site("group", htype_group(build_rep(4, 3))), site("hopf1", hopf_s3(1.0)),
                                     site("qhopf1", quaternionic_hopf_s7(1.0)), site("qhopf2", quaternionic_hopf_s7(2.0))};
  const UniversalFit f = fit_universal_constants(sites);
  EXPECT_TRUE(f.mixed_dimensions);
  EXPECT_EQ(f.sites, 4);
  EXPECT_TRUE(std::isfinite(f.C1) && std::isfinite(f.C2));
}

TEST(Heat, GroupSubLaplacianMatchesPolynomialFields) {
  const CliffordRep rep = build_rep(2, 1);
  const FoliationModel M = htype_group(rep);
  const PrivilegedChart chart(M, {}, {}, 1e-12);
  const SubLaplacian L(chart);
  const int N = 3;
  auto X = [&](int k) { return Poly::coordinate(N, k); };
  const Poly f = X(0) * X(0) * X(2) + 0.5 * (X(1) * X(2)) + X(0) * X(1);
  Poly Lf(N);
  for (const PolyField& V : group_fields(2, 1, rep.J)) Lf += htype::apply(V, htype::apply(V, f));
  const Vec y = (Vec(3) << 0.2, -0.1, 0.15).finished();
  EXPECT_LE(L.drift(y).cwiseAbs().maxCoeff(), 1e-8);
  EXPECT_NEAR(L.apply([&](const Vec& p) { return f(p); }, y), -Lf(y), 1e-5);
}

TEST(Heat, SubLaplacianIsPoppSymmetric) {
  const FoliationModel M = hopf_s3(1.0);
  const PrivilegedChart chart(M, {}, {}, 1e-12);
  const SubLaplacian L(chart);
  auto f = [](const Vec& p) { return std::exp(-p.squaredNorm()) * (1.0 + p(0)); };
  const Vec y = (Vec(3) << 0.1, 0.2, -0.1).finished();
  EXPECT_NEAR(L.apply(f, y), L.apply_divergence(f, y), 1e-5);
}
