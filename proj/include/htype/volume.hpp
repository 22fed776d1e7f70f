#pragma once

#include "htype/parallel.hpp"
#include "htype/privileged.hpp"

#include <boost/math/quadrature/tanh_sinh.hpp>
#include <boost/numeric/odeint.hpp>

#include <cmath>
#include <numbers>
#include <optional>
#include <random>
#include <vector>

namespace htype {

/// Popp density against Lebesgue measure in privileged coordinates: n^{-m/2} |det theta|.
inline double popp_density(const PrivilegedChart& chart, const Vec& y) {
  return std::pow(static_cast<double>(chart.n()), -0.5 * chart.m()) * std::abs(chart.coframe(y).determinant());
}

inline int hausdorff_dimension(int n, int m) { return n + 2 * m; }

/// Volume of the unit ball in R^k.
inline double unit_ball_volume(int k) { return std::pow(std::numbers::pi, 0.5 * k) / std::tgamma(0.5 * k + 1.0); }

struct VolumeConstants {
  int n = 0, m = 0, Q = 0;
  double normalization = 0.0;  // (4n)^{-m/2}
  double ball = 0.0;           // Lebesgue volume of the unit Koranyi ball
  double x1_moment = 0.0;      // integral of (x^1)^2 over it
  double a = 0.0;
  double b = 0.0;
  double ball_quadrature = 0.0;
  double x1_quadrature = 0.0;
};

/**
 * @brief a = (4n)^{-m/2} |B(0,1)| and b = (1/6)(4n)^{-m/2} int_B (x^1)^2.
 *
 * Closed forms through Beta functions, cross-checked by tanh-sinh quadrature
 * of the radial integral in |x|.
 */
inline VolumeConstants theoretical_constants(int n, int m) {
  VolumeConstants c;
  c.n = n;
  c.m = m;
  c.Q = hausdorff_dimension(n, m);
  c.normalization = std::pow(4.0 * n, -0.5 * m);
  const double vn = unit_ball_volume(n), vm = unit_ball_volume(m);
  c.ball = vm * vn * (n / 4.0) * std::beta(n / 4.0, m / 2.0 + 1.0);
  c.x1_moment = vm * vn * 0.25 * std::beta((n + 2) / 4.0, m / 2.0 + 1.0);
  // |B| = V_m |S^{n-1}| int_0^1 rho^{n-1} (1 - rho^4)^{m/2} drho, and the moment with rho^{n+1} / n.
  boost::math::quadrature::tanh_sinh<double> ts;
  const double sphere = n * vn;
  const double i0 = ts.integrate([&](double r) { return std::pow(r, n - 1) * std::pow(1.0 - r * r * r * r, 0.5 * m); }, 0.0, 1.0);
  const double i2 = ts.integrate([&](double r) { return std::pow(r, n + 1) * std::pow(1.0 - r * r * r * r, 0.5 * m); }, 0.0, 1.0);
  c.ball_quadrature = vm * sphere * i0;
  c.x1_quadrature = vm * sphere * i2 / n;
  c.a = c.normalization * c.ball;
  c.b = c.normalization * c.x1_moment / 6.0;
  return c;
}

/// Uniform point of the unit Koranyi ball by rejection from [-1, 1]^{n+m}.
template <class Rng>
Vec sample_koranyi_ball(int n, int m, Rng& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Vec y(n + m);
  for (;;) {
    for (int i = 0; i < n + m; ++i) y(i) = u(rng);
    if (koranyi_norm(n, y) <= 1.0) return y;
  }
}

namespace detail {

/**
 * @brief Lean variational flow for |det d gamma / d y| along one ray of a
 *        homogeneous model. Only v, w and the (v_b, w_b, eta_b) blocks are
 *        integrated; the frame is orthogonal, so it drops out of the determinant.
 */
class DensityFlow {
 public:
  DensityFlow(const FoliationModel& M, const Mat& F0) : n_(M.n), N_(M.N()), G_(M.G()), F0_(F0) {
    const ConnectionCoeffs K = solve_bott(M);
    gam_.assign(static_cast<std::size_t>(N_) * N_ * N_, 0.0);
    for (int c = 0; c < N_; ++c)
      for (int a = 0; a < N_; ++a)
        for (int b = 0; b < N_; ++b) gam_[(c * N_ + b) * N_ + a] = K.G(c, a, b);
    cf_.assign(static_cast<std::size_t>(G_) * G_ * N_, 0.0);
    for (int F = 0; F < G_; ++F)
      for (int A = 0; A < G_; ++A)
        for (int B = 0; B < N_; ++B) cf_[(F * G_ + A) * N_ + B] = M.cf(F, A, B);
    Lv_.resize(N_ * N_);
    Mv_.resize(N_ * N_);
    Mw_.resize(N_ * N_);
    Adv_.resize(G_ * G_);
  }

  int size() const { return 2 * N_ + N_ * (2 * N_ + G_); }

  /// det D(t) at each of the sorted times.
  void run(const Vec& y, const std::vector<double>& times, double tol, std::vector<double>& dets) {
    namespace ode = boost::numeric::odeint;
    OdeState x(size(), 0.0);
    Vec x0 = Vec::Zero(N_), z0 = Vec::Zero(N_);
    x0.head(n_) = y.head(n_);
    z0.tail(N_ - n_) = y.tail(N_ - n_);
    Eigen::Map<Vec>(x.data(), N_) = F0_ * x0;
    Eigen::Map<Vec>(x.data() + N_, N_) = F0_ * z0;
    const int blk = 2 * N_ + G_;
    for (int b = 0; b < N_; ++b) {
      double* d = x.data() + 2 * N_ + b * blk;
      Eigen::Map<Vec>(b < n_ ? d : d + N_, N_) = F0_.col(b);
    }
    dets.resize(times.size());
    std::vector<double> ts;
    ts.reserve(times.size() + 1);
    ts.push_back(0.0);
    ts.insert(ts.end(), times.begin(), times.end());
    auto stepper = ode::make_dense_output(tol, tol, ode::runge_kutta_dopri5<OdeState>());
    std::size_t idx = 0;
    Mat D(N_, N_);
    ode::integrate_times(
        stepper, [this](const OdeState& s, OdeState& ds, double) { rhs(s, ds); }, x, ts.begin(), ts.end(),
        std::min(1e-2, ts.back() / 8),
        [&](const OdeState& s, double) {
          if (idx == 0) {
            ++idx;
            return;
          }
          for (int b = 0; b < N_; ++b)
            for (int a = 0; a < N_; ++a) D(a, b) = s[2 * N_ + b * blk + 2 * N_ + a];
          dets[idx - 1] = D.determinant();
          ++idx;
        });
  }

 private:
  int n_, N_, G_;
  Mat F0_;
  std::vector<double> gam_, cf_;
  std::vector<double> Lv_, Mv_, Mw_, Adv_;

  void rhs(const OdeState& s, OdeState& ds) {
    ds.resize(s.size());
    const double* v = s.data();
    const double* w = v + N_;
    // Mv[c] = Gamma_c v, Mw[c] = Gamma_c w, Lv = Gamma(v).
    for (int c = 0; c < N_; ++c)
      for (int b = 0; b < N_; ++b) {
        double sv = 0.0, sw = 0.0;
        const double* g = &gam_[(c * N_ + b) * N_];
        for (int a = 0; a < N_; ++a) {
          sv += g[a] * v[a];
          sw += g[a] * w[a];
        }
        Mv_[c * N_ + b] = sv;
        Mw_[c * N_ + b] = sw;
      }
    for (int b = 0; b < N_; ++b)
      for (int a = 0; a < N_; ++a) {
        double acc = 0.0;
        for (int c = 0; c < N_; ++c) acc += v[c] * gam_[(c * N_ + b) * N_ + a];
        Lv_[b * N_ + a] = acc;
      }
    for (int b = 0; b < N_; ++b) {
      double lv = 0.0;
      for (int c = 0; c < N_; ++c) lv += v[c] * Mv_[c * N_ + b];
      double lw = 0.0;
      for (int c = 0; c < N_; ++c) lw += v[c] * Mw_[c * N_ + b];
      ds[b] = w[b] - lv;
      ds[N_ + b] = -lw;
    }
    for (int F = 0; F < G_; ++F)
      for (int A = 0; A < G_; ++A) {
        double acc = 0.0;
        const double* c = &cf_[(F * G_ + A) * N_];
        for (int B = 0; B < N_; ++B) acc += c[B] * v[B];
        Adv_[F * G_ + A] = acc;
      }
    const int blk = 2 * N_ + G_;
    for (int bb = 0; bb < N_; ++bb) {
      const double* vb = s.data() + 2 * N_ + bb * blk;
      const double* wb = vb + N_;
      const double* eb = wb + N_;
      double* dvb = ds.data() + 2 * N_ + bb * blk;
      double* dwb = dvb + N_;
      double* deb = dwb + N_;
      for (int b = 0; b < N_; ++b) {
        double a1 = 0.0, a2 = 0.0, a3 = 0.0, a4 = 0.0;
        for (int c = 0; c < N_; ++c) {
          a1 += vb[c] * Mv_[c * N_ + b];
          a3 += vb[c] * Mw_[c * N_ + b];
        }
        const double* l = &Lv_[b * N_];
        for (int a = 0; a < N_; ++a) {
          a2 += l[a] * vb[a];
          a4 += l[a] * wb[a];
        }
        dvb[b] = wb[b] - a1 - a2;
        dwb[b] = -a3 - a4;
      }
      for (int F = 0; F < G_; ++F) {
        double acc = F < N_ ? vb[F] : 0.0;
        const double* ad = &Adv_[F * G_];
        for (int A = 0; A < G_; ++A) acc += ad[A] * eb[A];
        deb[F] = acc;
      }
    }
  }
};

}  // namespace detail

struct BallVolumeOptions {
  double budget = 1e6;  // density evaluations per radius (rays x shells)
  int shells = 256;
  unsigned long long seed = 42;
  int threads = 0;  // 0: default_threads()
  double tol = 1e-10;
  int rays_per_block = 128;
};

/**
 * @brief Monte Carlo Popp volumes of pulled-back Koranyi balls at several radii.
 *
 * normalized[k] estimates r_k^{-Q} vol(B(q, r_k)); all radii share the same
 * rays (common random numbers), and cov is the covariance of `normalized`.
 */
struct BallVolumes {
  std::vector<double> radii;
  std::vector<double> volumes;
  std::vector<double> stderrs;
  std::vector<double> normalized;
  Mat cov;
  long long rays = 0;
  int shells = 0;
  unsigned long long seed = 0;
};

inline BallVolumes ball_volumes(const PrivilegedChart& chart, std::vector<double> radii, const BallVolumeOptions& opt = {}) {
  const FoliationModel& M = chart.model();
  const int n = M.n, m = M.m, Q = hausdorff_dimension(n, m);
  const int K = static_cast<int>(radii.size());
  if (K == 0) throw Error("ball_volume: no radii");
  for (double r : radii)
    if (!(r > 0.0)) throw Error("ball_volume: radii must be positive");
  const int S = std::max(1, opt.shells);
  const long long rays = std::max<long long>(1, std::llround(opt.budget / S));
  const int per = std::max(1, opt.rays_per_block);
  const int nblocks = static_cast<int>((rays + per - 1) / per);
  const double ball = theoretical_constants(n, m).ball;
  const double pnorm = std::pow(static_cast<double>(n), -0.5 * m);

  struct Block {
    Vec s1;
    Mat s2;
  };
  std::vector<Block> blocks(nblocks);
  const int threads = opt.threads > 0 ? opt.threads : default_threads();

  parallel_blocks(nblocks, threads, [&](int blk) {
    std::seed_seq seq{static_cast<unsigned>(opt.seed & 0xffffffffu), static_cast<unsigned>(opt.seed >> 32),
                      static_cast<unsigned>(blk)};
    std::mt19937_64 rng(seq);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    std::optional<detail::DensityFlow> flow;
    if (M.homogeneous()) flow.emplace(M, chart.frame_at_base());
    Block out{Vec::Zero(K), Mat::Zero(K, K)};
    const long long begin = static_cast<long long>(blk) * per;
    const long long end = std::min<long long>(rays, begin + per);
    std::vector<double> times(static_cast<std::size_t>(K) * S), dets;
    std::vector<int> order(times.size());
    std::vector<double> sorted(times.size());
    Vec g(K);
    for (long long ray = begin; ray < end; ++ray) {
      Vec u = sample_koranyi_ball(n, m, rng);
      const double k = koranyi_norm(n, u);
      Vec sigma = u;
      sigma.head(n) /= k;
      sigma.tail(m) /= k * k;
      for (int j = 0; j < S; ++j) {
        const double s = std::pow((j + uni(rng)) / S, 1.0 / Q);
        for (int kk = 0; kk < K; ++kk) times[kk * S + j] = radii[kk] * s;
      }
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
      std::sort(order.begin(), order.end(), [&](int a, int b) { return times[a] < times[b]; });
      for (std::size_t i = 0; i < order.size(); ++i) sorted[i] = times[order[i]];
      if (flow) {
        flow->run(sigma, sorted, opt.tol, dets);
      } else {
        try {
          auto smp = chart.samples(sigma, sorted, false);
          dets.resize(smp.size());
          for (std::size_t i = 0; i < smp.size(); ++i) dets[i] = smp[i].D.determinant();
        } catch (const OutOfDomain&) {
          throw Error("ball_volume: ray left the chart domain; max admissible radius is below " +
                      std::to_string(sorted.back()));
        }
      }
      const double sign0 = chart.frame_at_base().determinant() > 0 ? 1.0 : -1.0;
      g.setZero();
      for (std::size_t i = 0; i < order.size(); ++i) {
        const double t = sorted[i];
        if (dets[i] * sign0 <= 0.0)
          throw Error("ball_volume: privileged chart degenerates at radius " + std::to_string(t) +
                      "; max admissible r is below this value");
        g(order[i] / S) += pnorm * std::abs(dets[i]) / std::pow(t, Q);
      }
      g /= S;
      out.s1 += g;
      out.s2 += g * g.transpose();
    }
    blocks[blk] = std::move(out);
  });

  Vec s1 = Vec::Zero(K);
  Mat s2 = Mat::Zero(K, K);
  for (const auto& b : blocks) {
    s1 += b.s1;
    s2 += b.s2;
  }
  const double R = static_cast<double>(rays);
  Vec mean = s1 / R;
  Mat cov = (s2 / R - mean * mean.transpose()) * (R / std::max(1.0, R - 1.0)) / R;
  BallVolumes out;
  out.radii = radii;
  out.rays = rays;
  out.shells = S;
  out.seed = opt.seed;
  out.cov = ball * ball * cov;
  for (int k = 0; k < K; ++k) {
    const double rq = std::pow(radii[k], Q);
    out.normalized.push_back(ball * mean(k));
    out.volumes.push_back(ball * mean(k) * rq);
    out.stderrs.push_back(std::sqrt(std::max(0.0, out.cov(k, k))) * rq);
  }
  return out;
}

struct ValueError {
  double value = 0.0;
  double error = 0.0;
};

inline ValueError ball_volume(const PrivilegedChart& chart, double r, double budget, unsigned long long seed) {
  BallVolumeOptions o;
  o.budget = budget;
  o.seed = seed;
  BallVolumes b = ball_volumes(chart, {r}, o);
  return {b.volumes[0], b.stderrs[0]};
}

struct VolumeReport {
  BallVolumes data;
  bool cubic_nuisance = true;
  double a_hat = 0.0, a_err = 0.0;
  double b_hat = 0.0, b_err = 0.0;  // coefficient of r^2
  double c3_hat = 0.0, c3_err = 0.0;
  double chi2 = 0.0;
  VolumeConstants theory;
  double kappa_h = 0.0;
  double b_expected = 0.0;  // -b kappa_H
  double a_rel_error = 0.0;
  double b_rel_error = 0.0;
  bool insufficient_budget = false;
  double required_budget = 0.0;
};

/**
 * @brief Weighted least squares of r^{-Q} vol on {1, r^2, r^3}.
 *
 * Weights are the inverse MC variances; coefficient errors use the full
 * covariance of the correlated estimates (sandwich form).
 */
inline VolumeReport expansion_fit(const PrivilegedChart& chart, const std::vector<double>& radii, const BallVolumeOptions& opt = {},
                                  bool cubic_nuisance = true) {
  if (radii.size() < 4) throw Error("expansion_fit: need at least 4 radii");
  const FoliationModel& M = chart.model();
  VolumeReport rep;
  rep.cubic_nuisance = cubic_nuisance;
  rep.data = ball_volumes(chart, radii, opt);
  rep.theory = theoretical_constants(M.n, M.m);
  rep.kappa_h = kappa_h(M, M.homogeneous() ? Vec() : chart.base().p);
  rep.b_expected = -rep.theory.b * rep.kappa_h;

  const int K = static_cast<int>(radii.size()), P = cubic_nuisance ? 3 : 2;
  Mat A(K, P);
  Vec y(K), w(K);
  for (int k = 0; k < K; ++k) {
    const double r = radii[k];
    A(k, 0) = 1.0;
    A(k, 1) = r * r;
    if (cubic_nuisance) A(k, 2) = r * r * r;
    y(k) = rep.data.normalized[k];
    const double var = rep.data.cov(k, k);
    w(k) = var > 0.0 ? 1.0 / var : 1.0;
  }
  // Guard against a zero-variance (flat) model: fall back to equal weights.
  if (w.maxCoeff() / std::max(1e-300, w.minCoeff()) > 1e12 || !std::isfinite(w.sum())) w.setOnes();
  const Mat W = w.asDiagonal();
  const Mat H = (A.transpose() * W * A).inverse();
  const Vec beta = H * A.transpose() * W * y;
  const Mat covb = H * A.transpose() * W * rep.data.cov * W * A * H;
  const Vec res = y - A * beta;
  rep.chi2 = res.dot(W * res);
  rep.a_hat = beta(0);
  rep.b_hat = beta(1);
  rep.a_err = std::sqrt(std::max(0.0, covb(0, 0)));
  rep.b_err = std::sqrt(std::max(0.0, covb(1, 1)));
  if (cubic_nuisance) {
    rep.c3_hat = beta(2);
    rep.c3_err = std::sqrt(std::max(0.0, covb(2, 2)));
  }
  rep.a_rel_error = std::abs(rep.a_hat - rep.theory.a) / rep.theory.a;
  rep.b_rel_error = rep.b_expected != 0.0 ? std::abs(rep.b_hat - rep.b_expected) / std::abs(rep.b_expected) : std::abs(rep.b_hat);
  // Signal check: three standard errors should stay below 5% of the fitted r^2 coefficient.
  const double signal = std::abs(rep.b_hat);
  if (signal > 0.0 && 3.0 * rep.b_err > 0.05 * signal) {
    rep.insufficient_budget = true;
    const double f = 3.0 * rep.b_err / (0.05 * signal);
    rep.required_budget = opt.budget * f * f;
  }
  return rep;
}

/// Default radii grid 0.1, 0.15, ..., 0.4.
inline std::vector<double> default_radii() {
  std::vector<double> r;
  for (int k = 0; k < 7; ++k) r.push_back(0.1 + 0.05 * k);
  return r;
}

}  // namespace htype
