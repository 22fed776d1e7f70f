#pragma once

#include "htype/connection.hpp"
#include "htype/models.hpp"
#include "htype/ode.hpp"

#include <algorithm>
#include <functional>
#include <limits>
#include <map>
#include <mutex>
#include <random>
#include <shared_mutex>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

namespace htype {

/**
 * @brief A point of a model.
 *
 * Homogeneous models carry a lift g in the matrix group; the point itself is
 * g * origin. Chart models only use p (chart coordinates).
 */
struct ModelPoint {
  Mat g;
  Vec p;
};

inline ModelPoint base_point(const FoliationModel& M) {
  ModelPoint q;
  if (M.homogeneous()) {
    q.g = Mat::Identity(M.rho[0].rows(), M.rho[0].cols());
    q.p = M.origin;
  } else {
    q.p = M.chart_base;
  }
  return q;
}

/// Weights w(x^a) = 1, w(z^i) = 2.
inline Vec coordinate_weights(int n, int m) {
  Vec w(n + m);
  w.head(n).setOnes();
  w.tail(m).setConstant(2.0);
  return w;
}

/// Koranyi norm (|x|^4 + |z|^2)^(1/4).
inline double koranyi_norm(int n, const Vec& y) {
  const double x2 = y.head(n).squaredNorm();
  return std::pow(x2 * x2 + y.tail(y.size() - n).squaredNorm(), 0.25);
}

struct ParabolicState {
  ModelPoint p;
  Vec v;  // frame components of the velocity
  Vec w;  // frame components of D_t of the velocity
  Mat E;  // transported frame, columns in model-frame components
  double t = 0.0;
};

/// One sample along a ray; the variations are derivatives with respect to the initial data y.
struct RaySample {
  double t = 0.0;
  ModelPoint p;
  Vec v, w;
  Mat E;
  Mat D;                // N x N: frame components of d gamma / d y_b
  Mat Eta;              // G x N: full lift variations (homogeneous), equal to D for charts
  std::vector<Mat> dE;  // d E / d y_b
};

struct FlowOptions {
  bool frame = true;
  bool variation = false;
  bool frame_variation = false;
  double tol = 1e-10;
};

/**
 * @brief Parabolic geodesic flow of the Bott connection, with transported
 *        frame and first variations.
 *
 * Homogeneous models integrate in the matrix group (dg = g rho(v) dt) and
 * the variations exactly through the linearized system. Chart models use
 * finite differences in y for the variations.
 */
class ParabolicFlow {
 public:
  explicit ParabolicFlow(const FoliationModel& M) : M_(&M), N_(M.N()), G_(M.G()) {
    if (M.homogeneous()) {
      const ConnectionCoeffs K = solve_bott(M);
      Gc_.assign(N_, Mat::Zero(N_, N_));
      for (int c = 0; c < N_; ++c)
        for (int a = 0; a < N_; ++a)
          for (int b = 0; b < N_; ++b) Gc_[c](b, a) = K.G(c, a, b);
      adR_.assign(N_, Mat::Zero(G_, G_));
      for (int B = 0; B < N_; ++B)
        for (int F = 0; F < G_; ++F)
          for (int A = 0; A < G_; ++A) adR_[B](F, A) = M.cf(F, A, B);
      adK_ = isotropy(M).ad;
      r_ = static_cast<int>(M.rho[0].rows());
    }
  }

  const FoliationModel& model() const { return *M_; }

  /// Frame components Gamma(v)(b, a) = sum_c v^c Gamma^b_{ca} at the point.
  Mat gamma(const Vec& v, const ModelPoint& p) const {
    if (M_->homogeneous()) return gamma_h(v);
    return gamma_chart(v, chart_G(p.p));
  }

  /// Nomizu map of a full lift vector (isotropy part acts by ad), homogeneous models.
  Mat lambda(const Vec& eta) const {
    Mat L = gamma_h(eta.head(N_));
    for (int kk = 0; kk < M_->k; ++kk) L += eta(N_ + kk) * adK_[kk];
    return L;
  }

  /**
   * @brief Integrate from state s for the given times (relative, monotone, may be negative).
   */
  std::vector<ParabolicState> flow(const ParabolicState& s, const std::vector<double>& times, double tol) const {
    FlowOptions o;
    o.tol = tol;
    o.frame = s.E.size() > 0;
    OdeState x = pack(s.p, s.v, s.w, o.frame ? s.E : Mat(), o, Mat());
    std::vector<ParabolicState> out;
    integrate_dense(rhs(o), x, 0.0, times, tol, [&](double t, const OdeState& st) {
      RaySample r = unpack(st, t, o);
      ParabolicState ps;
      ps.p = r.p;
      ps.v = r.v;
      ps.w = r.w;
      ps.E = r.E;
      ps.t = s.t + t;
      out.push_back(std::move(ps));
    });
    return out;
  }

  /**
   * @brief Ray with initial velocity F0 x and D_t velocity F0 z from q, sampled at times.
   */
  std::vector<RaySample> ray(const ModelPoint& q, const Mat& F0, const Vec& y, const std::vector<double>& times,
                             const FlowOptions& o) const {
    const int n = M_->n;
    Vec x0 = Vec::Zero(N_), z0 = Vec::Zero(N_);
    x0.head(n) = y.head(n);
    z0.tail(N_ - n) = y.tail(N_ - n);
    if (!M_->homogeneous() && o.variation) return ray_chart_fd(q, F0, y, times, o);
    OdeState x = pack(q, F0 * x0, F0 * z0, o.frame ? F0 : Mat(), o, F0);
    std::vector<RaySample> out;
    out.reserve(times.size());
    integrate_dense(rhs(o), x, 0.0, times, o.tol, [&](double t, const OdeState& st) { out.push_back(unpack(st, t, o)); });
    return out;
  }

 private:
  const FoliationModel* M_;
  int N_, G_;
  int r_ = 0;
  std::vector<Mat> Gc_;
  std::vector<Mat> adR_;
  std::vector<Mat> adK_;

  Mat gamma_h(const Vec& v) const {
    Mat L = Mat::Zero(N_, N_);
    for (int c = 0; c < N_; ++c)
      if (v(c) != 0.0) L += v(c) * Gc_[c];
    return L;
  }

  Tensor3 chart_G(const Vec& p) const {
    if (!M_->in_domain(p)) throw OutOfDomain("parabolic flow left the chart domain");
    return detail::bott_from_structure(M_->n, M_->m, structure(*M_, p));
  }

  Mat gamma_chart(const Vec& v, const Tensor3& G) const {
    Mat L = Mat::Zero(N_, N_);
    for (int c = 0; c < N_; ++c)
      for (int a = 0; a < N_; ++a)
        for (int b = 0; b < N_; ++b) L(b, a) += v(c) * G(c, a, b);
    return L;
  }

  int pos_size() const { return M_->homogeneous() ? r_ * r_ : N_; }
  int var_block(const FlowOptions& o) const { return 2 * N_ + G_ + (o.frame_variation ? N_ * N_ : 0); }
  int state_size(const FlowOptions& o) const {
    return pos_size() + 2 * N_ + (o.frame ? N_ * N_ : 0) + (o.variation ? N_ * var_block(o) : 0);
  }

  OdeState pack(const ModelPoint& q, const Vec& v, const Vec& w, const Mat& E, const FlowOptions& o, const Mat& F0) const {
    OdeState x(state_size(o), 0.0);
    double* d = x.data();
    if (M_->homogeneous()) {
      Eigen::Map<Mat>(d, r_, r_) = q.g;
    } else {
      Eigen::Map<Vec>(d, N_) = q.p;
    }
    d += pos_size();
    Eigen::Map<Vec>(d, N_) = v;
    Eigen::Map<Vec>(d + N_, N_) = w;
    d += 2 * N_;
    if (o.frame) {
      Eigen::Map<Mat>(d, N_, N_) = E;
      d += N_ * N_;
    }
    if (o.variation) {
      const int n = M_->n;
      for (int b = 0; b < N_; ++b) {
        if (b < n)
          Eigen::Map<Vec>(d, N_) = F0.col(b);
        else
          Eigen::Map<Vec>(d + N_, N_) = F0.col(b);
        d += var_block(o);
      }
    }
    return x;
  }

  RaySample unpack(const OdeState& x, double t, const FlowOptions& o) const {
    RaySample s;
    s.t = t;
    const double* d = x.data();
    if (M_->homogeneous()) {
      s.p.g = Eigen::Map<const Mat>(d, r_, r_);
      s.p.p = s.p.g * M_->origin;
    } else {
      s.p.p = Eigen::Map<const Vec>(d, N_);
    }
    d += pos_size();
    s.v = Eigen::Map<const Vec>(d, N_);
    s.w = Eigen::Map<const Vec>(d + N_, N_);
    d += 2 * N_;
    if (o.frame) {
      s.E = Eigen::Map<const Mat>(d, N_, N_);
      d += N_ * N_;
    }
    if (o.variation) {
      s.D.resize(N_, N_);
      s.Eta.resize(G_, N_);
      for (int b = 0; b < N_; ++b) {
        s.Eta.col(b) = Eigen::Map<const Vec>(d + 2 * N_, G_);
        if (o.frame_variation) s.dE.push_back(Eigen::Map<const Mat>(d + 2 * N_ + G_, N_, N_));
        d += var_block(o);
      }
      s.D = s.Eta.topRows(N_);
    }
    return s;
  }

  OdeRhs rhs(const FlowOptions& o) const {
    return [this, o](const OdeState& x, OdeState& dx, double) {
      dx.assign(x.size(), 0.0);
      const double* s = x.data();
      double* d = dx.data();
      Mat L;
      Eigen::Map<const Vec> v(s + pos_size(), N_);
      Eigen::Map<const Vec> w(s + pos_size() + N_, N_);
      Tensor3 Gp;
      if (M_->homogeneous()) {
        Eigen::Map<const Mat> g(s, r_, r_);
        Mat rv = Mat::Zero(r_, r_);
        for (int a = 0; a < N_; ++a) rv += v(a) * M_->rho[a];
        Eigen::Map<Mat>(d, r_, r_) = g * rv;
        L = gamma_h(v);
      } else {
        Eigen::Map<const Vec> p(s, N_);
        Gp = chart_G(p);
        Eigen::Map<Vec>(d, N_) = M_->frame(p) * v;
        L = gamma_chart(v, Gp);
      }
      s += pos_size();
      d += pos_size();
      Eigen::Map<Vec>(d, N_) = w - L * v;
      Eigen::Map<Vec>(d + N_, N_) = -L * w;
      s += 2 * N_;
      d += 2 * N_;
      const double* Es = s;
      if (o.frame) {
        Eigen::Map<Mat>(d, N_, N_) = -L * Eigen::Map<const Mat>(s, N_, N_);
        s += N_ * N_;
        d += N_ * N_;
      }
      if (!o.variation) return;
      Mat Adv = Mat::Zero(G_, G_);
      for (int B = 0; B < N_; ++B)
        if (v(B) != 0.0) Adv += v(B) * adR_[B];
      const int blk = var_block(o);
      for (int b = 0; b < N_; ++b) {
        Eigen::Map<const Vec> vb(s, N_), wb(s + N_, N_), eb(s + 2 * N_, G_);
        const Mat Lb = gamma_h(vb);
        Eigen::Map<Vec>(d, N_) = wb - Lb * v - L * vb;
        Eigen::Map<Vec>(d + N_, N_) = -Lb * w - L * wb;
        Vec de = Adv * eb;
        de.head(N_) += vb;
        Eigen::Map<Vec>(d + 2 * N_, G_) = de;
        if (o.frame_variation) {
          Eigen::Map<const Mat> E(Es, N_, N_);
          Eigen::Map<const Mat> Eb(s + 2 * N_ + G_, N_, N_);
          Eigen::Map<Mat>(d + 2 * N_ + G_, N_, N_) = -Lb * E - L * Eb;
        }
        s += blk;
        d += blk;
      }
    };
  }

  // Chart models: variations by a 4-point central difference in y.
  std::vector<RaySample> ray_chart_fd(const ModelPoint& q, const Mat& F0, const Vec& y, const std::vector<double>& times,
                                      const FlowOptions& o) const {
    FlowOptions base = o;
    base.variation = false;
    base.frame_variation = false;
    base.frame = true;
    std::vector<RaySample> out = ray(q, F0, y, times, base);
    const double h = 2e-3;
    for (auto& s : out) {
      s.D = Mat::Zero(N_, N_);
      s.dE.assign(N_, Mat::Zero(N_, N_));
    }
    for (int b = 0; b < N_; ++b) {
      std::vector<std::vector<RaySample>> r;
      for (double c : {2.0, 1.0, -1.0, -2.0}) {
        Vec yy = y;
        yy(b) += c * h;
        r.push_back(ray(q, F0, yy, times, base));
      }
      for (std::size_t k = 0; k < out.size(); ++k) {
        Vec dp = (-r[0][k].p.p + 8.0 * r[1][k].p.p - 8.0 * r[2][k].p.p + r[3][k].p.p) / (12.0 * h);
        out[k].D.col(b) = M_->frame(out[k].p.p).lu().solve(dp);
        out[k].dE[b] = (-r[0][k].E + 8.0 * r[1][k].E - 8.0 * r[2][k].E + r[3][k].E) / (12.0 * h);
      }
    }
    for (auto& s : out) s.Eta = s.D;
    return out;
  }
};

/// Single parabolic geodesic with v(0) = X, w(0) = Z (frame components) from q.
inline ParabolicState integrate_parabolic(const FoliationModel& M, const ModelPoint& q, const Vec& X, const Vec& Z,
                                          double t, double tol = 1e-10) {
  ParabolicFlow F(M);
  ParabolicState s;
  s.p = q;
  s.v = X;
  s.w = Z;
  s.E = Mat::Identity(M.N(), M.N());
  if (t == 0.0) return s;
  return F.flow(s, {t}, tol).back();
}

/// Special (parallel) frame at gamma(t) along the ray (X, Z) from q.
inline Mat special_frame(const FoliationModel& M, const ModelPoint& q, const Vec& X, const Vec& Z, double t,
                         double tol = 1e-10) {
  return integrate_parabolic(M, q, X, Z, t, tol).E;
}

/// Ambient representation of a point: g * origin (homogeneous) or chart coordinates.
inline Vec ambient(const ModelPoint& p) { return p.p; }

/**
 * @brief Privileged coordinates at q built from parabolic geodesics.
 *
 * forward(x, z) is the time-1 point of the ray with initial data F0 x and
 * F0 z. Ray integrations with variations are cached per (y, times).
 */
class PrivilegedChart {
 public:
  PrivilegedChart(const FoliationModel& M, ModelPoint q = {}, Mat frame = {}, double tol = 1e-10)
      : flow_(M), q_(q.p.size() ? std::move(q) : base_point(M)), F0_(frame.size() ? std::move(frame) : Mat::Identity(M.N(), M.N())),
        tol_(tol) {}

  const FoliationModel& model() const { return flow_.model(); }
  const ParabolicFlow& flow() const { return flow_; }
  const ModelPoint& base() const { return q_; }
  const Mat& frame_at_base() const { return F0_; }
  double tol() const { return tol_; }
  int n() const { return model().n; }
  int m() const { return model().m; }
  int N() const { return model().N(); }

  ModelPoint forward(const Vec& y) const {
    if (y.isZero(0.0)) return q_;
    FlowOptions o;
    o.frame = false;
    o.tol = tol_;
    return flow_.ray(q_, F0_, y, {1.0}, o).back().p;
  }

  /// Ray samples at the given times; with variations (and frame variations) when asked.
  std::vector<RaySample> samples(const Vec& y, const std::vector<double>& times, bool frame_variation = true) const {
    Key key{std::vector<double>(y.data(), y.data() + y.size()), times, frame_variation};
    {
      std::shared_lock lk(mu_);
      auto it = cache_.find(key);
      if (it != cache_.end()) return it->second;
    }
    FlowOptions o;
    o.frame = true;
    o.variation = true;
    o.frame_variation = frame_variation;
    o.tol = tol_;
    auto r = flow_.ray(q_, F0_, y, times, o);
    std::unique_lock lk(mu_);
    if (cache_.size() > 4096) cache_.clear();
    cache_.emplace(std::move(key), r);
    return r;
  }

  /// Co-frame components at y: rows theta^a (theta then eta), columns dy^b.
  Mat coframe(const Vec& y) const { return coframe_raw(samples(y, {1.0}, false).back()); }

  /// Connection forms at y: out[c](b, a) = omega^b_a(d/dy^c).
  std::vector<Mat> connection_forms(const Vec& y) const { return connection_raw(samples(y, {1.0}, true).back()); }

  /// Frame fields at y: column a holds X_a in coordinates.
  Mat frame_fields(const Vec& y) const { return coframe(y).inverse(); }

  /// Special-frame components of J at forward(y): J[i](b, a) = J^i_{ab}.
  std::vector<Mat> j_along(const RaySample& s) const {
    const int n = this->n(), m = this->m();
    const Tensor3 C = model().homogeneous() ? structure(model()) : structure(model(), s.p.p);
    std::vector<Mat> Jm = j_matrices(n, m, C);
    const Mat EH = s.E.topLeftCorner(n, n);
    const Mat EV = s.E.bottomRightCorner(m, m);
    std::vector<Mat> out(m, Mat::Zero(n, n));
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < m; ++j) out[i] += EV(j, i) * EH.transpose() * Jm[j] * EH;
    return out;
  }

  Mat coframe_raw(const RaySample& s) const { return s.E.transpose() * s.D; }

  std::vector<Mat> connection_raw(const RaySample& s) const {
    std::vector<Mat> out(N());
    const FoliationModel& M = model();
    for (int c = 0; c < N(); ++c) {
      Mat L = M.homogeneous() ? flow_.lambda(s.Eta.col(c)) : flow_.gamma(s.D.col(c), s.p);
      out[c] = s.E.transpose() * (s.dE[c] + L * s.E);
    }
    return out;
  }

  struct InverseResult {
    Vec y;
    double residual = 0.0;
    int iterations = 0;
  };

  /**
   * @brief Damped Gauss-Newton shooting for forward(y) = p.
   *
   * The first iterate is the linearized chart at q, which is the group-model
   * chart to first order.
   */
  InverseResult inverse(const ModelPoint& target, double tol = 1e-12, int max_iter = 60) const {
    const Vec pt = ambient(target);
    Vec y = Vec::Zero(N());
    InverseResult res;
    auto residual_at = [&](const Vec& yy, Mat* Jac) {
      RaySample s = samples(yy, {1.0}, false).back();
      if (Jac) *Jac = ambient_jacobian(s);
      return Vec(ambient(s.p) - pt);
    };
    Mat Jac;
    Vec r = residual_at(y, &Jac);
    for (int it = 0; it < max_iter; ++it) {
      res.iterations = it;
      res.residual = r.norm();
      if (res.residual <= tol) {
        res.y = y;
        return res;
      }
      Vec step = Jac.colPivHouseholderQr().solve(-r);
      double lam = 1.0;
      bool accepted = false;
      for (int ls = 0; ls < 30; ++ls) {
        Vec yn = y + lam * step;
        Vec rn;
        try {
          rn = residual_at(yn, nullptr);
        } catch (const OutOfDomain&) {
          lam *= 0.5;
          continue;
        }
        if (rn.norm() < res.residual || rn.norm() <= tol) {
          y = yn;
          accepted = true;
          break;
        }
        lam *= 0.5;
      }
      if (!accepted) break;
      r = residual_at(y, &Jac);
    }
    res.y = y;
    res.residual = r.norm();
    if (res.residual > std::max(tol, 1e-10))
      throw Error("chart_inverse: no convergence after " + std::to_string(res.iterations + 1) +
                  " iterations, last residual " + std::to_string(res.residual));
    return res;
  }

 private:
  ParabolicFlow flow_;
  ModelPoint q_;
  Mat F0_;
  double tol_;

  struct Key {
    std::vector<double> y;
    std::vector<double> t;
    bool fv;
    bool operator<(const Key& o) const { return std::tie(y, t, fv) < std::tie(o.y, o.t, o.fv); }
  };
  mutable std::shared_mutex mu_;
  mutable std::map<Key, std::vector<RaySample>> cache_;

  // d(ambient point) / dy at the sample.
  Mat ambient_jacobian(const RaySample& s) const {
    const FoliationModel& M = model();
    if (!M.homogeneous()) return M.frame(s.p.p) * s.D;
    Mat Jc(M.origin.size(), N());
    for (int b = 0; b < N(); ++b) {
      Mat X = Mat::Zero(s.p.g.rows(), s.p.g.cols());
      for (int a = 0; a < M.G(); ++a) X += s.Eta(a, b) * M.rho[a];
      Jc.col(b) = s.p.g * X * M.origin;
    }
    return Jc;
  }
};

inline Vec chart_inverse(const PrivilegedChart& chart, const ModelPoint& p, double tol = 1e-12) {
  return chart.inverse(p, tol).y;
}

// ---------------------------------------------------------------------------
// Homogeneous parts.

struct DilationGrid {
  double t0 = 0.2;
  double rho = 0.7;
  int points = 8;

  std::vector<double> times() const {
    std::vector<double> t(points);
    for (int k = 0; k < points; ++k) t[k] = t0 * std::pow(rho, k);
    std::reverse(t.begin(), t.end());
    return t;
  }
};

/// Evaluator of a pulled-back tensor: values f(t_k) whose t-series is sum_l t^l part^(l)(y).
using SeriesEvaluator = std::function<std::vector<Mat>(const Vec& y, const std::vector<double>& times)>;

struct SeriesFit {
  int lmin = 0;
  std::vector<Mat> coeff;  // coeff[l - lmin]
  std::vector<Mat> error;  // change against the fit with one fewer term
  double condition = 0.0;

  const Mat& order(int l) const { return coeff.at(l - lmin); }
  const Mat& order_error(int l) const { return error.at(l - lmin); }
};

/**
 * @brief Regress f(t) on t^lmin .. t^(lmin+terms-1) over the grid.
 *
 * The error estimate compares against the fit with one term fewer.
 */
inline SeriesFit fit_series(const std::vector<double>& t, const std::vector<Mat>& f, int lmin, int terms) {
  const int K = static_cast<int>(t.size());
  if (terms > K) throw Error("fit_series: more terms than grid points");
  const double ts = *std::max_element(t.begin(), t.end());
  auto solve = [&](int nt, double* cond) {
    Mat A(K, nt);
    for (int k = 0; k < K; ++k)
      for (int j = 0; j < nt; ++j) A(k, j) = std::pow(t[k] / ts, j);
    Eigen::JacobiSVD<Mat> svd(A, Eigen::ComputeThinU | Eigen::ComputeThinV);
    if (cond) *cond = svd.singularValues()(0) / svd.singularValues()(nt - 1);
    const int R = static_cast<int>(f[0].rows()), C = static_cast<int>(f[0].cols());
    Mat B(K, R * C);
    for (int k = 0; k < K; ++k) {
      const double sc = std::pow(t[k], -lmin);
      for (int c = 0; c < C; ++c)
        for (int r = 0; r < R; ++r) B(k, c * R + r) = f[k](r, c) * sc;
    }
    Mat X = svd.solve(B);
    std::vector<Mat> out(nt, Mat(R, C));
    for (int j = 0; j < nt; ++j) {
      const double sc = std::pow(ts, -j);
      for (int c = 0; c < C; ++c)
        for (int r = 0; r < R; ++r) out[j](r, c) = X(j, c * R + r) * sc;
    }
    return out;
  };
  SeriesFit fit;
  fit.lmin = lmin;
  // A series that terminates (polynomial data, e.g. on flat models) is fitted
  // with its exact length; the long fit would only amplify round-off.
  double scale = 0.0;
  for (int k = 0; k < K; ++k) scale = std::max(scale, max_abs(f[k]) * std::pow(t[k], -lmin));
  for (int nt = 1; nt < terms; ++nt) {
    double cond = 0.0;
    std::vector<Mat> c = solve(nt, &cond);
    double res = 0.0;
    for (int k = 0; k < K; ++k) {
      Mat v = Mat::Zero(f[k].rows(), f[k].cols());
      for (int j = 0; j < nt; ++j) v += c[j] * std::pow(t[k], j);
      res = std::max(res, max_abs(v - f[k] * std::pow(t[k], -lmin)));
    }
    if (res <= 64.0 * std::numeric_limits<double>::epsilon() * std::max(scale, 1e-300)) {
      fit.condition = cond;
      const int R = static_cast<int>(f[0].rows()), C = static_cast<int>(f[0].cols());
      for (int j = 0; j < terms; ++j) {
        fit.coeff.push_back(j < nt ? c[j] : Mat::Zero(R, C));
        fit.error.push_back(Mat::Constant(R, C, res));
      }
      return fit;
    }
  }
  fit.coeff = solve(terms, &fit.condition);
  std::vector<Mat> lower = solve(terms - 1, nullptr);
  for (int j = 0; j < terms; ++j) fit.error.push_back(j < terms - 1 ? Mat((fit.coeff[j] - lower[j]).cwiseAbs()) : fit.coeff[j].cwiseAbs());
  return fit;
}

/// Exponents (alpha over x, beta over z) of all monomials of weighted degree d.
inline std::vector<std::vector<int>> weighted_monomials(int n, int m, int d) {
  std::vector<std::vector<int>> out;
  std::vector<int> e(n + m, 0);
  std::function<void(int, int)> rec = [&](int idx, int left) {
    if (idx == n + m) {
      if (left == 0) out.push_back(e);
      return;
    }
    const int w = idx < n ? 1 : 2;
    for (int k = 0; k * w <= left; ++k) {
      e[idx] = k;
      rec(idx + 1, left - k * w);
    }
    e[idx] = 0;
  };
  if (d >= 0) rec(0, d);
  return out;
}

inline double monomial_value(const std::vector<int>& e, const Vec& y) {
  double v = 1.0;
  for (std::size_t i = 0; i < e.size(); ++i)
    for (int k = 0; k < e[i]; ++k) v *= y(static_cast<Eigen::Index>(i));
  return v;
}

/**
 * @brief Order-l part as a coefficient table on weighted monomials.
 *
 * coeff[j] multiplies monomials[j]; the table has the shape of the tensor's
 * component matrix. Components of weight w_c contribute monomials of degree
 * l - w_c, so the caller passes the per-column weight shift.
 */
struct HomogeneousPart {
  int order = 0;
  std::vector<Vec> samples;
  std::vector<Mat> values;  // order-l part at each sample
  double error = 0.0;       // max regression error estimate over samples
  double condition = 0.0;
};

inline HomogeneousPart extract_homogeneous(const SeriesEvaluator& eval, int order, int lmin, const std::vector<Vec>& ys,
                                           const DilationGrid& grid = {}) {
  HomogeneousPart h;
  h.order = order;
  const std::vector<double> ts = grid.times();
  for (const Vec& y : ys) {
    SeriesFit fit = fit_series(ts, eval(y, ts), lmin, grid.points);
    h.samples.push_back(y);
    h.values.push_back(fit.order(order));
    h.error = std::max(h.error, max_abs(fit.order_error(order)));
    h.condition = std::max(h.condition, fit.condition);
  }
  return h;
}

/**
 * @brief Monomial coefficients of a homogeneous polynomial-valued component table.
 *
 * Component (r, c) has weighted degree `degree(r, c)`; coefficients are
 * fitted by least squares over the samples. Returns one table per component.
 */
struct MonomialTable {
  std::vector<std::vector<int>> monomials;
  Vec coeff;
};

inline MonomialTable fit_monomials(int n, int m, int degree, const std::vector<Vec>& ys, const std::vector<double>& vals) {
  MonomialTable t;
  t.monomials = weighted_monomials(n, m, degree);
  if (t.monomials.empty()) {
    t.coeff = Vec();
    return t;
  }
  Mat A(ys.size(), t.monomials.size());
  Vec b(ys.size());
  for (std::size_t s = 0; s < ys.size(); ++s) {
    for (std::size_t j = 0; j < t.monomials.size(); ++j) A(s, j) = monomial_value(t.monomials[j], ys[s]);
    b(s) = vals[s];
  }
  t.coeff = A.colPivHouseholderQr().solve(b);
  return t;
}

/// Deterministic samples with Koranyi norm `radius`.
inline std::vector<Vec> koranyi_samples(int n, int m, int count, double radius, unsigned long long seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  std::vector<Vec> out;
  for (int s = 0; s < count; ++s) {
    Vec y(n + m);
    for (int i = 0; i < n + m; ++i) y(i) = nd(rng);
    const double k = koranyi_norm(n, y);
    y.head(n) *= radius / k;
    y.tail(m) *= radius * radius / (k * k);
    out.push_back(y);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Closed forms in the special frame at q.

/**
 * @brief Tensors at q that enter the closed forms: J, R, nabla J and the
 *        second frame derivatives of J.
 */
struct TaylorTensors {
  int n = 0, m = 0;
  std::vector<Mat> J;                              // J[i](b, a) = J^i_{ab}
  CurvatureTensor R;                               // R(d, a, b, c) = R^d_{abc}
  std::vector<std::vector<Mat>> dJ;                // dJ[c][i](b, a) = (nabla_c J)^i_{ab}
  std::vector<std::vector<std::vector<Mat>>> XX;   // XX[i][b][g](d, a) = X_b X_g J^i_{ad}

  double Jc(int i, int a, int b) const { return J[i](b, a); }

  /// J^{i(1)}_{ab}(y) = x^g X_g(J^i_{ab})(q).
  double J1(int i, int a, int b, const Vec& y) const {
    double s = 0.0;
    for (int g = 0; g < n; ++g) s += y(g) * dJ[g][i](b, a);
    return s;
  }
  /// J^{i(2)}_{ab}(y) = (x^g x^d X_g X_d J + z^j Z_j J) / 2.
  double J2(int i, int a, int b, const Vec& y) const {
    double s = 0.0;
    for (int g = 0; g < n; ++g)
      for (int d = 0; d < n; ++d) s += y(g) * y(d) * XX[i][g][d](b, a);
    for (int j = 0; j < m; ++j) s += y(n + j) * dJ[n + j][i](b, a);
    return 0.5 * s;
  }
};

inline TaylorTensors taylor_tensors(const FoliationModel& M, const Vec& p = Vec()) {
  TaylorTensors T;
  T.n = M.n;
  T.m = M.m;
  const ConnectionCoeffs K = solve_bott(M, p);
  T.J = j_matrices(M.n, M.m, K.C);
  T.R = curvature(M, K);
  T.dJ = nabla_j_all(M.n, M.m, K);
  T.XX = special_frame_second_derivatives(M.n, M.m, K);
  return T;
}

namespace closed_form {

/// Co-frame order-l part: rows theta^a, columns dy^b (l = 1..4; row 4 only for eta).
inline Mat coframe(const TaylorTensors& T, int l, const Vec& y) {
  const int n = T.n, m = T.m, N = n + m;
  Mat C = Mat::Zero(N, N);
  auto theta3 = [&]() {
    Mat t3 = Mat::Zero(n, n);
    for (int a = 0; a < n; ++a)
      for (int d = 0; d < n; ++d) {
        double s = 0.0;
        for (int b = 0; b < n; ++b)
          for (int g = 0; g < n; ++g) s += T.R(a, g, d, b) * y(b) * y(g);
        t3(a, d) = s / 6.0;
      }
    return t3;
  };
  if (l == 1) {
    C.topLeftCorner(n, n).setIdentity();
  } else if (l == 2) {
    for (int i = 0; i < m; ++i) {
      for (int b = 0; b < n; ++b) {
        double s = 0.0;
        for (int a = 0; a < n; ++a) s += T.Jc(i, a, b) * y(a);
        C(n + i, b) = 0.5 * s;
      }
      C(n + i, n + i) = 0.5;
    }
  } else if (l == 3) {
    C.topLeftCorner(n, n) = theta3();
    for (int i = 0; i < m; ++i)
      for (int b = 0; b < n; ++b) {
        double s = 0.0;
        for (int a = 0; a < n; ++a) s += T.J1(i, a, b, y) * y(a);
        C(n + i, b) = s / 3.0;
      }
  } else if (l == 4) {
    const Mat t3 = theta3();
    for (int i = 0; i < m; ++i)
      for (int b = 0; b < n; ++b) {
        double s = 0.0;
        // z^j omega_j^{i(2)}, omega_a^{b(2)} = R^b_{g d a} x^g dx^d / 2
        for (int j = 0; j < m; ++j)
          for (int g = 0; g < n; ++g) s += y(n + j) * 0.5 * T.R(n + i, g, b, n + j) * y(g);
        for (int a = 0; a < n; ++a)
          for (int be = 0; be < n; ++be) s += T.Jc(i, a, be) * y(a) * t3(be, b);
        for (int a = 0; a < n; ++a) s += T.J2(i, a, b, y) * y(a);
        C(n + i, b) = 0.25 * s;
      }
  }
  return C;
}

/// omega^{b(2)}_a as out[c](b, a).
inline std::vector<Mat> connection2(const TaylorTensors& T, const Vec& y) {
  const int n = T.n, N = T.n + T.m;
  std::vector<Mat> out(N, Mat::Zero(N, N));
  for (int c = 0; c < n; ++c)
    for (int b = 0; b < N; ++b)
      for (int a = 0; a < N; ++a) {
        double s = 0.0;
        for (int g = 0; g < n; ++g) s += T.R(b, g, c, a) * y(g);
        out[c](b, a) = 0.5 * s;
      }
  return out;
}

/// Frame order-l part (l = -2..1): column a is X_a (or Z_i), rows are coordinate components.
inline Mat frame(const TaylorTensors& T, int l, const Vec& y) {
  const int n = T.n, m = T.m, N = n + m;
  Mat F = Mat::Zero(N, N);
  auto xhat = [&](int a) {
    Vec v = Vec::Zero(N);
    v(a) = 1.0;
    for (int i = 0; i < m; ++i) {
      double s = 0.0;
      for (int b = 0; b < n; ++b) s += T.Jc(i, a, b) * y(b);
      v(n + i) = s;
    }
    return v;
  };
  if (l == -2) {
    for (int i = 0; i < m; ++i) F(n + i, n + i) = 2.0;
  } else if (l == -1) {
    for (int a = 0; a < n; ++a) F.col(a) = xhat(a);
  } else if (l == 0) {
    for (int a = 0; a < n; ++a)
      for (int i = 0; i < m; ++i) {
        double s = 0.0;
        for (int b = 0; b < n; ++b) s += T.J1(i, a, b, y) * y(b);
        F(n + i, a) = 2.0 * s / 3.0;
      }
  } else if (l == 1) {
    for (int a = 0; a < n; ++a) {
      Vec col = Vec::Zero(N);
      for (int b = 0; b < n; ++b) {
        double f = 0.0;
        for (int g = 0; g < n; ++g)
          for (int d = 0; d < n; ++d) f += y(g) * y(d) * T.R(b, a, g, d);
        col += (f / 6.0) * xhat(b);
      }
      for (int i = 0; i < m; ++i) {
        double h = 0.0;
        for (int b = 0; b < n; ++b)
          for (int j = 0; j < m; ++j) h += T.R(n + i, a, b, n + j) * y(n + j) * y(b) / 8.0;
        for (int b = 0; b < n; ++b)
          for (int g = 0; g < n; ++g)
            for (int bp = 0; bp < n; ++bp)
              for (int gp = 0; gp < n; ++gp) h += T.Jc(i, b, g) * T.R(g, a, bp, gp) * y(b) * y(bp) * y(gp) / 24.0;
        for (int b = 0; b < n; ++b) h += 0.25 * y(b) * T.J2(i, a, b, y);
        col(n + i) += 2.0 * h;
      }
      F.col(a) = col;
    }
  }
  return F;
}

}  // namespace closed_form

// ---------------------------------------------------------------------------
// Taylor check.

struct TaylorEntry {
  std::string name;
  double residual = 0.0;
  double fit_error = 0.0;
  bool informational = false;
};

struct TaylorReport {
  std::string model;
  double tol = 0.0;
  std::vector<TaylorEntry> entries;
  double condition = 0.0;

  double max_residual() const {
    double r = 0.0;
    for (const auto& e : entries)
      if (!e.informational) r = std::max(r, e.residual);
    return r;
  }
  bool pass() const { return max_residual() <= tol; }
};

inline double max_diff(const Mat& A, const Mat& B) { return max_abs(A - B); }

/**
 * @brief Compare extracted homogeneous parts with the closed forms at q.
 *
 * Samples have Koranyi norm 1; the dilation grid then spans chart radii up
 * to t0.
 */
inline TaylorReport taylor_check(const PrivilegedChart& chart, double tol = 1e-5, int nsamples = 6, unsigned long long seed = 11,
                                 const DilationGrid& grid = {}) {
  const FoliationModel& M = chart.model();
  const int n = M.n, m = M.m, N = M.N();
  TaylorReport rep;
  rep.model = M.id;
  rep.tol = tol;
  const Vec qp = M.homogeneous() ? Vec() : chart.base().p;
  const TaylorTensors T = taylor_tensors(M, qp);
  const std::vector<Vec> ys = koranyi_samples(n, m, nsamples, 1.0, seed);
  const std::vector<double> ts = grid.times();

  struct Acc {
    double res = 0.0, err = 0.0;
  };
  std::map<std::string, Acc> acc;
  std::vector<std::string> order;
  std::map<std::string, bool> info;
  auto add = [&](const std::string& k, double r, double e, bool inf = false) {
    if (!acc.count(k)) {
      order.push_back(k);
      info[k] = inf;
    }
    acc[k].res = std::max(acc[k].res, r);
    acc[k].err = std::max(acc[k].err, e);
  };

  for (const Vec& y : ys) {
    std::vector<RaySample> S = chart.samples(y, ts, true);
    std::vector<Mat> cof, frm, jf;
    std::vector<std::vector<Mat>> con(N);
    for (const auto& s : S) {
      cof.push_back(chart.coframe_raw(s));
      frm.push_back(s.D.fullPivLu().solve(s.E));
      auto om = chart.connection_raw(s);
      for (int c = 0; c < N; ++c) con[c].push_back(om[c]);
      auto Js = chart.j_along(s);
      Mat st(m * n, n);
      for (int i = 0; i < m; ++i) st.block(i * n, 0, n, n) = Js[i];
      jf.push_back(st);
    }
    SeriesFit fc = fit_series(ts, cof, 1, grid.points);
    SeriesFit ff = fit_series(ts, frm, -2, grid.points);
    SeriesFit fj = fit_series(ts, jf, 0, grid.points);
    rep.condition = std::max({rep.condition, fc.condition, ff.condition});
    for (int l = 1; l <= 4; ++l) {
      Mat ex = fc.order(l), cf = closed_form::coframe(T, l, y);
      const std::string row = "coframe_l" + std::to_string(l);
      if (l < 4) {
        add(row, max_diff(ex, cf), max_abs(fc.order_error(l)));
      } else {
        add(row + "_eta", max_diff(ex.bottomRows(m), cf.bottomRows(m)), max_abs(fc.order_error(l).bottomRows(m)));
      }
    }
    std::vector<Mat> c2 = closed_form::connection2(T, y);
    double r1 = 0.0, r2 = 0.0, rq = 0.0, e1 = 0.0, e2 = 0.0;
    for (int c = 0; c < N; ++c) {
      SeriesFit fo = fit_series(ts, con[c], 0, grid.points);
      const int wc = c < n ? 1 : 2;
      // t^{w_c} omega(delta_t y)(d/dy^c): order-l part of the form.
      r1 = std::max(r1, max_abs(fo.order(1)));
      r2 = std::max(r2, max_diff(fo.order(2), c2[c]));
      e1 = std::max(e1, max_abs(fo.order_error(1)));
      e2 = std::max(e2, max_abs(fo.order_error(2)));
      rq = std::max(rq, max_abs(fo.order(wc)));
    }
    add("connection_l1", r1, e1);
    add("connection_l2", r2, e2);
    add("connection_at_q", rq, e2);
    for (int l = -2; l <= 1; ++l) {
      Mat ex = ff.order(l), cf = closed_form::frame(T, l, y);
      const std::string row = "frame_l" + std::to_string(l);
      if (l == 1) {
        add(row, max_diff(ex.leftCols(n), cf.leftCols(n)), max_abs(ff.order_error(l).leftCols(n)));
      } else {
        add(row, max_diff(ex, cf), max_abs(ff.order_error(l)));
      }
    }
    double rj1 = 0.0, rj2 = 0.0;
    for (int i = 0; i < m; ++i) {
      Mat e1m(n, n), e2m(n, n);
      for (int a = 0; a < n; ++a)
        for (int b = 0; b < n; ++b) {
          e1m(b, a) = T.J1(i, a, b, y);
          e2m(b, a) = T.J2(i, a, b, y);
        }
      rj1 = std::max(rj1, max_diff(fj.order(1).block(i * n, 0, n, n), e1m));
      rj2 = std::max(rj2, max_diff(fj.order(2).block(i * n, 0, n, n), e2m));
    }
    add("j_order1_torsion_derivative", rj1, max_abs(fj.order_error(1)));
    add("j_order2", rj2, max_abs(fj.order_error(2)));

    // Generator identities at y itself (t = 1 is not on the grid; use the ray at t = 1).
    RaySample s1 = chart.samples(y, {1.0}, true).back();
    Vec P(N);
    P.head(n) = y.head(n);
    P.tail(m) = 2.0 * y.tail(m);
    add("generator_theta_eta", (chart.coframe_raw(s1) * P - y).cwiseAbs().maxCoeff(), 0.0);
    auto om = chart.connection_raw(s1);
    Mat sum = Mat::Zero(N, N);
    for (int c = 0; c < N; ++c) sum += P(c) * om[c];
    add("generator_omega", max_abs(sum), 0.0);
  }
  for (const auto& k : order) rep.entries.push_back({k, acc[k].res, acc[k].err, info[k]});
  return rep;
}

inline TaylorReport taylor_check(const FoliationModel& M, double tol = 1e-5, int nsamples = 6) {
  PrivilegedChart chart(M, {}, {}, 1e-12);  // two orders below the extracted coefficients
  return taylor_check(chart, tol, nsamples);
}

}  // namespace htype
