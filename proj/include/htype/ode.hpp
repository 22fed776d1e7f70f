#pragma once

#include "htype/common.hpp"

#include <boost/numeric/odeint.hpp>

#include <functional>
#include <vector>

namespace htype {

/** @brief Raised when a trajectory leaves the chart domain of a model. */
class OutOfDomain : public Error {
 public:
  using Error::Error;
};

using OdeState = std::vector<double>;
using OdeRhs = std::function<void(const OdeState&, OdeState&, double)>;
using OdeObserver = std::function<void(double, const OdeState&)>;

/**
 * @brief Adaptive Dormand-Prince 5(4) with dense output.
 *
 * Integrates from t0 and reports the state at each entry of `times`, which
 * must be monotone in the direction of integration (backward is allowed).
 * Absolute and relative step tolerance are both `tol`. With `interpolate`
 * the reported states come from the dense-output interpolant; otherwise the
 * stepper lands on every requested time.
 */
inline void integrate_dense(const OdeRhs& f, OdeState x, double t0, const std::vector<double>& times, double tol,
                            const OdeObserver& obs, bool interpolate = false) {
  namespace ode = boost::numeric::odeint;
  if (times.empty()) return;
  std::vector<double> ts;
  ts.reserve(times.size() + 1);
  ts.push_back(t0);
  for (double t : times) ts.push_back(t);
  const double span = std::abs(times.back() - t0);
  if (span == 0.0) {
    for (double t : times) obs(t, x);
    return;
  }
  const double dir = times.back() >= t0 ? 1.0 : -1.0;
  std::size_t idx = 0;
  auto report = [&](const OdeState& s, double t) {
    if (idx++ == 0) return;
    obs(t, s);
  };
  const double dt = dir * std::min(1e-2, span / 8);
  if (interpolate) {
    auto stepper = ode::make_dense_output(tol, tol, ode::runge_kutta_dopri5<OdeState>());
    ode::integrate_times(stepper, f, x, ts.begin(), ts.end(), dt, report);
  } else {
    auto stepper = ode::make_controlled(tol, tol, ode::runge_kutta_dopri5<OdeState>());
    ode::integrate_times(stepper, f, x, ts.begin(), ts.end(), dt, report);
  }
}

/// Final state at t1.
inline OdeState integrate_to(const OdeRhs& f, OdeState x, double t0, double t1, double tol) {
  OdeState out = x;
  integrate_dense(f, std::move(x), t0, {t1}, tol, [&](double, const OdeState& s) { out = s; });
  return out;
}

}  // namespace htype
