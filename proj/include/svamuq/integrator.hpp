#pragma once

// Embedded Runge-Kutta 5(4) (Dormand-Prince) with PI step-size control.

#include "svamuq/core.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <vector>

namespace svamuq {

struct IntegratorOptions {
  double rel_tol = 1e-12;
  double abs_tol = 1e-12;
  double initial_step = 0.0;  // 0 selects a step automatically
  double max_step = std::numeric_limits<double>::infinity();
  double min_step = 1e-15;
  std::size_t max_steps = 2'000'000;
  // When > 0 the controller is bypassed and this step is used throughout
  // (the last step of each segment is shortened to land on the target).
  double fixed_step = 0.0;
};

struct IntegratorStats {
  std::size_t accepted = 0;
  std::size_t rejected = 0;
  std::size_t rhs_evals = 0;
};

namespace detail {

struct DP5 {
  static constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
  static constexpr double a21 = 1.0 / 5;
  static constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
  static constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
  static constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187,
                          a53 = 64448.0 / 6561, a54 = -212.0 / 729;
  static constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33,
                          a63 = 46732.0 / 5247, a64 = 49.0 / 176,
                          a65 = -5103.0 / 18656;
  static constexpr double a71 = 35.0 / 384, a73 = 500.0 / 1113,
                          a74 = 125.0 / 192, a75 = -2187.0 / 6784,
                          a76 = 11.0 / 84;
  // Error coefficients: 5th order weights minus embedded 4th order weights.
  static constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695,
                          e4 = 71.0 / 1920, e5 = -17253.0 / 339200,
                          e6 = 22.0 / 525, e7 = -1.0 / 40;
};

template <class State>
double error_norm(const State& err, const State& y0, const State& y1,
                  const IntegratorOptions& o) {
  double acc = 0.0;
  const auto n = err.size();
  for (Eigen::Index i = 0; i < n; ++i) {
    const double sc =
        o.abs_tol + o.rel_tol * std::max(std::abs(y0[i]), std::abs(y1[i]));
    const double q = err[i] / sc;
    acc += q * q;
  }
  return std::sqrt(acc / static_cast<double>(n));
}

template <class State>
bool all_finite(const State& y) {
  return y.allFinite();
}

}  // namespace detail

/// Integrates dy/dt = f(t, y) from t0 to t1 (either direction).
///
/// `f` is called as `f(t, y)` and must return a value assignable to State.
/// Throws NumericalError when the step size underflows, the step budget is
/// exhausted or the solution stops being finite. Exceptions raised by `f`
/// (e.g. SingularityError) propagate unchanged.
template <class State, class Rhs>
State integrate(Rhs&& f, double t0, State y, double t1,
                const IntegratorOptions& opt = {},
                IntegratorStats* stats = nullptr) {
  using D = detail::DP5;
  if (!std::isfinite(t0) || !std::isfinite(t1))
    throw InvalidArgument("integrate: non-finite time span");
  if (t1 == t0) return y;
  const double dir = t1 > t0 ? 1.0 : -1.0;
  const double span = std::abs(t1 - t0);
  IntegratorStats local;
  IntegratorStats& st = stats ? *stats : local;

  State k1 = f(t0, y);
  ++st.rhs_evals;
  double h;
  if (opt.fixed_step > 0.0) {
    h = opt.fixed_step;
  } else if (opt.initial_step > 0.0) {
    h = opt.initial_step;
  } else {
    // Hairer-Norsett-Wanner starting step heuristic.
    State sc = y;
    for (Eigen::Index i = 0; i < y.size(); ++i)
      sc[i] = opt.abs_tol + opt.rel_tol * std::abs(y[i]);
    const double d0 = std::sqrt((y.array() / sc.array()).square().mean());
    const double d1 = std::sqrt((k1.array() / sc.array()).square().mean());
    double h0 = (d0 < 1e-5 || d1 < 1e-5) ? 1e-6 : 0.01 * d0 / d1;
    h0 = std::min(h0, span);
    State y1 = y + dir * h0 * k1;
    State f1 = f(t0 + dir * h0, y1);
    ++st.rhs_evals;
    const double d2 =
        std::sqrt(((f1 - k1).array() / sc.array()).square().mean()) / h0;
    const double h1 = (std::max(d1, d2) <= 1e-15)
                          ? std::max(1e-6, h0 * 1e-3)
                          : std::pow(0.01 / std::max(d1, d2), 1.0 / 5.0);
    h = std::min(100.0 * h0, h1);
  }
  h = std::min({h, opt.max_step, span});

  constexpr double beta = 0.04;
  constexpr double expo1 = 0.2 - beta * 0.75;
  constexpr double safe = 0.9, fac_min = 0.2, fac_max = 10.0;
  double err_old = 1e-4;
  bool last_rejected = false;

  double t = t0;
  std::size_t steps = 0;
  while (dir * (t1 - t) > 0.0) {
    if (++steps > opt.max_steps)
      throw NumericalError("integrate: step budget exhausted");
    bool final_step = false;
    if (h >= std::abs(t1 - t) * (1.0 - 1e-14)) {
      h = std::abs(t1 - t);
      final_step = true;
    }
    if (h < opt.min_step && !final_step)
      throw NumericalError("integrate: step size underflow at t=" +
                           std::to_string(t));
    const double hs = dir * h;
    State k2 = f(t + D::c2 * hs, State(y + hs * (D::a21 * k1)));
    State k3 = f(t + D::c3 * hs, State(y + hs * (D::a31 * k1 + D::a32 * k2)));
    State k4 = f(t + D::c4 * hs,
                 State(y + hs * (D::a41 * k1 + D::a42 * k2 + D::a43 * k3)));
    State k5 = f(t + D::c5 * hs,
                 State(y + hs * (D::a51 * k1 + D::a52 * k2 + D::a53 * k3 +
                                 D::a54 * k4)));
    State k6 = f(t + hs, State(y + hs * (D::a61 * k1 + D::a62 * k2 +
                                         D::a63 * k3 + D::a64 * k4 +
                                         D::a65 * k5)));
    State y_new = y + hs * (D::a71 * k1 + D::a73 * k3 + D::a74 * k4 +
                            D::a75 * k5 + D::a76 * k6);
    State k7 = f(t + hs, y_new);
    st.rhs_evals += 6;
    if (!detail::all_finite(y_new))
      throw NumericalError("integrate: non-finite state at t=" +
                           std::to_string(t));

    if (opt.fixed_step > 0.0) {
      t = final_step ? t1 : t + hs;
      y = y_new;
      k1 = k7;
      ++st.accepted;
      continue;
    }

    State e = hs * (D::e1 * k1 + D::e3 * k3 + D::e4 * k4 + D::e5 * k5 +
                    D::e6 * k6 + D::e7 * k7);
    const double err = detail::error_norm(e, y, y_new, opt);
    const double fac11 = std::pow(std::max(err, 1e-300), expo1);
    if (err <= 1.0) {
      double fac = fac11 / std::pow(err_old, beta);
      fac = std::clamp(fac / safe, 1.0 / fac_max, 1.0 / fac_min);
      double h_new = h / fac;
      if (last_rejected) h_new = std::min(h_new, h);
      err_old = std::max(err, 1e-4);
      t = final_step ? t1 : t + hs;
      y = y_new;
      k1 = k7;
      h = std::min(h_new, opt.max_step);
      last_rejected = false;
      ++st.accepted;
    } else {
      h = h / std::min(1.0 / fac_min, fac11 / safe);
      last_rejected = true;
      ++st.rejected;
    }
  }
  return y;
}

/// Integrates through the listed epochs (monotone in one direction from t0)
/// and returns the state at each of them.
template <class State, class Rhs>
std::vector<State> integrate_to_epochs(Rhs&& f, double t0, const State& y0,
                                       std::span<const double> epochs,
                                       const IntegratorOptions& opt = {},
                                       IntegratorStats* stats = nullptr) {
  std::vector<State> out;
  out.reserve(epochs.size());
  State y = y0;
  double t = t0;
  for (double te : epochs) {
    y = integrate(f, t, y, te, opt, stats);
    t = te;
    out.push_back(y);
  }
  return out;
}

}  // namespace svamuq
