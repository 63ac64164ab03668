#pragma once

#include "svamuq/dynamics.hpp"
#include "svamuq/integrator.hpp"

#include <optional>
#include <span>
#include <variant>
#include <vector>

namespace svamuq {

enum class Representation { cartesian, svam };

/// Sampled trajectory. Each state row holds six reals: (x, y, z, vx, vy, vz)
/// for Cartesian runs, (r, theta, phi, gamma, beta, C) for S-VAM runs.
struct Trajectory {
  Representation rep = Representation::cartesian;
  std::vector<double> epochs;
  std::vector<Vec6> states;
  std::vector<double> jacobi;        // C evaluated at each epoch
  std::vector<double> jacobi_drift;  // |C(t) - C(t0)|

  double max_jacobi_drift() const {
    double m = 0.0;
    for (double d : jacobi_drift) m = std::max(m, d);
    return m;
  }
};

struct PropagationOptions {
  IntegratorOptions integrator{};
  SingularityGuard guard{};
};

using AnyState = std::variant<CartState, SvamState>;

inline CartState to_cart(const AnyState& s, const SystemParams& sp) {
  if (auto* c = std::get_if<CartState>(&s)) return *c;
  return svam_to_cart(std::get<SvamState>(s), sp);
}

inline SvamState to_svam(const AnyState& s, const SystemParams& sp) {
  if (auto* v = std::get_if<SvamState>(&s)) return *v;
  return cart_to_svam(std::get<CartState>(s), sp);
}

/// Propagates a Cartesian state from t0 to t1.
inline Vec6 propagate_cartesian(const Vec6& x0, double t0, double t1,
                                const SystemParams& sp,
                                const IntegratorOptions& opt = {}) {
  auto f = [&](double, const Vec6& x) { return cartesian_rhs(x, sp); };
  return integrate(f, t0, x0, t1, opt);
}

/// Propagates the five S-VAM coordinates with the Jacobi constant held fixed.
inline SvamState propagate_svam(const SvamState& s0, double t0, double t1,
                                const SystemParams& sp,
                                const PropagationOptions& opt = {}) {
  const double c = s0.c;
  auto f = [&](double, const Vec5& s) { return svam_rhs(s, c, sp, opt.guard); };
  return SvamState::from_coords(integrate(f, t0, s0.coords(), t1, opt.integrator), c);
}

/// Samples a trajectory at `epochs` (first epoch is the initial time).
inline Trajectory propagate(const AnyState& initial, std::span<const double> epochs,
                            Representation rep, const SystemParams& sp,
                            const PropagationOptions& opt = {}) {
  if (epochs.empty()) throw InvalidArgument("propagate: no epochs");
  for (std::size_t i = 1; i < epochs.size(); ++i)
    if (!(epochs[i] > epochs[i - 1]))
      throw InvalidArgument("propagate: epochs must be strictly increasing");
  Trajectory tr;
  tr.rep = rep;
  tr.epochs.assign(epochs.begin(), epochs.end());
  if (rep == Representation::cartesian) {
    Vec6 x = to_cart(initial, sp).vector();
    const double c0 = jacobi_constant(CartState::from_vector(x), sp);
    double t = epochs.front();
    for (double te : epochs) {
      x = propagate_cartesian(x, t, te, sp, opt.integrator);
      t = te;
      const double c = jacobi_constant(CartState::from_vector(x), sp);
      tr.states.push_back(x);
      tr.jacobi.push_back(c);
      tr.jacobi_drift.push_back(std::abs(c - c0));
    }
  } else {
    SvamState s = to_svam(initial, sp);
    const double c0 = s.c;
    double t = epochs.front();
    for (double te : epochs) {
      s = propagate_svam(s, t, te, sp, opt);
      t = te;
      Vec6 row;
      row << s.coords(), s.c;
      tr.states.push_back(row);
      tr.jacobi.push_back(s.c);
      tr.jacobi_drift.push_back(std::abs(s.c - c0));
    }
  }
  return tr;
}

/// How the variational equations obtain the vector-field Jacobian.
enum class JacobianMode { finite_difference, analytic };

struct StateWithStm {
  Vec6 state;
  Mat6 stm;
};

/// Integrates the Cartesian state together with its 6x6 state transition
/// matrix from t0 to t1.
inline StateWithStm propagate_with_stm(const Vec6& x0, double t0, double t1,
                                       const SystemParams& sp,
                                       const IntegratorOptions& opt = {},
                                       JacobianMode mode = JacobianMode::finite_difference,
                                       const Mat6& stm0 = Mat6::Identity()) {
  using Aug = Eigen::Matrix<double, 42, 1>;
  auto f = [&](double, const Aug& y) {
    const Vec6 x = y.head<6>();
    const Mat6 jac = mode == JacobianMode::analytic
                         ? cartesian_jacobian(x, sp)
                         : Mat6(richardson_jacobian(
                               [&](const Vec6& z) { return cartesian_rhs(z, sp); }, x));
    Eigen::Map<const Mat6> phi(y.data() + 6);
    Aug d;
    d.head<6>() = cartesian_rhs(x, sp);
    Eigen::Map<Mat6>(d.data() + 6) = jac * phi;
    return d;
  };
  Aug y0;
  y0.head<6>() = x0;
  Eigen::Map<Mat6>(y0.data() + 6) = stm0;
  const Aug y1 = integrate(f, t0, y0, t1, opt);
  return {y1.head<6>(), Eigen::Map<const Mat6>(y1.data() + 6)};
}

/// Impulse delivered by a constant-thrust burn treated as instantaneous.
struct ThrustBurn {
  double thrust_n = 500.0;
  double mass_kg = 600.0;
  double burn_s = 813.0;

  /// Delta-v in m/s under constant mass.
  double delta_v_mps() const { return thrust_n * burn_s / mass_kg; }
};

struct ImpulseEvent {
  double t1 = 0.0;          // TU
  double dv_mag = 0.0;      // LU/TU (ignored when `burn` is set)
  double gamma_thrust = 0.0;
  double beta_thrust = 0.0;
  std::optional<ThrustBurn> burn;

  double delta_v(const SystemParams& sp) const {
    if (burn) return sp.mps_to_vu(burn->delta_v_mps());
    return dv_mag;
  }
  Vec3 direction() const {
    return {std::cos(beta_thrust) * std::cos(gamma_thrust),
            std::cos(beta_thrust) * std::sin(gamma_thrust), std::sin(beta_thrust)};
  }
};

/// Adds the impulse to the rotating-frame velocity and re-derives the Jacobi
/// constant of the post-impulse state.
inline SvamState apply_impulse(const AnyState& state, const ImpulseEvent& ev,
                               const SystemParams& sp) {
  const double dv = ev.delta_v(sp);
  if (dv < 0.0 || (ev.burn && (ev.burn->burn_s < 0.0 || ev.burn->thrust_n < 0.0)))
    throw InvalidArgument("apply_impulse: negative delta-v");
  if (!ev.burn && !(ev.dv_mag >= 0.0))
    throw InvalidArgument("apply_impulse: negative delta-v");
  if (dv == 0.0) return to_svam(state, sp);
  CartState c = to_cart(state, sp);
  c.vel += dv * ev.direction();
  return cart_to_svam(c, sp);
}

}  // namespace svamuq
