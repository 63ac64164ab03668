#pragma once

// Substitute reference trajectory: a planar Lyapunov orbit about L2 found by
// differential correction, and an arc on its stable manifold that serves as
// the post-impulse trajectory. A braking impulse of given magnitude along the
// arc velocity defines the matching pre-impulse (translunar) state.

#include "svamuq/dynamics.hpp"
#include "svamuq/propagation.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <string>

namespace svamuq {

struct CrossingResult {
  Vec6 state;
  Mat6 stm;
  double t = 0.0;
};

/// Propagates state and STM from t0 until y changes sign (the first crossing
/// after leaving the start), located by secant iterations on y.
inline CrossingResult propagate_to_y_crossing(const Vec6& x0, double t0, const SystemParams& sp,
                                              const IntegratorOptions& opt = {},
                                              double chunk = 0.01, double t_max = 50.0) {
  Vec6 x = x0;
  Mat6 phi = Mat6::Identity();
  double t = t0;
  // Leave the starting plane first.
  {
    const auto r = propagate_with_stm(x, t, t + chunk, sp, opt, JacobianMode::analytic, phi);
    x = r.state;
    phi = r.stm;
    t += chunk;
  }
  while (t - t0 < t_max) {
    const auto r = propagate_with_stm(x, t, t + chunk, sp, opt, JacobianMode::analytic, phi);
    if ((r.state[1] > 0) != (x[1] > 0) || r.state[1] == 0.0) {
      // Refine inside [t, t + chunk] from the chunk start.
      double dt = chunk * x[1] / (x[1] - r.state[1]);
      StateWithStm s{};
      for (int it = 0; it < 30; ++it) {
        s = propagate_with_stm(x, t, t + dt, sp, opt, JacobianMode::analytic, phi);
        const double y = s.state[1], vy = s.state[4];
        const double step = y / vy;
        dt -= step;
        if (std::abs(step) < 1e-15) break;
      }
      s = propagate_with_stm(x, t, t + dt, sp, opt, JacobianMode::analytic, phi);
      return {s.state, s.stm, t + dt};
    }
    x = r.state;
    phi = r.stm;
    t += chunk;
  }
  throw NumericalError("propagate_to_y_crossing: no crossing within t_max");
}

struct LyapunovOrbit {
  Vec6 x0;  // on the x-axis, perpendicular crossing
  double period = 0.0;
  double jacobi = 0.0;
  Mat6 monodromy;
  double closure = 0.0;  // |x(T) - x0|
};

/// Planar Lyapunov orbit about L2 through x0 = x_L2 - amplitude, obtained by
/// continuation in amplitude from the linearized solution.
inline LyapunovOrbit l2_planar_lyapunov(double amplitude, const SystemParams& sp,
                                        const IntegratorOptions& opt = {}) {
  if (!(amplitude > 0.0)) throw InvalidArgument("l2_planar_lyapunov: amplitude must be > 0");
  const double xl = collinear_l2_x(sp);
  const double c2 = (1.0 - sp.mu) / std::pow(std::abs(xl + sp.mu), 3) +
                    sp.mu / std::pow(std::abs(xl - 1.0 + sp.mu), 3);
  const double bq = 2.0 - c2, cq = (1.0 + 2.0 * c2) * (1.0 - c2);
  const double w2 = -(-bq - std::sqrt(bq * bq - 4.0 * cq)) / 2.0;
  const double w = std::sqrt(w2);
  const double k = (w2 + 1.0 + 2.0 * c2) / (2.0 * w);

  const int steps = std::max(1, static_cast<int>(std::ceil(amplitude / 2e-3)));
  double vy = 0.0;
  double prev_a = 0.0, prev_vy = 0.0;
  for (int s = 1; s <= steps; ++s) {
    const double a = amplitude * s / steps;
    if (s == 1) vy = k * a * w;
    else vy = prev_vy * a / prev_a;
    bool ok = false;
    for (int it = 0; it < 50; ++it) {
      Vec6 x0;
      x0 << xl - a, 0, 0, 0, vy, 0;
      const auto cr = propagate_to_y_crossing(x0, 0.0, sp, opt);
      const double vx = cr.state[3];
      if (std::abs(vx) < 1e-11) {
        ok = true;
        break;
      }
      const Vec6 f = cartesian_rhs(cr.state, sp);
      const double denom = cr.stm(3, 4) - cr.stm(1, 4) * f[3] / cr.state[4];
      vy -= vx / denom;
    }
    if (!ok) throw NumericalError("l2_planar_lyapunov: differential correction failed");
    prev_a = a;
    prev_vy = vy;
  }
  LyapunovOrbit o;
  o.x0 << xl - amplitude, 0, 0, 0, vy, 0;
  const auto half = propagate_to_y_crossing(o.x0, 0.0, sp, opt);
  o.period = 2.0 * half.t;
  const auto full = propagate_with_stm(o.x0, 0.0, o.period, sp, opt, JacobianMode::analytic);
  o.monodromy = full.stm;
  o.closure = (full.state - o.x0).norm();
  o.jacobi = jacobi_constant(CartState::from_vector(o.x0), sp);
  return o;
}

struct ReferenceSpec {
  double lyapunov_amplitude_km = 8000.0;
  double manifold_offset_km = 50.0;
  int manifold_branch = -1;               // sign of the stable-eigenvector offset (interior side)
  double manifold_backward_days = 26.0;   // impulse point: this long before the offset point
  double burn_dv_mps = 677.5;             // braking impulse at the impulse point
  double pre_impulse_hours = 1.0;         // initial epoch before the impulse (scenario B)
};

struct ReferenceTrajectory {
  LyapunovOrbit orbit;
  Vec6 post_impulse;  // state just after the impulse (t = 0)
  Vec6 pre_impulse;   // state just before the impulse (t = 0)
  Vec6 initial;       // pre-impulse arc at t = -pre_impulse_hours
  double t_initial = 0.0;
  double dv_vu = 0.0;
  double thrust_gamma = 0.0;  // braking direction angles in the rotating frame
  double thrust_beta = 0.0;
  double min_moon_distance_lu = 0.0;  // along the post-impulse arc to the offset point
};

inline ReferenceTrajectory generate_reference(const ReferenceSpec& spec, const SystemParams& sp,
                                              const IntegratorOptions& opt = {}) {
  ReferenceTrajectory ref;
  ref.orbit = l2_planar_lyapunov(sp.km_to_lu(spec.lyapunov_amplitude_km), sp, opt);
  Eigen::EigenSolver<Mat6> es(ref.orbit.monodromy);
  int is = -1;
  double best = 1e300;
  for (int i = 0; i < 6; ++i) {
    const auto ev = es.eigenvalues()[i];
    if (std::abs(ev.imag()) < 1e-8 && std::abs(ev.real()) < best) {
      best = std::abs(ev.real());
      is = i;
    }
  }
  if (is < 0 || !(best < 1.0)) throw NumericalError("generate_reference: no stable eigenvalue");
  Vec6 vs = es.eigenvectors().col(is).real();
  vs /= vs.head<3>().norm();
  if (vs[0] < 0) vs = -vs;  // branch +1 offsets toward +x (exterior side)
  const Vec6 xp = ref.orbit.x0 + spec.manifold_branch * sp.km_to_lu(spec.manifold_offset_km) * vs;
  const double tb = spec.manifold_backward_days / sp.tu_days;
  // Post-impulse state: the manifold point tb before reaching the offset state.
  auto f = [&](double, const Vec6& x) { return cartesian_rhs(x, sp); };
  ref.post_impulse = integrate(f, 0.0, xp, -tb, opt);
  {
    double dmin = 1e300;
    const int n = 200;
    Vec6 x = ref.post_impulse;
    for (int i = 1; i <= n; ++i) {
      x = integrate(f, tb * (i - 1) / n, x, tb * i / n, opt);
      dmin = std::min(dmin, (x.head<3>() - Vec3(1.0 - sp.mu, 0, 0)).norm());
    }
    ref.min_moon_distance_lu = dmin;
  }
  ref.dv_vu = sp.mps_to_vu(spec.burn_dv_mps);
  const Vec3 v = ref.post_impulse.tail<3>();
  const Vec3 u = v.normalized();
  ref.pre_impulse = ref.post_impulse;
  ref.pre_impulse.tail<3>() = v + ref.dv_vu * u;
  const Vec3 thrust = -u;
  ref.thrust_gamma = std::atan2(thrust.y(), thrust.x());
  ref.thrust_beta = std::atan2(thrust.z(), std::hypot(thrust.x(), thrust.y()));
  ref.t_initial = -spec.pre_impulse_hours / sp.tu_hours();
  ref.initial = integrate(f, 0.0, ref.pre_impulse, ref.t_initial, opt);
  return ref;
}

}  // namespace svamuq
