#pragma once

// Circular restricted three-body problem in the synodic frame, in Cartesian
// coordinates and in the spherical/velocity-angle (S-VAM) reduced form where
// the Jacobi constant is a parameter of the vector field.

#include "svamuq/core.hpp"

#include <cmath>
#include <string>

namespace svamuq {

struct SystemParams {
  double mu = 0.012151;
  double lu_km = 384400.0;
  double tu_days = 4.3424;
  double singular_floor = 1e-12;  // minimum distance to a primary (LU)

  static SystemParams earth_moon() { return {}; }

  void validate() const {
    if (!(mu > 0.0 && mu < 0.5))
      throw InvalidArgument("SystemParams: mu must lie in (0, 1/2)");
    if (!(lu_km > 0.0)) throw InvalidArgument("SystemParams: lu_km <= 0");
    if (!(tu_days > 0.0)) throw InvalidArgument("SystemParams: tu_days <= 0");
  }

  double tu_seconds() const { return tu_days * 86400.0; }
  double tu_hours() const { return tu_days * 24.0; }
  /// Speed unit LU/TU expressed in km/s.
  double vu_kms() const { return lu_km / tu_seconds(); }
  double km_to_lu(double km) const { return km / lu_km; }
  double seconds_to_tu(double s) const { return s / tu_seconds(); }
  double hours_to_tu(double h) const { return h / tu_hours(); }
  double mps_to_vu(double mps) const { return mps / 1000.0 / vu_kms(); }
};

struct CartState {
  Vec3 pos = Vec3::Zero();
  Vec3 vel = Vec3::Zero();

  Vec6 vector() const {
    Vec6 v;
    v << pos, vel;
    return v;
  }
  static CartState from_vector(const Vec6& v) {
    return {v.head<3>(), v.tail<3>()};
  }
};

/// Reduced state. `c` is the Jacobi constant, carried alongside the five
/// integrated coordinates and never integrated itself.
struct SvamState {
  double r = 1.0;
  double theta = 0.0;
  double phi = 0.0;
  double gamma = 0.0;
  double beta = 0.0;
  double c = 3.0;

  Vec5 coords() const {
    Vec5 v;
    v << r, theta, phi, gamma, beta;
    return v;
  }
  static SvamState from_coords(const Vec5& v, double c) {
    return {v[0], v[1], v[2], v[3], v[4], c};
  }
};

/// Thresholds below which |cos phi| or |cos beta| is treated as singular.
struct SingularityGuard {
  double cos_phi_min = 1e-8;
  double cos_beta_min = 1e-8;
};

namespace detail {

inline void primary_distances(const Vec3& p, double mu, double floor,
                              double& r1, double& r2) {
  r1 = std::sqrt((p.x() + mu) * (p.x() + mu) + p.y() * p.y() + p.z() * p.z());
  r2 = std::sqrt((p.x() + mu - 1.0) * (p.x() + mu - 1.0) + p.y() * p.y() +
                 p.z() * p.z());
  if (r1 < floor || r2 < floor)
    throw SingularityError("position within " + std::to_string(floor) +
                           " LU of a primary");
}

}  // namespace detail

inline double pseudopotential(const Vec3& pos, const SystemParams& sp) {
  double r1, r2;
  detail::primary_distances(pos, sp.mu, sp.singular_floor, r1, r2);
  return 0.5 * (pos.x() * pos.x() + pos.y() * pos.y()) + (1.0 - sp.mu) / r1 +
         sp.mu / r2;
}

inline Vec3 pseudopotential_gradient(const Vec3& p, const SystemParams& sp) {
  double r1, r2;
  detail::primary_distances(p, sp.mu, sp.singular_floor, r1, r2);
  const double mu = sp.mu;
  const double k1 = (1.0 - mu) / (r1 * r1 * r1);
  const double k2 = mu / (r2 * r2 * r2);
  return {p.x() - k1 * (p.x() + mu) - k2 * (p.x() - 1.0 + mu),
          p.y() - k1 * p.y() - k2 * p.y(), -k1 * p.z() - k2 * p.z()};
}

inline double jacobi_constant(const CartState& s, const SystemParams& sp) {
  return 2.0 * pseudopotential(s.pos, sp) - s.vel.squaredNorm();
}

inline Vec6 cartesian_rhs(const Vec6& x, const SystemParams& sp) {
  const Vec3 g = pseudopotential_gradient(x.head<3>(), sp);
  Vec6 d;
  d << x[3], x[4], x[5], 2.0 * x[4] + g.x(), -2.0 * x[3] + g.y(), g.z();
  return d;
}

/// Hand-derived Jacobian of `cartesian_rhs`.
inline Mat6 cartesian_jacobian(const Vec6& x, const SystemParams& sp) {
  const Vec3 p = x.head<3>();
  double r1, r2;
  detail::primary_distances(p, sp.mu, sp.singular_floor, r1, r2);
  const double mu = sp.mu;
  const Vec3 d1(p.x() + mu, p.y(), p.z());
  const Vec3 d2(p.x() + mu - 1.0, p.y(), p.z());
  const double a1 = (1.0 - mu) / std::pow(r1, 3), b1 = 3.0 * (1.0 - mu) / std::pow(r1, 5);
  const double a2 = mu / std::pow(r2, 3), b2 = 3.0 * mu / std::pow(r2, 5);
  Eigen::Matrix3d u = (b1 * d1 * d1.transpose() + b2 * d2 * d2.transpose());
  u.diagonal().array() -= (a1 + a2);
  u(0, 0) += 1.0;
  u(1, 1) += 1.0;
  Mat6 j = Mat6::Zero();
  j.topRightCorner<3, 3>().setIdentity();
  j.bottomLeftCorner<3, 3>() = u;
  j(3, 4) = 2.0;
  j(4, 3) = -2.0;
  return j;
}

inline SvamState cart_to_svam(const CartState& s, const SystemParams& sp) {
  const double r = s.pos.norm();
  const double speed = s.vel.norm();
  if (!(r > 0.0)) throw SingularityError("cart_to_svam: r = 0");
  if (!(speed > 0.0))
    throw SingularityError("cart_to_svam: pointing angles undefined at rest");
  SvamState o;
  o.r = r;
  o.theta = std::atan2(s.pos.y(), s.pos.x());
  o.phi = std::atan2(s.pos.z(), std::hypot(s.pos.x(), s.pos.y()));
  o.gamma = std::atan2(s.vel.y(), s.vel.x());
  o.beta = std::atan2(s.vel.z(), std::hypot(s.vel.x(), s.vel.y()));
  o.c = jacobi_constant(s, sp);
  return o;
}

inline Vec3 svam_position(double r, double theta, double phi) {
  return {r * std::cos(phi) * std::cos(theta), r * std::cos(phi) * std::sin(theta),
          r * std::sin(phi)};
}

/// Speed implied by the Jacobi constant at a position: sqrt(2*Omega - C).
inline double svam_speed(const Vec3& pos, double c, const SystemParams& sp) {
  const double v2 = 2.0 * pseudopotential(pos, sp) - c;
  if (v2 < 0.0)
    throw ImaginarySpeedError("2*Omega - C < 0 (" + std::to_string(v2) + ")");
  return std::sqrt(v2);
}

inline CartState svam_to_cart(const SvamState& s, const SystemParams& sp) {
  CartState o;
  o.pos = svam_position(s.r, s.theta, s.phi);
  const double v = svam_speed(o.pos, s.c, sp);
  o.vel = {v * std::cos(s.beta) * std::cos(s.gamma),
           v * std::cos(s.beta) * std::sin(s.gamma), v * std::sin(s.beta)};
  return o;
}

/// Time derivatives (r', theta', phi', gamma', beta') of the S-VAM equations.
inline Vec5 svam_rhs(const Vec5& s, double c, const SystemParams& sp,
                     const SingularityGuard& guard = {}) {
  const double r = s[0], th = s[1], ph = s[2], ga = s[3], be = s[4];
  const double mu = sp.mu;
  const double cph = std::cos(ph), sph = std::sin(ph);
  const double cbe = std::cos(be), sbe = std::sin(be);
  const double cth = std::cos(th), sth = std::sin(th);
  const double cga = std::cos(ga), sga = std::sin(ga);
  if (std::abs(cph) < guard.cos_phi_min)
    throw SingularityError("svam_rhs: |cos phi| below guard");
  if (std::abs(cbe) < guard.cos_beta_min)
    throw SingularityError("svam_rhs: |cos beta| below guard");
  if (!(r > 0.0)) throw SingularityError("svam_rhs: r <= 0");

  const double x = r * cph * cth;
  const double y = r * cph * sth;
  const double z = r * sph;
  const double d1 = std::sqrt(r * r + mu * mu + 2.0 * mu * r * cph * cth);
  const double d2 =
      std::sqrt(r * r + (mu - 1.0) * (mu - 1.0) + 2.0 * r * cph * cth * (mu - 1.0));
  if (d1 < sp.singular_floor || d2 < sp.singular_floor)
    throw SingularityError("svam_rhs: position at a primary");
  const double omega = 0.5 * (x * x + y * y) + (1.0 - mu) / d1 + mu / d2;
  const double v2 = 2.0 * omega - c;
  if (!(v2 > 0.0))
    throw ImaginarySpeedError("svam_rhs: 2*Omega - C <= 0");
  const double v = std::sqrt(v2);

  const double k1 = (1.0 - mu) / (d1 * d1 * d1);
  const double k2 = mu / (d2 * d2 * d2);
  const double q = 1.0 - k1 - k2;
  const double gx = x - k1 * (x + mu) - k2 * (x - 1.0 + mu);
  const double cdiff = std::cos(ga - th), sdiff = std::sin(ga - th);

  Vec5 d;
  d[0] = v * (cph * cbe * cdiff + sph * sbe);
  d[1] = v / (r * cph) * cbe * sdiff;
  d[2] = v / r * (sbe * cph - sph * cbe * cdiff);
  d[3] = (y * cga * q - sga * gx) / (v * cbe) - 2.0;
  d[4] = (-z * cbe * (k1 + k2) - cga * sbe * gx - y * sga * sbe * q) / v;
  return d;
}

/// log |det d(r, theta, phi, gamma, beta, C) / d(x, y, z, vx, vy, vz)|.
///
/// The map is block triangular (the position angles do not depend on the
/// velocity), giving |det| = 2 / (r^2 cos(phi) V cos(beta)).
inline double svam_transform_log_abs_det(const CartState& s) {
  const double r = s.pos.norm();
  const double cph = std::hypot(s.pos.x(), s.pos.y()) / r;
  const double v = s.vel.norm();
  const double cbe = std::hypot(s.vel.x(), s.vel.y()) / v;
  return std::log(2.0) - 2.0 * std::log(r) - std::log(cph) - std::log(v) -
         std::log(cbe);
}

/// Central-difference Jacobian with one Richardson extrapolation step.
///
/// The perturbation for component i is h * max(1, |x_i|).
template <class F, class V>
Eigen::Matrix<double, V::RowsAtCompileTime, V::RowsAtCompileTime>
richardson_jacobian(F&& f, const V& x, double h = 1e-4) {
  constexpr int N = V::RowsAtCompileTime;
  const Eigen::Index n = x.size();
  Eigen::Matrix<double, N, N> jac(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double hi = h * std::max(1.0, std::abs(x[i]));
    auto diff = [&](double step) {
      V xp = x, xm = x;
      xp[i] += step;
      xm[i] -= step;
      return V((f(xp) - f(xm)) / (2.0 * step));
    };
    const V d_h = diff(hi);
    const V d_h2 = diff(0.5 * hi);
    jac.col(i) = (4.0 * d_h2 - d_h) / 3.0;
  }
  return jac;
}

/// Equilibrium-point helpers used for seeding and tests.
/// Collinear point between the Earth and the Moon (L1), found by bisection of
/// dOmega/dx on the segment between the primaries.
inline double collinear_l1_x(const SystemParams& sp) {
  auto dx = [&](double x) {
    return pseudopotential_gradient(Vec3(x, 0, 0), sp).x();
  };
  double lo = -sp.mu + 1e-6, hi = 1.0 - sp.mu - 1e-6;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    if ((dx(lo) > 0) == (dx(mid) > 0))
      lo = mid;
    else
      hi = mid;
  }
  return 0.5 * (lo + hi);
}

/// Collinear point beyond the Moon (L2).
inline double collinear_l2_x(const SystemParams& sp) {
  auto dx = [&](double x) {
    return pseudopotential_gradient(Vec3(x, 0, 0), sp).x();
  };
  double lo = 1.0 - sp.mu + 1e-6, hi = 2.0;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    if ((dx(lo) > 0) == (dx(mid) > 0))
      lo = mid;
    else
      hi = mid;
  }
  return 0.5 * (lo + hi);
}

}  // namespace svamuq
