#pragma once

// Weighted least squares and iteratively reweighted l1 minimization subject
// to a two-norm residual constraint.

#include "svamuq/core.hpp"

#include <Eigen/QR>
#include <Eigen/Cholesky>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <span>
#include <vector>

namespace svamuq {

class InfeasibleError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

struct SparseSolveConfig {
  double epsilon = 1e-6;
  double eta = 1e-5;
  double delta_s = 1e-5;
  double delta_rs = 1e-5;
  int max_iters = 20;
  Vec penalty;  // per-coefficient multiplier on K; empty means all ones

  void validate() const {
    if (!(epsilon > 0 && eta > 0 && delta_s > 0 && delta_rs > 0 && max_iters > 0))
      throw InvalidArgument("SparseSolveConfig: all parameters must be positive");
    if (penalty.size() && !(penalty.array() > 0).all())
      throw InvalidArgument("SparseSolveConfig: penalty entries must be positive");
  }
};

struct LsResult {
  Vec x;
  Eigen::Index rank = 0;
  bool rank_deficient = false;
  double residual = 0.0;  // ||W(Ax - b)||_2
};

/// Minimum-norm minimizer of ||W(Ax - b)||_2 with W = diag(sqrt(w)).
inline LsResult solve_weighted_ls(const Mat& A, const Vec& b, const Vec& w) {
  if (A.rows() != b.size() || A.rows() != w.size())
    throw InvalidArgument("solve_weighted_ls: size mismatch");
  const Vec sw = w.cwiseSqrt();
  const Mat WA = sw.asDiagonal() * A;
  const Vec Wb = sw.cwiseProduct(b);
  Eigen::CompleteOrthogonalDecomposition<Mat> cod(WA);
  LsResult r;
  r.x = cod.solve(Wb);
  r.rank = cod.rank();
  r.rank_deficient = r.rank < std::min(A.rows(), A.cols());
  r.residual = (WA * r.x - Wb).norm();
  return r;
}

/// Inner problem: min ||y||_1 subject to ||A y - b||_2 <= eps. `y0` may be
/// used as a warm start.
using BpdnSolver =
    std::function<Vec(const Mat& A, const Vec& b, double eps, const Vec& y0)>;

/// Stationarity and feasibility report for a BPDN point.
struct BpdnKkt {
  double residual = 0.0;      // ||A y - b||
  double stationarity = 0.0;  // relative KKT violation
};

inline BpdnKkt check_bpdn_kkt(const Mat& A, const Vec& b, const Vec& y) {
  BpdnKkt k;
  const Vec r = b - A * y;
  k.residual = r.norm();
  const Vec g = A.transpose() * r;
  const double lam = g.lpNorm<Eigen::Infinity>();
  if (lam == 0.0) return k;
  double v = 0.0;
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    if (y[i] != 0.0)
      v = std::max(v, std::abs(g[i] - lam * (y[i] > 0 ? 1.0 : -1.0)) / lam);
  }
  k.stationarity = v;
  return k;
}

/// Lasso homotopy: follows the l1 regularization path from lambda = inf
/// downward and stops where the residual norm reaches eps.
inline Vec homotopy_bpdn(const Mat& A, const Vec& b, double eps, const Vec& = Vec()) {
  const Eigen::Index n = A.cols();
  Vec y = Vec::Zero(n);
  Vec r = b;
  if (r.norm() <= eps) return y;
  Vec c = A.transpose() * r;
  Eigen::Index j0;
  double lam = c.cwiseAbs().maxCoeff(&j0);
  std::vector<Eigen::Index> S{j0};
  std::vector<char> active(static_cast<std::size_t>(n), 0);
  active[j0] = 1;
  Eigen::Index last_left = -1;
  const int max_steps = static_cast<int>(8 * std::min(A.rows(), n) + 100);
  for (int step = 0; step < max_steps; ++step) {
    const Eigen::Index k = static_cast<Eigen::Index>(S.size());
    Mat AS(A.rows(), k);
    Vec sgn(k);
    for (Eigen::Index i = 0; i < k; ++i) {
      AS.col(i) = A.col(S[i]);
      sgn[i] = c[S[i]] >= 0 ? 1.0 : -1.0;
    }
    Eigen::LDLT<Mat> G(AS.transpose() * AS);
    if (G.info() != Eigen::Success) throw NumericalError("homotopy_bpdn: singular active set");
    // y_S(lam - t) = y_S + t d, correlations drop as c - t a.
    const Vec d = G.solve(sgn);
    const Vec u = AS * d;
    const Vec a = A.transpose() * u;

    // Segment end where the residual norm reaches eps: ||r - t u|| = eps.
    double t_eps = std::numeric_limits<double>::infinity();
    {
      const double uu = u.squaredNorm(), ru = r.dot(u), rr = r.squaredNorm();
      const double disc = ru * ru - uu * (rr - eps * eps);
      if (uu > 0 && disc >= 0) {
        const double t = (ru - std::sqrt(disc)) / uu;
        if (t >= 0) t_eps = t;
      }
    }
    // Ties (symmetric designs give equal correlations) can leave a column
    // exactly at the boundary; join times down to -tiny count as zero.
    const double tiny = 1e-12 * lam;
    double t_join = std::numeric_limits<double>::infinity();
    Eigen::Index j_join = -1;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (active[j] || j == last_left) continue;
      // c_j - t a_j = +-(lam - t)
      const double t1 = (lam - c[j]) / (1.0 - a[j]);
      const double t2 = (lam + c[j]) / (1.0 + a[j]);
      for (double t : {t1, t2})
        if (t > -tiny && t < t_join) {
          t_join = std::max(t, 0.0);
          j_join = j;
        }
    }
    double t_leave = std::numeric_limits<double>::infinity();
    Eigen::Index i_leave = -1;
    for (Eigen::Index i = 0; i < k; ++i) {
      const double yi = y[S[i]];
      if (d[i] != 0.0 && yi != 0.0) {
        const double t = -yi / d[i];
        if (t > 1e-14 && t < t_leave) {
          t_leave = t;
          i_leave = i;
        }
      }
    }
    const double t_end = lam;  // lambda reaches zero
    const double t = std::min({t_eps, t_join, t_leave, t_end});
    for (Eigen::Index i = 0; i < k; ++i) y[S[i]] += t * d[i];
    lam -= t;
    if (t == t_eps) return y;
    last_left = -1;
    if (t == t_end) {
      r = b - A * y;
      break;
    }
    if (t == t_leave) {
      y[S[i_leave]] = 0.0;
      active[S[i_leave]] = 0;
      last_left = S[i_leave];
      S.erase(S.begin() + i_leave);
    } else {
      active[j_join] = 1;
      S.push_back(j_join);
    }
    // Exact residual and correlations; incremental updates drift once lam
    // is small relative to its start.
    r = b - A * y;
    c = A.transpose() * r;
    if (S.empty()) {
      c = A.transpose() * r;
      lam = c.cwiseAbs().maxCoeff(&j0);
      S.push_back(j0);
      active[j0] = 1;
    }
    if (static_cast<Eigen::Index>(S.size()) > A.rows()) break;
  }
  if (r.norm() > eps * (1.0 + 1e-9))
    throw InfeasibleError("homotopy_bpdn: residual constraint unattainable");
  return y;
}

struct ChambollePockOptions {
  int max_iters = 100000;
  double tol = 1e-8;
};

/// First-order primal-dual (Chambolle-Pock) solver for the same problem.
inline BpdnSolver chambolle_pock_bpdn(ChambollePockOptions o = {}) {
  return [o](const Mat& A, const Vec& b, double eps, const Vec& y0) -> Vec {
    const Eigen::Index n = A.cols();
    Vec y = y0.size() == n ? y0 : Vec::Zero(n);
    if (b.norm() <= eps) return Vec::Zero(n);
    // Operator norm by power iteration.
    Vec v = Vec::Ones(n) / std::sqrt(static_cast<double>(n));
    double L = 0;
    for (int i = 0; i < 100; ++i) {
      Vec w = A.transpose() * (A * v);
      L = std::sqrt(w.norm());
      if (w.norm() == 0) break;
      v = w / w.norm();
    }
    L *= 1.01;
    const double tau = 1.0 / L, sigma = 1.0 / L;
    Vec z = Vec::Zero(A.rows());
    Vec ybar = y;
    for (int it = 0; it < o.max_iters; ++it) {
      // Dual step: prox of the conjugate of the ball indicator.
      Vec q = z + sigma * (A * ybar);
      Vec p = q / sigma - b;
      const double pn = p.norm();
      if (pn > eps) p *= eps / pn;
      z = q - sigma * (p + b);
      const Vec yold = y;
      Vec g = y - tau * (A.transpose() * z);
      for (Eigen::Index j = 0; j < n; ++j)
        g[j] = std::copysign(std::max(std::abs(g[j]) - tau, 0.0), g[j]);
      y = g;
      ybar = 2.0 * y - yold;
      if (it % 50 == 0 && (y - yold).norm() <= o.tol * std::max(1.0, y.norm())) {
        const double res = (A * y - b).norm();
        if (res <= eps * (1.0 + 1e-6)) break;
      }
    }
    // Scale back onto the feasible set if the last iterate is marginally outside.
    const Vec r = A * y - b;
    if (r.norm() > eps) {
      Eigen::CompleteOrthogonalDecomposition<Mat> cod(A);
      const Vec ls = cod.solve(b);
      const double rl = (A * ls - b).norm();
      if (rl > eps) throw InfeasibleError("chambolle_pock_bpdn: residual constraint unattainable");
      // Convex combination toward the least-squares point until feasible.
      double lo = 0, hi = 1;
      for (int i = 0; i < 60; ++i) {
        const double m = 0.5 * (lo + hi);
        if ((A * ((1 - m) * y + m * ls) - b).norm() <= eps) hi = m;
        else lo = m;
      }
      y = (1 - hi) * y + hi * ls;
    }
    return y;
  };
}

struct WeightedL1Result {
  Vec x;
  int iterations = 0;
  bool converged = false;
  double residual = 0.0;                    // ||W(Ax - b)||
  std::vector<double> objective;            // ||K_t x_t||_1
  std::vector<double> objective_previous;   // ||K_t x_{t-1}||_1
  std::vector<double> log_sum;              // sum log(|x_t| + eta)
  std::vector<double> step_norm;            // ||x_t - x_{t-1}||
};

/// Iteratively reweighted l1: K = p/(|x| + eta) with p = cfg.penalty, then
/// min ||K x||_1 s.t. ||W(Ax - b)||_2 <= eps, until successive iterates
/// differ by less than delta_s.
inline WeightedL1Result solve_weighted_l1(const Mat& A, const Vec& b, const Vec& w,
                                          const Vec& x_ls, const SparseSolveConfig& cfg,
                                          const BpdnSolver& inner = homotopy_bpdn) {
  cfg.validate();
  if (x_ls.size() != A.cols()) throw InvalidArgument("solve_weighted_l1: x_ls size mismatch");
  if (cfg.penalty.size() && cfg.penalty.size() != A.cols())
    throw InvalidArgument("solve_weighted_l1: penalty size mismatch");
  const Vec pen = cfg.penalty.size() ? cfg.penalty : Vec::Ones(A.cols());
  const Vec sw = w.cwiseSqrt();
  const Mat WA = sw.asDiagonal() * A;
  const Vec Wb = sw.cwiseProduct(b);
  const double r_ls = (WA * x_ls - Wb).norm();
  if (r_ls > cfg.epsilon) {
    Eigen::CompleteOrthogonalDecomposition<Mat> cod(WA);
    if ((WA * Vec(cod.solve(Wb)) - Wb).norm() > cfg.epsilon)
      throw InfeasibleError("solve_weighted_l1: epsilon below the least-squares residual");
  }
  WeightedL1Result res;
  Vec x = x_ls;
  for (int it = 0; it < cfg.max_iters; ++it) {
    const Vec scale = ((x.cwiseAbs().array() + cfg.eta) / pen.array()).matrix();  // K^-1
    // Substitute y = K x: columns of WA scale by K^-1.
    const Mat As = WA * scale.asDiagonal();
    const Vec y0 = (x.array() / scale.array()).matrix();
    const Vec y = inner(As, Wb, cfg.epsilon, y0);
    const Vec xn = scale.cwiseProduct(y);
    res.objective.push_back(y.lpNorm<1>());
    res.objective_previous.push_back(y0.lpNorm<1>());
    res.log_sum.push_back((pen.array() * (xn.cwiseAbs().array() + cfg.eta).log()).sum());
    const double dx = (xn - x).norm();
    res.step_norm.push_back(dx);
    x = xn;
    res.iterations = it + 1;
    if (dx < cfg.delta_s) {
      res.converged = true;
      break;
    }
  }
  if (!res.converged)
    warn("solve_weighted_l1: no convergence after " + std::to_string(cfg.max_iters) +
         " reweighting iterations");
  res.x = x;
  res.residual = (WA * x - Wb).norm();
  return res;
}

struct ReducedSparse {
  std::vector<Eigen::Index> support;
  Vec c;  // full-length, zero off support
  double residual = 0.0;
};

/// Thresholds at delta_rs and refits by weighted least squares on the support.
inline ReducedSparse reduce_sparse(const Vec& x, const Mat& A, const Vec& b, const Vec& w,
                                   double delta_rs) {
  ReducedSparse rs;
  for (Eigen::Index i = 0; i < x.size(); ++i)
    if (std::abs(x[i]) >= delta_rs) rs.support.push_back(i);
  if (rs.support.empty()) throw NumericalError("reduce_sparse: empty support");
  Mat As(A.rows(), static_cast<Eigen::Index>(rs.support.size()));
  for (std::size_t k = 0; k < rs.support.size(); ++k)
    As.col(static_cast<Eigen::Index>(k)) = A.col(rs.support[k]);
  const LsResult ls = solve_weighted_ls(As, b, w);
  rs.c = Vec::Zero(x.size());
  for (std::size_t k = 0; k < rs.support.size(); ++k)
    rs.c[rs.support[k]] = ls.x[static_cast<Eigen::Index>(k)];
  rs.residual = ls.residual;
  return rs;
}

}  // namespace svamuq
