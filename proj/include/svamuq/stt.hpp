#pragma once

// Polynomial sensitivity surrogates fit over CUT training data.

#include "svamuq/cut.hpp"
#include "svamuq/dynamics.hpp"
#include "svamuq/moments.hpp"
#include "svamuq/poly_basis.hpp"

#include <Eigen/Cholesky>

#include <cmath>
#include <span>
#include <string>
#include <vector>

namespace svamuq {

struct SensitivityModel {
  MultiIndexBasis basis;
  Normalization norm;
  Mat d;  // outputs x basis
  double epoch = 0.0;
  std::string tag;
  double fit_residual_max = 0.0;  // max |D Phi - f| over training nodes
  double fit_residual_rms = 0.0;  // CUT-weighted RMS of the same

  int output_dim() const { return static_cast<int>(d.rows()); }
};

/// d_ji = <f_j, Phi_i> / <Phi_i, Phi_i> with CUT-weighted inner products.
/// `inputs` are physical parameter rows, mapped to zeta through `norm`.
inline SensitivityModel fit_cutstt(const Mat& inputs, const Mat& outputs,
                                   std::span<const double> weights,
                                   const MultiIndexBasis& basis, const Normalization& norm) {
  if (inputs.rows() != outputs.rows() ||
      inputs.rows() != static_cast<Eigen::Index>(weights.size()))
    throw InvalidArgument("fit_cutstt: inputs, outputs and weights must be row-aligned");
  if (inputs.cols() != basis.dim || norm.dim() != basis.dim)
    throw InvalidArgument("fit_cutstt: input dimension does not match basis");
  const Mat P = eval_basis_batch(basis, norm.to_zeta_rows(inputs));
  const Eigen::Map<const Vec> w(weights.data(), static_cast<Eigen::Index>(weights.size()));
  const Vec diag = (P.array().square().colwise() * w.array()).colwise().sum().transpose();
  for (Eigen::Index i = 0; i < diag.size(); ++i)
    if (diag[i] < 1e-14)
      throw NumericalError("fit_cutstt: Gram diagonal entry " + std::to_string(i) +
                           " below 1e-14 (basis not supported by the point set)");
  SensitivityModel m;
  m.basis = basis;
  m.norm = norm;
  const Mat proj = outputs.transpose() * w.asDiagonal() * P;  // outputs x basis
  m.d = proj * diag.cwiseInverse().asDiagonal();
  const Mat fit = P * m.d.transpose();
  const Mat err = fit - outputs;
  m.fit_residual_max = err.cwiseAbs().maxCoeff();
  m.fit_residual_rms = std::sqrt((err.array().square().colwise() * w.array()).sum() /
                                 static_cast<double>(std::max<Eigen::Index>(1, outputs.cols())));
  return m;
}

/// Fit over a unit-box CUT set mapped onto the box of `norm`.
inline SensitivityModel fit_cutstt(const CutPointSet& cs, const Mat& outputs,
                                   const MultiIndexBasis& basis, const Normalization& norm) {
  if (matching_family(cs.weighting) != basis.family)
    throw InvalidArgument("fit_cutstt: basis family does not match CUT weighting");
  if (cs.order < 2 * basis.max_degree)
    throw InvalidArgument("fit_cutstt: CUT order must be at least twice the basis degree");
  return fit_cutstt(scale_nodes(cs, norm.center, norm.half_width), outputs,
                    std::span<const double>(cs.weights.data(), cs.size()), basis, norm);
}

namespace detail {

template <int Dim, int Rows>
inline void accumulate_terms(const double* tab, const int* off, const double* dp,
                             std::size_t nb, double* yp) {
  double y[Rows] = {};
  for (std::size_t i = 0; i < nb; ++i, dp += Rows, off += Dim) {
    double p = 1.0;
    for (int j = 0; j < Dim; ++j) p *= tab[off[j]];
    for (int r = 0; r < Rows; ++r) y[r] += p * dp[r];
  }
  for (int r = 0; r < Rows; ++r) yp[r] += y[r];
}

}  // namespace detail

/// D Phi(zeta(params)). Sets *extrapolated when params leave the box.
inline Vec eval_surrogate(const SensitivityModel& m, const Vec& params,
                          bool* extrapolated = nullptr) {
  const int dim = m.basis.dim, n = m.basis.max_degree;
  if (params.size() != dim) throw InvalidArgument("eval_surrogate: dimension mismatch");
  // D * Phi(zeta) accumulated column by column; small cases avoid the heap.
  constexpr int kStack = 128;
  const int tab_size = dim * (n + 1);
  double stack[kStack];
  std::vector<double> heap;
  double* tab = stack;
  if (tab_size > kStack) {
    heap.resize(static_cast<std::size_t>(tab_size));
    tab = heap.data();
  }
  double zmax = 0.0;
  for (int j = 0; j < dim; ++j) {
    const double z = (params[j] - m.norm.center[j]) / m.norm.half_width[j];
    zmax = std::max(zmax, std::abs(z));
    univariate_values(m.basis.family, z, n, tab + j * (n + 1));
  }
  if (extrapolated) *extrapolated = zmax > 1.0 + 1e-12;
  const Eigen::Index rows = m.d.rows();
  Vec y = Vec::Zero(rows);
  double* yp = y.data();
  const double* dp = m.d.data();  // column-major: column i is contiguous
  const int* off = m.basis.table_offsets.data();
  if (m.basis.table_offsets.size() != m.basis.size() * static_cast<std::size_t>(dim))
    throw InvalidArgument("eval_surrogate: basis offsets not built");
  const std::size_t nb = m.basis.size();
  if (rows == 6 && dim == 5) {
    detail::accumulate_terms<5, 6>(tab, off, dp, nb, yp);
  } else if (rows == 6 && dim == 4) {
    detail::accumulate_terms<4, 6>(tab, off, dp, nb, yp);
  } else {
    for (std::size_t i = 0; i < nb; ++i, dp += rows, off += dim) {
      double p = 1.0;
      for (int j = 0; j < dim; ++j) p *= tab[off[j]];
      for (Eigen::Index r = 0; r < rows; ++r) yp[r] += p * dp[r];
    }
  }
  return y;
}

inline Mat eval_surrogate_batch(const SensitivityModel& m, const Mat& params,
                                std::size_t* extrapolated_count = nullptr) {
  Mat out(params.rows(), m.d.rows());
  std::size_t cnt = 0;
  for (Eigen::Index i = 0; i < params.rows(); ++i) {
    bool e = false;
    out.row(i) = eval_surrogate(m, params.row(i).transpose(), &e).transpose();
    cnt += e;
  }
  if (extrapolated_count) *extrapolated_count = cnt;
  return out;
}

struct MahalanobisResult {
  std::vector<double> distance;
  bool regularized = false;
};

/// sqrt((x - mu)^T Sigma^-1 (x - mu)) per row. Sigma is regularized by
/// 1e-12 * trace / dim when not positive definite.
inline MahalanobisResult mahalanobis(const Mat& X, const Vec& mu, const Mat& sigma) {
  if (X.cols() != mu.size() || sigma.rows() != mu.size() || sigma.cols() != mu.size())
    throw InvalidArgument("mahalanobis: dimension mismatch");
  MahalanobisResult r;
  Eigen::LLT<Mat> llt(sigma);
  if (llt.info() != Eigen::Success) {
    const double reg = 1e-12 * sigma.trace() / static_cast<double>(sigma.rows());
    Mat s = sigma;
    s.diagonal().array() += reg;
    llt.compute(s);
    if (!(reg > 0) || llt.info() != Eigen::Success)
      throw NumericalError("mahalanobis: covariance singular after regularization");
    r.regularized = true;
    warn("mahalanobis: covariance regularized by " + std::to_string(reg));
  }
  r.distance.resize(static_cast<std::size_t>(X.rows()));
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    const Vec dx = X.row(i).transpose() - mu;
    r.distance[static_cast<std::size_t>(i)] = llt.matrixL().solve(dx).norm();
  }
  return r;
}

/// Sample mean and (1/N) covariance of rows.
inline std::pair<Vec, Mat> sample_mean_cov(const Mat& X) {
  const Vec mu = X.colwise().mean().transpose();
  const Mat D = X.rowwise() - mu.transpose();
  return {mu, (D.transpose() * D) / static_cast<double>(X.rows())};
}

struct MahalanobisReport {
  std::vector<double> md_initial;
  std::vector<double> md_final;
  std::vector<double> pos_err_km;
  std::vector<double> vel_err_kmps;
  bool regularized = false;
};

/// Rows of the final matrices are (r, theta, phi, gamma, beta, C). M_d at
/// t_f is taken over the final truth coordinates that actually vary.
inline MahalanobisReport mahalanobis_report(const Mat& samples_init, const Mat& final_truth,
                                            const Mat& final_surrogate, const SystemParams& sp) {
  if (samples_init.rows() != final_truth.rows() || final_truth.rows() != final_surrogate.rows())
    throw InvalidArgument("mahalanobis_report: row count mismatch");
  if (final_truth.cols() != 6 || final_surrogate.cols() != 6)
    throw InvalidArgument("mahalanobis_report: final states need six columns");
  MahalanobisReport rep;
  {
    auto [mu, cov] = sample_mean_cov(samples_init);
    auto r = mahalanobis(samples_init, mu, cov);
    rep.md_initial = std::move(r.distance);
    rep.regularized = r.regularized;
  }
  {
    auto [mu, cov] = sample_mean_cov(final_truth);
    std::vector<Eigen::Index> keep;
    for (Eigen::Index j = 0; j < 6; ++j)
      if (!degenerate_variance(cov(j, j), mu[j])) keep.push_back(j);
    Mat X(final_truth.rows(), static_cast<Eigen::Index>(keep.size()));
    Vec m(static_cast<Eigen::Index>(keep.size()));
    Mat c(m.size(), m.size());
    for (Eigen::Index a = 0; a < m.size(); ++a) {
      X.col(a) = final_truth.col(keep[a]);
      m[a] = mu[keep[a]];
      for (Eigen::Index b = 0; b < m.size(); ++b) c(a, b) = cov(keep[a], keep[b]);
    }
    if (m.size() == 0) {
      rep.md_final.assign(static_cast<std::size_t>(final_truth.rows()), 0.0);
    } else {
      auto r = mahalanobis(X, m, c);
      rep.md_final = std::move(r.distance);
      rep.regularized = rep.regularized || r.regularized;
    }
  }
  for (Eigen::Index i = 0; i < final_truth.rows(); ++i) {
    auto cart = [&](const Mat& M) {
      SvamState s{M(i, 0), M(i, 1), M(i, 2), M(i, 3), M(i, 4), M(i, 5)};
      return svam_to_cart(s, sp);
    };
    const CartState a = cart(final_truth), b = cart(final_surrogate);
    rep.pos_err_km.push_back((a.pos - b.pos).norm() * sp.lu_km);
    rep.vel_err_kmps.push_back((a.vel - b.vel).norm() * sp.vu_kms());
  }
  return rep;
}

/// Moments of the output distribution from CUT nodes pushed through the
/// surrogate (nodes live in the unit box and are mapped through the model's
/// normalization).
inline MomentSet surrogate_moments(const SensitivityModel& m, const CutPointSet& cs,
                                   Standardize st = Standardize::lenient) {
  if (matching_family(cs.weighting) != m.basis.family)
    throw InvalidArgument("surrogate_moments: CUT weighting does not match model basis");
  const Mat params = scale_nodes(cs, m.norm.center, m.norm.half_width);
  const Mat y = eval_surrogate_batch(m, params);
  return central_moments(y, std::span<const double>(cs.weights.data(), cs.size()), 4, st);
}

}  // namespace svamuq
