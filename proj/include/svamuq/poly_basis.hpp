#pragma once

// Total-degree multi-index bases of tensor-product orthogonal polynomials.

#include "svamuq/core.hpp"
#include "svamuq/cut.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace svamuq {

enum class PolyFamily { legendre, hermite_probabilist };

inline const char* to_string(PolyFamily f) {
  return f == PolyFamily::legendre ? "legendre" : "hermite_probabilist";
}

inline PolyFamily poly_family_from_string(const std::string& s) {
  if (s == "legendre") return PolyFamily::legendre;
  if (s == "hermite_probabilist" || s == "hermite") return PolyFamily::hermite_probabilist;
  throw InvalidArgument("unknown polynomial family '" + s + "'");
}

/// Family orthogonal under a given weighting.
inline PolyFamily matching_family(Weighting w) {
  return w == Weighting::uniform_box ? PolyFamily::legendre : PolyFamily::hermite_probabilist;
}

struct MultiIndexBasis {
  int dim = 0;
  int max_degree = 0;
  PolyFamily family = PolyFamily::legendre;
  std::vector<std::vector<int>> indices;
  // Row-major offsets j * (max_degree + 1) + alpha_j into a per-coordinate
  // value table, dim entries per index.
  std::vector<int> table_offsets;

  std::size_t size() const { return indices.size(); }
  int degree(std::size_t k) const {
    int d = 0;
    for (int v : indices[k]) d += v;
    return d;
  }

  /// Position of a multi-index, or -1.
  long find(const std::vector<int>& alpha) const {
    auto it = std::lower_bound(indices.begin(), indices.end(), alpha, graded_less);
    if (it != indices.end() && *it == alpha) return it - indices.begin();
    return -1;
  }

  /// Graded order: total degree ascending, then lexicographically descending.
  static bool graded_less(const std::vector<int>& a, const std::vector<int>& b) {
    int da = 0, db = 0;
    for (int v : a) da += v;
    for (int v : b) db += v;
    if (da != db) return da < db;
    return a > b;
  }
};

inline double basis_count(int dim, int max_degree) {
  return detail::binom(dim + max_degree, max_degree);
}

inline MultiIndexBasis build_basis(int dim, int max_degree, PolyFamily family,
                                   std::size_t cap = 100000) {
  if (dim < 1) throw InvalidArgument("build_basis: dim must be >= 1");
  if (max_degree < 0) throw InvalidArgument("build_basis: max_degree must be >= 0");
  if (basis_count(dim, max_degree) > static_cast<double>(cap))
    throw InvalidArgument("build_basis: basis size exceeds cap of " + std::to_string(cap));
  MultiIndexBasis b;
  b.dim = dim;
  b.max_degree = max_degree;
  b.family = family;
  std::vector<int> cur(dim, 0);
  // Within a degree, fill coordinates left to right with the largest
  // remaining exponent first; this yields descending lexicographic order.
  auto rec = [&](auto&& self, int j, int left) -> void {
    if (j == dim - 1) {
      cur[j] = left;
      b.indices.push_back(cur);
      return;
    }
    for (int k = left; k >= 0; --k) {
      cur[j] = k;
      self(self, j + 1, left - k);
    }
  };
  for (int d = 0; d <= max_degree; ++d) rec(rec, 0, d);
  b.table_offsets.reserve(b.indices.size() * static_cast<std::size_t>(dim));
  for (const auto& a : b.indices)
    for (int j = 0; j < dim; ++j) b.table_offsets.push_back(j * (max_degree + 1) + a[j]);
  return b;
}

/// Univariate values p_0(z) .. p_n(z) by three-term recurrence.
inline void univariate_values(PolyFamily f, double z, int n, double* out) {
  out[0] = 1.0;
  if (n == 0) return;
  out[1] = z;
  for (int k = 1; k < n; ++k) {
    out[k + 1] = f == PolyFamily::legendre
                     ? ((2.0 * k + 1.0) * z * out[k] - k * out[k - 1]) / (k + 1.0)
                     : z * out[k] - k * out[k - 1];
  }
}

/// Squared norm of p_k under the matching probability measure.
inline double univariate_norm(PolyFamily f, int k) {
  if (f == PolyFamily::legendre) return 1.0 / (2.0 * k + 1.0);
  double r = 1.0;
  for (int i = 2; i <= k; ++i) r *= i;
  return r;
}

inline double basis_norm(const MultiIndexBasis& b, std::size_t i) {
  double r = 1.0;
  for (int k : b.indices[i]) r *= univariate_norm(b.family, k);
  return r;
}

/// Phi(zeta). Sets *outside when a Legendre argument leaves [-1, 1].
inline Vec eval_basis(const MultiIndexBasis& b, const Vec& zeta, bool* outside = nullptr) {
  if (zeta.size() != b.dim) throw InvalidArgument("eval_basis: dimension mismatch");
  const int n = b.max_degree;
  std::vector<double> tab(static_cast<std::size_t>(b.dim) * (n + 1));
  bool out = false;
  for (int j = 0; j < b.dim; ++j) {
    univariate_values(b.family, zeta[j], n, tab.data() + j * (n + 1));
    if (b.family == PolyFamily::legendre && std::abs(zeta[j]) > 1.0) out = true;
  }
  if (outside) *outside = out;
  Vec phi(static_cast<Eigen::Index>(b.size()));
  for (std::size_t i = 0; i < b.size(); ++i) {
    double p = 1.0;
    const auto& a = b.indices[i];
    for (int j = 0; j < b.dim; ++j)
      if (a[j]) p *= tab[j * (n + 1) + a[j]];
    phi[static_cast<Eigen::Index>(i)] = p;
  }
  return phi;
}

/// Rows of the result are Phi(zeta_i)^T for each row of `zetas`.
inline Mat eval_basis_batch(const MultiIndexBasis& b, const Mat& zetas,
                            std::size_t* outside_count = nullptr) {
  Mat out(zetas.rows(), static_cast<Eigen::Index>(b.size()));
  std::size_t cnt = 0;
  for (Eigen::Index i = 0; i < zetas.rows(); ++i) {
    bool o = false;
    out.row(i) = eval_basis(b, zetas.row(i).transpose(), &o).transpose();
    cnt += o;
  }
  if (outside_count) *outside_count = cnt;
  return out;
}

/// Affine map zeta = (x - center) / half_width.
struct Normalization {
  Vec center;
  Vec half_width;

  int dim() const { return static_cast<int>(center.size()); }

  void validate() const {
    if (center.size() != half_width.size() || center.size() == 0)
      throw InvalidArgument("Normalization: size mismatch");
    for (Eigen::Index i = 0; i < half_width.size(); ++i)
      if (!(half_width[i] > 0.0) || !std::isfinite(half_width[i]))
        throw InvalidArgument("Normalization: half_width must be positive");
  }

  Vec to_zeta(const Vec& x) const {
    return ((x - center).array() / half_width.array()).matrix();
  }
  Vec from_zeta(const Vec& z) const {
    return (center.array() + half_width.array() * z.array()).matrix();
  }
  Mat to_zeta_rows(const Mat& X) const {
    Mat Z = X;
    for (Eigen::Index i = 0; i < X.rows(); ++i) Z.row(i) = to_zeta(X.row(i).transpose());
    return Z;
  }

  static Normalization from_box(const Vec& center, const Vec& half_width) {
    Normalization n{center, half_width};
    n.validate();
    return n;
  }

  /// Componentwise min/max of rows, half-widths inflated by `inflation`.
  static Normalization from_extents(const Mat& points, double inflation = 1.05) {
    if (points.rows() == 0) throw InvalidArgument("Normalization: empty point cloud");
    const Vec lo = points.colwise().minCoeff().transpose();
    const Vec hi = points.colwise().maxCoeff().transpose();
    Normalization n{0.5 * (lo + hi), 0.5 * inflation * (hi - lo)};
    n.validate();
    return n;
  }
};

struct GramReport {
  Mat gram;
  double max_offdiag = 0.0;
  bool diagonal = false;  // max_offdiag < 1e-12
};

/// Gram matrix of the basis under a discrete weighted measure on zeta points.
inline GramReport normal_matrix(const MultiIndexBasis& b, const Mat& zetas,
                                std::span<const double> weights) {
  if (static_cast<Eigen::Index>(weights.size()) != zetas.rows())
    throw InvalidArgument("normal_matrix: weights/points size mismatch");
  const Mat P = eval_basis_batch(b, zetas);
  const Eigen::Map<const Vec> w(weights.data(), static_cast<Eigen::Index>(weights.size()));
  GramReport r;
  r.gram = P.transpose() * w.asDiagonal() * P;
  r.gram = 0.5 * (r.gram + r.gram.transpose()).eval();
  for (Eigen::Index i = 0; i < r.gram.rows(); ++i)
    for (Eigen::Index j = 0; j < r.gram.cols(); ++j)
      if (i != j) r.max_offdiag = std::max(r.max_offdiag, std::abs(r.gram(i, j)));
  r.diagonal = r.max_offdiag < 1e-12;
  return r;
}

/// Gram matrix over a CUT set whose nodes are already zeta coordinates
/// (optionally mapped through `norm` when the node rows are physical).
inline GramReport normal_matrix(const MultiIndexBasis& b, const CutPointSet& cs,
                                const Normalization* norm = nullptr) {
  if (matching_family(cs.weighting) != b.family)
    throw InvalidArgument("normal_matrix: basis family does not match CUT weighting");
  if (cs.dim != b.dim) throw InvalidArgument("normal_matrix: dimension mismatch");
  const Mat Z = norm ? norm->to_zeta_rows(cs.nodes) : cs.nodes;
  return normal_matrix(b, Z, std::span<const double>(cs.weights.data(), cs.size()));
}

/// U(l, m): coefficients with p_l(s*z + t) = sum_m U(l, m) p_m(z).
inline Mat affine_univariate(PolyFamily f, int n, double s, double t) {
  Mat U = Mat::Zero(n + 1, n + 1);
  U(0, 0) = 1.0;
  if (n == 0) return U;
  // Multiplication by z in the p-basis.
  auto times_z = [&](const Vec& u) {
    Vec r = Vec::Zero(n + 1);
    for (int m = 0; m <= n; ++m) {
      if (u[m] == 0.0) continue;
      if (f == PolyFamily::legendre) {
        if (m + 1 <= n) r[m + 1] += u[m] * (m + 1.0) / (2.0 * m + 1.0);
        if (m >= 1) r[m - 1] += u[m] * m / (2.0 * m + 1.0);
      } else {
        if (m + 1 <= n) r[m + 1] += u[m];
        if (m >= 1) r[m - 1] += u[m] * m;
      }
    }
    return r;
  };
  auto times_y = [&](const Vec& u) { return Vec(s * times_z(u) + t * u); };
  U.row(1) = times_y(U.row(0).transpose()).transpose();
  for (int l = 1; l < n; ++l) {
    const Vec yl = times_y(U.row(l).transpose());
    if (f == PolyFamily::legendre)
      U.row(l + 1) = (((2.0 * l + 1.0) * yl - l * U.row(l - 1).transpose()) / (l + 1.0)).transpose();
    else
      U.row(l + 1) = (yl - l * U.row(l - 1).transpose()).transpose();
  }
  return U;
}

/// Re-expresses coefficients c (over basis b with normalization `from`) in the
/// same basis under normalization `to`, exactly: sum c_a Phi_a(from(x)) equals
/// sum c'_a Phi_a(to(x)) for every x.
inline Vec reexpress(const MultiIndexBasis& b, const Vec& c, const Normalization& from,
                     const Normalization& to) {
  if (c.size() != static_cast<Eigen::Index>(b.size()))
    throw InvalidArgument("reexpress: coefficient size mismatch");
  std::vector<Mat> U(b.dim);
  for (int j = 0; j < b.dim; ++j) {
    const double s = to.half_width[j] / from.half_width[j];
    const double t = (to.center[j] - from.center[j]) / from.half_width[j];
    U[j] = affine_univariate(b.family, b.max_degree, s, t);
  }
  Vec out = Vec::Zero(c.size());
  std::vector<int> beta(b.dim);
  for (std::size_t i = 0; i < b.size(); ++i) {
    const double ci = c[static_cast<Eigen::Index>(i)];
    if (ci == 0.0) continue;
    const auto& alpha = b.indices[i];
    // Enumerate beta <= alpha componentwise.
    std::fill(beta.begin(), beta.end(), 0);
    while (true) {
      double prod = ci;
      for (int j = 0; j < b.dim && prod != 0.0; ++j) prod *= U[j](alpha[j], beta[j]);
      if (prod != 0.0) out[b.find(beta)] += prod;
      int j = 0;
      while (j < b.dim && beta[j] == alpha[j]) beta[j++] = 0;
      if (j == b.dim) break;
      ++beta[j];
    }
  }
  return out;
}

}  // namespace svamuq
