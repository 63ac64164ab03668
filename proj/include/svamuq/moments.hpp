#pragma once

// Weighted central moments through fourth order, stored as fully symmetric
// packed tensors (one value per sorted multi-index).

#include "svamuq/core.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <vector>

namespace svamuq {

class SymmetricTensor {
 public:
  SymmetricTensor() = default;
  SymmetricTensor(int dim, int order) : dim_(dim), order_(order) {
    if (dim < 1 || order < 1) throw InvalidArgument("SymmetricTensor: bad shape");
    std::size_t full = 1;
    for (int k = 0; k < order; ++k) full *= static_cast<std::size_t>(dim);
    full_to_packed_.assign(full, -1);
    std::vector<int> idx(order, 0);
    // Enumerate non-decreasing tuples in lexicographic order.
    while (true) {
      packed_.push_back(idx);
      if (!next_sorted(idx)) break;
    }
    values_.assign(packed_.size(), 0.0);
    std::vector<int> t(order, 0);
    for (std::size_t f = 0; f < full; ++f) {
      std::size_t rem = f;
      for (int k = order - 1; k >= 0; --k) {
        t[k] = static_cast<int>(rem % dim);
        rem /= dim;
      }
      std::vector<int> s = t;
      std::sort(s.begin(), s.end());
      full_to_packed_[f] = static_cast<int>(
          std::lower_bound(packed_.begin(), packed_.end(), s) - packed_.begin());
    }
  }

  int dim() const { return dim_; }
  int order() const { return order_; }
  std::size_t packed_size() const { return values_.size(); }
  const std::vector<int>& packed_index(std::size_t p) const { return packed_[p]; }
  double packed_value(std::size_t p) const { return values_[p]; }
  double& packed_value(std::size_t p) { return values_[p]; }

  double operator()(std::span<const int> idx) const {
    return values_[full_to_packed_[flat(idx)]];
  }
  double operator()(std::initializer_list<int> idx) const {
    return (*this)(std::span<const int>(idx.begin(), idx.size()));
  }

  /// Number of full-tensor entries sharing packed entry p.
  double multiplicity(std::size_t p) const {
    const auto& ix = packed_[p];
    double m = std::tgamma(order_ + 1.0);
    std::size_t i = 0;
    while (i < ix.size()) {
      std::size_t j = i;
      while (j < ix.size() && ix[j] == ix[i]) ++j;
      m /= std::tgamma(static_cast<double>(j - i) + 1.0);
      i = j;
    }
    return m;
  }

  /// Frobenius norm of the full (unpacked) tensor.
  double norm() const {
    double s = 0.0;
    for (std::size_t p = 0; p < values_.size(); ++p)
      s += multiplicity(p) * values_[p] * values_[p];
    return std::sqrt(s);
  }

  SymmetricTensor operator-(const SymmetricTensor& o) const {
    if (o.dim_ != dim_ || o.order_ != order_)
      throw InvalidArgument("SymmetricTensor: shape mismatch");
    SymmetricTensor r = *this;
    for (std::size_t p = 0; p < values_.size(); ++p) r.values_[p] -= o.values_[p];
    return r;
  }

 private:
  bool next_sorted(std::vector<int>& idx) const {
    int k = order_ - 1;
    while (k >= 0 && idx[k] == dim_ - 1) --k;
    if (k < 0) return false;
    ++idx[k];
    for (int j = k + 1; j < order_; ++j) idx[j] = idx[k];
    return true;
  }
  std::size_t flat(std::span<const int> idx) const {
    if (static_cast<int>(idx.size()) != order_)
      throw InvalidArgument("SymmetricTensor: index rank mismatch");
    std::size_t f = 0;
    for (int i : idx) {
      if (i < 0 || i >= dim_) throw InvalidArgument("SymmetricTensor: index out of range");
      f = f * dim_ + static_cast<std::size_t>(i);
    }
    return f;
  }

  int dim_ = 0;
  int order_ = 0;
  std::vector<std::vector<int>> packed_;
  std::vector<double> values_;
  std::vector<int> full_to_packed_;
};

struct MomentSet {
  int max_order = 0;
  Vec mean;
  Mat covariance;
  SymmetricTensor skewness;  // third central moment tensor
  SymmetricTensor kurtosis;  // fourth central moment tensor
  Vec variance;
  Vec std_skewness;  // mu3 / sigma^3 per coordinate
  Vec std_kurtosis;  // mu4 / sigma^4 per coordinate
  bool standardized = false;
};

/// Weighted central moments of a point cloud (rows are points).
///
enum class Standardize { none, strict, lenient };

/// True when a coordinate's spread is indistinguishable from roundoff in its
/// mean (constant coordinates such as a held Jacobi constant).
inline bool degenerate_variance(double var, double mean) {
  return var < 1e-300 || std::sqrt(var) <= 1e-12 * std::abs(mean);
}

/// Standardized univariate skewness/kurtosis need max_order 4. With `strict`
/// a degenerate coordinate variance raises; `lenient` reports NaN there.
inline MomentSet central_moments(const Mat& points, std::span<const double> weights,
                                 int max_order = 4,
                                 Standardize standardize = Standardize::strict) {
  const Eigen::Index n = points.rows(), d = points.cols();
  if (static_cast<Eigen::Index>(weights.size()) != n || n == 0)
    throw InvalidArgument("central_moments: weights/points size mismatch");
  if (max_order < 1 || max_order > 4)
    throw InvalidArgument("central_moments: max_order must be in [1, 4]");
  double wsum = 0.0;
  for (double w : weights) wsum += w;
  if (std::abs(wsum - 1.0) > 1e-10)
    throw InvalidArgument("central_moments: weights must sum to 1");

  MomentSet m;
  m.max_order = max_order;
  // Accumulate about the first point so a point mass is reproduced exactly.
  const Vec shift = points.row(0).transpose();
  Vec mshift = Vec::Zero(d);
  for (Eigen::Index i = 0; i < n; ++i)
    mshift += weights[i] * (points.row(i).transpose() - shift);
  m.mean = shift + mshift / wsum;
  const Mat dev = points.rowwise() - m.mean.transpose();
  m.covariance = Mat::Zero(d, d);
  m.variance = Vec::Zero(d);
  if (max_order >= 2) {
    for (Eigen::Index i = 0; i < n; ++i)
      m.covariance.noalias() += weights[i] * dev.row(i).transpose() * dev.row(i);
    m.variance = m.covariance.diagonal();
  }
  auto fill = [&](SymmetricTensor& t) {
    for (std::size_t p = 0; p < t.packed_size(); ++p) {
      const auto& ix = t.packed_index(p);
      double s = 0.0;
      for (Eigen::Index i = 0; i < n; ++i) {
        double prod = weights[i];
        for (int k : ix) prod *= dev(i, k);
        s += prod;
      }
      t.packed_value(p) = s;
    }
  };
  if (max_order >= 3) {
    m.skewness = SymmetricTensor(static_cast<int>(d), 3);
    fill(m.skewness);
  }
  if (max_order >= 4) {
    m.kurtosis = SymmetricTensor(static_cast<int>(d), 4);
    fill(m.kurtosis);
  }
  if (standardize != Standardize::none && max_order == 4) {
    m.std_skewness = Vec::Zero(d);
    m.std_kurtosis = Vec::Zero(d);
    for (Eigen::Index i = 0; i < d; ++i) {
      const double var = m.variance[i];
      if (degenerate_variance(var, m.mean[i])) {
        if (standardize == Standardize::lenient) {
          m.std_skewness[i] = m.std_kurtosis[i] = std::numeric_limits<double>::quiet_NaN();
          continue;
        }
        throw NumericalError("central_moments: degenerate variance in coordinate " +
                             std::to_string(i));
      }
      const int ii = static_cast<int>(i);
      m.std_skewness[i] = m.skewness({ii, ii, ii}) / std::pow(var, 1.5);
      m.std_kurtosis[i] = m.kurtosis({ii, ii, ii, ii}) / (var * var);
    }
    m.standardized = true;
  }
  return m;
}

/// Equal-weight convenience overload (Monte Carlo clouds).
inline MomentSet central_moments(const Mat& points, int max_order = 4,
                                 Standardize standardize = Standardize::strict) {
  std::vector<double> w(static_cast<std::size_t>(points.rows()),
                        1.0 / static_cast<double>(points.rows()));
  return central_moments(points, w, max_order, standardize);
}

}  // namespace svamuq
