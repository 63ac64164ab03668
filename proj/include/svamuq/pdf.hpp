#pragma once

// Analytical log-density propagation along flow-mapped collocation points.
//
// The density at t_k is exp(c_k . Phi(zeta_k(x))). Each step re-expresses
// c_k in the new normalization, fits the departure of the true log density at
// the propagated CUT nodes, sparsifies it with reweighted l1 and refits the
// surviving coefficients.

#include "svamuq/dynamics.hpp"
#include "svamuq/poly_basis.hpp"
#include "svamuq/propagation.hpp"
#include "svamuq/sparse.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace svamuq {

struct LogPdfModel {
  MultiIndexBasis basis;
  Normalization norm;
  Vec coeffs;
  double epoch = 0.0;
  std::vector<Eigen::Index> support;  // |c| >= delta_rs

  double log_density(const Vec& x, bool* outside = nullptr) const {
    return coeffs.dot(eval_basis(basis, norm.to_zeta(x), outside));
  }
};

/// Uniform density on center +/- half_width, as a constant-only model.
inline LogPdfModel uniform_box_model(const MultiIndexBasis& basis, const Vec& center,
                                     const Vec& half_width, double epoch = 0.0) {
  LogPdfModel m;
  m.basis = basis;
  m.norm = Normalization::from_box(center, half_width);
  m.coeffs = Vec::Zero(static_cast<Eigen::Index>(basis.size()));
  m.coeffs[0] = -(2.0 * half_width.array()).log().sum();
  m.epoch = epoch;
  m.support = {0};
  return m;
}

struct FlowSample {
  Vec x0;
  Vec x;
  double log_det = 0.0;  // log |det dx/dx0|
};

/// log p(x_k) = log p0(x0) - log |det dF/dx0|.
inline double true_log_pdf(double log_p0, const FlowSample& s) {
  if (!std::isfinite(s.log_det))
    throw NumericalError("true_log_pdf: zero or non-finite flow Jacobian determinant");
  return log_p0 - s.log_det;
}

/// A fixed set of seeds carried forward in time; advance() must be called
/// with non-decreasing times.
class FlowProvider {
 public:
  virtual ~FlowProvider() = default;
  virtual std::vector<FlowSample> advance(double t) = 0;
  virtual std::size_t size() const = 0;
};

class IdentityFlow : public FlowProvider {
 public:
  explicit IdentityFlow(Mat seeds) : seeds_(std::move(seeds)) {}
  std::vector<FlowSample> advance(double) override {
    std::vector<FlowSample> out;
    for (Eigen::Index i = 0; i < seeds_.rows(); ++i)
      out.push_back({seeds_.row(i).transpose(), seeds_.row(i).transpose(), 0.0});
    return out;
  }
  std::size_t size() const override { return static_cast<std::size_t>(seeds_.rows()); }

 private:
  Mat seeds_;
};

/// x(t) = M(t) x0 + v(t).
class LinearFlow : public FlowProvider {
 public:
  LinearFlow(Mat seeds, std::function<Mat(double)> m,
             std::function<Vec(double)> shift = nullptr)
      : seeds_(std::move(seeds)), m_(std::move(m)), shift_(std::move(shift)) {}
  std::vector<FlowSample> advance(double t) override {
    const Mat M = m_(t);
    const double ld = std::log(std::abs(M.determinant()));
    const Vec v = shift_ ? shift_(t) : Vec::Zero(M.rows());
    std::vector<FlowSample> out;
    for (Eigen::Index i = 0; i < seeds_.rows(); ++i) {
      const Vec x0 = seeds_.row(i).transpose();
      out.push_back({x0, M * x0 + v, ld});
    }
    return out;
  }
  std::size_t size() const override { return static_cast<std::size_t>(seeds_.rows()); }

 private:
  Mat seeds_;
  std::function<Mat(double)> m_;
  std::function<Vec(double)> shift_;
};

/// CR3BP flow over the five S-VAM coordinates at fixed Jacobi constant. Each
/// seed is propagated in Cartesian coordinates with its state transition
/// matrix; the S-VAM volume change follows from the Cartesian STM
/// determinant and the analytic transform determinants at both ends.
class SvamCr3bpFlow : public FlowProvider {
 public:
  SvamCr3bpFlow(Mat seeds, double c, double t0, SystemParams sp,
                PropagationOptions opt = {},
                JacobianMode mode = JacobianMode::finite_difference)
      : seeds_(std::move(seeds)), c_(c), t_(t0), sp_(sp), opt_(opt), mode_(mode) {
    if (seeds_.cols() != 5) throw InvalidArgument("SvamCr3bpFlow: seeds need 5 columns");
    const auto n = static_cast<std::size_t>(seeds_.rows());
    x_.resize(n);
    stm_.assign(n, Mat6::Identity());
    ld0_.resize(n);
    last_.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      const Vec5 s = seeds_.row(static_cast<Eigen::Index>(i)).transpose();
      const CartState cs = svam_to_cart(SvamState::from_coords(s, c_), sp_);
      x_[i] = cs.vector();
      ld0_[i] = svam_transform_log_abs_det(cs);
      last_[i] = s;
    }
  }

  std::vector<FlowSample> advance(double t) override {
    if (t < t_) throw InvalidArgument("SvamCr3bpFlow: time must not decrease");
    std::vector<FlowSample> out(x_.size());
    std::vector<double> ld(x_.size(), 0.0);
    parallel_for(x_.size(), [&](std::size_t i) {
      try {
        if (t > t_) {
          const StateWithStm r = propagate_with_stm(x_[i], t_, t, sp_, opt_.integrator,
                                                    mode_, stm_[i]);
          x_[i] = r.state;
          stm_[i] = r.stm;
        }
        const CartState cs = CartState::from_vector(x_[i]);
        SvamState s = cart_to_svam(cs, sp_);
        Vec5 q = s.coords();
        q[1] = unwrap_near(q[1], last_[i][1]);
        q[3] = unwrap_near(q[3], last_[i][3]);
        last_[i] = q;
        const double ld_stm = std::log(std::abs(stm_[i].determinant()));
        ld[i] = std::abs(ld_stm);
        out[i].x0 = seeds_.row(static_cast<Eigen::Index>(i)).transpose();
        out[i].x = q;
        out[i].log_det = svam_transform_log_abs_det(cs) + ld_stm - ld0_[i];
      } catch (const NumericalError& e) {
        throw NumericalError("flow seed " + std::to_string(i) + ": " + e.what());
      }
    });
    for (double v : ld) max_abs_log_det_stm_ = std::max(max_abs_log_det_stm_, v);
    t_ = t;
    return out;
  }

  std::size_t size() const override { return x_.size(); }
  /// Largest |log det STM| seen (zero for an exactly volume-preserving flow).
  double max_abs_log_det_stm() const { return max_abs_log_det_stm_; }

 private:
  Mat seeds_;
  double c_;
  double t_;
  SystemParams sp_;
  PropagationOptions opt_;
  JacobianMode mode_;
  std::vector<Vec6> x_;
  std::vector<Mat6> stm_;
  std::vector<double> ld0_;
  std::vector<Vec5> last_;
  double max_abs_log_det_stm_ = 0.0;
};

struct CollocationBatch {
  Mat states;  // collocation points at t_{k+1}
  Vec b;       // true log density minus previous model prediction
  Vec b_true;  // true log density
  Vec w;       // CUT weights
  Mat A;       // rows Phi^T(zeta(x))
  Normalization norm;
  Vec c_prev;  // previous coefficients in the new normalization
};

using LogDensityFn = std::function<double(const Vec&)>;

/// Assembles the departure system at the propagated samples. The new
/// normalization comes from the sample extents inflated by `inflation`
/// unless `norm` is given.
inline CollocationBatch build_collocation(const LogPdfModel& prev,
                                          const std::vector<FlowSample>& samples,
                                          std::span<const double> weights,
                                          const LogDensityFn& log_p0,
                                          const Normalization* norm = nullptr,
                                          double inflation = 1.05) {
  if (samples.size() != weights.size())
    throw InvalidArgument("build_collocation: samples/weights size mismatch");
  const auto n = static_cast<Eigen::Index>(samples.size());
  const Eigen::Index d = prev.basis.dim;
  CollocationBatch cb;
  cb.states.resize(n, d);
  cb.b_true.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& s = samples[static_cast<std::size_t>(i)];
    if (s.x.size() != d) throw InvalidArgument("build_collocation: sample dimension mismatch");
    cb.states.row(i) = s.x.transpose();
    cb.b_true[i] = true_log_pdf(log_p0(s.x0), s);
    if (!std::isfinite(cb.b_true[i]))
      throw NumericalError("build_collocation: non-finite target at node " + std::to_string(i));
  }
  cb.norm = norm ? *norm : Normalization::from_extents(cb.states, inflation);
  cb.c_prev = reexpress(prev.basis, prev.coeffs, prev.norm, cb.norm);
  cb.A = eval_basis_batch(prev.basis, cb.norm.to_zeta_rows(cb.states));
  cb.b = cb.b_true - cb.A * cb.c_prev;
  cb.w = Eigen::Map<const Vec>(weights.data(), n);
  return cb;
}

struct PdfStep {
  LogPdfModel model;
  Vec dc_ls;
  Vec dc_rs;
  std::size_t ls_nonzero = 0;
  std::size_t rs_nonzero = 0;
  int l1_iterations = 0;
  bool l1_converged = false;
  double training_error = 0.0;
  double feasibility = 0.0;  // ||W(A dc* - b)||
};

inline std::size_t count_nonzero(const Vec& v, double tol) {
  std::size_t n = 0;
  for (Eigen::Index i = 0; i < v.size(); ++i) n += std::abs(v[i]) >= tol;
  return n;
}

/// Mean |exp(B_hat - B) - 1|; exponent clamped at +/-700.
inline double relative_error(const Vec& log_model, const Vec& log_true,
                             bool* saturated = nullptr) {
  if (log_model.size() != log_true.size() || log_model.size() == 0)
    throw InvalidArgument("relative_error: size mismatch");
  double s = 0.0;
  bool sat = false;
  for (Eigen::Index i = 0; i < log_model.size(); ++i) {
    double e = log_model[i] - log_true[i];
    if (std::abs(e) > 700.0) {
      sat = true;
      e = std::clamp(e, -700.0, 700.0);
    }
    s += std::abs(std::expm1(e));
  }
  if (saturated) *saturated = sat;
  return s / static_cast<double>(log_model.size());
}

struct PdfValue {
  double density = 0.0;
  double log_density = 0.0;
  bool saturated = false;
  bool outside = false;  // Legendre argument outside [-1, 1]
};

inline PdfValue eval_pdf(const LogPdfModel& m, const Vec& x) {
  PdfValue v;
  v.log_density = m.log_density(x, &v.outside);
  double e = v.log_density;
  if (std::abs(e) > 700.0) {
    v.saturated = true;
    e = std::clamp(e, -700.0, 700.0);
  }
  v.density = std::exp(e);
  return v;
}

/// One epoch update from an assembled collocation batch.
inline PdfStep step_pdf(const LogPdfModel& prev, const CollocationBatch& cb, double epoch,
                        const SparseSolveConfig& cfg,
                        const BpdnSolver& inner = homotopy_bpdn) {
  PdfStep st;
  const LsResult ls = solve_weighted_ls(cb.A, cb.b, cb.w);
  st.dc_ls = ls.x;
  st.ls_nonzero = count_nonzero(ls.x, 1e-14);
  const WeightedL1Result l1 = solve_weighted_l1(cb.A, cb.b, cb.w, ls.x, cfg, inner);
  st.l1_iterations = l1.iterations;
  st.l1_converged = l1.converged;
  st.feasibility = l1.residual;
  Vec dc = Vec::Zero(ls.x.size());
  if (count_nonzero(l1.x, cfg.delta_rs) > 0) {
    const ReducedSparse rs = reduce_sparse(l1.x, cb.A, cb.b, cb.w, cfg.delta_rs);
    dc = rs.c;
    st.rs_nonzero = rs.support.size();
  }
  st.dc_rs = dc;
  st.model.basis = prev.basis;
  st.model.norm = cb.norm;
  st.model.coeffs = cb.c_prev + dc;
  st.model.epoch = epoch;
  for (Eigen::Index i = 0; i < st.model.coeffs.size(); ++i)
    if (std::abs(st.model.coeffs[i]) >= cfg.delta_rs) st.model.support.push_back(i);
  st.training_error = relative_error(cb.A * st.model.coeffs, cb.b_true);
  return st;
}

struct PdfTimelineEntry {
  double epoch = 0.0;
  std::size_t ls_nonzero = 0;
  std::size_t rs_nonzero = 0;
  std::size_t model_nonzero = 0;
  std::vector<Eigen::Index> support;  // of the RS departure
  Vec dc_rs;
  Vec dc_ls;
  double training_error = 0.0;
  double testing_error = std::numeric_limits<double>::quiet_NaN();
  std::size_t test_outside = 0;
  int l1_iterations = 0;
  bool l1_converged = false;
};

struct PdfRun {
  std::vector<PdfTimelineEntry> timeline;
  LogPdfModel final_model;
  double max_abs_log_det_stm = 0.0;
};

/// Drives step_pdf over `epochs` (all after the initial model's epoch).
/// When `test` is given its seeds are advanced alongside and scored.
inline PdfRun propagate_pdf(const LogPdfModel& initial, FlowProvider& collocation,
                            std::span<const double> weights, const LogDensityFn& log_p0,
                            std::span<const double> epochs, const SparseSolveConfig& cfg,
                            FlowProvider* test = nullptr,
                            const BpdnSolver& inner = homotopy_bpdn,
                            double inflation = 1.05) {
  PdfRun run;
  LogPdfModel model = initial;
  double t_prev = initial.epoch;
  for (double t : epochs) {
    if (!(t > t_prev)) throw InvalidArgument("propagate_pdf: epochs must increase");
    const auto samples = collocation.advance(t);
    const CollocationBatch cb =
        build_collocation(model, samples, weights, log_p0, nullptr, inflation);
    PdfStep st = step_pdf(model, cb, t, cfg, inner);
    PdfTimelineEntry e;
    e.epoch = t;
    e.ls_nonzero = st.ls_nonzero;
    e.rs_nonzero = st.rs_nonzero;
    e.model_nonzero = st.model.support.size();
    for (Eigen::Index i = 0; i < st.dc_rs.size(); ++i)
      if (st.dc_rs[i] != 0.0) e.support.push_back(i);
    e.dc_rs = st.dc_rs;
    e.dc_ls = st.dc_ls;
    e.training_error = st.training_error;
    e.l1_iterations = st.l1_iterations;
    e.l1_converged = st.l1_converged;
    if (test) {
      const auto ts = test->advance(t);
      Vec bm(static_cast<Eigen::Index>(ts.size())), bt(bm.size());
      for (std::size_t i = 0; i < ts.size(); ++i) {
        bool out = false;
        bm[static_cast<Eigen::Index>(i)] = st.model.log_density(ts[i].x, &out);
        bt[static_cast<Eigen::Index>(i)] = true_log_pdf(log_p0(ts[i].x0), ts[i]);
        e.test_outside += out;
      }
      e.testing_error = relative_error(bm, bt);
    }
    run.timeline.push_back(std::move(e));
    model = std::move(st.model);
    t_prev = t;
  }
  run.final_model = model;
  if (auto* f = dynamic_cast<SvamCr3bpFlow*>(&collocation))
    run.max_abs_log_det_stm = f->max_abs_log_det_stm();
  return run;
}

}  // namespace svamuq
