#include "svamuq/cut.hpp"
#include "svamuq/pdf.hpp"
#include "svamuq/sampling.hpp"
#include "svamuq/sparse.hpp"

#include <gtest/gtest.h>

#include <Eigen/Cholesky>

#include <algorithm>
#include <cmath>

using namespace svamuq;

namespace {

Mat gaussian_design(Eigen::Index m, Eigen::Index n, std::uint64_t seed) {
  Rng rng(seed);
  Mat A(m, n);
  for (Eigen::Index i = 0; i < A.size(); ++i) A(i) = rng.normal();
  A.colwise().normalize();
  return A;
}

struct Planted {
  Vec x;
  std::vector<Eigen::Index> support;
};

Planted plant(Eigen::Index n, int k, std::uint64_t seed) {
  Rng rng(seed);
  Planted p{Vec::Zero(n), {}};
  while (static_cast<int>(p.support.size()) < k) {
    const auto j = static_cast<Eigen::Index>(rng.next_u64() % static_cast<std::uint64_t>(n));
    if (std::find(p.support.begin(), p.support.end(), j) != p.support.end()) continue;
    p.support.push_back(j);
    p.x[j] = (rng.uniform01() < 0.5 ? -1.0 : 1.0) * rng.uniform(0.5, 1.5);
  }
  std::sort(p.support.begin(), p.support.end());
  return p;
}

}  // namespace

TEST(WeightedLs, MatchesNormalEquations) {
  Rng rng(1);
  const Mat A = gaussian_design(80, 20, 2);
  Vec b(80), w(80);
  for (int i = 0; i < 80; ++i) {
    b[i] = rng.normal();
    w[i] = rng.uniform(0.1, 2.0);
  }
  const LsResult r = solve_weighted_ls(A, b, w);
  const Mat N = A.transpose() * w.asDiagonal() * A;
  const Vec x = N.llt().solve(A.transpose() * w.asDiagonal() * b);
  EXPECT_LT((r.x - x).cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_FALSE(r.rank_deficient);
}

TEST(WeightedLs, SquareAndNullTarget) {
  const Mat A = gaussian_design(10, 10, 3);
  const Vec x = Vec::LinSpaced(10, -1, 1);
  const LsResult r = solve_weighted_ls(A, A * x, Vec::Ones(10));
  EXPECT_LT((r.x - x).norm(), 1e-10);
  EXPECT_LT(r.residual, 1e-12);
  EXPECT_EQ(solve_weighted_ls(A, Vec::Zero(10), Vec::Ones(10)).x.norm(), 0.0);
}

TEST(WeightedLs, ReportsRankDeficiency) {
  Mat A = gaussian_design(30, 5, 4);
  A.col(4) = A.col(0) + A.col(1);
  const LsResult r = solve_weighted_ls(A, Vec::Ones(30), Vec::Ones(30));
  EXPECT_TRUE(r.rank_deficient);
  EXPECT_EQ(r.rank, 4);
}

TEST(Bpdn, HomotopyKktAndFeasibility) {
  const Mat A = gaussian_design(60, 150, 5);
  Rng rng(6);
  Vec b(60);
  for (int i = 0; i < 60; ++i) b[i] = rng.normal();
  const double eps = 0.3 * b.norm();
  const Vec y = homotopy_bpdn(A, b, eps);
  const BpdnKkt k = check_bpdn_kkt(A, b, y);
  EXPECT_LE(k.residual, eps * (1 + 1e-9));
  EXPECT_GE(k.residual, eps * (1 - 1e-9));
  EXPECT_LT(k.stationarity, 1e-8);
}

TEST(Bpdn, HomotopyAndChambollePockAgree) {
  const Mat A = gaussian_design(40, 90, 7);
  Rng rng(8);
  Vec b(40);
  for (int i = 0; i < 40; ++i) b[i] = rng.normal();
  const double eps = 0.2 * b.norm();
  const Vec yh = homotopy_bpdn(A, b, eps);
  const Vec yc = chambolle_pock_bpdn()(A, b, eps, Vec());
  EXPECT_LE((A * yc - b).norm(), eps * (1 + 1e-9));
  EXPECT_NEAR(yh.lpNorm<1>(), yc.lpNorm<1>(), 1e-4 * yh.lpNorm<1>());
}

TEST(Bpdn, ZeroIsOptimalWhenFeasible) {
  const Mat A = gaussian_design(20, 40, 9);
  const Vec b = Vec::Constant(20, 1e-3);
  EXPECT_EQ(homotopy_bpdn(A, b, b.norm()).norm(), 0.0);
}

TEST(WeightedL1, OneSparseTruth) {
  const Mat A = gaussian_design(100, 300, 10);
  const Vec b = 0.7 * A.col(42);
  const Vec w = Vec::Ones(100);
  const SparseSolveConfig cfg;
  const WeightedL1Result r =
      solve_weighted_l1(A, b, w, solve_weighted_ls(A, b, w).x, cfg);
  for (Eigen::Index i = 0; i < r.x.size(); ++i)
    if (i != 42) EXPECT_LT(std::abs(r.x[i]), 1e-8);
  // Shrinkage is bounded by eps for a unit column.
  EXPECT_NEAR(r.x[42], 0.7, 1.01e-6);
}

TEST(WeightedL1, OriginFeasible) {
  const Mat A = gaussian_design(30, 60, 11);
  const Vec b = Vec::Constant(30, 1e-8);
  SparseSolveConfig cfg;
  const WeightedL1Result r = solve_weighted_l1(A, b, Vec::Ones(30), Vec::Zero(60), cfg);
  EXPECT_EQ(r.x.norm(), 0.0);
}

TEST(WeightedL1, InfeasibleEpsilon) {
  const Mat A = gaussian_design(50, 5, 12);
  Rng rng(13);
  Vec b(50);
  for (int i = 0; i < 50; ++i) b[i] = rng.normal();
  const Vec w = Vec::Ones(50);
  EXPECT_THROW(solve_weighted_l1(A, b, w, solve_weighted_ls(A, b, w).x, SparseSolveConfig{}),
               InfeasibleError);
}

// Planted 5-sparse vector in a 455 x 1287 design, followed by the
// reduced-sparse refit.
TEST(WeightedL1, PlantedRecoveryAndRefit) {
  const Mat A = gaussian_design(455, 1287, 14);
  const Planted p = plant(1287, 5, 15);
  const Vec b = A * p.x;
  const Vec w = Vec::Constant(455, 1.0 / 455);
  const SparseSolveConfig cfg;
  const WeightedL1Result r = solve_weighted_l1(A, b, w, solve_weighted_ls(A, b, w).x, cfg);
  EXPECT_TRUE(r.converged);
  EXPECT_LE(r.residual, cfg.epsilon + 1e-10);
  EXPECT_LT((r.x - p.x).cwiseAbs().maxCoeff(), 1e-6 * std::sqrt(455.0));
  const ReducedSparse rs = reduce_sparse(r.x, A, b, w, cfg.delta_rs);
  EXPECT_EQ(rs.support, p.support);
  EXPECT_LT((rs.c - p.x).cwiseAbs().maxCoeff(), 1e-8);
}

// At a fixed K the new iterate never has a larger weighted norm than the
// previous one, which is feasible for the same problem.
TEST(WeightedL1, ObjectiveNonIncreasingAtFixedK) {
  const Mat A = gaussian_design(120, 300, 16);
  const Planted p = plant(300, 8, 17);
  Rng rng(18);
  Vec b = A * p.x;
  for (int i = 0; i < 120; ++i) b[i] += 1e-4 * rng.normal();
  const Vec w = Vec::Ones(120);
  SparseSolveConfig cfg;
  cfg.epsilon = 2e-3;
  const WeightedL1Result r = solve_weighted_l1(A, b, w, solve_weighted_ls(A, b, w).x, cfg);
  ASSERT_GE(r.iterations, 2);
  for (std::size_t t = 0; t < r.objective.size(); ++t)
    EXPECT_LE(r.objective[t], r.objective_previous[t] + 1e-10) << "iteration " << t;
  EXPECT_LE(r.residual, cfg.epsilon + 1e-10);
}

TEST(WeightedL1, UniformPenaltyIsTheDefault) {
  const Mat A = gaussian_design(100, 250, 19);
  const Planted p = plant(250, 4, 20);
  const Vec b = A * p.x;
  const Vec w = Vec::Ones(100);
  const Vec x0 = solve_weighted_ls(A, b, w).x;
  SparseSolveConfig a, c;
  c.penalty = Vec::Ones(250);
  EXPECT_EQ((solve_weighted_l1(A, b, w, x0, a).x - solve_weighted_l1(A, b, w, x0, c).x).norm(), 0.0);
  c.penalty[3] = 0.0;
  EXPECT_THROW(solve_weighted_l1(A, b, w, x0, c), InvalidArgument);
  c.penalty = Vec::Ones(10);
  EXPECT_THROW(solve_weighted_l1(A, b, w, x0, c), InvalidArgument);
}

TEST(ReduceSparse, ConstantOnlyAndEmpty) {
  const Mat A = gaussian_design(20, 10, 21);
  Vec x = Vec::Zero(10);
  x[0] = 2.0;
  x[3] = 1e-7;
  const ReducedSparse rs = reduce_sparse(x, A, A * x, Vec::Ones(20), 1e-5);
  ASSERT_EQ(rs.support.size(), 1u);
  EXPECT_EQ(rs.support[0], 0);
  EXPECT_THROW(reduce_sparse(Vec::Zero(10), A, Vec::Zero(20), Vec::Ones(20), 1e-5),
               NumericalError);
}

TEST(SparseConfig, Validation) {
  SparseSolveConfig c;
  EXPECT_NO_THROW(c.validate());
  c.eta = 0.0;
  EXPECT_THROW(c.validate(), InvalidArgument);
}

TEST(Pdf, TrueLogPdf) {
  FlowSample s{Vec::Zero(1), Vec::Zero(1), 0.0};
  EXPECT_EQ(true_log_pdf(-1.5, s), -1.5);
  s.log_det = std::log(2.0);
  EXPECT_NEAR(true_log_pdf(-1.5, s), -1.5 - std::log(2.0), 1e-15);
  s.log_det = -std::numeric_limits<double>::infinity();
  EXPECT_THROW(true_log_pdf(0.0, s), NumericalError);
}

TEST(Pdf, IdentityFlowIsStationary) {
  const auto basis = build_basis(2, 4, PolyFamily::legendre);
  const CutPointSet cs = generate_cut(2, 8, Weighting::uniform_box);
  const LogPdfModel m0 = uniform_box_model(basis, Vec::Zero(2), Vec::Ones(2));
  IdentityFlow flow(cs.nodes);
  const LogDensityFn p0 = [](const Vec&) { return -std::log(4.0); };
  const Normalization same = m0.norm;
  const CollocationBatch cb = build_collocation(
      m0, flow.advance(1.0), std::span<const double>(cs.weights.data(), cs.size()), p0, &same);
  EXPECT_LT(cb.b.cwiseAbs().maxCoeff(), 1e-14);
  for (Eigen::Index i = 0; i < cb.b_true.size(); ++i) EXPECT_EQ(cb.b_true[i], -std::log(4.0));
  const PdfStep st = step_pdf(m0, cb, 1.0, SparseSolveConfig{});
  EXPECT_LT((st.model.coeffs - m0.coeffs).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_EQ(st.rs_nonzero, 0u);
}

// x = 2 x0 with x0 ~ N(0, 1): log p(x) = log N(x; 0, 4).
TEST(Pdf, LinearGaussianTransport) {
  const auto basis = build_basis(1, 2, PolyFamily::legendre);
  const CutPointSet cs = generate_cut(1, 8, Weighting::gaussian_standard);
  LogPdfModel m0;
  m0.basis = basis;
  m0.norm = Normalization::from_box(Vec::Zero(1), Vec::Constant(1, 4.0));
  m0.coeffs = Vec(3);
  // -x^2/2 with x = 4 zeta and zeta^2 = (2 P2 + 1) / 3.
  m0.coeffs << -0.5 * std::log(2 * kPi) - 8.0 / 3.0, 0.0, -16.0 / 3.0;
  auto lognorm = [](double x, double var) {
    return -0.5 * std::log(2 * kPi * var) - 0.5 * x * x / var;
  };
  for (double x : {-3.0, -0.4, 1.7}) {
    Vec v(1);
    v << x;
    ASSERT_NEAR(m0.log_density(v), lognorm(x, 1.0), 1e-13);
  }
  LinearFlow flow(cs.nodes, [](double) { return Mat::Constant(1, 1, 2.0); });
  const LogDensityFn p0 = [&](const Vec& x0) { return lognorm(x0[0], 1.0); };
  const CollocationBatch cb = build_collocation(
      m0, flow.advance(1.0), std::span<const double>(cs.weights.data(), cs.size()), p0);
  for (Eigen::Index j = 0; j < cb.b.size(); ++j) {
    const double x = cb.states(j, 0);
    EXPECT_NEAR(cb.b[j], 3.0 * x * x / 8.0 - std::log(2.0), 1e-12);
  }
  const PdfStep st = step_pdf(m0, cb, 1.0, SparseSolveConfig{});
  for (double x : {-4.0, -1.1, 0.0, 2.5, 5.0}) {
    Vec v(1);
    v << x;
    EXPECT_NEAR(st.model.log_density(v), lognorm(x, 4.0), 1e-8);
  }
  EXPECT_LE(st.training_error, 1e-6);
}

// A rotated Gaussian stays Gaussian: every step's departure is quadratic.
TEST(Pdf, RotatedGaussianStaysQuadratic) {
  const auto basis = build_basis(2, 4, PolyFamily::legendre);
  const CutPointSet cs = generate_cut(2, 8, Weighting::gaussian_standard);
  Mat seeds = cs.nodes;
  seeds.col(1) *= 0.5;
  LogPdfModel m0;
  m0.basis = basis;
  m0.norm = Normalization::from_box(Vec::Zero(2), Eigen::Vector2d(4.0, 2.0));
  m0.coeffs = Vec::Zero(static_cast<Eigen::Index>(basis.size()));
  const double k = -0.5 * std::log(2 * kPi) * 2 + std::log(2.0);
  m0.coeffs[0] = k - 16.0 / 3.0;
  m0.coeffs[basis.find({2, 0})] = -16.0 / 3.0;
  m0.coeffs[basis.find({0, 2})] = -16.0 / 3.0;
  auto rot = [](double t) {
    Mat R(2, 2);
    R << std::cos(t), -std::sin(t), std::sin(t), std::cos(t);
    return R;
  };
  auto logp0 = [k](const Vec& x) { return k - 0.5 * x[0] * x[0] - 2.0 * x[1] * x[1]; };
  LinearFlow flow(seeds, rot);
  const std::vector<double> epochs{0.3, 0.6, 0.9};
  const PdfRun run = propagate_pdf(m0, flow, std::span<const double>(cs.weights.data(), cs.size()),
                                   logp0, epochs, SparseSolveConfig{});
  for (const auto& e : run.timeline) {
    EXPECT_LE(e.rs_nonzero, 6u);
    EXPECT_LE(e.rs_nonzero, e.ls_nonzero);
  }
  const LogPdfModel& m = run.final_model;
  for (std::size_t i = 0; i < basis.size(); ++i)
    if (basis.degree(i) > 2) EXPECT_LT(std::abs(m.coeffs[static_cast<Eigen::Index>(i)]), 1e-6);
  Rng rng(22);
  for (int i = 0; i < 20; ++i) {
    const Vec y = Eigen::Vector2d(rng.uniform(-1.5, 1.5), rng.uniform(-1.5, 1.5));
    const Vec x0 = rot(0.9).transpose() * y;
    EXPECT_NEAR(m.log_density(y), logp0(x0), 1e-6);
  }
}

TEST(Pdf, PositivityAndSaturation) {
  const auto basis = build_basis(2, 2, PolyFamily::legendre);
  LogPdfModel m = uniform_box_model(basis, Vec::Zero(2), Vec::Ones(2));
  Rng rng(23);
  for (int i = 0; i < 100; ++i) {
    Vec x(2);
    x << rng.uniform(-3, 3), rng.uniform(-3, 3);
    EXPECT_GT(eval_pdf(m, x).density, 0.0);
  }
  m.coeffs[0] = -2000.0;
  const PdfValue v = eval_pdf(m, Vec::Zero(2));
  EXPECT_TRUE(v.saturated);
  EXPECT_GT(v.density, 0.0);
}

TEST(Pdf, RelativeError) {
  const Vec a = Vec::LinSpaced(5, -2, 2);
  EXPECT_EQ(relative_error(a, a), 0.0);
  EXPECT_NEAR(relative_error((a.array() + std::log(1.1)).matrix(), a), 0.1, 1e-14);
  bool sat = false;
  relative_error((a.array() + 800.0).matrix(), a, &sat);
  EXPECT_TRUE(sat);
  EXPECT_THROW(relative_error(a, Vec::Zero(3)), InvalidArgument);
}

TEST(Pdf, Cr3bpFlowVolumeAndJacobianModes) {
  const SystemParams sp;
  Vec6 x;
  x << 0.385382, -0.267830, 0.0, 0.970662, 0.521817, 0.0;
  const SvamState s0 = cart_to_svam(CartState::from_vector(x), sp);
  const double c = s0.c;
  Mat seeds(4, 5);
  for (int i = 0; i < 4; ++i) {
    Vec5 q = s0.coords();
    q[0] += 1e-3 * (i - 1.5);
    q[2] += 2e-3 * (i % 2 ? 1 : -1);
    q[4] += 5e-3 * i;
    seeds.row(i) = q.transpose();
  }
  SvamCr3bpFlow fd(seeds, c, 0.0, sp, {}, JacobianMode::finite_difference);
  SvamCr3bpFlow an(seeds, c, 0.0, sp, {}, JacobianMode::analytic);
  const auto a = fd.advance(0.1);
  const auto b = an.advance(0.1);
  EXPECT_LT(fd.max_abs_log_det_stm(), 1e-8);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_NEAR(a[i].log_det, b[i].log_det, 1e-10);
    EXPECT_LT((a[i].x - b[i].x).norm(), 1e-12);
  }
  EXPECT_THROW(fd.advance(0.05), InvalidArgument);
}
