#include "svamuq/cut.hpp"
#include "svamuq/dynamics.hpp"
#include "svamuq/moments.hpp"
#include "svamuq/poly_basis.hpp"
#include "svamuq/propagation.hpp"
#include "svamuq/sampling.hpp"
#include "svamuq/stt.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace svamuq;

namespace {

const SystemParams kSp;

Vec6 sample_state(Rng& rng) {
  Vec6 x;
  x << 0.385 + rng.uniform(-0.05, 0.05), -0.268 + rng.uniform(-0.05, 0.05),
      rng.uniform(-0.05, 0.05), 0.97 + rng.uniform(-0.05, 0.05),
      0.52 + rng.uniform(-0.05, 0.05), rng.uniform(-0.05, 0.05);
  return x;
}

}  // namespace

// Golden values from a 30-digit mpmath evaluation.
TEST(Dynamics, PseudopotentialGolden) {
  EXPECT_NEAR(pseudopotential(Vec3(0.5, 0.2, 0.0), kSp), 1.96473297931829342, 1e-14);
}

TEST(Dynamics, CollinearPointsGolden) {
  const double x1 = collinear_l1_x(kSp), x2 = collinear_l2_x(kSp);
  EXPECT_NEAR(x1, 0.836913086774220649, 1e-12);
  EXPECT_NEAR(x2, 1.15568375920578503, 1e-12);
  EXPECT_NEAR(jacobi_constant({Vec3(x1, 0, 0), Vec3::Zero()}, kSp), 3.18834493899516756, 1e-12);
  EXPECT_NEAR(jacobi_constant({Vec3(x2, 0, 0), Vec3::Zero()}, kSp), 3.17216373159243866, 1e-12);
}

TEST(Dynamics, AnalyticJacobianMatchesFiniteDifference) {
  Rng rng(11);
  for (int i = 0; i < 20; ++i) {
    const Vec6 x = sample_state(rng);
    const Mat6 a = cartesian_jacobian(x, kSp);
    const Mat6 f = richardson_jacobian([](const Vec6& z) { return cartesian_rhs(z, kSp); }, x);
    EXPECT_LT((a - f).cwiseAbs().maxCoeff(), 1e-10 * std::max(1.0, a.cwiseAbs().maxCoeff()));
  }
}

TEST(Dynamics, SvamRoundTrip) {
  Rng rng(12);
  for (int i = 0; i < 50; ++i) {
    const CartState c = CartState::from_vector(sample_state(rng));
    const CartState back = svam_to_cart(cart_to_svam(c, kSp), kSp);
    EXPECT_LT((back.vector() - c.vector()).norm(), 1e-13);
  }
}

// Chain rule: d/dt of cart_to_svam along the Cartesian flow equals svam_rhs.
TEST(Dynamics, SvamRhsMatchesCartesianFlow) {
  Rng rng(13);
  for (int i = 0; i < 20; ++i) {
    const Vec6 x = sample_state(rng);
    const SvamState s = cart_to_svam(CartState::from_vector(x), kSp);
    const Vec5 rhs = svam_rhs(s.coords(), s.c, kSp);
    const double h = 1e-4;
    auto at = [&](double t) {
      return cart_to_svam(CartState::from_vector(propagate_cartesian(x, 0.0, t, kSp)), kSp)
          .coords();
    };
    const Vec5 d1 = (at(h) - at(-h)) / (2 * h);
    const Vec5 d2 = (at(h / 2) - at(-h / 2)) / h;
    const Vec5 fd = (4 * d2 - d1) / 3;
    EXPECT_LT((fd - rhs).cwiseAbs().maxCoeff(), 1e-9) << "state " << i;
  }
}

TEST(Dynamics, TransformDeterminantMatchesNumericalJacobian) {
  Rng rng(14);
  for (int i = 0; i < 10; ++i) {
    const Vec6 x = sample_state(rng);
    auto map = [](const Vec6& z) {
      const SvamState s = cart_to_svam(CartState::from_vector(z), kSp);
      Vec6 o;
      o << s.coords(), s.c;
      return o;
    };
    const Mat6 J = richardson_jacobian(map, x, 1e-6);
    EXPECT_NEAR(std::log(std::abs(J.determinant())),
                svam_transform_log_abs_det(CartState::from_vector(x)), 1e-7);
  }
}

TEST(Dynamics, SvamRhsGuards) {
  Vec5 s;
  s << 0.5, 0.1, kPi / 2, 0.3, 0.1;
  EXPECT_THROW(svam_rhs(s, 3.0, kSp), SingularityError);
  s << 0.5, 0.1, 0.1, 0.3, 0.1;
  EXPECT_THROW(svam_rhs(s, 10.0, kSp), ImaginarySpeedError);
}

TEST(Propagation, SvamAgreesWithCartesian) {
  Rng rng(15);
  for (int i = 0; i < 5; ++i) {
    const Vec6 x = sample_state(rng);
    const double tf = 1.0 / kSp.tu_days;
    const Vec6 xc = propagate_cartesian(x, 0.0, tf, kSp);
    const SvamState s =
        propagate_svam(cart_to_svam(CartState::from_vector(x), kSp), 0.0, tf, kSp);
    EXPECT_LT((svam_to_cart(s, kSp).vector() - xc).norm(), 1e-9);
  }
}

TEST(Propagation, JacobiDrift) {
  Rng rng(16);
  const std::vector<double> ep{0.0, 0.2, 0.46};
  const CartState x = CartState::from_vector(sample_state(rng));
  const Trajectory ts = propagate(x, ep, Representation::svam, kSp);
  const Trajectory tc = propagate(x, ep, Representation::cartesian, kSp);
  EXPECT_EQ(ts.max_jacobi_drift(), 0.0);
  EXPECT_LT(tc.max_jacobi_drift(), 1e-9);
  EXPECT_GE(tc.max_jacobi_drift(), ts.max_jacobi_drift());
  EXPECT_THROW(propagate(x, std::vector<double>{0.0, 0.0}, Representation::svam, kSp),
               InvalidArgument);
}

TEST(Propagation, StmVolumeAndModes) {
  Rng rng(17);
  const Vec6 x = sample_state(rng);
  const auto fd = propagate_with_stm(x, 0.0, 0.46, kSp, {}, JacobianMode::finite_difference);
  const auto an = propagate_with_stm(x, 0.0, 0.46, kSp, {}, JacobianMode::analytic);
  EXPECT_LT(std::abs(fd.stm.determinant() - 1.0), 1e-8);
  EXPECT_LT((fd.stm - an.stm).cwiseAbs().maxCoeff(), 1e-6);
  EXPECT_LT((fd.state - an.state).norm(), 1e-13);
}

TEST(Propagation, ImpulseAlongVelocity) {
  const CartState c{Vec3(0.4, -0.3, 0.0), Vec3(0.9, 0.5, 0.0)};
  ImpulseEvent ev;
  ev.gamma_thrust = std::atan2(0.5, 0.9);
  ev.dv_mag = 0.01;
  const CartState after = svam_to_cart(apply_impulse(c, ev, kSp), kSp);
  EXPECT_NEAR(after.vel.norm(), c.vel.norm() + 0.01, 1e-14);
  ev.dv_mag = 0.0;
  EXPECT_LT((svam_to_cart(apply_impulse(c, ev, kSp), kSp).vector() - c.vector()).norm(), 1e-14);
  ev.dv_mag = -1.0;
  EXPECT_THROW(apply_impulse(c, ev, kSp), InvalidArgument);
  ThrustBurn b;
  EXPECT_NEAR(b.delta_v_mps(), 677.5, 1e-12);
}

TEST(Integrator, ExponentialDecay) {
  auto f = [](double, const Vec& x) { return Vec(-x); };
  Vec x0 = Vec::Ones(1);
  const Vec x = integrate(f, 0.0, x0, 3.0, IntegratorOptions{});
  EXPECT_NEAR(x[0], std::exp(-3.0), 1e-11);
}

TEST(Integrator, BackwardRoundTrip) {
  Rng rng(18);
  const Vec6 x = sample_state(rng);
  const Vec6 y = propagate_cartesian(x, 0.0, 1.0, kSp);
  EXPECT_LT((propagate_cartesian(y, 1.0, 0.0, kSp) - x).norm(), 1e-10);
}

class CutSets : public ::testing::TestWithParam<std::tuple<int, int, Weighting>> {};

TEST_P(CutSets, MomentConstraintsAndSymmetry) {
  const auto [d, o, w] = GetParam();
  const CutPointSet cs = generate_cut(d, o, w);
  const MceReport r = check_mce(cs, o);
  EXPECT_LT(r.max_residual, 1e-10);
  EXPECT_EQ(r.max_odd, 0.0);
  EXPECT_NEAR(cs.weights.sum(), 1.0, 1e-12);
  EXPECT_GT(cs.weights.minCoeff(), 0.0);
  // Closed under negation of the first coordinate.
  for (Eigen::Index i = 0; i < cs.nodes.rows(); ++i) {
    Eigen::RowVectorXd p = cs.nodes.row(i);
    p[0] = -p[0];
    bool found = false;
    for (Eigen::Index k = 0; k < cs.nodes.rows() && !found; ++k)
      found = (cs.nodes.row(k) - p).cwiseAbs().maxCoeff() < 1e-14;
    EXPECT_TRUE(found);
  }
  if (w == Weighting::uniform_box) EXPECT_LE(cs.nodes.cwiseAbs().maxCoeff(), 1.0 + 1e-12);
}

INSTANTIATE_TEST_SUITE_P(
    Catalog, CutSets,
    ::testing::Values(std::make_tuple(2, 4, Weighting::uniform_box),
                      std::make_tuple(3, 6, Weighting::gaussian_standard),
                      std::make_tuple(4, 8, Weighting::uniform_box),
                      std::make_tuple(4, 8, Weighting::gaussian_standard),
                      std::make_tuple(5, 8, Weighting::uniform_box),
                      std::make_tuple(5, 6, Weighting::uniform_box)));

TEST(Cut, PointCounts) {
  const CutPointSet c4 = generate_cut(4, 8, Weighting::uniform_box);
  const CutPointSet c5 = generate_cut(5, 8, Weighting::uniform_box);
  ASSERT_TRUE(c4.native());
  ASSERT_TRUE(c5.native());
  EXPECT_EQ(c4.size(), 161u);
  EXPECT_EQ(c5.size(), 455u);
}

TEST(Cut, FallbackIsTensorGauss) {
  CutOptions o;
  o.allow_fallback = false;
  EXPECT_THROW(generate_cut(6, 8, Weighting::uniform_box, o), NoSolutionError);
  const CutPointSet cs = generate_cut(6, 8, Weighting::uniform_box);
  EXPECT_FALSE(cs.native());
  EXPECT_FALSE(cs.note.empty());
  EXPECT_EQ(cs.size(), 15625u);
}

TEST(Cut, RejectsBadArguments) {
  EXPECT_THROW(generate_cut(7, 8, Weighting::uniform_box), InvalidArgument);
  EXPECT_THROW(generate_cut(3, 5, Weighting::uniform_box), InvalidArgument);
}

TEST(Basis, CountAndOrdering) {
  const auto b = build_basis(5, 8, PolyFamily::legendre);
  EXPECT_EQ(b.size(), 1287u);
  for (std::size_t i = 1; i < b.size(); ++i)
    EXPECT_TRUE(MultiIndexBasis::graded_less(b.indices[i - 1], b.indices[i]));
  EXPECT_EQ(b.find(b.indices[700]), 700);
  EXPECT_EQ(b.degree(0), 0);
  EXPECT_EQ(b.degree(1286), 8);
}

// Explicit monomial expansions of the first few polynomials.
TEST(Basis, UnivariateMonomialOracle) {
  double p[6];
  for (double z : {-0.9, -0.3, 0.0, 0.45, 1.0, 1.7}) {
    univariate_values(PolyFamily::legendre, z, 5, p);
    EXPECT_NEAR(p[2], (3 * z * z - 1) / 2, 1e-14);
    EXPECT_NEAR(p[3], (5 * z * z * z - 3 * z) / 2, 1e-14);
    EXPECT_NEAR(p[4], (35 * std::pow(z, 4) - 30 * z * z + 3) / 8, 1e-13);
    EXPECT_NEAR(p[5], (63 * std::pow(z, 5) - 70 * std::pow(z, 3) + 15 * z) / 8, 1e-13);
    univariate_values(PolyFamily::hermite_probabilist, z, 5, p);
    EXPECT_NEAR(p[2], z * z - 1, 1e-14);
    EXPECT_NEAR(p[3], z * z * z - 3 * z, 1e-14);
    EXPECT_NEAR(p[4], std::pow(z, 4) - 6 * z * z + 3, 1e-13);
    EXPECT_NEAR(p[5], std::pow(z, 5) - 10 * std::pow(z, 3) + 15 * z, 1e-13);
  }
}

// Dense tensor Gauss rule (exact through degree 9 per axis) as the oracle for
// the CUT8 Gram matrix of the degree-4 basis.
TEST(Basis, GramMatchesDenseGaussOracle) {
  for (Weighting w : {Weighting::uniform_box, Weighting::gaussian_standard}) {
    const auto b = build_basis(5, 4, matching_family(w));
    const CutPointSet gauss = tensor_gauss(5, 5, w);
    const GramReport oracle = normal_matrix(b, gauss);
    const GramReport cut = normal_matrix(b, generate_cut(5, 8, w));
    EXPECT_LT((oracle.gram - cut.gram).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_TRUE(cut.diagonal);
    for (std::size_t i = 0; i < b.size(); ++i)
      EXPECT_NEAR(cut.gram(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i)),
                  basis_norm(b, i), 1e-12);
  }
}

TEST(Basis, ReexpressIsExact) {
  const auto b = build_basis(3, 6, PolyFamily::legendre);
  Rng rng(19);
  Vec c(static_cast<Eigen::Index>(b.size()));
  for (Eigen::Index i = 0; i < c.size(); ++i) c[i] = rng.uniform(-1, 1);
  const auto from = Normalization::from_box(Vec3(0.1, -2.0, 5.0), Vec3(1.0, 0.5, 2.0));
  const auto to = Normalization::from_box(Vec3(0.3, -2.2, 4.0), Vec3(1.4, 0.3, 3.0));
  const Vec c2 = reexpress(b, c, from, to);
  for (int k = 0; k < 20; ++k) {
    Vec x(3);
    x << rng.uniform(-1, 1), rng.uniform(-2.5, -1.5), rng.uniform(3, 7);
    EXPECT_NEAR(c.dot(eval_basis(b, from.to_zeta(x))), c2.dot(eval_basis(b, to.to_zeta(x))),
                1e-10);
  }
}

TEST(Basis, OutsideFlag) {
  const auto b = build_basis(2, 2, PolyFamily::legendre);
  bool out = false;
  eval_basis(b, Eigen::Vector2d(0.5, 1.2), &out);
  EXPECT_TRUE(out);
  eval_basis(b, Eigen::Vector2d(0.5, -1.0), &out);
  EXPECT_FALSE(out);
}

TEST(Surrogate, RecoversPolynomialMaps) {
  const CutPointSet cs = generate_cut(4, 8, Weighting::uniform_box);
  const auto basis = build_basis(4, 4, PolyFamily::legendre);
  const auto norm = Normalization::from_box(Vec::Constant(4, 2.0), Vec::Constant(4, 0.1));
  const Mat P = eval_basis_batch(basis, cs.nodes);
  Rng rng(20);
  Mat D(3, static_cast<Eigen::Index>(basis.size()));
  for (Eigen::Index i = 0; i < D.size(); ++i) D(i) = rng.uniform(-2, 2);
  const SensitivityModel m = fit_cutstt(cs, P * D.transpose(), basis, norm);
  EXPECT_LT((m.d - D).cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_LT(m.fit_residual_max, 1e-10);
  Vec p(4);
  p << 2.05, 1.93, 2.0, 2.08;
  EXPECT_NEAR(eval_surrogate(m, p)[1], D.row(1).dot(eval_basis(basis, norm.to_zeta(p))), 1e-12);
  bool ext = false;
  p[0] = 2.2;
  eval_surrogate(m, p, &ext);
  EXPECT_TRUE(ext);
}

TEST(Surrogate, AffineMapHasNoHigherDegreeTerms) {
  const CutPointSet cs = generate_cut(5, 8, Weighting::uniform_box);
  const auto basis = build_basis(5, 4, PolyFamily::legendre);
  const auto norm = Normalization::from_box(Vec::Zero(5), Vec::Ones(5));
  Mat out(static_cast<Eigen::Index>(cs.size()), 2);
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    out(i, 0) = 1.0 + 2.0 * cs.nodes(i, 0) - cs.nodes(i, 3);
    out(i, 1) = -0.5 * cs.nodes(i, 4);
  }
  const SensitivityModel m = fit_cutstt(cs, out, basis, norm);
  EXPECT_LT(m.d.rightCols(m.d.cols() - 6).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_NEAR(m.d(0, 0), 1.0, 1e-13);
}

TEST(Surrogate, OrderMustCoverDegree) {
  const CutPointSet cs = generate_cut(3, 6, Weighting::uniform_box);
  const auto basis = build_basis(3, 4, PolyFamily::legendre);
  const auto norm = Normalization::from_box(Vec::Zero(3), Vec::Ones(3));
  EXPECT_THROW(fit_cutstt(cs, Mat::Zero(static_cast<Eigen::Index>(cs.size()), 1), basis, norm),
               InvalidArgument);
}

// Uniform marginals have kurtosis 9/5 and variance 1/3; standard normal 3 and 1.
TEST(Moments, CutReproducesKnownDistributions) {
  const CutPointSet c = generate_cut(5, 8, Weighting::uniform_box);
  const MomentSet u = central_moments(c.nodes, std::span<const double>(c.weights.data(), c.size()));
  for (int i = 0; i < 5; ++i) {
    EXPECT_NEAR(u.mean[i], 0.0, 1e-14);
    EXPECT_NEAR(u.variance[i], 1.0 / 3.0, 1e-12);
    EXPECT_NEAR(u.std_skewness[i], 0.0, 1e-12);
    EXPECT_NEAR(u.std_kurtosis[i], 1.8, 1e-10);
  }
  const CutPointSet g = generate_cut(4, 8, Weighting::gaussian_standard);
  const MomentSet n = central_moments(g.nodes, std::span<const double>(g.weights.data(), g.size()));
  for (int i = 0; i < 4; ++i) {
    EXPECT_NEAR(n.variance[i], 1.0, 1e-12);
    EXPECT_NEAR(n.std_kurtosis[i], 3.0, 1e-10);
  }
}

TEST(Moments, DegenerateColumn) {
  Mat X(4, 2);
  X << 1, 3.164354, 2, 3.164354, 3, 3.164354, 4, 3.164354;
  EXPECT_THROW(central_moments(X, 4, Standardize::strict), NumericalError);
  const MomentSet m = central_moments(X, 4, Standardize::lenient);
  EXPECT_TRUE(std::isnan(m.std_kurtosis[1]));
  EXPECT_NEAR(m.std_kurtosis[0], 1.64, 1e-12);
  EXPECT_TRUE(degenerate_variance(1.26e-27, 3.16));
  EXPECT_FALSE(degenerate_variance(1e-10, 3.16));
}

TEST(Moments, MahalanobisMatchesExplicitInverse) {
  Rng rng(21);
  Mat X(200, 3);
  for (Eigen::Index i = 0; i < X.size(); ++i) X(i) = rng.normal();
  X.col(1) += 0.5 * X.col(0);
  auto [mu, cov] = sample_mean_cov(X);
  const auto r = mahalanobis(X, mu, cov);
  const Mat inv = cov.inverse();
  for (Eigen::Index i = 0; i < 10; ++i) {
    const Vec d = X.row(i).transpose() - mu;
    EXPECT_NEAR(r.distance[static_cast<std::size_t>(i)], std::sqrt(d.dot(inv * d)), 1e-10);
  }
  EXPECT_FALSE(r.regularized);
}

TEST(Sampling, SeededAndBounded) {
  const Mat a = mc_sample(Weighting::uniform_box, 3, 1000, 5);
  const Mat b = mc_sample(Weighting::uniform_box, 3, 1000, 5);
  EXPECT_EQ((a - b).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_LE(a.cwiseAbs().maxCoeff(), 1.0);
  EXPECT_THROW(mc_sample(Weighting::uniform_box, 3, 0, 5), InvalidArgument);
}
