// Acceptance suite: one PASS/FAIL line per criterion. Exit status is the
// number of failed criteria not listed in --expect-fail (capped at 100).

#include "svamuq/scenario.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>

namespace fs = std::filesystem;
using namespace svamuq;

namespace {

using clk = std::chrono::steady_clock;

double seconds_since(clk::time_point t0) {
  return std::chrono::duration<double>(clk::now() - t0).count();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;
int expected_failures = 0;
std::vector<int> expect_fail;

void criterion(int id, const char* title, double budget_s, const std::function<Outcome()>& fn) {
  const auto t0 = clk::now();
  Outcome o;
  try {
    o = fn();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double dt = seconds_since(t0);
  if (budget_s > 0 && dt > budget_s) {
    o.pass = false;
    o.detail += " [over budget " + fmt_num(budget_s) + " s]";
  }
  const bool known = std::find(expect_fail.begin(), expect_fail.end(), id) != expect_fail.end();
  if (!o.pass) ++(known ? expected_failures : failures);
  std::printf("%s criterion %d (%s): %s (%.1f s)%s\n", o.pass ? "PASS" : "FAIL", id, title,
              o.detail.c_str(), dt, !o.pass && known ? " [expected failure]" : "");
  std::fflush(stdout);
}

std::string sci(double v) {
  char b[32];
  std::snprintf(b, sizeof b, "%.3e", v);
  return b;
}

bool non_increasing(const std::vector<double>& v) {
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[i - 1]) return false;
  return true;
}

Vec6 random_state(Rng& rng, const Vec6& base) {
  Vec6 x = base;
  for (int k = 0; k < 3; ++k) x[k] += rng.uniform(-0.05, 0.05);
  for (int k = 3; k < 6; ++k) x[k] += rng.uniform(-0.05, 0.05);
  return x;
}

// Reference-region base state: translunar arc point, well away from both
// primaries and from the S-VAM coordinate singularities.
Vec6 base_state() {
  Vec6 x;
  x << 0.385382, -0.267830, 0.05, 0.970662, 0.521817, 0.05;
  return x;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"svamuq acceptance suite"};
  std::string configs = "configs";
  std::string work = "acceptance_out";
  std::string cli;
  std::vector<int> only;
  app.add_option("--configs", configs, "directory holding the scenario configurations");
  app.add_option("--work", work, "scratch directory for output bundles");
  app.add_option("--only", only, "run only these criteria");
  app.add_option("--cli", cli, "svamuq executable used for the determinism runs");
  app.add_option("--expect-fail", expect_fail,
                 "criteria known to fail; reported but not counted in the exit status")
      ->delimiter(',');
  CLI11_PARSE(app, argc, argv);
  const fs::path cdir = configs;
  auto want = [&](int id) {
    return only.empty() || std::find(only.begin(), only.end(), id) != only.end();
  };
  const SystemParams sp;

  if (want(1))
    criterion(1, "MCE exactness", 60, [&] {
      double worst = 0.0, worst_odd = 0.0;
      int sets = 0;
      std::string where;
      for (Weighting w : {Weighting::uniform_box, Weighting::gaussian_standard})
        for (int d = 1; d <= 6; ++d)
          for (int o : {4, 6, 8}) {
            const CutPointSet cs = generate_cut(d, o, w);
            const MceReport r = check_mce(cs, o);
            ++sets;
            if (r.max_residual > worst) {
              worst = r.max_residual;
              where = std::string(to_string(w)) + " d=" + std::to_string(d) +
                      " o=" + std::to_string(o);
            }
            worst_odd = std::max(worst_odd, r.max_odd);
          }
      return Outcome{worst < 1e-10 && worst_odd == 0.0,
                     std::to_string(sets) + " sets, max residual " + sci(worst) + " at " + where +
                         ", max odd residual " + sci(worst_odd)};
    });

  if (want(2))
    criterion(2, "CUT point counts", 0, [&] {
      const CutPointSet c4 = generate_cut(4, 8, Weighting::uniform_box);
      const CutPointSet c5 = generate_cut(5, 8, Weighting::uniform_box);
      std::string msg;
      bool ok = true;
      for (const auto* cs : {&c4, &c5}) {
        const std::size_t expect = cs->dim == 4 ? 161 : 455;
        msg += "dim " + std::to_string(cs->dim) + ": ";
        if (!cs->native()) {
          msg += "skipped (" + cs->note + "); ";
          continue;
        }
        msg += std::to_string(cs->size()) + " nodes (expected " + std::to_string(expect) + "); ";
        ok = ok && cs->size() == expect;
      }
      return Outcome{ok, msg};
    });

  if (want(3))
    criterion(3, "Jacobi conservation", 300, [&] {
      Rng rng(3);
      const std::vector<double> ep{0.0, 2.0 / sp.tu_days};
      double svam_max = 0.0, cart_max = 0.0;
      bool ordered = true;
      for (int i = 0; i < 100; ++i) {
        const CartState x = CartState::from_vector(random_state(rng, base_state()));
        const Trajectory ts = propagate(x, ep, Representation::svam, sp);
        const Trajectory tc = propagate(x, ep, Representation::cartesian, sp);
        svam_max = std::max(svam_max, ts.max_jacobi_drift());
        cart_max = std::max(cart_max, tc.max_jacobi_drift());
        ordered = ordered && tc.max_jacobi_drift() >= ts.max_jacobi_drift();
      }
      return Outcome{svam_max == 0.0 && cart_max < 1e-9 && ordered,
                     "S-VAM drift " + sci(svam_max) + ", Cartesian drift " + sci(cart_max)};
    });

  if (want(4))
    criterion(4, "volume preservation", 0, [&] {
      Rng rng(4);
      double worst = 0.0;
      for (int i = 0; i < 20; ++i) {
        const StateWithStm r =
            propagate_with_stm(random_state(rng, base_state()), 0.0, 2.0 / sp.tu_days, sp);
        worst = std::max(worst, std::abs(r.stm.determinant() - 1.0));
      }
      return Outcome{worst < 1e-8, "max |det STM - 1| " + sci(worst)};
    });

  if (want(5))
    criterion(5, "surrogate exactness", 0, [&] {
      const CutPointSet cs = generate_cut(5, 8, Weighting::uniform_box);
      const auto basis = build_basis(5, 4, PolyFamily::legendre);
      Vec c(5), hw(5);
      c << 0.47, -0.6, 0.01, 0.49, -0.02;
      hw << 1.3e-5, 3.5e-3, 3.5e-3, 8.7e-2, 8.7e-2;
      const Normalization norm = Normalization::from_box(c, hw);
      const Mat zeta = cs.nodes;
      const Mat P = eval_basis_batch(basis, zeta);
      Rng rng(5);
      Mat D(6, static_cast<Eigen::Index>(basis.size()));
      for (Eigen::Index i = 0; i < D.size(); ++i) D(i) = rng.uniform(-1, 1);
      const SensitivityModel m = fit_cutstt(cs, P * D.transpose(), basis, norm);
      const double err = (m.d - D).cwiseAbs().maxCoeff();
      // Affine map: only degree <= 1 coefficients.
      Mat Da = Mat::Zero(6, D.cols());
      Da.leftCols(6) = D.leftCols(6);
      const SensitivityModel ma = fit_cutstt(cs, P * Da.transpose(), basis, norm);
      const double high = ma.d.rightCols(D.cols() - 6).cwiseAbs().maxCoeff();
      return Outcome{err < 1e-10 && high < 1e-10,
                     "degree-4 coefficient error " + sci(err) +
                         ", affine higher-degree max " + sci(high)};
    });

  if (want(6))
    criterion(6, "basis count and diagonal normal matrix", 0, [&] {
      const auto b8 = build_basis(5, 8, PolyFamily::legendre);
      const auto b4 = build_basis(5, 4, PolyFamily::legendre);
      const GramReport g = normal_matrix(b4, generate_cut(5, 8, Weighting::uniform_box));
      return Outcome{b8.size() == 1287 && g.max_offdiag < 1e-12,
                     std::to_string(b8.size()) + " indices, max off-diagonal " +
                         sci(g.max_offdiag)};
    });

  if (want(7))
    criterion(7, "moment convergence", 900, [&] {
      const ScenarioConfig cfg = load_config(cdir / "scenario_a_case1.json");
      const ScenarioProblem prob(cfg);
      const TrainedSurrogate t = train_surrogate(prob, 12.0);
      const std::vector<std::size_t> ns{100, 1000, 10000, 100000};
      const Mat params = prob.sample_params(ns.back(), cfg.seed_for("mc"));
      const Mat truth = prob.flow_batch(params, 12.0, "monte carlo truth");
      const auto rows = moment_convergence(
          t.node_outputs, std::span<const double>(t.cut.weights.data(), t.cut.size()), truth, ns);
      std::vector<double> o1, o2, o3;
      std::string msg;
      for (const auto& r : rows) {
        o1.push_back(r.order1);
        o2.push_back(r.order2);
        o3.push_back(r.order3);
        msg += "n=" + std::to_string(r.n) + " [" + sci(r.order1) + " " + sci(r.order2) + " " +
               sci(r.order3) + "] ";
      }
      return Outcome{non_increasing(o1) && non_increasing(o2) && non_increasing(o3), msg};
    });

  if (want(8))
    criterion(8, "surrogate accuracy", 0, [&] {
      const ScenarioConfig cfg = load_config(cdir / "scenario_a_case1_accuracy.json");
      const ScenarioProblem prob(cfg);
      std::vector<double> rmse;
      double ratio12 = 1.0;
      std::string msg;
      for (double h : {6.0, 12.0, 18.0}) {
        const TrainedSurrogate t = train_surrogate(prob, h);
        const AccuracyResult a = accuracy_study(prob, t, 10000, cfg.seed_for("mc"));
        rmse.push_back(a.rmse_md3_km);
        if (h == 12.0) ratio12 = a.rmse_md3_km / a.position_std_km;
        msg += fmt_num(h) + " h: " + sci(a.rmse_md3_km) + " km (std " + sci(a.position_std_km) +
               "); ";
      }
      const bool grows = rmse[0] < rmse[1] && rmse[1] < rmse[2];
      return Outcome{ratio12 < 0.01 && grows, msg + "ratio at 12 h " + sci(ratio12)};
    });

  if (want(9))
    criterion(9, "planted sparse recovery", 600, [&] {
      const Eigen::Index m = 455, n = 1287;
      double worst = 0.0;
      int exact = 0;
      for (int inst = 0; inst < 20; ++inst) {
        Rng rng(900 + inst);
        Mat A(m, n);
        for (Eigen::Index i = 0; i < A.size(); ++i) A(i) = rng.normal();
        A.colwise().normalize();
        const int k = 1 + inst % 10;
        Vec x = Vec::Zero(n);
        std::vector<Eigen::Index> supp;
        while (static_cast<int>(supp.size()) < k) {
          const auto j = static_cast<Eigen::Index>(rng.next_u64() % n);
          if (std::find(supp.begin(), supp.end(), j) != supp.end()) continue;
          supp.push_back(j);
          x[j] = (rng.uniform01() < 0.5 ? -1.0 : 1.0) * rng.uniform(0.5, 1.5);
        }
        std::sort(supp.begin(), supp.end());
        const Vec b = A * x;
        const Vec w = Vec::Constant(m, 1.0);
        const SparseSolveConfig sc;
        const LsResult ls = solve_weighted_ls(A, b, w);
        const WeightedL1Result l1 = solve_weighted_l1(A, b, w, ls.x, sc);
        const ReducedSparse rs = reduce_sparse(l1.x, A, b, w, sc.delta_rs);
        exact += rs.support == supp;
        worst = std::max(worst, (rs.c - x).cwiseAbs().maxCoeff());
      }
      return Outcome{exact == 20 && worst < 1e-6,
                     std::to_string(exact) + "/20 exact supports, max coefficient error " +
                         sci(worst)};
    });

  if (want(10))
    criterion(10, "pdf propagation", 1800, [&] {
      ScenarioConfig cfg = load_config(cdir / "scenario_a_case1_pdf.json");
      cfg.pdf.test_samples = 10000;
      const ScenarioProblem prob(cfg);
      const PdfStudyResult r = pdf_study(prob);
      const auto& e = r.run.timeline.back();
      const double cap = 0.1 * static_cast<double>(r.basis_count);
      const bool ok = static_cast<double>(e.rs_nonzero) < cap &&
                      static_cast<double>(e.model_nonzero) < cap &&
                      e.training_error <= e.testing_error && e.testing_error <= 5e-2;
      return Outcome{ok, "t=" + fmt_num(e.epoch * sp.tu_hours()) + " h, RS " +
                             std::to_string(e.rs_nonzero) + ", model " +
                             std::to_string(e.model_nonzero) + " of " +
                             std::to_string(r.basis_count) + ", training " +
                             sci(e.training_error) + ", testing " + sci(e.testing_error)};
    });

  if (want(11))
    criterion(11, "determinism", 0, [&] {
      const fs::path a = fs::path(work) / "det_a", b = fs::path(work) / "det_b";
      fs::remove_all(a);
      fs::remove_all(b);
      const fs::path config = cdir / "scenario_b.json";
      if (!cli.empty()) {
        for (const auto& d : {a, b}) {
          const std::string cmd = "\"" + cli + "\" run --config \"" + config.string() +
                                  "\" --seed 7 --out \"" + d.string() + "\" > /dev/null";
          if (std::system(cmd.c_str()) != 0) return Outcome{false, "CLI run failed: " + cmd};
        }
      } else {
        ScenarioConfig cfg = load_config(config);
        cfg.seed = 7;
        run_scenario(cfg, a);
        run_scenario(cfg, b);
      }
      std::size_t files = 0, same = 0;
      for (const auto& ent : fs::directory_iterator(a)) {
        ++files;
        const fs::path other = b / ent.path().filename();
        same += fs::exists(other) && slurp(ent.path()) == slurp(other);
      }
      return Outcome{files > 0 && same == files,
                     std::to_string(same) + "/" + std::to_string(files) + " files identical" +
                         (cli.empty() ? " (in-process)" : " (CLI)")};
    });

  std::printf("%d criteria failed", failures + expected_failures);
  if (expected_failures) std::printf(" (%d expected)", expected_failures);
  std::printf("\n");
  return std::min(failures, 100);
}
