// svamuq command-line interface.
//
// Exit codes: 0 success, 2 configuration or usage error, 3 numerical failure.

#include "svamuq/scenario.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

namespace fs = std::filesystem;
using namespace svamuq;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string format;
};

void add_common(CLI::App* sc, Common& c, bool need_config = true) {
  auto* o = sc->add_option("--config", c.config, "scenario configuration (JSON)");
  if (need_config) o->required();
  sc->add_option("--seed", c.seed, "overrides the configured seed");
  sc->add_option("--out", c.out, "output directory (default: the configured one)");
  sc->add_option("--format", c.format, "table format")->check(CLI::IsMember({"csv", "json"}));
}

ScenarioConfig load(const Common& c) {
  ScenarioConfig cfg = load_config(c.config);
  if (c.seed) cfg.seed = *c.seed;
  if (!c.format.empty()) cfg.format = output_format_from_string(c.format);
  if (!c.out.empty()) cfg.output_dir = c.out;
  validate(cfg);
  return cfg;
}

fs::path out_dir(const ScenarioConfig& cfg) {
  fs::path d = cfg.output_dir;
  fs::create_directories(d);
  return d;
}

void report(const fs::path& p) { std::cout << p.string() << '\n'; }

int cmd_cut_gen(const Common& c, int dim, int order, const std::string& weighting) {
  OutputMeta meta;
  OutputFormat fmt = OutputFormat::csv;
  fs::path dir = c.out.empty() ? fs::path("out") : fs::path(c.out);
  CutOptions o;
  if (!c.config.empty()) {
    const ScenarioConfig cfg = load(c);
    meta = make_meta(cfg);
    fmt = cfg.format;
    dir = cfg.output_dir;
    o.seed = cfg.seed_for("cut");
  } else {
    meta.config_hash = "none";
    if (c.seed) o.seed = *c.seed;
    meta.seeds["cut"] = o.seed;
    if (!c.format.empty()) fmt = output_format_from_string(c.format);
  }
  fs::create_directories(dir);
  const CutPointSet cs = generate_cut(dim, order, weighting_from_string(weighting), o);
  const MceReport mce = check_mce(cs, order);
  meta.extra["mce_max_residual"] = fmt_num(mce.max_residual);
  const std::string stem = "cut_d" + std::to_string(dim) + "_o" + std::to_string(order);
  fs::path p = dir / stem;
  if (fmt == OutputFormat::csv) {
    p += ".csv";
    write_cut_csv(p, cs, meta);
  } else {
    p += ".json";
    write_json(p, to_json(cs, meta));
  }
  if (!cs.native()) std::cerr << "note: " << cs.note << '\n';
  report(p);
  return 0;
}

int cmd_propagate(const Common& c, double hours, double step_h) {
  const ScenarioConfig cfg = load(c);
  const ScenarioProblem prob(cfg);
  const auto& sp = cfg.system;
  const double tf = hours > 0 ? hours : cfg.reference.tf_hours;
  if (!(step_h > 0)) throw InvalidArgument("--step must be positive");
  std::vector<double> epochs;
  for (double h = 0.0; h < tf - 1e-9; h += step_h) epochs.push_back(sp.hours_to_tu(h));
  epochs.push_back(sp.hours_to_tu(tf));
  PropagationOptions po;
  po.integrator = cfg.integrator();
  const CartState x0 = CartState::from_vector(prob.reference().post_impulse);
  const Trajectory ts = propagate(x0, epochs, Representation::svam, sp, po);
  const Trajectory tc = propagate(x0, epochs, Representation::cartesian, sp, po);
  Table t;
  t.columns = {"epoch_h", "r_km",   "theta_deg", "phi_deg", "gamma_deg", "beta_deg", "C",
               "x_km",    "y_km",   "z_km",      "vx_kmps", "vy_kmps",   "vz_kmps",
               "svam_jacobi_drift", "cart_jacobi_drift"};
  for (std::size_t i = 0; i < epochs.size(); ++i) {
    const Vec6& s = ts.states[i];
    const Vec6& x = tc.states[i];
    t.add({epochs[i] * sp.tu_hours(), s[0] * sp.lu_km, s[1] / kDeg, s[2] / kDeg, s[3] / kDeg,
           s[4] / kDeg, s[5], x[0] * sp.lu_km, x[1] * sp.lu_km, x[2] * sp.lu_km,
           x[3] * sp.vu_kms(), x[4] * sp.vu_kms(), x[5] * sp.vu_kms(), ts.jacobi_drift[i],
           tc.jacobi_drift[i]});
  }
  report(write_table(out_dir(cfg) / "trajectory", t, make_meta(cfg), cfg.format));
  return 0;
}

int cmd_fit_stt(const Common& c, double hours) {
  const ScenarioConfig cfg = load(c);
  const ScenarioProblem prob(cfg);
  const double h = hours > 0 ? hours : cfg.reference.tf_hours;
  const TrainedSurrogate t = train_surrogate(prob, h);
  const fs::path p = out_dir(cfg) / ("model_" + fmt_num(h) + "h.json");
  write_json(p, to_json(t.model, make_meta(cfg)));
  std::cerr << "fit residual max " << fmt_num(t.model.fit_residual_max) << " rms "
            << fmt_num(t.model.fit_residual_rms) << '\n';
  report(p);
  return 0;
}

int cmd_moments(const Common& c) {
  const ScenarioConfig cfg = load(c);
  const ScenarioProblem prob(cfg);
  const TrainedSurrogate t = train_surrogate(prob, cfg.reference.tf_hours);
  const auto meta = make_meta(cfg);
  const fs::path d = out_dir(cfg);
  report(write_table(d / "moments_cut", moment_table(cut_moments(t)), meta, cfg.format));
  report(write_table(d / "moments_surrogate", moment_table(surrogate_moments(t.model, t.cut)),
                     meta, cfg.format));
  return 0;
}

int cmd_histograms(const Common& c, std::optional<std::size_t> n, std::optional<int> bins) {
  const ScenarioConfig cfg = load(c);
  const ScenarioProblem prob(cfg);
  const TrainedSurrogate t = train_surrogate(prob, cfg.reference.tf_hours);
  const Vec hw = prob.half_width();
  const HistogramSet hs = bulk_histograms(t.model, n.value_or(cfg.samples.bulk),
                                          cfg.seed_for("bulk"),
                                          bins.value_or(cfg.samples.histogram_bins), nullptr, &hw);
  report(write_table(out_dir(cfg) / "histograms", histogram_table(hs), make_meta(cfg),
                     cfg.format));
  return 0;
}

int cmd_pdf(const Common& c) {
  ScenarioConfig cfg = load(c);
  cfg.study = Study::pdf_propagation;
  validate(cfg);
  const Json s = run_scenario(cfg, out_dir(cfg));
  std::cout << s["pdf"].dump() << '\n';
  return 0;
}

int cmd_timing(const Common& c, std::optional<std::size_t> n, bool skip_direct) {
  const ScenarioConfig cfg = load(c);
  const ScenarioProblem prob(cfg);
  const TrainedSurrogate t = train_surrogate(prob, cfg.reference.tf_hours);
  const std::size_t count = n.value_or(cfg.samples.timing);
  const TimingReport r = timing_report(prob, t, count, cfg.seed_for("mc"), !skip_direct);
  Table tb;
  tb.columns = {"n", "direct_s", "surrogate_s", "ratio"};
  tb.add({static_cast<double>(r.n), r.direct_s, r.surrogate_s, r.ratio});
  auto meta = make_meta(cfg);
  meta.extra["note"] = "wall-clock; hardware dependent";
  report(write_table(out_dir(cfg) / "timing", tb, meta, cfg.format));
  return 0;
}

int cmd_run(const Common& c) {
  const ScenarioConfig cfg = load(c);
  const fs::path d = out_dir(cfg);
  const Json s = run_scenario(cfg, d);
  report(d / "summary.json");
  return 0;
}

int cmd_reference(const Common& c) {
  const ScenarioConfig cfg = load(c);
  const ScenarioProblem prob(cfg);
  Json r;
  r["meta"] = make_meta(cfg).to_json();
  r["reference"] = reference_json(prob);
  const fs::path p = out_dir(cfg) / "reference.json";
  write_json(p, r);
  report(p);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"svamuq: CR3BP uncertainty propagation with CUT quadrature and sparse pdf fits"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);

  Common c;
  int dim = 5, order = 8;
  std::string weighting = "uniform_box";
  double hours = 0.0, step = 1.0;
  std::optional<std::size_t> n;
  std::optional<int> bins;
  bool skip_direct = false;

  auto* cut = app.add_subcommand("cut-gen", "generate a CUT point set");
  add_common(cut, c, false);
  cut->add_option("--dim", dim, "dimension")->check(CLI::Range(1, 6));
  cut->add_option("--order", order, "order")->check(CLI::IsMember({4, 6, 8}));
  cut->add_option("--weighting", weighting, "uniform_box or gaussian_standard");

  auto* prop = app.add_subcommand("propagate", "propagate the nominal post-impulse trajectory");
  add_common(prop, c);
  prop->add_option("--hours", hours, "final time in hours (default: reference tf)");
  prop->add_option("--step", step, "sampling step in hours");

  auto* fit = app.add_subcommand("fit-stt", "fit the CUT-STT surrogate");
  add_common(fit, c);
  fit->add_option("--hours", hours, "final time in hours (default: reference tf)");

  auto* mom = app.add_subcommand("moments", "CUT and surrogate moments at tf");
  add_common(mom, c);

  auto* hist = app.add_subcommand("histograms", "surrogate bulk-sample histograms at tf");
  add_common(hist, c);
  hist->add_option("--samples", n, "sample count (default: samples.bulk)");
  hist->add_option("--bins", bins, "bin count (default: samples.histogram_bins)");

  auto* pdf = app.add_subcommand("pdf-propagate", "sparse log-pdf propagation");
  add_common(pdf, c);

  auto* tim = app.add_subcommand("timing", "surrogate vs direct integration wall clock");
  add_common(tim, c);
  tim->add_option("--samples", n, "sample count (default: samples.timing)");
  tim->add_flag("--skip-direct", skip_direct, "time the surrogate only");

  auto* run = app.add_subcommand("run", "run the configured study");
  add_common(run, c);

  auto* ref = app.add_subcommand("reference", "resolve and write the reference trajectory");
  add_common(ref, c);

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*cut) return cmd_cut_gen(c, dim, order, weighting);
    if (*prop) return cmd_propagate(c, hours, step);
    if (*fit) return cmd_fit_stt(c, hours);
    if (*mom) return cmd_moments(c);
    if (*hist) return cmd_histograms(c, n, bins);
    if (*pdf) return cmd_pdf(c);
    if (*tim) return cmd_timing(c, n, skip_direct);
    if (*run) return cmd_run(c);
    if (*ref) return cmd_reference(c);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const InvalidArgument& e) {
    std::cerr << "invalid argument: " << e.what() << '\n';
    return 2;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
