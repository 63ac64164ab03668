#pragma once

// Scenario configuration and the experiment harness: CUT training in
// parameter space, surrogate fits, Monte Carlo comparisons, moment tables,
// histograms, cone rays and the pdf timeline.

#include "svamuq/cut.hpp"
#include "svamuq/dynamics.hpp"
#include "svamuq/io.hpp"
#include "svamuq/moments.hpp"
#include "svamuq/pdf.hpp"
#include "svamuq/poly_basis.hpp"
#include "svamuq/propagation.hpp"
#include "svamuq/reference.hpp"
#include "svamuq/sampling.hpp"
#include "svamuq/sparse.hpp"
#include "svamuq/stt.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <exception>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

namespace svamuq {

inline constexpr int kSchemaVersion = 1;

enum class ScenarioKind { a, b };
enum class Study { stt_accuracy, moments, pdf_propagation };

inline const char* to_string(ScenarioKind k) { return k == ScenarioKind::a ? "A" : "B"; }
inline const char* to_string(Study s) {
  switch (s) {
    case Study::stt_accuracy: return "stt_accuracy";
    case Study::moments: return "moments";
    case Study::pdf_propagation: return "pdf_propagation";
  }
  return "?";
}

/// Parameter names per scenario kind, in canonical order, with config units.
inline const std::vector<std::string>& param_names(ScenarioKind k) {
  static const std::vector<std::string> a{"r", "theta", "phi", "gamma", "beta"};
  static const std::vector<std::string> b{"t1", "t_b", "gamma", "beta"};
  return k == ScenarioKind::a ? a : b;
}

inline const char* param_unit(const std::string& name) {
  if (name == "r") return "km";
  if (name == "t1" || name == "t_b") return "s";
  return "deg";
}

inline const std::vector<std::string>& output_names() {
  static const std::vector<std::string> n{"r", "theta", "phi", "gamma", "beta", "C"};
  return n;
}

struct UncertainParam {
  std::string name;
  double half_width = 0.0;  // config units (km, deg, s)
};

struct ReferenceConfig {
  std::string source = "generated";  // or "explicit"
  ReferenceSpec generator{};
  // Explicit source: pre-impulse Cartesian state at the impulse epoch t = 0
  // (km, km/s) and thrust direction angles (deg).
  std::array<double, 6> pre_impulse{};
  double thrust_gamma_deg = 0.0;
  double thrust_beta_deg = 0.0;
  double pre_impulse_hours = 1.0;  // explicit source; generated uses generator's
  ThrustBurn burn{};
  double tf_hours = 12.0;
  std::vector<double> tf_sweep_hours{6.0, 12.0, 18.0};
};

struct PdfSettings {
  int basis_degree = 8;
  std::vector<double> epochs_hours{1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11};
  std::size_t test_samples = 10000;
  double inflation = 1.05;
  double degree_penalty = 1.0;  // K multiplied by (1 + |alpha|)^degree_penalty
  std::string solver = "homotopy";  // or "chambolle_pock"
};

struct SampleSettings {
  std::size_t mc = 10000;
  std::size_t bulk = 100000;
  int histogram_bins = 50;
  std::vector<std::size_t> convergence{100, 1000, 10000, 100000};
  std::size_t timing = 10000;
  int cone_rays = 72;
};

struct ScenarioConfig {
  int schema_version = kSchemaVersion;
  std::string name = "scenario";
  ScenarioKind kind = ScenarioKind::a;
  Study study = Study::moments;
  SystemParams system{};
  ReferenceConfig reference{};
  std::vector<UncertainParam> uncertainty;  // canonical order after parsing
  int cut_order = 8;
  int basis_degree = 4;
  SparseSolveConfig sparse{};
  PdfSettings pdf{};
  SampleSettings samples{};
  std::uint64_t seed = 1;
  double rel_tol = 1e-12;
  double abs_tol = 1e-12;
  std::string output_dir = "out";
  OutputFormat format = OutputFormat::csv;

  /// Sub-seed for a named random stream.
  std::uint64_t seed_for(const std::string& stream) const {
    if (stream == "mc") return seed;
    if (stream == "bulk") return seed + 1;
    if (stream == "test") return seed + 2;
    if (stream == "cut") return seed + 3;
    return seed ^ fnv1a64(stream);
  }
  std::map<std::string, std::uint64_t> seeds() const {
    return {{"mc", seed_for("mc")}, {"bulk", seed_for("bulk")},
            {"test", seed_for("test")}, {"cut", seed_for("cut")}};
  }
  IntegratorOptions integrator() const {
    IntegratorOptions o;
    o.rel_tol = rel_tol;
    o.abs_tol = abs_tol;
    return o;
  }
  bool degenerate() const {
    return std::all_of(uncertainty.begin(), uncertainty.end(),
                       [](const UncertainParam& p) { return p.half_width == 0.0; });
  }
};

namespace detail {

/// Field reader that records consumed keys and reports errors by path.
class ConfigReader {
 public:
  ConfigReader(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_.empty() ? "<root>" : path_, "expected an object");
  }

  std::string at(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
  bool has(const std::string& key) const { return j_.contains(key); }

  template <class T>
  T get(const std::string& key, T def) {
    if (!j_.contains(key)) return def;
    return req<T>(key);
  }

  template <class T>
  T req(const std::string& key) {
    used_.insert(key);
    if (!j_.contains(key)) throw ConfigError(at(key), "required field missing");
    const Json& v = j_.at(key);
    try {
      if constexpr (std::is_same_v<T, double>) {
        if (!v.is_number()) throw ConfigError(at(key), "expected a number");
        const double d = v.get<double>();
        if (!std::isfinite(d)) throw ConfigError(at(key), "must be finite");
        return d;
      } else if constexpr (std::is_same_v<T, bool>) {
        if (!v.is_boolean()) throw ConfigError(at(key), "expected a boolean");
        return v.get<bool>();
      } else if constexpr (std::is_integral_v<T>) {
        if (!v.is_number_integer()) throw ConfigError(at(key), "expected an integer");
        if (std::is_unsigned_v<T> && v.get<long long>() < 0 && !v.is_number_unsigned())
          throw ConfigError(at(key), "must be non-negative");
        return v.get<T>();
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!v.is_string()) throw ConfigError(at(key), "expected a string");
        return v.get<std::string>();
      } else {
        return v.get<T>();
      }
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(at(key), e.what());
    }
  }

  std::vector<double> numbers(const std::string& key, std::vector<double> def) {
    if (!j_.contains(key)) return def;
    used_.insert(key);
    const Json& v = j_.at(key);
    if (!v.is_array()) throw ConfigError(at(key), "expected an array of numbers");
    std::vector<double> out;
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (!v[i].is_number())
        throw ConfigError(at(key) + "[" + std::to_string(i) + "]", "expected a number");
      out.push_back(v[i].get<double>());
    }
    return out;
  }

  ConfigReader child(const std::string& key) {
    used_.insert(key);
    static const Json empty = Json::object();
    return ConfigReader(j_.contains(key) ? j_.at(key) : empty, at(key));
  }

  const Json& raw(const std::string& key) {
    used_.insert(key);
    return j_.at(key);
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!used_.count(it.key())) throw ConfigError(at(it.key()), "unknown field");
  }

 private:
  const Json& j_;
  std::string path_;
  std::set<std::string> used_;
};

}  // namespace detail

/// Checks cross-field constraints; throws ConfigError naming the field.
inline void validate(const ScenarioConfig& c) {
  if (c.schema_version != kSchemaVersion)
    throw ConfigError("schema_version", "unsupported version " + std::to_string(c.schema_version));
  try {
    c.system.validate();
  } catch (const InvalidArgument& e) {
    throw ConfigError("system", e.what());
  }
  const auto& names = param_names(c.kind);
  if (c.uncertainty.size() != names.size())
    throw ConfigError("uncertainty.parameters",
                      std::string("scenario ") + to_string(c.kind) + " needs exactly " +
                          std::to_string(names.size()) + " parameters");
  bool any_zero = false, any_pos = false;
  for (std::size_t i = 0; i < names.size(); ++i) {
    const auto path = "uncertainty.parameters[" + std::to_string(i) + "]";
    if (c.uncertainty[i].name != names[i])
      throw ConfigError(path + ".name", "expected '" + names[i] + "'");
    const double h = c.uncertainty[i].half_width;
    if (!(h >= 0.0) || !std::isfinite(h)) throw ConfigError(path + ".half_width", "must be >= 0");
    (h == 0.0 ? any_zero : any_pos) = true;
  }
  if (any_zero && any_pos)
    throw ConfigError("uncertainty.parameters",
                      "half-widths must be all positive, or all zero for a point-mass run");
  if (c.cut_order != 4 && c.cut_order != 6 && c.cut_order != 8)
    throw ConfigError("cut_order", "must be 4, 6 or 8");
  if (c.basis_degree < 1 || 2 * c.basis_degree > c.cut_order)
    throw ConfigError("basis_degree", "must satisfy 1 <= degree <= cut_order / 2");
  const auto& r = c.reference;
  if (r.source != "generated" && r.source != "explicit")
    throw ConfigError("reference.source", "must be 'generated' or 'explicit'");
  if (!(r.tf_hours > 0.0)) throw ConfigError("reference.tf_hours", "must be > 0");
  for (std::size_t i = 0; i < r.tf_sweep_hours.size(); ++i)
    if (!(r.tf_sweep_hours[i] > 0.0))
      throw ConfigError("reference.tf_sweep_hours[" + std::to_string(i) + "]", "must be > 0");
  if (r.source == "generated") {
    const auto& g = r.generator;
    if (!(g.lyapunov_amplitude_km > 0.0))
      throw ConfigError("reference.lyapunov_amplitude_km", "must be > 0");
    if (!(g.manifold_offset_km > 0.0))
      throw ConfigError("reference.manifold_offset_km", "must be > 0");
    if (g.manifold_branch != 1 && g.manifold_branch != -1)
      throw ConfigError("reference.manifold_branch", "must be +1 or -1");
    if (!(g.manifold_backward_days > 0.0))
      throw ConfigError("reference.manifold_backward_days", "must be > 0");
  }
  const double pre = r.source == "generated" ? r.generator.pre_impulse_hours : r.pre_impulse_hours;
  if (!(pre > 0.0)) throw ConfigError("reference.pre_impulse_hours", "must be > 0");
  if (!(r.burn.thrust_n > 0.0)) throw ConfigError("reference.burn.thrust_n", "must be > 0");
  if (!(r.burn.mass_kg > 0.0)) throw ConfigError("reference.burn.mass_kg", "must be > 0");
  if (!(r.burn.burn_s > 0.0)) throw ConfigError("reference.burn.burn_s", "must be > 0");
  if (c.kind == ScenarioKind::b) {
    const double t1_s = c.uncertainty[0].half_width;
    if (t1_s >= pre * 3600.0)
      throw ConfigError("uncertainty.parameters[0].half_width",
                        "t1 half-width must be shorter than the pre-impulse arc");
    if (c.uncertainty[1].half_width >= r.burn.burn_s)
      throw ConfigError("uncertainty.parameters[1].half_width",
                        "t_b half-width must be shorter than the nominal burn");
  }
  try {
    c.sparse.validate();
  } catch (const InvalidArgument& e) {
    throw ConfigError("sparse", e.what());
  }
  if (c.pdf.basis_degree < 1) throw ConfigError("pdf.basis_degree", "must be >= 1");
  if (c.pdf.epochs_hours.empty()) throw ConfigError("pdf.epochs_hours", "must not be empty");
  for (std::size_t i = 0; i < c.pdf.epochs_hours.size(); ++i)
    if (!(c.pdf.epochs_hours[i] > (i ? c.pdf.epochs_hours[i - 1] : 0.0)))
      throw ConfigError("pdf.epochs_hours[" + std::to_string(i) + "]",
                        "epochs must be positive and increasing");
  if (!(c.pdf.inflation >= 1.0)) throw ConfigError("pdf.inflation", "must be >= 1");
  if (!(c.pdf.degree_penalty >= 0.0)) throw ConfigError("pdf.degree_penalty", "must be >= 0");
  if (c.pdf.solver != "homotopy" && c.pdf.solver != "chambolle_pock")
    throw ConfigError("pdf.solver", "must be 'homotopy' or 'chambolle_pock'");
  if (c.study == Study::pdf_propagation && c.kind != ScenarioKind::a)
    throw ConfigError("study", "pdf_propagation needs a scenario A parameterization");
  if (c.study == Study::pdf_propagation && c.degenerate())
    throw ConfigError("study", "pdf_propagation needs positive half-widths");
  if (c.samples.histogram_bins < 1) throw ConfigError("samples.histogram_bins", "must be >= 1");
  if (c.samples.mc < 1) throw ConfigError("samples.mc", "must be >= 1");
  if (c.samples.bulk < 1) throw ConfigError("samples.bulk", "must be >= 1");
  for (std::size_t i = 0; i < c.samples.convergence.size(); ++i)
    if (c.samples.convergence[i] < 1 ||
        (i && c.samples.convergence[i] <= c.samples.convergence[i - 1]))
      throw ConfigError("samples.convergence[" + std::to_string(i) + "]",
                        "sample counts must be positive and increasing");
  if (c.samples.cone_rays < 4) throw ConfigError("samples.cone_rays", "must be >= 4");
  if (!(c.rel_tol > 0.0)) throw ConfigError("integrator.rel_tol", "must be > 0");
  if (!(c.abs_tol > 0.0)) throw ConfigError("integrator.abs_tol", "must be > 0");
}

inline ScenarioConfig parse_config(const Json& j) {
  using detail::ConfigReader;
  ScenarioConfig c;
  ConfigReader root(j, "");
  c.schema_version = root.req<int>("schema_version");
  if (c.schema_version != kSchemaVersion)
    throw ConfigError("schema_version", "unsupported version " + std::to_string(c.schema_version));
  c.name = root.get<std::string>("name", c.name);
  {
    const auto s = root.req<std::string>("scenario");
    if (s == "A") c.kind = ScenarioKind::a;
    else if (s == "B") c.kind = ScenarioKind::b;
    else throw ConfigError("scenario", "must be 'A' or 'B'");
  }
  {
    const auto s = root.req<std::string>("study");
    if (s == "stt_accuracy") c.study = Study::stt_accuracy;
    else if (s == "moments") c.study = Study::moments;
    else if (s == "pdf_propagation") c.study = Study::pdf_propagation;
    else throw ConfigError("study", "must be stt_accuracy, moments or pdf_propagation");
  }
  {
    auto s = root.child("system");
    c.system.mu = s.get<double>("mu", c.system.mu);
    c.system.lu_km = s.get<double>("lu_km", c.system.lu_km);
    c.system.tu_days = s.get<double>("tu_days", c.system.tu_days);
    s.finish();
  }
  {
    auto r = root.child("reference");
    auto& ref = c.reference;
    ref.source = r.get<std::string>("source", ref.source);
    if (ref.source == "generated") {
      auto& g = ref.generator;
      g.lyapunov_amplitude_km = r.get<double>("lyapunov_amplitude_km", g.lyapunov_amplitude_km);
      g.manifold_offset_km = r.get<double>("manifold_offset_km", g.manifold_offset_km);
      g.manifold_branch = r.get<int>("manifold_branch", g.manifold_branch);
      g.manifold_backward_days = r.get<double>("manifold_backward_days", g.manifold_backward_days);
      g.pre_impulse_hours = r.get<double>("pre_impulse_hours", g.pre_impulse_hours);
    } else if (ref.source == "explicit") {
      const auto v = r.numbers("pre_impulse_state", {});
      if (v.size() != 6)
        throw ConfigError(r.at("pre_impulse_state"), "expected [x, y, z, vx, vy, vz] in km, km/s");
      std::copy(v.begin(), v.end(), ref.pre_impulse.begin());
      ref.thrust_gamma_deg = r.req<double>("thrust_gamma_deg");
      ref.thrust_beta_deg = r.req<double>("thrust_beta_deg");
      ref.pre_impulse_hours = r.get<double>("pre_impulse_hours", ref.pre_impulse_hours);
    } else {
      throw ConfigError(r.at("source"), "must be 'generated' or 'explicit'");
    }
    {
      auto b = r.child("burn");
      ref.burn.thrust_n = b.get<double>("thrust_n", ref.burn.thrust_n);
      ref.burn.mass_kg = b.get<double>("mass_kg", ref.burn.mass_kg);
      ref.burn.burn_s = b.get<double>("burn_s", ref.burn.burn_s);
      b.finish();
    }
    ref.generator.burn_dv_mps = ref.burn.delta_v_mps();
    ref.tf_hours = r.get<double>("tf_hours", ref.tf_hours);
    ref.tf_sweep_hours = r.numbers("tf_sweep_hours", ref.tf_sweep_hours);
    r.finish();
  }
  {
    auto u = root.child("uncertainty");
    const auto dist = u.get<std::string>("distribution", "uniform_box");
    if (dist != "uniform_box") throw ConfigError(u.at("distribution"), "only uniform_box is supported");
    if (!u.has("parameters")) throw ConfigError(u.at("parameters"), "required field missing");
    const Json& ps = u.raw("parameters");
    if (!ps.is_array()) throw ConfigError(u.at("parameters"), "expected an array");
    const auto& names = param_names(c.kind);
    std::vector<std::optional<UncertainParam>> slots(names.size());
    for (std::size_t i = 0; i < ps.size(); ++i) {
      const auto path = u.at("parameters") + "[" + std::to_string(i) + "]";
      ConfigReader p(ps[i], path);
      UncertainParam up;
      up.name = p.req<std::string>("name");
      up.half_width = p.req<double>("half_width");
      if (p.has("unit")) {
        const auto unit = p.req<std::string>("unit");
        if (unit != param_unit(up.name))
          throw ConfigError(p.at("unit"), std::string("expected '") + param_unit(up.name) + "'");
      }
      p.finish();
      const auto it = std::find(names.begin(), names.end(), up.name);
      if (it == names.end())
        throw ConfigError(path + ".name", "'" + up.name + "' is not a scenario " +
                                              to_string(c.kind) + " parameter");
      auto& slot = slots[static_cast<std::size_t>(it - names.begin())];
      if (slot) throw ConfigError(path + ".name", "duplicate parameter '" + up.name + "'");
      slot = up;
    }
    for (std::size_t i = 0; i < names.size(); ++i)
      if (!slots[i]) throw ConfigError(u.at("parameters"), "missing parameter '" + names[i] + "'");
    for (auto& s : slots) c.uncertainty.push_back(*s);
    u.finish();
  }
  c.cut_order = root.get<int>("cut_order", c.cut_order);
  c.basis_degree = root.get<int>("basis_degree", c.basis_degree);
  {
    auto s = root.child("sparse");
    c.sparse.epsilon = s.get<double>("epsilon", c.sparse.epsilon);
    c.sparse.eta = s.get<double>("eta", c.sparse.eta);
    c.sparse.delta_s = s.get<double>("delta_s", c.sparse.delta_s);
    c.sparse.delta_rs = s.get<double>("delta_rs", c.sparse.delta_rs);
    c.sparse.max_iters = s.get<int>("max_iters", c.sparse.max_iters);
    s.finish();
  }
  {
    auto p = root.child("pdf");
    c.pdf.basis_degree = p.get<int>("basis_degree", c.pdf.basis_degree);
    c.pdf.epochs_hours = p.numbers("epochs_hours", c.pdf.epochs_hours);
    c.pdf.test_samples = p.get<std::size_t>("test_samples", c.pdf.test_samples);
    c.pdf.inflation = p.get<double>("inflation", c.pdf.inflation);
    c.pdf.degree_penalty = p.get<double>("degree_penalty", c.pdf.degree_penalty);
    c.pdf.solver = p.get<std::string>("solver", c.pdf.solver);
    p.finish();
  }
  {
    auto s = root.child("samples");
    c.samples.mc = s.get<std::size_t>("mc", c.samples.mc);
    c.samples.bulk = s.get<std::size_t>("bulk", c.samples.bulk);
    c.samples.histogram_bins = s.get<int>("histogram_bins", c.samples.histogram_bins);
    if (s.has("convergence")) {
      const auto v = s.numbers("convergence", {});
      c.samples.convergence.clear();
      for (std::size_t i = 0; i < v.size(); ++i) {
        if (!(v[i] >= 1.0) || v[i] != std::floor(v[i]))
          throw ConfigError(s.at("convergence") + "[" + std::to_string(i) + "]",
                            "expected a positive integer");
        c.samples.convergence.push_back(static_cast<std::size_t>(v[i]));
      }
    }
    c.samples.timing = s.get<std::size_t>("timing", c.samples.timing);
    c.samples.cone_rays = s.get<int>("cone_rays", c.samples.cone_rays);
    s.finish();
  }
  c.seed = root.get<std::uint64_t>("seed", c.seed);
  {
    auto i = root.child("integrator");
    c.rel_tol = i.get<double>("rel_tol", c.rel_tol);
    c.abs_tol = i.get<double>("abs_tol", c.abs_tol);
    i.finish();
  }
  {
    auto o = root.child("output");
    c.output_dir = o.get<std::string>("dir", c.output_dir);
    const auto f = o.get<std::string>("format", to_string(c.format));
    if (f != "csv" && f != "json") throw ConfigError(o.at("format"), "must be csv or json");
    c.format = output_format_from_string(f);
    o.finish();
  }
  root.finish();
  validate(c);
  return c;
}

inline ScenarioConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("<file>", "cannot open " + path.string());
  Json j;
  try {
    j = Json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("<file>", std::string("JSON parse error: ") + e.what());
  }
  return parse_config(j);
}

inline Json to_json(const ScenarioConfig& c) {
  Json j;
  j["schema_version"] = c.schema_version;
  j["name"] = c.name;
  j["scenario"] = to_string(c.kind);
  j["study"] = to_string(c.study);
  j["system"] = {{"mu", c.system.mu}, {"lu_km", c.system.lu_km}, {"tu_days", c.system.tu_days}};
  Json r;
  const auto& ref = c.reference;
  r["source"] = ref.source;
  if (ref.source == "generated") {
    r["lyapunov_amplitude_km"] = ref.generator.lyapunov_amplitude_km;
    r["manifold_offset_km"] = ref.generator.manifold_offset_km;
    r["manifold_branch"] = ref.generator.manifold_branch;
    r["manifold_backward_days"] = ref.generator.manifold_backward_days;
    r["pre_impulse_hours"] = ref.generator.pre_impulse_hours;
  } else {
    r["pre_impulse_state"] = ref.pre_impulse;
    r["thrust_gamma_deg"] = ref.thrust_gamma_deg;
    r["thrust_beta_deg"] = ref.thrust_beta_deg;
    r["pre_impulse_hours"] = ref.pre_impulse_hours;
  }
  r["burn"] = {{"thrust_n", ref.burn.thrust_n},
               {"mass_kg", ref.burn.mass_kg},
               {"burn_s", ref.burn.burn_s}};
  r["tf_hours"] = ref.tf_hours;
  r["tf_sweep_hours"] = ref.tf_sweep_hours;
  j["reference"] = r;
  Json ps = Json::array();
  for (const auto& p : c.uncertainty)
    ps.push_back({{"name", p.name}, {"half_width", p.half_width}, {"unit", param_unit(p.name)}});
  j["uncertainty"] = {{"distribution", "uniform_box"}, {"parameters", ps}};
  j["cut_order"] = c.cut_order;
  j["basis_degree"] = c.basis_degree;
  j["sparse"] = {{"epsilon", c.sparse.epsilon},   {"eta", c.sparse.eta},
                 {"delta_s", c.sparse.delta_s},   {"delta_rs", c.sparse.delta_rs},
                 {"max_iters", c.sparse.max_iters}};
  j["pdf"] = {{"basis_degree", c.pdf.basis_degree},
              {"epochs_hours", c.pdf.epochs_hours},
              {"test_samples", c.pdf.test_samples},
              {"inflation", c.pdf.inflation},
              {"degree_penalty", c.pdf.degree_penalty},
              {"solver", c.pdf.solver}};
  j["samples"] = {{"mc", c.samples.mc},
                  {"bulk", c.samples.bulk},
                  {"histogram_bins", c.samples.histogram_bins},
                  {"convergence", c.samples.convergence},
                  {"timing", c.samples.timing},
                  {"cone_rays", c.samples.cone_rays}};
  j["seed"] = c.seed;
  j["integrator"] = {{"rel_tol", c.rel_tol}, {"abs_tol", c.abs_tol}};
  j["output"] = {{"dir", c.output_dir}, {"format", to_string(c.format)}};
  return j;
}

/// Hash of the canonical serialization (output paths excluded so that the
/// same experiment written to two directories carries the same hash).
inline std::string config_hash(const ScenarioConfig& c) {
  Json j = to_json(c);
  j.erase("output");
  return hex64(fnv1a64(j.dump()));
}

inline OutputMeta make_meta(const ScenarioConfig& c) {
  OutputMeta m;
  m.config_hash = config_hash(c);
  m.seeds = c.seeds();
  m.extra["scenario"] = c.name;
  return m;
}

/// Reference arc in canonical units, independent of how it was obtained.
struct ResolvedReference {
  Vec6 pre_impulse;   // t = 0
  Vec6 post_impulse;  // t = 0
  Vec6 initial;       // t = t_initial < 0
  double t_initial = 0.0;
  double thrust_gamma = 0.0;
  double thrust_beta = 0.0;
  std::optional<LyapunovOrbit> orbit;
  double min_moon_distance_lu = 0.0;
};

inline ResolvedReference resolve_reference(const ScenarioConfig& c) {
  const auto& sp = c.system;
  const auto opt = c.integrator();
  ResolvedReference r;
  ImpulseEvent ev;
  ev.burn = c.reference.burn;
  if (c.reference.source == "generated") {
    ReferenceSpec spec = c.reference.generator;
    spec.burn_dv_mps = c.reference.burn.delta_v_mps();
    const ReferenceTrajectory t = generate_reference(spec, sp, opt);
    r.pre_impulse = t.pre_impulse;
    r.initial = t.initial;
    r.t_initial = t.t_initial;
    r.thrust_gamma = t.thrust_gamma;
    r.thrust_beta = t.thrust_beta;
    r.orbit = t.orbit;
    r.min_moon_distance_lu = t.min_moon_distance_lu;
  } else {
    const auto& s = c.reference.pre_impulse;
    r.pre_impulse << sp.km_to_lu(s[0]), sp.km_to_lu(s[1]), sp.km_to_lu(s[2]),
        s[3] / sp.vu_kms(), s[4] / sp.vu_kms(), s[5] / sp.vu_kms();
    r.thrust_gamma = c.reference.thrust_gamma_deg * kDeg;
    r.thrust_beta = c.reference.thrust_beta_deg * kDeg;
    r.t_initial = -sp.hours_to_tu(c.reference.pre_impulse_hours);
    r.initial = propagate_cartesian(r.pre_impulse, 0.0, r.t_initial, sp, opt);
  }
  ev.gamma_thrust = r.thrust_gamma;
  ev.beta_thrust = r.thrust_beta;
  r.post_impulse = svam_to_cart(apply_impulse(CartState::from_vector(r.pre_impulse), ev, sp), sp)
                       .vector();
  return r;
}

/// Rethrows numerical failures with a stage label.
template <class F>
auto with_stage(const std::string& stage, F&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const ConfigError&) {
    throw;
  } catch (const NumericalError& e) {
    throw NumericalError("stage '" + stage + "': " + e.what());
  } catch (const InvalidArgument& e) {
    throw InvalidArgument("stage '" + stage + "': " + e.what());
  }
}

/// A configured scenario: nominal parameters, box and the parameter-to-final
/// state flow map.
class ScenarioProblem {
 public:
  explicit ScenarioProblem(ScenarioConfig cfg) : cfg_(std::move(cfg)) {
    validate(cfg_);
    ref_ = with_stage("reference", [&] { return resolve_reference(cfg_); });
    const auto& sp = cfg_.system;
    const int d = dim();
    nominal_.resize(d);
    half_width_.resize(d);
    if (cfg_.kind == ScenarioKind::a) {
      const SvamState s = cart_to_svam(CartState::from_vector(ref_.post_impulse), sp);
      c_ref_ = s.c;
      nominal_ << s.r, s.theta, s.phi, s.gamma, s.beta;
      half_width_ << sp.km_to_lu(cfg_.uncertainty[0].half_width),
          cfg_.uncertainty[1].half_width * kDeg, cfg_.uncertainty[2].half_width * kDeg,
          cfg_.uncertainty[3].half_width * kDeg, cfg_.uncertainty[4].half_width * kDeg;
    } else {
      c_ref_ = jacobi_constant(CartState::from_vector(ref_.post_impulse), sp);
      nominal_ << 0.0, cfg_.reference.burn.burn_s, ref_.thrust_gamma, ref_.thrust_beta;
      half_width_ << sp.seconds_to_tu(cfg_.uncertainty[0].half_width),
          cfg_.uncertainty[1].half_width, cfg_.uncertainty[2].half_width * kDeg,
          cfg_.uncertainty[3].half_width * kDeg;
    }
    // Nominal finals over every horizon used; also checks the reference
    // propagates over [t0, t_f].
    with_stage("reference", [&] {
      for (double h : horizons_hours()) nominal_final(h);
      return 0;
    });
  }

  const ScenarioConfig& config() const { return cfg_; }
  const SystemParams& system() const { return cfg_.system; }
  const ResolvedReference& reference() const { return ref_; }
  int dim() const { return static_cast<int>(param_names(cfg_.kind).size()); }
  const Vec& nominal() const { return nominal_; }
  const Vec& half_width() const { return half_width_; }
  double jacobi_reference() const { return c_ref_; }
  bool degenerate() const { return cfg_.degenerate(); }
  double tf_tu(double hours) const { return cfg_.system.hours_to_tu(hours); }

  std::vector<double> horizons_hours() const {
    std::vector<double> h = cfg_.reference.tf_sweep_hours;
    h.push_back(cfg_.reference.tf_hours);
    std::sort(h.begin(), h.end());
    h.erase(std::unique(h.begin(), h.end()), h.end());
    return h;
  }

  /// Final (r, theta, phi, gamma, beta, C) of the nominal parameters.
  Vec6 nominal_final(double tf_hours) const {
    std::lock_guard<std::mutex> lk(cache_mu_);
    for (const auto& [h, v] : nominal_cache_)
      if (h == tf_hours) return v;
    const Vec6 v = raw_flow(nominal_, tf_tu(tf_hours));
    nominal_cache_.emplace_back(tf_hours, v);
    return v;
  }

  /// Flow map from parameters to the final S-VAM state plus C. theta and
  /// gamma are unwrapped onto the branch of the nominal final state.
  Vec6 flow(const Vec& params, double tf_hours) const {
    Vec6 y = raw_flow(params, tf_tu(tf_hours));
    const Vec6 n = nominal_final(tf_hours);
    y[1] = unwrap_near(y[1], n[1]);
    y[3] = unwrap_near(y[3], n[3]);
    return y;
  }

  /// Row-wise flow over a parameter matrix (parallel per row).
  Mat flow_batch(const Mat& params, double tf_hours, const std::string& stage) const {
    nominal_final(tf_hours);
    Mat out(params.rows(), 6);
    with_stage(stage, [&] {
      parallel_for(static_cast<std::size_t>(params.rows()), [&](std::size_t i) {
        const auto r = static_cast<Eigen::Index>(i);
        try {
          out.row(r) = flow(params.row(r).transpose(), tf_hours).transpose();
        } catch (const NumericalError& e) {
          throw NumericalError("sample " + std::to_string(i) + ": " + e.what());
        }
      });
      return 0;
    });
    return out;
  }

  /// Uniform samples in the parameter box.
  Mat sample_params(std::size_t n, std::uint64_t seed) const {
    if (n == 0) return Mat(0, dim());
    const Mat u = mc_sample(Weighting::uniform_box, dim(), n, seed);
    return (u * half_width_.asDiagonal()).rowwise() + nominal_.transpose();
  }

  /// Normalization of the parameter box (unit half-widths for a point mass).
  Normalization box() const {
    return Normalization::from_box(nominal_, degenerate() ? Vec::Ones(dim()) : half_width_);
  }

 private:
  Vec6 raw_flow(const Vec& p, double tf) const {
    const auto& sp = cfg_.system;
    PropagationOptions po;
    po.integrator = cfg_.integrator();
    SvamState s;
    double t = 0.0;
    if (cfg_.kind == ScenarioKind::a) {
      s = SvamState{p[0], p[1], p[2], p[3], p[4], c_ref_};
    } else {
      t = p[0];
      const Vec6 x1 = propagate_cartesian(ref_.initial, ref_.t_initial, t, sp, po.integrator);
      ImpulseEvent ev;
      ev.t1 = t;
      ev.gamma_thrust = p[2];
      ev.beta_thrust = p[3];
      ThrustBurn b = cfg_.reference.burn;
      b.burn_s = p[1];
      ev.burn = b;
      s = apply_impulse(CartState::from_vector(x1), ev, sp);
    }
    const SvamState f = propagate_svam(s, t, tf, sp, po);
    Vec6 y;
    y << f.r, f.theta, f.phi, f.gamma, f.beta, f.c;
    return y;
  }

  ScenarioConfig cfg_;
  ResolvedReference ref_;
  Vec nominal_, half_width_;
  double c_ref_ = 0.0;
  mutable std::mutex cache_mu_;
  mutable std::vector<std::pair<double, Vec6>> nominal_cache_;
};

struct TrainedSurrogate {
  CutPointSet cut;
  Mat node_params;   // physical parameters of the CUT nodes
  Mat node_outputs;  // truth-propagated outputs at the nodes
  SensitivityModel model;
  double tf_hours = 0.0;
};

/// CUT generation in parameter space, node propagation and the CUT-STT fit.
/// A point-mass configuration yields a constant model.
inline TrainedSurrogate train_surrogate(const ScenarioProblem& prob, double tf_hours) {
  const auto& cfg = prob.config();
  TrainedSurrogate t;
  t.tf_hours = tf_hours;
  t.cut = with_stage("cut", [&] {
    CutOptions o;
    o.seed = cfg.seed_for("cut");
    return generate_cut(prob.dim(), cfg.cut_order, Weighting::uniform_box, o);
  });
  t.node_params = scale_nodes(t.cut, prob.nominal(), prob.half_width());
  t.node_outputs = prob.flow_batch(t.node_params, tf_hours, "node propagation");
  t.model = with_stage("fit", [&] {
    if (prob.degenerate()) {
      SensitivityModel m;
      m.basis = build_basis(prob.dim(), 0, PolyFamily::legendre);
      m.norm = prob.box();
      m.d = prob.nominal_final(tf_hours);
      return m;
    }
    const auto basis = build_basis(prob.dim(), cfg.basis_degree, PolyFamily::legendre);
    return fit_cutstt(t.cut, t.node_outputs, basis, prob.box());
  });
  t.model.epoch = prob.tf_tu(tf_hours);
  t.model.tag = cfg.name + "@" + fmt_num(tf_hours) + "h";
  return t;
}

inline MomentSet cut_moments(const TrainedSurrogate& t) {
  return central_moments(t.node_outputs,
                         std::span<const double>(t.cut.weights.data(), t.cut.size()), 4,
                         Standardize::lenient);
}

struct HistogramSet {
  int bins = 0;
  std::size_t sample_count = 0;
  std::vector<std::string> names;
  std::vector<std::vector<double>> edges;          // bins + 1 per state (2 when single-bin)
  std::vector<std::vector<std::size_t>> counts;    // per state
};

/// Per-column histograms over [min, max]; a column with zero range gets a
/// single bin holding every sample.
inline HistogramSet make_histograms(const Mat& samples, int bins,
                                    const std::vector<std::string>& names) {
  if (bins < 1) throw InvalidArgument("make_histograms: bins must be >= 1");
  HistogramSet h;
  h.bins = bins;
  h.sample_count = static_cast<std::size_t>(samples.rows());
  for (Eigen::Index j = 0; j < samples.cols(); ++j) {
    h.names.push_back(j < static_cast<Eigen::Index>(names.size()) ? names[j]
                                                                   : "x" + std::to_string(j));
    const double lo = samples.rows() ? samples.col(j).minCoeff() : 0.0;
    const double hi = samples.rows() ? samples.col(j).maxCoeff() : 0.0;
    if (!(hi > lo)) {
      h.edges.push_back({lo, hi});
      h.counts.push_back({h.sample_count});
      continue;
    }
    std::vector<double> e(static_cast<std::size_t>(bins) + 1);
    for (int b = 0; b <= bins; ++b) e[b] = lo + (hi - lo) * b / bins;
    e.back() = hi;
    std::vector<std::size_t> c(static_cast<std::size_t>(bins), 0);
    for (Eigen::Index i = 0; i < samples.rows(); ++i) {
      auto k = static_cast<long>((samples(i, j) - lo) / (hi - lo) * bins);
      k = std::clamp<long>(k, 0, bins - 1);
      ++c[static_cast<std::size_t>(k)];
    }
    h.edges.push_back(std::move(e));
    h.counts.push_back(std::move(c));
  }
  return h;
}

/// Seeded uniform samples in the model's parameter box pushed through the
/// surrogate; no integration.
inline HistogramSet bulk_histograms(const SensitivityModel& m, std::size_t n, std::uint64_t seed,
                                    int bins = 50, Mat* outputs = nullptr,
                                    const Vec* half_width = nullptr) {
  if (n < 1) throw InvalidArgument("bulk_histograms: n must be >= 1");
  const int d = m.basis.dim;
  const Vec hw = half_width ? *half_width : m.norm.half_width;
  const Mat u = mc_sample(Weighting::uniform_box, d, n, seed);
  const Mat params = (u * hw.asDiagonal()).rowwise() + m.norm.center.transpose();
  Mat y(params.rows(), m.d.rows());
  parallel_for(n, [&](std::size_t i) {
    const auto r = static_cast<Eigen::Index>(i);
    y.row(r) = eval_surrogate(m, params.row(r).transpose()).transpose();
  });
  std::vector<std::string> names = m.d.rows() == 6 ? output_names() : std::vector<std::string>{};
  auto h = make_histograms(y, bins, names);
  if (outputs) *outputs = std::move(y);
  return h;
}

inline Table histogram_table(const HistogramSet& h) {
  Table t;
  t.columns = {"state", "bin", "lo", "hi", "count"};
  for (std::size_t s = 0; s < h.names.size(); ++s)
    for (std::size_t b = 0; b < h.counts[s].size(); ++b)
      t.add({h.names[s], static_cast<double>(b), h.edges[s][b], h.edges[s][b + 1],
             static_cast<double>(h.counts[s][b])});
  return t;
}

inline Table moment_table(const MomentSet& m) {
  Table t;
  t.columns = {"state", "mean", "variance", "skewness", "kurtosis"};
  const auto& names = output_names();
  for (Eigen::Index i = 0; i < m.mean.size(); ++i) {
    const double nan = std::numeric_limits<double>::quiet_NaN();
    t.add({i < 6 ? names[static_cast<std::size_t>(i)] : std::to_string(i), m.mean[i],
           m.variance[i], m.standardized ? m.std_skewness[i] : nan,
           m.standardized ? m.std_kurtosis[i] : nan});
  }
  return t;
}

struct ConvergenceRow {
  std::size_t n = 0;
  double order1 = 0.0, order2 = 0.0, order3 = 0.0;
};

/// Distance between reference (CUT) moments and the moments of the first n
/// rows of `mc`, per order, in coordinates standardized by the reference
/// standard deviations. Columns with degenerate reference variance are dropped.
inline std::vector<ConvergenceRow> moment_convergence(const Mat& ref_points,
                                                      std::span<const double> ref_weights,
                                                      const Mat& mc,
                                                      const std::vector<std::size_t>& ns) {
  const MomentSet ref = central_moments(ref_points, ref_weights, 2, Standardize::none);
  std::vector<Eigen::Index> keep;
  for (Eigen::Index j = 0; j < ref_points.cols(); ++j)
    if (!degenerate_variance(ref.variance[j], ref.mean[j])) keep.push_back(j);
  auto standardize = [&](const Mat& X) {
    Mat Z(X.rows(), static_cast<Eigen::Index>(keep.size()));
    for (std::size_t k = 0; k < keep.size(); ++k) {
      const Eigen::Index j = keep[k];
      Z.col(static_cast<Eigen::Index>(k)) =
          (X.col(j).array() - ref.mean[j]) / std::sqrt(ref.variance[j]);
    }
    return Z;
  };
  std::vector<ConvergenceRow> rows;
  if (keep.empty()) {
    for (auto n : ns) rows.push_back({n, 0.0, 0.0, 0.0});
    return rows;
  }
  const MomentSet r = central_moments(standardize(ref_points), ref_weights, 3, Standardize::none);
  for (auto n : ns) {
    if (n > static_cast<std::size_t>(mc.rows()))
      throw InvalidArgument("moment_convergence: n exceeds the MC sample count");
    const MomentSet m =
        central_moments(standardize(mc.topRows(static_cast<Eigen::Index>(n))), 3,
                        Standardize::none);
    rows.push_back({n, (m.mean - r.mean).norm(), (m.covariance - r.covariance).norm(),
                    (m.skewness - r.skewness).norm()});
  }
  return rows;
}

struct AccuracyResult {
  double tf_hours = 0.0;
  MahalanobisReport report;
  Mat params;             // MC parameter samples
  Mat truth, surrogate;   // final states
  double rmse_md3_km = 0.0;       // RMSE position error over samples with M_d(t_f) <= 3
  std::size_t md3_count = 0;
  double rmse_km = 0.0;
  double max_err_km = 0.0;
  double rmse_vel_kmps = 0.0;
  double position_std_km = 0.0;   // sqrt(trace of the truth position covariance)
  std::size_t extrapolated = 0;
};

/// Monte Carlo truth against the surrogate at t_f.
inline AccuracyResult accuracy_study(const ScenarioProblem& prob, const TrainedSurrogate& t,
                                     std::size_t n, std::uint64_t seed) {
  AccuracyResult a;
  a.tf_hours = t.tf_hours;
  a.params = prob.sample_params(n, seed);
  a.truth = prob.flow_batch(a.params, t.tf_hours, "monte carlo truth");
  a.surrogate = eval_surrogate_batch(t.model, a.params, &a.extrapolated);
  const auto& sp = prob.system();
  if (prob.degenerate()) {
    a.report.md_initial.assign(n, 0.0);
    a.report.md_final.assign(n, 0.0);
    a.report.pos_err_km.assign(n, 0.0);
    a.report.vel_err_kmps.assign(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      const auto r = static_cast<Eigen::Index>(i);
      auto cart = [&](const Mat& M) {
        return svam_to_cart(SvamState{M(r, 0), M(r, 1), M(r, 2), M(r, 3), M(r, 4), M(r, 5)}, sp);
      };
      const CartState x = cart(a.truth), y = cart(a.surrogate);
      a.report.pos_err_km[i] = (x.pos - y.pos).norm() * sp.lu_km;
      a.report.vel_err_kmps[i] = (x.vel - y.vel).norm() * sp.vu_kms();
    }
  } else {
    a.report = with_stage("mahalanobis", [&] {
      return mahalanobis_report(a.params, a.truth, a.surrogate, sp);
    });
  }
  double s2 = 0.0, s2all = 0.0, v2 = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double e = a.report.pos_err_km[i];
    s2all += e * e;
    v2 += a.report.vel_err_kmps[i] * a.report.vel_err_kmps[i];
    a.max_err_km = std::max(a.max_err_km, e);
    if (a.report.md_final[i] <= 3.0) {
      s2 += e * e;
      ++a.md3_count;
    }
  }
  a.rmse_md3_km = a.md3_count ? std::sqrt(s2 / static_cast<double>(a.md3_count)) : 0.0;
  a.rmse_km = n ? std::sqrt(s2all / static_cast<double>(n)) : 0.0;
  a.rmse_vel_kmps = n ? std::sqrt(v2 / static_cast<double>(n)) : 0.0;
  Mat pos(static_cast<Eigen::Index>(n), 3);
  for (Eigen::Index i = 0; i < pos.rows(); ++i) {
    const SvamState s{a.truth(i, 0), a.truth(i, 1), a.truth(i, 2),
                      a.truth(i, 3), a.truth(i, 4), a.truth(i, 5)};
    pos.row(i) = svam_position(s.r, s.theta, s.phi).transpose() * sp.lu_km;
  }
  if (n > 0) a.position_std_km = std::sqrt(sample_mean_cov(pos).second.trace());
  return a;
}

inline Table report_table(const MahalanobisReport& r) {
  Table t;
  t.columns = {"sample_id", "Md_initial", "Md_final", "pos_err_km", "vel_err_kmps"};
  for (std::size_t i = 0; i < r.md_initial.size(); ++i)
    t.add({static_cast<double>(i), r.md_initial[i], r.md_final[i], r.pos_err_km[i],
           r.vel_err_kmps[i]});
  return t;
}

struct TimingReport {
  std::size_t n = 0;
  double direct_s = 0.0;
  double surrogate_s = 0.0;
  double ratio = std::numeric_limits<double>::quiet_NaN();  // undefined for n = 0
};

/// Wall-clock time of direct integration vs surrogate evaluation of the same
/// n parameter samples, both single-threaded.
inline TimingReport timing_report(const ScenarioProblem& prob, const TrainedSurrogate& t,
                                  std::size_t n, std::uint64_t seed, bool run_direct = true) {
  using clock = std::chrono::steady_clock;
  TimingReport r;
  r.n = n;
  const Mat params = prob.sample_params(n, seed);
  prob.nominal_final(t.tf_hours);
  Vec6 sink = Vec6::Zero();
  if (run_direct) {
    const auto t0 = clock::now();
    for (Eigen::Index i = 0; i < params.rows(); ++i)
      sink += prob.flow(params.row(i).transpose(), t.tf_hours);
    r.direct_s = std::chrono::duration<double>(clock::now() - t0).count();
  }
  {
    const auto t0 = clock::now();
    for (Eigen::Index i = 0; i < params.rows(); ++i)
      sink += eval_surrogate(t.model, params.row(i).transpose());
    r.surrogate_s = std::chrono::duration<double>(clock::now() - t0).count();
  }
  if (!std::isfinite(sink.sum())) warn("timing_report: non-finite outputs");
  if (n > 0 && r.surrogate_s > 0.0) r.ratio = r.direct_s / r.surrogate_s;
  return r;
}

/// Sampled boundary rays of the (gamma, beta) pointing box about the nominal
/// direction: the velocity direction for scenario A, the thrust direction for
/// scenario B. Origins are the impulse-point position (km).
inline Table cone_rays(const ScenarioProblem& prob, int count) {
  const auto& sp = prob.system();
  const int ig = prob.config().kind == ScenarioKind::a ? 3 : 2;
  const double g0 = prob.nominal()[ig], b0 = prob.nominal()[ig + 1];
  const double dg = prob.half_width()[ig], db = prob.half_width()[ig + 1];
  const Vec3 origin = prob.reference().post_impulse.head<3>() * sp.lu_km;
  Table t;
  t.columns = {"ray", "gamma_deg", "beta_deg", "ux", "uy", "uz", "x0_km", "y0_km", "z0_km"};
  for (int k = 0; k < count; ++k) {
    // Walk the rectangle perimeter at uniform arc length.
    const double per = 4.0;
    const double s = per * k / count;
    double u, v;
    if (s < 1.0) u = -1.0 + 2.0 * s, v = -1.0;
    else if (s < 2.0) u = 1.0, v = -1.0 + 2.0 * (s - 1.0);
    else if (s < 3.0) u = 1.0 - 2.0 * (s - 2.0), v = 1.0;
    else u = -1.0, v = 1.0 - 2.0 * (s - 3.0);
    const double g = g0 + u * dg, b = b0 + v * db;
    const Vec3 d(std::cos(b) * std::cos(g), std::cos(b) * std::sin(g), std::sin(b));
    t.add({static_cast<double>(k), g / kDeg, b / kDeg, d.x(), d.y(), d.z(), origin.x(),
           origin.y(), origin.z()});
  }
  return t;
}

struct PdfStudyResult {
  PdfRun run;
  std::size_t basis_count = 0;
  std::size_t collocation_points = 0;
  std::size_t test_points = 0;
};

/// Sparse pdf propagation for a scenario A box: CUT collocation seeds, a
/// uniform initial density and seeded test points.
inline PdfStudyResult pdf_study(const ScenarioProblem& prob) {
  const auto& cfg = prob.config();
  if (cfg.kind != ScenarioKind::a) throw InvalidArgument("pdf_study: scenario A required");
  PdfStudyResult res;
  const CutPointSet cut = with_stage("cut", [&] {
    CutOptions o;
    o.seed = cfg.seed_for("cut");
    return generate_cut(prob.dim(), cfg.cut_order, Weighting::uniform_box, o);
  });
  const Mat seeds = scale_nodes(cut, prob.nominal(), prob.half_width());
  const Mat test_seeds = prob.sample_params(cfg.pdf.test_samples, cfg.seed_for("test"));
  const auto basis = build_basis(prob.dim(), cfg.pdf.basis_degree, PolyFamily::legendre);
  const LogPdfModel initial = uniform_box_model(basis, prob.nominal(), prob.half_width(), 0.0);
  const double log_p0c = -(2.0 * prob.half_width().array()).log().sum();
  const LogDensityFn log_p0 = [log_p0c](const Vec&) { return log_p0c; };
  PropagationOptions po;
  po.integrator = cfg.integrator();
  SvamCr3bpFlow flow(seeds, prob.jacobi_reference(), 0.0, cfg.system, po);
  std::optional<SvamCr3bpFlow> test;
  if (test_seeds.rows() > 0)
    test.emplace(test_seeds, prob.jacobi_reference(), 0.0, cfg.system, po);
  std::vector<double> epochs;
  for (double h : cfg.pdf.epochs_hours) epochs.push_back(prob.tf_tu(h));
  BpdnSolver inner = homotopy_bpdn;
  if (cfg.pdf.solver == "chambolle_pock") inner = chambolle_pock_bpdn();
  SparseSolveConfig sc = cfg.sparse;
  if (cfg.pdf.degree_penalty > 0.0) {
    sc.penalty.resize(static_cast<Eigen::Index>(basis.size()));
    for (std::size_t k = 0; k < basis.size(); ++k)
      sc.penalty[static_cast<Eigen::Index>(k)] =
          std::pow(1.0 + basis.degree(k), cfg.pdf.degree_penalty);
  }
  res.run = with_stage("pdf propagation", [&] {
    return propagate_pdf(initial, flow, std::span<const double>(cut.weights.data(), cut.size()),
                         log_p0, epochs, sc, test ? &*test : nullptr, inner,
                         cfg.pdf.inflation);
  });
  res.basis_count = basis.size();
  res.collocation_points = cut.size();
  res.test_points = static_cast<std::size_t>(test_seeds.rows());
  return res;
}

inline Table pdf_timeline_table(const PdfStudyResult& r, const SystemParams& sp) {
  Table t;
  t.columns = {"epoch_h", "ls_nonzero", "rs_nonzero", "model_nonzero", "training_error",
               "testing_error", "test_outside", "l1_iterations", "l1_converged"};
  for (const auto& e : r.run.timeline)
    t.add({e.epoch * sp.tu_hours(), static_cast<double>(e.ls_nonzero),
           static_cast<double>(e.rs_nonzero), static_cast<double>(e.model_nonzero),
           e.training_error, e.testing_error, static_cast<double>(e.test_outside),
           static_cast<double>(e.l1_iterations), e.l1_converged ? std::string("true")
                                                                : std::string("false")});
  return t;
}

inline Json reference_json(const ScenarioProblem& prob) {
  const auto& r = prob.reference();
  const auto& sp = prob.system();
  auto km = [&](const Vec6& x) {
    return Json::array({x[0] * sp.lu_km, x[1] * sp.lu_km, x[2] * sp.lu_km, x[3] * sp.vu_kms(),
                        x[4] * sp.vu_kms(), x[5] * sp.vu_kms()});
  };
  Json j;
  j["pre_impulse_km_kms"] = km(r.pre_impulse);
  j["post_impulse_km_kms"] = km(r.post_impulse);
  j["initial_km_kms"] = km(r.initial);
  j["t_initial_hours"] = r.t_initial * sp.tu_hours();
  j["thrust_gamma_deg"] = r.thrust_gamma / kDeg;
  j["thrust_beta_deg"] = r.thrust_beta / kDeg;
  j["jacobi_post_impulse"] = jacobi_constant(CartState::from_vector(r.post_impulse), sp);
  j["nominal_parameters"] = to_json(prob.nominal());
  j["half_widths_canonical"] = to_json(prob.half_width());
  if (r.orbit) {
    j["lyapunov"] = {{"x0_lu", r.orbit->x0[0]},
                     {"vy0_vu", r.orbit->x0[4]},
                     {"period_tu", r.orbit->period},
                     {"jacobi", r.orbit->jacobi},
                     {"closure", r.orbit->closure}};
    j["min_moon_distance_km"] = r.min_moon_distance_lu * sp.lu_km;
  }
  Json fin = Json::object();
  for (double h : prob.horizons_hours()) fin[fmt_num(h) + "h"] = to_json(Vec(prob.nominal_final(h)));
  j["nominal_final"] = fin;
  return j;
}

/// Executes the configured study and writes the output bundle to `out_dir`.
/// Returns a summary (also written as summary.json).
inline Json run_scenario(const ScenarioConfig& cfg, const std::filesystem::path& out_dir) {
  const ScenarioProblem prob(cfg);
  std::filesystem::create_directories(out_dir);
  const OutputMeta meta = make_meta(cfg);
  const auto fmt = cfg.format;
  const auto& sp = cfg.system;
  Json summary;
  summary["meta"] = meta.to_json();
  summary["study"] = to_string(cfg.study);
  summary["scenario"] = to_string(cfg.kind);
  summary["degenerate"] = cfg.degenerate();
  Json files = Json::array();
  auto add = [&](const std::filesystem::path& p) { files.push_back(p.filename().string()); };

  {
    Json r;
    r["meta"] = meta.to_json();
    r["reference"] = reference_json(prob);
    write_json(out_dir / "reference.json", r);
    add(out_dir / "reference.json");
  }
  add(write_table(out_dir / "cone_rays", cone_rays(prob, cfg.samples.cone_rays), meta, fmt));

  if (cfg.study == Study::stt_accuracy) {
    Json acc = Json::array();
    for (double h : cfg.reference.tf_sweep_hours) {
      const TrainedSurrogate t = train_surrogate(prob, h);
      const auto tag = fmt_num(h) + "h";
      write_json(out_dir / ("model_" + tag + ".json"), to_json(t.model, meta));
      add(out_dir / ("model_" + tag + ".json"));
      const AccuracyResult a = accuracy_study(prob, t, cfg.samples.mc, cfg.seed_for("mc"));
      add(write_table(out_dir / ("report_" + tag), report_table(a.report), meta, fmt));
      acc.push_back({{"tf_hours", h},
                     {"cut_points", t.cut.size()},
                     {"cut_construction", t.cut.native() ? "native" : "tensor_gauss"},
                     {"fit_residual_max", t.model.fit_residual_max},
                     {"fit_residual_rms", t.model.fit_residual_rms},
                     {"rmse_pos_km_md3", a.rmse_md3_km},
                     {"md3_count", a.md3_count},
                     {"rmse_pos_km", a.rmse_km},
                     {"max_pos_err_km", a.max_err_km},
                     {"rmse_vel_kmps", a.rmse_vel_kmps},
                     {"position_std_km", a.position_std_km},
                     {"extrapolated", a.extrapolated}});
    }
    summary["accuracy"] = acc;
  } else if (cfg.study == Study::moments) {
    const double h = cfg.reference.tf_hours;
    const TrainedSurrogate t = train_surrogate(prob, h);
    write_json(out_dir / "model.json", to_json(t.model, meta));
    add(out_dir / "model.json");
    const MomentSet mc_cut = cut_moments(t);
    const MomentSet mc_sur = surrogate_moments(t.model, t.cut);
    add(write_table(out_dir / "moments_cut", moment_table(mc_cut), meta, fmt));
    add(write_table(out_dir / "moments_surrogate", moment_table(mc_sur), meta, fmt));
    const Vec hw = prob.half_width();
    const HistogramSet hs =
        bulk_histograms(t.model, cfg.samples.bulk, cfg.seed_for("bulk"),
                        cfg.samples.histogram_bins, nullptr, &hw);
    add(write_table(out_dir / "histograms", histogram_table(hs), meta, fmt));
    if (!cfg.samples.convergence.empty()) {
      const Mat params = prob.sample_params(cfg.samples.convergence.back(), cfg.seed_for("mc"));
      const Mat truth = prob.flow_batch(params, h, "monte carlo truth");
      const auto rows = moment_convergence(
          t.node_outputs, std::span<const double>(t.cut.weights.data(), t.cut.size()), truth,
          cfg.samples.convergence);
      Table ct;
      ct.columns = {"n", "order1", "order2", "order3"};
      for (const auto& r : rows) ct.add({static_cast<double>(r.n), r.order1, r.order2, r.order3});
      add(write_table(out_dir / "moment_convergence", ct, meta, fmt));
      const MomentSet mmc = central_moments(truth, 4, Standardize::lenient);
      add(write_table(out_dir / "moments_mc", moment_table(mmc), meta, fmt));
    }
    Json m;
    m["cut_points"] = t.cut.size();
    m["cut_construction"] = t.cut.native() ? "native" : "tensor_gauss";
    m["fit_residual_max"] = t.model.fit_residual_max;
    m["fit_residual_rms"] = t.model.fit_residual_rms;
    m["cut"] = to_json(mc_cut, output_names());
    summary["moments"] = m;
  } else {
    const PdfStudyResult r = pdf_study(prob);
    add(write_table(out_dir / "pdf_timeline", pdf_timeline_table(r, sp), meta, fmt));
    Json supp = Json::array();
    for (const auto& e : r.run.timeline) {
      Json s;
      s["epoch_h"] = e.epoch * sp.tu_hours();
      s["support"] = e.support;
      Json dc = Json::array();
      for (auto i : e.support) dc.push_back(e.dc_rs[i]);
      s["dc_rs"] = dc;
      supp.push_back(s);
    }
    write_json(out_dir / "pdf_supports.json", {{"meta", meta.to_json()}, {"epochs", supp}});
    add(out_dir / "pdf_supports.json");
    Json fm;
    fm["meta"] = meta.to_json();
    fm["basis"] = basis_header(r.run.final_model.basis);
    fm["normalization"] = {{"center", to_json(r.run.final_model.norm.center)},
                           {"half_width", to_json(r.run.final_model.norm.half_width)}};
    fm["epoch_tu"] = r.run.final_model.epoch;
    fm["coefficients"] = to_json(r.run.final_model.coeffs);
    write_json(out_dir / "pdf_final_model.json", fm);
    add(out_dir / "pdf_final_model.json");
    const auto& last = r.run.timeline.back();
    summary["pdf"] = {{"basis_count", r.basis_count},
                      {"collocation_points", r.collocation_points},
                      {"test_points", r.test_points},
                      {"final_epoch_h", last.epoch * sp.tu_hours()},
                      {"rs_nonzero", last.rs_nonzero},
                      {"model_nonzero", last.model_nonzero},
                      {"training_error", last.training_error},
                      {"testing_error", last.testing_error},
                      {"max_abs_log_det_stm", r.run.max_abs_log_det_stm}};
  }
  summary["files"] = files;
  write_json(out_dir / "summary.json", summary);
  return summary;
}

}  // namespace svamuq
