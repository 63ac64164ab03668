#pragma once

// Output helpers: shortest round-trip number formatting, CSV tables with a
// comment metadata header, and JSON conversions.

#include "svamuq/core.hpp"
#include "svamuq/cut.hpp"
#include "svamuq/pdf.hpp"
#include "svamuq/stt.hpp"

#include <nlohmann/json.hpp>

#include <charconv>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <variant>
#include <vector>

namespace svamuq {

inline constexpr const char* kToolVersion = "0.1.0";

using Json = nlohmann::ordered_json;

inline std::string fmt_num(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  static const char* d = "0123456789abcdef";
  for (int i = 15; i >= 0; --i) {
    buf[i] = d[v & 0xF];
    v >>= 4;
  }
  buf[16] = 0;
  return buf;
}

struct OutputMeta {
  std::string config_hash;
  std::map<std::string, std::uint64_t> seeds;
  std::map<std::string, std::string> extra;

  Json to_json() const {
    Json j;
    j["tool"] = "svamuq";
    j["version"] = kToolVersion;
    j["config_hash"] = config_hash;
    Json s = Json::object();
    for (const auto& [k, v] : seeds) s[k] = v;
    j["seeds"] = s;
    for (const auto& [k, v] : extra) j[k] = v;
    return j;
  }

  std::string csv_header() const {
    std::string h = "# tool=svamuq version=" + std::string(kToolVersion) +
                    " config_hash=" + config_hash;
    for (const auto& [k, v] : seeds) h += " seed." + k + "=" + std::to_string(v);
    h += "\n";
    for (const auto& [k, v] : extra) h += "# " + k + "=" + v + "\n";
    return h;
  }
};

class CsvWriter {
 public:
  CsvWriter(const std::filesystem::path& path, const OutputMeta& meta,
            const std::vector<std::string>& columns)
      : out_(path) {
    if (!out_) throw Error("cannot open " + path.string() + " for writing");
    out_ << meta.csv_header();
    for (std::size_t i = 0; i < columns.size(); ++i) out_ << (i ? "," : "") << columns[i];
    out_ << '\n';
  }
  CsvWriter& row(const std::vector<double>& v) {
    for (std::size_t i = 0; i < v.size(); ++i) out_ << (i ? "," : "") << fmt_num(v[i]);
    out_ << '\n';
    return *this;
  }
  CsvWriter& row(const std::vector<std::string>& v) {
    for (std::size_t i = 0; i < v.size(); ++i) out_ << (i ? "," : "") << v[i];
    out_ << '\n';
    return *this;
  }

 private:
  std::ofstream out_;
};

inline void write_json(const std::filesystem::path& path, const Json& j) {
  std::ofstream o(path);
  if (!o) throw Error("cannot open " + path.string() + " for writing");
  o << j.dump(2) << '\n';
}

enum class OutputFormat { csv, json };

inline OutputFormat output_format_from_string(const std::string& s) {
  if (s == "csv") return OutputFormat::csv;
  if (s == "json") return OutputFormat::json;
  throw InvalidArgument("unknown output format '" + s + "' (expected csv or json)");
}

inline const char* to_string(OutputFormat f) { return f == OutputFormat::csv ? "csv" : "json"; }

/// Column-oriented report table; cells are numbers or strings.
struct Table {
  using Cell = std::variant<double, std::string>;
  std::vector<std::string> columns;
  std::vector<std::vector<Cell>> rows;

  void add(std::vector<Cell> r) {
    if (r.size() != columns.size()) throw InvalidArgument("Table: row width mismatch");
    rows.push_back(std::move(r));
  }
};

inline std::string cell_text(const Table::Cell& c) {
  if (auto* d = std::get_if<double>(&c)) return fmt_num(*d);
  return std::get<std::string>(c);
}

/// Writes `stem` + ".csv" or ".json"; returns the file name written.
inline std::filesystem::path write_table(const std::filesystem::path& stem, const Table& t,
                                         const OutputMeta& meta, OutputFormat fmt) {
  std::filesystem::path p = stem;
  p += fmt == OutputFormat::csv ? ".csv" : ".json";
  if (fmt == OutputFormat::csv) {
    std::ofstream o(p);
    if (!o) throw Error("cannot open " + p.string() + " for writing");
    o << meta.csv_header();
    for (std::size_t i = 0; i < t.columns.size(); ++i) o << (i ? "," : "") << t.columns[i];
    o << '\n';
    for (const auto& r : t.rows) {
      for (std::size_t i = 0; i < r.size(); ++i) o << (i ? "," : "") << cell_text(r[i]);
      o << '\n';
    }
  } else {
    Json j;
    j["meta"] = meta.to_json();
    j["columns"] = t.columns;
    Json rows = Json::array();
    for (const auto& r : t.rows) {
      Json jr = Json::array();
      for (const auto& c : r) {
        if (auto* d = std::get_if<double>(&c)) {
          if (std::isfinite(*d)) jr.push_back(*d);
          else jr.push_back(nullptr);
        } else {
          jr.push_back(std::get<std::string>(c));
        }
      }
      rows.push_back(jr);
    }
    j["rows"] = rows;
    write_json(p, j);
  }
  return p;
}

inline Json to_json(const Vec& v) {
  Json a = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

inline Json to_json_rows(const Mat& m) {
  Json a = Json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) a.push_back(to_json(Vec(m.row(i).transpose())));
  return a;
}

inline Json to_json(const CutPointSet& cs, const OutputMeta& meta) {
  Json j;
  j["meta"] = meta.to_json();
  j["dim"] = cs.dim;
  j["order"] = cs.order;
  j["weighting"] = to_string(cs.weighting);
  j["construction"] = cs.native() ? "native" : "tensor_gauss";
  if (!cs.note.empty()) j["note"] = cs.note;
  Json fams = Json::array();
  for (const auto& f : cs.families) {
    Json jf;
    jf["kind"] = to_string(f.kind);
    jf["support"] = f.support;
    jf["weight"] = f.weight;
    jf["a"] = f.a;
    if (f.kind == AxisKind::conjugate_scaled) jf["b"] = f.b;
    fams.push_back(jf);
  }
  j["families"] = fams;
  j["weights"] = to_json(cs.weights);
  j["nodes"] = to_json_rows(cs.nodes);
  return j;
}

inline void write_cut_csv(const std::filesystem::path& path, const CutPointSet& cs,
                          OutputMeta meta) {
  meta.extra["cut"] = "dim=" + std::to_string(cs.dim) + " order=" + std::to_string(cs.order) +
                      " weighting=" + to_string(cs.weighting) +
                      " construction=" + (cs.native() ? "native" : "tensor_gauss") +
                      " points=" + std::to_string(cs.size());
  std::vector<std::string> cols{"w"};
  for (int j = 0; j < cs.dim; ++j) cols.push_back("x" + std::to_string(j + 1));
  CsvWriter w(path, meta, cols);
  for (std::size_t i = 0; i < cs.size(); ++i) {
    std::vector<double> r{cs.weights[static_cast<Eigen::Index>(i)]};
    for (int j = 0; j < cs.dim; ++j) r.push_back(cs.nodes(static_cast<Eigen::Index>(i), j));
    w.row(r);
  }
}

inline Json basis_header(const MultiIndexBasis& b) {
  Json j;
  j["family"] = to_string(b.family);
  j["dim"] = b.dim;
  j["max_degree"] = b.max_degree;
  j["ordering"] = "graded, descending lexicographic within degree";
  Json idx = Json::array();
  for (const auto& a : b.indices) idx.push_back(a);
  j["indices"] = idx;
  return j;
}

inline Json to_json(const SensitivityModel& m, const OutputMeta& meta) {
  Json j;
  j["meta"] = meta.to_json();
  j["tag"] = m.tag;
  j["epoch_tu"] = m.epoch;
  j["basis"] = basis_header(m.basis);
  j["normalization"] = {{"center", to_json(m.norm.center)},
                        {"half_width", to_json(m.norm.half_width)}};
  j["outputs"] = m.d.rows();
  Json d = Json::array();
  for (Eigen::Index r = 0; r < m.d.rows(); ++r)
    for (Eigen::Index c = 0; c < m.d.cols(); ++c) d.push_back(m.d(r, c));
  j["d_row_major"] = d;
  j["fit_residual_max"] = m.fit_residual_max;
  j["fit_residual_rms"] = m.fit_residual_rms;
  return j;
}

inline SensitivityModel sensitivity_model_from_json(const Json& j) {
  SensitivityModel m;
  const auto& b = j.at("basis");
  m.basis = build_basis(b.at("dim"), b.at("max_degree"),
                        poly_family_from_string(b.at("family").get<std::string>()));
  auto vec = [](const Json& a) {
    Vec v(static_cast<Eigen::Index>(a.size()));
    for (std::size_t i = 0; i < a.size(); ++i) v[static_cast<Eigen::Index>(i)] = a[i].get<double>();
    return v;
  };
  m.norm = Normalization::from_box(vec(j.at("normalization").at("center")),
                                   vec(j.at("normalization").at("half_width")));
  const Eigen::Index rows = j.at("outputs").get<Eigen::Index>();
  const Vec d = vec(j.at("d_row_major"));
  const Eigen::Index cols = static_cast<Eigen::Index>(m.basis.size());
  if (d.size() != rows * cols) throw InvalidArgument("model file: D size mismatch");
  m.d.resize(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m.d(r, c) = d[r * cols + c];
  m.epoch = j.value("epoch_tu", 0.0);
  m.tag = j.value("tag", std::string());
  m.fit_residual_max = j.value("fit_residual_max", 0.0);
  m.fit_residual_rms = j.value("fit_residual_rms", 0.0);
  return m;
}

inline Json to_json(const MomentSet& m, const std::vector<std::string>& names) {
  Json j;
  Json rows = Json::array();
  for (Eigen::Index i = 0; i < m.mean.size(); ++i) {
    Json r;
    r["state"] = i < static_cast<Eigen::Index>(names.size()) ? names[i] : std::to_string(i);
    r["mean"] = m.mean[i];
    r["variance"] = m.variance.size() ? m.variance[i] : 0.0;
    if (m.standardized) {
      r["skewness"] = std::isnan(m.std_skewness[i]) ? Json() : Json(m.std_skewness[i]);
      r["kurtosis"] = std::isnan(m.std_kurtosis[i]) ? Json() : Json(m.std_kurtosis[i]);
    }
    rows.push_back(r);
  }
  j["univariate"] = rows;
  j["covariance"] = to_json_rows(m.covariance);
  return j;
}

}  // namespace svamuq
