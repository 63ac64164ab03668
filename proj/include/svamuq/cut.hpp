#pragma once

// Conjugate Unscented Transform point sets.
//
// Nodes are unions of fully symmetric axis families: closed under every
// coordinate sign flip and every coordinate permutation. Under that symmetry
// each odd moment vanishes term by term and the even moments collapse to one
// equation per even exponent partition, which is solved for the family
// weights and radii.

#include "svamuq/core.hpp"
#include "svamuq/sampling.hpp"

#include <Eigen/QR>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace svamuq {

class NoSolutionError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

enum class AxisKind {
  center,
  principal,           // one nonzero coordinate
  conjugate_pair,      // two nonzero coordinates of equal magnitude
  conjugate_partial,   // 2 < k < dim nonzero coordinates of equal magnitude
  conjugate_full,      // every coordinate nonzero, equal magnitude
  conjugate_scaled,    // k nonzero coordinates: one of magnitude a, the rest b
};

inline const char* to_string(AxisKind k) {
  switch (k) {
    case AxisKind::center: return "center";
    case AxisKind::principal: return "principal";
    case AxisKind::conjugate_pair: return "conjugate_pair";
    case AxisKind::conjugate_partial: return "conjugate_partial";
    case AxisKind::conjugate_full: return "conjugate_full";
    case AxisKind::conjugate_scaled: return "conjugate_scaled";
  }
  return "?";
}

/// One symmetric family. `a` is the magnitude of every nonzero coordinate
/// (of the distinguished coordinate for conjugate_scaled, whose remaining
/// k-1 coordinates have magnitude `b`). `weight` is the per-node weight.
struct AxisFamily {
  AxisKind kind = AxisKind::center;
  int support = 0;
  double weight = 0.0;
  double a = 0.0;
  double b = 0.0;

  /// Distance of each node from the origin.
  double radius() const {
    if (kind == AxisKind::center) return 0.0;
    if (kind == AxisKind::conjugate_scaled)
      return std::sqrt(a * a + (support - 1) * b * b);
    return a * std::sqrt(static_cast<double>(support));
  }
};

enum class CutConstruction { native, tensor_gauss };

struct CutPointSet {
  int dim = 0;
  int order = 0;
  Weighting weighting = Weighting::uniform_box;
  Mat nodes;  // N x dim
  Vec weights;
  CutConstruction construction = CutConstruction::native;
  std::vector<AxisFamily> families;  // empty for tensor_gauss
  std::string note;                  // fallback reason, if any

  std::size_t size() const { return static_cast<std::size_t>(nodes.rows()); }
  bool native() const { return construction == CutConstruction::native; }
};

namespace detail {

inline double binom(int n, int k) {
  if (k < 0 || k > n) return 0.0;
  double r = 1.0;
  for (int i = 1; i <= k; ++i) r = r * (n - k + i) / i;
  return std::round(r);
}

/// Raw moment of a single coordinate under the weighting distribution.
inline double raw_moment_1d(Weighting w, int e) {
  if (e % 2) return 0.0;
  if (w == Weighting::uniform_box) return 1.0 / (e + 1.0);
  double m = 1.0;
  for (int k = e - 1; k > 0; k -= 2) m *= k;
  return m;
}

inline double raw_moment(Weighting w, const std::vector<int>& e) {
  double m = 1.0;
  for (int k : e) m *= raw_moment_1d(w, k);
  return m;
}

/// Even exponent partitions (descending, positive parts) with total degree
/// <= order and at most `dim` parts. Includes the empty partition.
inline std::vector<std::vector<int>> even_partitions(int dim, int order) {
  std::vector<std::vector<int>> out;
  std::vector<int> cur;
  std::function<void(int, int)> rec = [&](int remaining, int max_part) {
    out.push_back(cur);
    if (static_cast<int>(cur.size()) == dim) return;
    for (int p = std::min(remaining, max_part); p >= 2; p -= 2) {
      cur.push_back(p);
      rec(remaining - p, p);
      cur.pop_back();
    }
  };
  rec(order - order % 2, order - order % 2);
  return out;
}

inline int family_params(AxisKind k) {
  return k == AxisKind::center ? 1 : (k == AxisKind::conjugate_scaled ? 3 : 2);
}

inline std::size_t family_count(AxisKind k, int support, int dim) {
  if (k == AxisKind::center) return 1;
  double c = binom(dim, support) * std::ldexp(1.0, support);
  if (k == AxisKind::conjugate_scaled) c *= support;
  return static_cast<std::size_t>(c);
}

struct FamilySpec {
  AxisKind kind;
  int support;
};

inline AxisKind conjugate_kind(int k, int dim) {
  if (k == 1) return AxisKind::principal;
  if (k == dim) return AxisKind::conjugate_full;
  if (k == 2) return AxisKind::conjugate_pair;
  return AxisKind::conjugate_partial;
}

/// Parses an inventory like "0 c1 c2 s3": "0" center, "cK" equal-magnitude
/// family on K coordinates, "sK" scaled family on K coordinates.
inline std::vector<FamilySpec> parse_inventory(const std::string& inv, int dim) {
  std::vector<FamilySpec> out;
  std::istringstream is(inv);
  std::string tok;
  while (is >> tok) {
    if (tok == "0") {
      out.push_back({AxisKind::center, 0});
      continue;
    }
    if (tok.size() < 2 || (tok[0] != 'c' && tok[0] != 's'))
      throw InvalidArgument("bad family token '" + tok + "'");
    const int k = std::stoi(tok.substr(1));
    if (k < 1 || k > dim) throw InvalidArgument("family support out of range: " + tok);
    if (tok[0] == 's') {
      if (k < 2) throw InvalidArgument("scaled family needs support >= 2");
      out.push_back({AxisKind::conjugate_scaled, k});
    } else {
      out.push_back({conjugate_kind(k, dim), k});
    }
  }
  return out;
}

/// Reduced moment-constraint system for a family inventory.
class MceSystem {
 public:
  MceSystem(int dim, int order, Weighting w, std::vector<FamilySpec> fams)
      : dim_(dim), w_(w), fams_(std::move(fams)), parts_(even_partitions(dim, order)) {
    for (const auto& p : parts_) targets_.push_back(raw_moment(w, p));
    for (const auto& f : fams_) nparams_ += family_params(f.kind);
  }

  int num_params() const { return nparams_; }
  int num_equations() const { return static_cast<int>(parts_.size()); }
  const std::vector<FamilySpec>& families() const { return fams_; }

  void eval(const Vec& x, Vec& F, Mat* J) const {
    const int m = num_equations();
    F = -Eigen::Map<const Vec>(targets_.data(), m);
    if (J) J->setZero(m, nparams_);
    int col = 0;
    for (const auto& f : fams_) {
      const double w = x[col];
      for (int i = 0; i < m; ++i) {
        const auto& e = parts_[i];
        const int p = static_cast<int>(e.size());
        int L = 0;
        for (int v : e) L += v;
        if (f.kind == AxisKind::center) {
          const double v = p == 0 ? 1.0 : 0.0;
          F[i] += w * v;
          if (J) (*J)(i, col) = v;
          continue;
        }
        if (p > f.support) continue;
        const double c = std::ldexp(binom(dim_ - p, f.support - p), f.support);
        const double a = x[col + 1];
        if (f.kind != AxisKind::conjugate_scaled) {
          const double v = c * ipow(a, L);
          F[i] += w * v;
          if (J) {
            (*J)(i, col) = v;
            (*J)(i, col + 1) = L > 0 ? w * c * L * ipow(a, L - 1) : 0.0;
          }
          continue;
        }
        const double b = x[col + 2];
        double s = (f.support - p) * ipow(b, L);
        double da = 0.0;
        double db = L > 0 ? (f.support - p) * L * ipow(b, L - 1) : 0.0;
        for (int ei : e) {
          const int r = L - ei;
          s += ipow(a, ei) * ipow(b, r);
          da += ei * ipow(a, ei - 1) * ipow(b, r);
          if (r > 0) db += ipow(a, ei) * r * ipow(b, r - 1);
        }
        F[i] += w * c * s;
        if (J) {
          (*J)(i, col) = c * s;
          (*J)(i, col + 1) = w * c * da;
          (*J)(i, col + 2) = w * c * db;
        }
      }
      col += family_params(f.kind);
    }
  }

 private:
  static double ipow(double x, int k) {
    double r = 1.0;
    for (int i = 0; i < k; ++i) r *= x;
    return r;
  }

  int dim_;
  Weighting w_;
  std::vector<FamilySpec> fams_;
  std::vector<std::vector<int>> parts_;
  std::vector<double> targets_;
  int nparams_ = 0;
};

/// Bounded Levenberg-Marquardt followed by minimum-norm Gauss-Newton
/// polishing (the reduced systems are often underdetermined).
inline double solve_mce(const MceSystem& sys, Vec& x, const Vec& lo, const Vec& hi,
                        int max_iter = 400) {
  auto clamp = [&](Vec& v) { v = v.cwiseMax(lo).cwiseMin(hi); };
  clamp(x);
  Vec F;
  Mat J;
  sys.eval(x, F, &J);
  double f = F.squaredNorm();
  double lambda = 1e-3;
  const int n = sys.num_params();
  for (int it = 0; it < max_iter && f > 1e-32; ++it) {
    const Mat JtJ = J.transpose() * J;
    const Vec g = J.transpose() * F;
    bool improved = false;
    for (int tries = 0; tries < 30; ++tries) {
      Mat A = JtJ;
      A.diagonal().array() += lambda * (1.0 + JtJ.diagonal().array());
      Vec dx = -A.ldlt().solve(g);
      Vec xn = x + dx;
      clamp(xn);
      Vec Fn;
      sys.eval(xn, Fn, nullptr);
      const double fn = Fn.squaredNorm();
      if (std::isfinite(fn) && fn < f) {
        x = xn;
        F = Fn;
        f = fn;
        lambda = std::max(lambda / 5.0, 1e-15);
        improved = true;
        break;
      }
      lambda *= 4.0;
    }
    if (!improved) break;
    sys.eval(x, F, &J);
  }
  // Minimum-norm Newton polish.
  for (int it = 0; it < 20 && f > 1e-34; ++it) {
    Eigen::CompleteOrthogonalDecomposition<Mat> cod(J);
    Vec xn = x - cod.solve(F);
    clamp(xn);
    Vec Fn;
    sys.eval(xn, Fn, nullptr);
    const double fn = Fn.squaredNorm();
    if (!(fn < f)) break;
    x = xn;
    F = Fn;
    f = fn;
    sys.eval(x, F, &J);
  }
  (void)n;
  return F.lpNorm<Eigen::Infinity>();
}

struct CatalogEntry {
  int dim;
  int order;
  Weighting weighting;
  const char* inventory;
  std::vector<double> start;  // per family: w, then a (and b)
};

// Family inventories and starting points found by an offline multistart
// search over symmetric inventories (smallest node count first). Starting
// points are refined to machine precision at generation time.
inline const std::vector<CatalogEntry>& cut_catalog() {
  using W = Weighting;
  constexpr W U = W::uniform_box, G = W::gaussian_standard;
  static const std::vector<CatalogEntry> cat = {
      {1, 4, U, "0 c1", {0.4444444444, 0.2777777778, 0.7745966692}},
      {1, 6, U, "0 c1 c1", {0.1942394834, 0.2509113636, 0.4445536549, 0.1519688947, 0.8777345683}},
      {1, 8, U, "0 c1 c1", {0.2844444444, 0.2393143352, 0.5384693101, 0.1184634425, 0.9061798459}},
      {1, 4, G, "0 c1", {0.6666666667, 0.1666666667, 1.732050808}},
      {1, 6, G, "0 c1 c1", {0.5858056656, 0.2031949127, 1.499845639, 0.003902254541, 3.315880541}},
      {1, 8, G, "0 c1 c1", {0.5333333333, 0.222075922, 1.35562618, 0.01125741133, 2.856970014}},
      {2, 4, U, "0 s2", {0.2857142857, 0.08928571429, 0.8462331194, 0.4660717122}},
      {2, 6, U, "0 c1 s2", {0.01234567901, 0.1512345679, 0.5855400438, 0.04783950617, 0.5796854259, 0.9294970721}},
      {2, 8, U, "0 c2 s2 s2", {0.1316872428, 0.09857548589, 0.488926857, 0.02466028094, 0.701265374, 0.9490600755, 0.03459107077, 0.8539562957, 0.07689418946}},
      {2, 4, G, "0 s2", {0.5, 0.0625, 1.847759065, 0.7653668647}},
      {2, 6, G, "0 c1 c2 c2", {0.3053901252, 0.02777777778, 2.449489743, 0.001887079243, 2.593244739, 0.1439876117, 1.034104083}},
      {2, 8, G, "0 c2 s2 s2", {0.3333333333, 0.00389548176, 2.175327747, 0.003634533962, 0.7650009343, 2.979744148, 0.07775105849, 1.471232363, 0.609404398}},
      {3, 4, U, "0 c1 c3", {0.1114938337, 0.07872921885, 0.8668029583, 0.05201635665, 0.7188394338}},
      {3, 6, U, "0 c1 c2 c3 c3", {0.1147191885, 0.03635810053, 0.9283924808, 0.01207223469, 0.9218206379, 0.004171567481, 0.9159686795, 0.06111160653, 0.5731315967}},
      {3, 8, U, "0 c1 c2 c3 c3 s3", {0.01372918233, 0.05062674862, 0.6346557212, 0.01165342796, 0.8758334473, 0.006667890067, 0.864890134, 0.02632905892, 0.5481792687, 0.01161223327, 0.9418019517, 0.4367406209}},
      {3, 4, G, "0 c1 c3", {0.008829176349, 0.1582292381, 1.585544063, 0.005224424413, 2.211657593}},
      {3, 6, G, "0 c1 c2 c3", {0.312478972, 0.02903513015, 2.358709038, 0.0005195469397, 3.142130383, 0.06338446048, 1.119836286}},
      {3, 8, G, "0 c1 c1 c3 c3 s2", {0.09547535587, 0.09422309613, 1.345775994, 7.375176686e-05, 4.259132692, 0.02995863444, 1.220512739, 3.863114273e-05, 2.959715223, 0.004115226337, 2.664221502, 1.37910253}},
      {4, 4, U, "0 c1 c4", {0.02001470667, 0.06520805551, 0.9086132339, 0.02864505308, 0.7016927174}},
      {4, 6, U, "0 c1 c3 c4", {0.03832063301, 0.0252409386, 0.9866146547, 0.00985349957, 0.8495213325, 0.027777492, 0.5054081059}},
      {4, 8, U, "0 c2 c2 c3 c4 s4", {0.02844362, 0.01501099, 0.61992622, 0.00309212, 0.92434352, 0.00207883, 0.91192567, 0.00378588, 0.78655773, 0.00640602, 0.92304955, 0.46367642}},
      {4, 4, G, "0 c1 c4", {0.1196955643, 0.0900570704, 1.82545254, 0.009990492036, 1.581514889}},
      {4, 6, G, "0 c1 c2 c4", {0.25, 0.03066016326, 2.252065001, 0.0005898367399, 3.076378003, 0.03066016326, 1.126032501}},
      {5, 4, U, "0 c1 c5", {0.004396313211, 0.04680137161, 0.9871649458, 0.01648718659, 0.6774312703}},
      {5, 6, U, "0 c2 c4 c5", {0.06501288477, 0.006374207401, 0.9849574024, 0.007480850223, 0.6129731006, 0.002548462543, 0.8174815614}},
      {5, 8, U, "0 c1 c1 c1 c2 c3 c4 c5 c5 s5", {9.82245229e-04, 1.27040473e-05, 6.92134536e-01, 1.05293328e-03, 6.63931605e-01, 2.49116412e-03, 6.55854585e-01, 6.79305858e-03, 8.22741562e-01, 1.30823752e-03, 8.22706958e-01, 7.91787919e-04, 8.96477824e-01, 1.11433455e-05, 3.98493339e-01, 5.88344301e-03, 4.10378495e-01, 2.09436624e-03, 9.67742993e-01, 5.42578997e-01}},
      {5, 4, G, "0 c1 c5", {0.03268449946, 0.07689255565, 1.899017322, 0.00619968575, 1.498373509}},
      {5, 6, G, "0 c1 c2 c5", {0.1728395062, 0.0329218107, 2.121320344, 0.0006858710562, 3.0, 0.01470336077, 1.133893419}},
      {6, 4, U, "0 c2 c6", {0.009787126339, 0.01027970797, 0.8574063182, 0.005834849934, 0.6984888103}},
      {4, 8, G, "0 c2 c2 c3 c4 s4", {0.11866662455028616, 0.030300760512983933, 1.2978532619029945, 2.1461358256449748e-05, 3.7013774964686523, 0.001532435697886363, 1.8257413720429156, 0.0013010340910957062, 1.5811394333534716, 0.0013085244179695283, 2.8361026128706257, 0.80757284153421227}},
      {5, 8, G, "0 c1 c1 c1 c2 c3 c5 c5 s2 s5", {0.059329713096889544, 0.0012750561217710476, 2.7315138136938688, 0.00018183740680572736, 3.0701350263292904, 0.016869158841323402, 2.0139518784694079, 0.00029891158066439565, 2.6272668780398156, 0.0038151795583477931, 1.5961456951460378, 0.0127108626364421, 0.76807641911100211, 4.4024277774700347e-05, 2.0831530971390748, 2.162306638299597e-06, 3.5985451792044385, 0.0015445598502059398, 0.00019943480952317442, 3.1692283465820807, 1.0933953250234256}},
      {6, 4, G, "0 c1 c6", {0.012796443408896699, 0.06088993964657128, 2.013091958919325, 0.0040081918880038739, 1.4051344458223276}},
      {6, 6, U, "0 c2 c3 c6 c6", {0.037737885466048338, 0.0047097297682823849, 0.87518600910485334, 0.0010370952038791772, 0.97333286239732597, 0.0069488275021133434, 0.5613144188297019, 0.001078408370016972, 0.7843667834541832}},
      {6, 6, G, "0 c1 c2 c6", {0.067463720828191187, 0.03650725583436177, 1.9488352857880815, 0.00082885498745773512, 2.9068006025152773, 0.0069487173423750537, 1.144596894737778}},
  };
  return cat;
}

inline std::vector<AxisFamily> unpack_families(const std::vector<FamilySpec>& specs,
                                               const Vec& x) {
  std::vector<AxisFamily> out;
  int col = 0;
  for (const auto& s : specs) {
    AxisFamily f;
    f.kind = s.kind;
    f.support = s.support;
    f.weight = x[col];
    if (s.kind != AxisKind::center) f.a = x[col + 1];
    if (s.kind == AxisKind::conjugate_scaled) f.b = x[col + 2];
    out.push_back(f);
    col += family_params(s.kind);
  }
  return out;
}

inline void next_combination_init(std::vector<int>& c, int k) {
  c.resize(k);
  for (int i = 0; i < k; ++i) c[i] = i;
}

inline bool next_combination(std::vector<int>& c, int n) {
  const int k = static_cast<int>(c.size());
  int i = k - 1;
  while (i >= 0 && c[i] == n - k + i) --i;
  if (i < 0) return false;
  ++c[i];
  for (int j = i + 1; j < k; ++j) c[j] = c[j - 1] + 1;
  return true;
}

}  // namespace detail

/// Expands families into explicit nodes (deterministic order).
inline void expand_families(const std::vector<AxisFamily>& fams, int dim, Mat& nodes,
                            Vec& weights) {
  std::size_t total = 0;
  for (const auto& f : fams) total += detail::family_count(f.kind, f.support, dim);
  nodes.setZero(static_cast<Eigen::Index>(total), dim);
  weights.resize(static_cast<Eigen::Index>(total));
  Eigen::Index row = 0;
  for (const auto& f : fams) {
    if (f.kind == AxisKind::center) {
      weights[row++] = f.weight;
      continue;
    }
    const int k = f.support;
    std::vector<int> sub;
    detail::next_combination_init(sub, k);
    do {
      const int lead_count = f.kind == AxisKind::conjugate_scaled ? k : 1;
      for (int lead = 0; lead < lead_count; ++lead) {
        for (unsigned mask = 0; mask < (1u << k); ++mask) {
          for (int j = 0; j < k; ++j) {
            double mag = f.a;
            if (f.kind == AxisKind::conjugate_scaled && j != lead) mag = f.b;
            nodes(row, sub[j]) = (mask >> j) & 1u ? -mag : mag;
          }
          weights[row++] = f.weight;
        }
      }
    } while (detail::next_combination(sub, dim));
  }
}

/// Tensor-product Gauss rule with m points per axis (Legendre on [-1, 1] for
/// uniform weighting, probabilists' Hermite for Gaussian). Exact through
/// degree 2m - 1 in each coordinate.
inline CutPointSet tensor_gauss(int dim, int m, Weighting w) {
  Mat jm = Mat::Zero(m, m);
  for (int k = 1; k < m; ++k) {
    const double off = w == Weighting::uniform_box
                           ? k / std::sqrt(4.0 * k * k - 1.0)
                           : std::sqrt(static_cast<double>(k));
    jm(k, k - 1) = jm(k - 1, k) = off;
  }
  Eigen::SelfAdjointEigenSolver<Mat> es(jm);
  std::vector<double> x(m), wt(m);
  for (int i = 0; i < m; ++i) {
    x[i] = es.eigenvalues()[i];
    wt[i] = es.eigenvectors()(0, i) * es.eigenvectors()(0, i);
  }
  // Enforce exact mirror symmetry so odd moments cancel exactly.
  for (int i = 0; i < m / 2; ++i) {
    const double xs = 0.5 * (x[m - 1 - i] - x[i]);
    const double ws = 0.5 * (wt[i] + wt[m - 1 - i]);
    x[i] = -xs;
    x[m - 1 - i] = xs;
    wt[i] = wt[m - 1 - i] = ws;
  }
  if (m % 2) x[m / 2] = 0.0;
  double s = 0.0;
  for (double v : wt) s += v;
  for (double& v : wt) v /= s;

  std::size_t total = 1;
  for (int d = 0; d < dim; ++d) total *= static_cast<std::size_t>(m);
  CutPointSet cs;
  cs.dim = dim;
  cs.weighting = w;
  cs.construction = CutConstruction::tensor_gauss;
  cs.nodes.resize(static_cast<Eigen::Index>(total), dim);
  cs.weights.resize(static_cast<Eigen::Index>(total));
  for (std::size_t r = 0; r < total; ++r) {
    std::size_t rem = r;
    double prod = 1.0;
    for (int d = dim - 1; d >= 0; --d) {
      const std::size_t i = rem % m;
      rem /= m;
      cs.nodes(static_cast<Eigen::Index>(r), d) = x[i];
      prod *= wt[i];
    }
    cs.weights[static_cast<Eigen::Index>(r)] = prod;
  }
  return cs;
}

struct MceReport {
  double max_residual = 0.0;
  double max_even = 0.0;
  double max_odd = 0.0;
  std::size_t monomials = 0;
};

/// Compares weighted node sums with analytic raw moments for every monomial
/// of total degree <= through_order. Positive and negative terms are summed
/// separately in sorted order, so sign-symmetric sets give odd residuals of
/// exactly zero.
inline MceReport check_mce(const CutPointSet& cs, int through_order) {
  if (through_order < 1) throw InvalidArgument("check_mce: through_order must be >= 1");
  const Eigen::Index n = cs.nodes.rows();
  const int d = cs.dim;
  // pw[(i*d + j)*(K+1) + k] = x_ij^k
  const int K = through_order;
  std::vector<double> pw(static_cast<std::size_t>(n) * d * (K + 1));
  for (Eigen::Index i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) {
      double v = 1.0;
      for (int k = 0; k <= K; ++k) {
        pw[(static_cast<std::size_t>(i) * d + j) * (K + 1) + k] = v;
        v *= cs.nodes(i, j);
      }
    }
  MceReport rep;
  std::vector<int> e(d, 0);
  std::vector<double> pos, neg;
  pos.reserve(n);
  neg.reserve(n);
  std::function<void(int, int)> rec = [&](int j, int left) {
    if (j == d) {
      int deg = 0;
      bool odd = false;
      for (int v : e) {
        deg += v;
        odd = odd || (v % 2);
      }
      pos.clear();
      neg.clear();
      for (Eigen::Index i = 0; i < n; ++i) {
        double t = cs.weights[i];
        for (int c = 0; c < d; ++c)
          if (e[c]) t *= pw[(static_cast<std::size_t>(i) * d + c) * (K + 1) + e[c]];
        if (t > 0) pos.push_back(t);
        else if (t < 0) neg.push_back(-t);
      }
      std::sort(pos.begin(), pos.end());
      std::sort(neg.begin(), neg.end());
      double sp = 0.0, sn = 0.0;
      for (double v : pos) sp += v;
      for (double v : neg) sn += v;
      const double r = std::abs((sp - sn) - detail::raw_moment(cs.weighting, e));
      rep.max_residual = std::max(rep.max_residual, r);
      if (odd) rep.max_odd = std::max(rep.max_odd, r);
      else rep.max_even = std::max(rep.max_even, r);
      ++rep.monomials;
      (void)deg;
      return;
    }
    for (int k = 0; k <= left; ++k) {
      e[j] = k;
      rec(j + 1, left - k);
    }
    e[j] = 0;
  };
  rec(0, through_order);
  return rep;
}

struct CutOptions {
  int random_starts = 16;
  std::uint64_t seed = 0x5eedc0deULL;
  bool allow_fallback = true;
  double mce_tol = 1e-10;
  double min_weight = 1e-12;
  // Overrides the catalogued inventory when non-empty (e.g. "0 c1 c2 s3").
  std::string inventory;
  std::vector<double> start;
};

/// Attempts the symmetric-family construction for one inventory.
inline std::optional<CutPointSet> solve_inventory(int dim, int order, Weighting w,
                                                  const std::string& inventory,
                                                  const std::vector<double>& start,
                                                  const CutOptions& opt,
                                                  std::string* why = nullptr) {
  const auto specs = detail::parse_inventory(inventory, dim);
  detail::MceSystem sys(dim, order, w, specs);
  const int np = sys.num_params();
  Vec lo(np), hi(np);
  const double rmax = w == Weighting::uniform_box ? 1.0 : 8.0;
  int col = 0;
  for (const auto& s : specs) {
    lo[col] = 0.0;
    hi[col] = 1.0;
    for (int k = 1; k < detail::family_params(s.kind); ++k) {
      lo[col + k] = 1e-3;
      hi[col + k] = rmax;
    }
    col += detail::family_params(s.kind);
  }
  std::vector<Vec> starts;
  if (static_cast<int>(start.size()) == np)
    starts.push_back(Eigen::Map<const Vec>(start.data(), np));
  Rng rng(opt.seed ^ (static_cast<std::uint64_t>(dim) << 32) ^
          (static_cast<std::uint64_t>(order) << 8) ^ static_cast<std::uint64_t>(w));
  for (int s = 0; s < opt.random_starts; ++s) {
    Vec x(np);
    for (int i = 0; i < np; ++i) x[i] = rng.uniform(lo[i], hi[i]);
    // Start weights near a uniform split of the total mass.
    col = 0;
    for (const auto& sp : specs) {
      x[col] /= static_cast<double>(detail::family_count(sp.kind, sp.support, dim));
      col += detail::family_params(sp.kind);
    }
    starts.push_back(x);
  }
  std::string last = "no starts";
  for (Vec x : starts) {
    const double res = detail::solve_mce(sys, x, lo, hi);
    if (!(res < 1e-13)) {
      last = "reduced residual " + std::to_string(res);
      continue;
    }
    auto fams = detail::unpack_families(specs, x);
    bool ok = true;
    for (const auto& f : fams) {
      if (!(f.weight > opt.min_weight)) ok = false;
      if (f.kind != AxisKind::center && !(f.a > 0.0)) ok = false;
      if (f.kind == AxisKind::conjugate_scaled && !(f.b > 0.0)) ok = false;
    }
    if (!ok) {
      last = "non-positive weight or radius";
      continue;
    }
    CutPointSet cs;
    cs.dim = dim;
    cs.order = order;
    cs.weighting = w;
    cs.construction = CutConstruction::native;
    cs.families = fams;
    expand_families(fams, dim, cs.nodes, cs.weights);
    const MceReport rep = check_mce(cs, order);
    if (!(rep.max_residual < opt.mce_tol)) {
      last = "full MCE residual " + std::to_string(rep.max_residual);
      continue;
    }
    return cs;
  }
  if (why) *why = last;
  return std::nullopt;
}

/// Generates a CUT point set for dim in [1, 6] and order in {4, 6, 8}.
inline CutPointSet generate_cut(int dim, int order, Weighting w, const CutOptions& opt = {}) {
  if (dim < 1 || dim > 6) throw InvalidArgument("generate_cut: dim must be in [1, 6]");
  if (order != 4 && order != 6 && order != 8)
    throw InvalidArgument("generate_cut: order must be 4, 6 or 8");
  std::string reason;
  std::string inventory = opt.inventory;
  std::vector<double> start = opt.start;
  if (inventory.empty()) {
    for (const auto& e : detail::cut_catalog())
      if (e.dim == dim && e.order == order && e.weighting == w) {
        inventory = e.inventory;
        start = e.start;
        break;
      }
  }
  if (!inventory.empty()) {
    std::string why;
    if (auto cs = solve_inventory(dim, order, w, inventory, start, opt, &why)) return *cs;
    reason = "inventory '" + inventory + "' did not converge (" + why + ")";
  } else {
    reason = "no symmetric family inventory catalogued";
  }
  if (!opt.allow_fallback)
    throw NoSolutionError("generate_cut(" + std::to_string(dim) + ", " +
                          std::to_string(order) + "): " + reason);
  CutPointSet cs = tensor_gauss(dim, order / 2 + 1, w);
  cs.order = order;
  cs.note = "tensor Gauss fallback: " + reason;
  warn("generate_cut(" + std::to_string(dim) + ", " + std::to_string(order) + ", " +
       to_string(w) + "): " + cs.note);
  return cs;
}

/// Maps unit-box CUT nodes onto a physical box center +/- half_width.
inline Mat scale_nodes(const CutPointSet& cs, const Vec& center, const Vec& half_width) {
  Mat out = cs.nodes;
  for (Eigen::Index j = 0; j < out.cols(); ++j)
    out.col(j) = center[j] + half_width[j] * cs.nodes.col(j).array();
  return out;
}

}  // namespace svamuq
