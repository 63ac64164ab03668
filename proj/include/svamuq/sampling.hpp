#pragma once

// Seeded, platform-stable random sampling. std::mt19937_64 output is fixed by
// the standard; the distribution transforms below are hand-written because the
// standard library distributions are implementation-defined.

#include "svamuq/core.hpp"

#include <cmath>
#include <cstdint>
#include <random>

namespace svamuq {

enum class Weighting { gaussian_standard, uniform_box };

inline const char* to_string(Weighting w) {
  return w == Weighting::gaussian_standard ? "gaussian_standard" : "uniform_box";
}

inline Weighting weighting_from_string(const std::string& s) {
  if (s == "gaussian_standard" || s == "gaussian") return Weighting::gaussian_standard;
  if (s == "uniform_box" || s == "uniform") return Weighting::uniform_box;
  throw InvalidArgument("unknown weighting '" + s + "'");
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  /// Uniform on [0, 1) with 53 random bits.
  double uniform01() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  /// Standard normal via the Marsaglia polar method.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u, v, s;
    do {
      u = 2.0 * uniform01() - 1.0;
      v = 2.0 * uniform01() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double m = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * m;
    has_spare_ = true;
    return u * m;
  }

  std::uint64_t next_u64() { return eng_(); }

 private:
  std::mt19937_64 eng_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

/// n x dim samples from the standard normal or the uniform box [-1, 1]^dim.
inline Mat mc_sample(Weighting w, int dim, std::size_t n, std::uint64_t seed) {
  if (dim < 1) throw InvalidArgument("mc_sample: dim must be >= 1");
  if (n < 1) throw InvalidArgument("mc_sample: n must be >= 1");
  Rng rng(seed);
  Mat out(static_cast<Eigen::Index>(n), dim);
  for (Eigen::Index i = 0; i < out.rows(); ++i)
    for (int j = 0; j < dim; ++j)
      out(i, j) = w == Weighting::gaussian_standard ? rng.normal()
                                                    : 2.0 * rng.uniform01() - 1.0;
  return out;
}

}  // namespace svamuq
