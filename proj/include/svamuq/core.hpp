#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <exception>
#include <functional>
#include <iostream>
#include <mutex>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

namespace svamuq {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using Vec3 = Eigen::Vector3d;
using Vec5 = Eigen::Matrix<double, 5, 1>;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat6 = Eigen::Matrix<double, 6, 6>;

inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kDeg = kPi / 180.0;

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad input: violated preconditions, malformed configuration values.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// Configuration file problems; `path` names the offending field.
class ConfigError : public Error {
 public:
  ConfigError(std::string path, const std::string& what)
      : Error(path + ": " + what), path_(std::move(path)) {}
  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

/// A numerical procedure failed (integration, solve, factorization).
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// Evaluation at or too close to a coordinate or gravitational singularity.
class SingularityError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

/// Squared speed 2*Omega - C went negative (state outside the Hill region).
class ImaginarySpeedError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

/// Wraps an angle to (-pi, pi].
inline double wrap_angle(double a) {
  double w = std::remainder(a, 2.0 * kPi);
  if (w <= -kPi) w += 2.0 * kPi;
  return w;
}

/// Shifts `a` by multiples of 2*pi onto the branch closest to `ref`.
inline double unwrap_near(double a, double ref) {
  return ref + std::remainder(a - ref, 2.0 * kPi);
}

/// Destination for non-fatal warnings (fallbacks, regularization). Defaults
/// to stderr; tests and the CLI may replace it.
inline std::function<void(const std::string&)>& warning_sink() {
  static std::function<void(const std::string&)> sink = [](const std::string& m) {
    std::cerr << "warning: " << m << '\n';
  };
  return sink;
}

inline void warn(const std::string& msg) {
  if (warning_sink()) warning_sink()(msg);
}

// FNV-1a, used for config hashes in output metadata (stable across platforms).
inline std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  return h;
}

/// Runs fn(i) for i in [0, n) on worker threads. The exception from the
/// lowest failing index is rethrown.
template <class F>
void parallel_for(std::size_t n, F&& fn) {
  const std::size_t hw = std::max(1u, std::thread::hardware_concurrency());
  const std::size_t nt = std::min<std::size_t>(hw, std::max<std::size_t>(1, n / 8));
  if (nt <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::mutex mu;
  std::size_t fail_index = n;
  std::exception_ptr fail;
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < nt; ++t) {
    pool.emplace_back([&, t] {
      for (std::size_t i = t; i < n; i += nt) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lk(mu);
          if (i < fail_index) {
            fail_index = i;
            fail = std::current_exception();
          }
          return;
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (fail) std::rethrow_exception(fail);
}

}  // namespace svamuq
