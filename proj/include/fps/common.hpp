#pragma once

#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <stdexcept>
#include <string>
#include <thread>

namespace fps {

enum class ErrorKind {
  invalid_input,
  shape,
  bounds,
  format,
  io,
  state,
  divergence,
  identifiability,
  metric_undefined,
  regression_undefined,
  undefined_feature,
  scheme,
  config,
};

inline const char* to_string(ErrorKind k) {
  switch (k) {
    case ErrorKind::invalid_input: return "invalid-input";
    case ErrorKind::shape: return "shape";
    case ErrorKind::bounds: return "bounds";
    case ErrorKind::format: return "format";
    case ErrorKind::io: return "io";
    case ErrorKind::state: return "state";
    case ErrorKind::divergence: return "divergence";
    case ErrorKind::identifiability: return "identifiability";
    case ErrorKind::metric_undefined: return "metric-undefined";
    case ErrorKind::regression_undefined: return "regression-undefined";
    case ErrorKind::undefined_feature: return "undefined-feature";
    case ErrorKind::scheme: return "scheme";
    case ErrorKind::config: return "config";
  }
  return "unknown";
}

/// Base error for every failure raised by the library. The kind is
/// machine-readable; what() carries the human context.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& msg)
      : std::runtime_error(msg), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

/// Binary-format failure; offset is the byte position where decoding stopped.
class FormatError : public Error {
 public:
  FormatError(std::uint64_t offset, const std::string& msg)
      : Error(ErrorKind::format,
              "at byte offset " + std::to_string(offset) + ": " + msg),
        offset_(offset) {}
  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::uint64_t offset_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& msg) {
  throw Error(kind, msg);
}

inline void require(bool cond, ErrorKind kind, const std::string& msg) {
  if (!cond) fail(kind, msg);
}

/// Deterministic generator. Distributions are implemented here rather than
/// with <random> distributions so that streams are identical across
/// standard library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  /// splitmix64
  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    if (n <= 1) return 0;
    // rejection to avoid modulo bias
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
    std::uint64_t v;
    do { v = next_u64(); } while (v >= limit);
    return v % n;
  }

  /// Standard normal via Box-Muller (one value per call, second discarded).
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  int sign() { return (next_u64() >> 63) ? 1 : -1; }

 private:
  std::uint64_t state_;
};

/// Derives an independent stream seed from a base seed and a tag.
inline std::uint64_t mix_seed(std::uint64_t base, std::uint64_t tag) {
  Rng r(base ^ (tag * 0xD1B54A32D192ED03ull + 0x8CB92BA72F3D8DD7ull));
  return r.next_u64();
}

/// Upper bound on worker threads: FPS_THREADS if set, else the hardware count.
inline unsigned thread_budget() {
  if (const char* env = std::getenv("FPS_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v >= 1) return static_cast<unsigned>(v);
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1u : hw;
}

}  // namespace fps
