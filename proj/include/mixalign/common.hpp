#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace mixalign {

using Token = std::uint8_t;
using Rng = std::mt19937_64;

// Error taxonomy. The CLI maps each kind onto an exit code.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ConfigError : Error {
  using Error::Error;
};
struct ContractError : Error {
  using Error::Error;
};
struct InputError : Error {
  using Error::Error;
};
struct NumericalError : Error {
  using Error::Error;
};
// A method cannot run with the inputs it was given (e.g. distillation
// without a checkpoint target).
struct PreconditionError : Error {
  using Error::Error;
};
struct OverwriteError : Error {
  using Error::Error;
};

inline void Require(bool cond, const std::string& what) {
  if (!cond) throw ContractError(what);
}

inline constexpr double kInf = std::numeric_limits<double>::infinity();
inline constexpr double kLog2E = 1.4426950408889634074;

// FNV-1a, 64 bit. Used for config and corpus digests.
class Digest {
 public:
  Digest& Update(const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h_ ^= p[i];
      h_ *= 0x100000001b3ULL;
    }
    return *this;
  }
  Digest& Update(std::string_view s) { return Update(s.data(), s.size()); }
  template <class T>
  Digest& UpdatePod(const T& v) {
    return Update(&v, sizeof(T));
  }
  std::uint64_t value() const { return h_; }
  std::string hex() const {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(h_));
    return buf;
  }

 private:
  std::uint64_t h_ = 0xcbf29ce484222325ULL;
};

inline std::string DigestHex(std::string_view s) {
  return Digest().Update(s).hex();
}

// Uniform double in [0, 1) from exactly one engine draw.
inline double UniformUnit(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

// Deterministic fixed-order pairwise summation.
inline double PairwiseSum(std::span<const double> xs) {
  if (xs.size() <= 8) {
    double s = 0.0;
    for (double x : xs) s += x;
    return s;
  }
  const std::size_t half = xs.size() / 2;
  return PairwiseSum(xs.first(half)) + PairwiseSum(xs.subspan(half));
}

inline bool AllFinite(std::span<const double> xs) {
  for (double x : xs)
    if (!std::isfinite(x)) return false;
  return true;
}

// Prints a double so that it parses back to the same value, with no
// locale or platform-dependent formatting.
inline std::string FormatDouble(double x) {
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  if (std::isnan(x)) return "nan";
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

}  // namespace mixalign
