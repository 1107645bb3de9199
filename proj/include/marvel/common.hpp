#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

namespace marvel {

/// Dense node index in [0, num_nodes). External node labels live on the graph.
using NodeId = int;
/// Dense edge index in [0, num_edges), in insertion (file) order.
using EdgeId = int;

inline constexpr NodeId kNoNode = -1;
inline constexpr EdgeId kNoEdge = -1;

using Rng = std::mt19937_64;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad user input: unknown ids, malformed files, out-of-range attributes.
class InputError : public Error {
 public:
  using Error::Error;
};

/// Line-addressed file parse failure.
class ParseError : public InputError {
 public:
  ParseError(const std::string& file, int line, const std::string& what)
      : InputError(file + ":" + std::to_string(line) + ": " + what), line_(line) {}
  int line() const { return line_; }

 private:
  int line_;
};

class UnreachableError : public Error {
 public:
  using Error::Error;
};

class InvariantError : public Error {
 public:
  using Error::Error;
};

/// Dimension or option mismatch between components.
class ConfigError : public Error {
 public:
  using Error::Error;
};

class DeadEndError : public Error {
 public:
  using Error::Error;
};

/// Training diverged (NaN/inf objective or parameters).
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// splitmix64 finalizer; used to derive independent stream seeds.
constexpr std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t master, std::uint64_t a, std::uint64_t b = 0) {
  return mix_seed(mix_seed(mix_seed(master) ^ a) ^ (b * 0x2545f4914f6cdd1dULL + 1));
}

/// FNV-1a, 64-bit; stable across platforms (used for cache keys and manifest hashes).
constexpr std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

inline double logistic(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

}  // namespace marvel
