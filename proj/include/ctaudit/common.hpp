#pragma once

// Shared plumbing: error taxonomy and a deterministic random source.
//
// Everything downstream funnels its randomness through Rng so that a run is
// reproducible from a single seed.  We deliberately avoid the standard
// <random> distributions (their output is implementation-defined); only the
// mt19937_64 engine itself is specified bit-for-bit, so the mapping from raw
// engine words to shuffles / reals / bounded ints lives here.

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <random>
#include <vector>

namespace ctaudit {

// Library version, recorded in run manifests so outputs are traceable to the
// code that produced them.  Keep in step with the top-level CMake project().
inline constexpr char kVersion[] = "0.1.0";

// A malformed or inconsistent dataset manifest (bad header, bad label, ...).
class ManifestError : public std::runtime_error {
public:
  explicit ManifestError(const std::string& what) : std::runtime_error(what) {}
};

// A caller broke an interface contract (bad shapes, out-of-range parameter).
class ContractError : public std::runtime_error {
public:
  explicit ContractError(const std::string& what) : std::runtime_error(what) {}
};

// The surrounding environment is missing something we need (weights file,
// unwritable output directory).  The message should tell the user how to fix it.
class EnvironmentError : public std::runtime_error {
public:
  explicit EnvironmentError(const std::string& what) : std::runtime_error(what) {}
};

// An individual file could not be read or decoded.
class IoError : public std::runtime_error {
public:
  explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

// Training produced a non-finite loss and cannot continue.
class TrainingDiverged : public std::runtime_error {
public:
  explicit TrainingDiverged(const std::string& what) : std::runtime_error(what) {}
};

// Deterministic random source.  One seed -> one stream, independent of the
// standard library's distribution implementations.
class Rng {
public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform integer in [0, n).  Rejection sampling over the top of the 64-bit
  // range keeps the result exactly uniform for every n.
  std::uint64_t uniform_index(std::uint64_t n) {
    if (n == 0) throw ContractError("Rng::uniform_index: n must be positive");
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return x % n;
  }

  // Uniform double in [0, 1) with 53 bits of precision.
  double real01() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  // Uniform double in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * real01(); }

  // Standard normal via Box-Muller (deterministic, unlike std::normal_distribution).
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1, u2;
    do {
      u1 = real01();
    } while (u1 <= 0.0);
    u2 = real01();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * M_PI * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  bool bernoulli(double p) { return real01() < p; }

  // Fisher-Yates, fixed iteration order (back to front).
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(uniform_index(i));
      std::swap(v[i - 1], v[j]);
    }
  }

private:
  std::mt19937_64 engine_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

// FNV-1a over a string; used to derive per-model seeds from human-readable ids
// so that adding or removing grid cells never perturbs the others.
inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ull;  // FNV-1a 64-bit offset basis
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;  // FNV 64-bit prime
  }
  return h;
}

// splitmix64 finalizer over seed ^ salt; derives decorrelated child streams
// (per epoch, per image, ...) from one master seed.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t z = seed ^ (salt * 0x9E3779B97F4A7C15ull);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

}  // namespace ctaudit
