#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>
#include <random>

namespace ovep {

/// splitmix64 finalizer; stable across platforms and compilers.
constexpr std::uint64_t mix_bits(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ull;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

/// Derives a child seed from (parent, tag). Chained to key independent
/// streams by (master seed, trial index, sweep cell, stream tag), so every
/// trial owns its own streams regardless of scheduling.
constexpr std::uint64_t fold_seed(std::uint64_t parent, std::uint64_t tag) {
  return mix_bits(parent ^ (tag + 0x9e3779b97f4a7c15ull + (parent << 6) + (parent >> 2)));
}

/// Deterministic random stream. mt19937_64 core (bit-exact per the standard)
/// with explicit uniform/normal converters instead of the
/// implementation-defined std distributions, so identical seeds reproduce
/// identical draws everywhere.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t next_u64() { return gen_(); }

  /// One random bit (top bit of the next word).
  int bit() { return static_cast<int>(gen_() >> 63); }

  /// Uniform double in [0, 1).
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1p-53; }

  /// Standard normal via Box-Muller; pairs are cached, so consecutive calls
  /// consume exactly one uniform pair per two variates.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    const double u1 = static_cast<double>((gen_() >> 11) + 1) * 0x1p-53;  // (0, 1]
    const double u2 = static_cast<double>(gen_() >> 11) * 0x1p-53;
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  /// CN(0,1): two real normals scaled by 1/sqrt(2), unit complex variance.
  std::complex<double> cnormal() {
    const double re = normal();
    const double im = normal();
    return {re * kInvSqrt2, im * kInvSqrt2};
  }

 private:
  static constexpr double kInvSqrt2 = 0.70710678118654752440;
  std::mt19937_64 gen_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace ovep
