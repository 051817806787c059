#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "ovep/linalg.hpp"

namespace ovep {

/// Posterior variances are floored here before inversion; the hard-decision
/// limit drives them to zero and the precision 1/v must stay finite.
inline constexpr double kDenoiserVarFloor = 1e-12;

/// Square Gray-coded Q-QAM, zero mean, normalized so the average point
/// energy equals sigma_x. Points are indexed by their bit label: the first
/// half of the label Gray-codes the in-phase level, the second half the
/// quadrature level, so adjacent levels along each axis differ in one bit.
class Constellation {
 public:
  /// q must be a power of 4 (4, 16, 64, ...).
  static Constellation square(int q, double sigma_x);

  int order() const { return static_cast<int>(points_.size()); }
  int bits_per_symbol() const { return bits_per_symbol_; }
  double sigma_x() const { return sigma_x_; }
  const std::vector<Complex>& points() const { return points_; }

  /// Gray-mapped symbols; bit count must divide by bits_per_symbol.
  CVector map_bits(std::span<const std::uint8_t> bits) const;

  /// Nearest-point hard decisions, returned as the point labels' bits.
  std::vector<std::uint8_t> demap_hard(const CVector& x_hat) const;

 private:
  Constellation() = default;
  std::vector<Complex> points_;
  int bits_per_symbol_ = 0;
  double sigma_x_ = 1.0;
};

/// Posterior mean/variance of the entrywise QAM denoiser.
struct DenoiserOutput {
  CVector x_hat;
  RVector v_hat;      // in (0, sigma_x]
  RVector gamma_hat;  // 1 / v_hat
};

/// MMSE denoiser under the discrete uniform QAM prior:
///   x_hat_m = sum_x x softmax_x(-gamma_m |x - mu_m|^2),
///   v_hat_m = sum_x |x|^2 softmax - |x_hat_m|^2,
/// computed with max-shifted exponentials so huge precisions stay finite.
DenoiserOutput denoise(const CVector& mu, const RVector& gamma, const Constellation& c);

/// Writes into a preallocated output; the iterative detector's hot path.
void denoise_into(const CVector& mu, const RVector& gamma, const Constellation& c,
                  DenoiserOutput& out);

/// Closed-form QPSK denoiser:
///   x_hat = sqrt(sigma_x/2) [tanh(sqrt(2 sigma_x) gamma Re mu)
///                            + j tanh(sqrt(2 sigma_x) gamma Im mu)],
///   v_hat = sigma_x - |x_hat|^2.
DenoiserOutput denoise_qpsk(const CVector& mu, const RVector& gamma, double sigma_x);

}  // namespace ovep
