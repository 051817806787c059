#pragma once

#include "ovep/linalg.hpp"
#include "ovep/rng.hpp"

namespace ovep {

/// BS-side exponential correlation: [R_r]_{n,n'} = rho^|n-n'|.
struct CorrelationSpec {
  double rho = 0.0;  // in [0, 1]
  int n = 0;         // antenna count
};

/// One realized uplink instance y = Hx + z. sigma_z is the total complex
/// noise variance of z ~ CN(0, sigma_z I); sigma_x the per-user symbol
/// energy. SNR is defined as sigma_x / sigma_z.
struct ChannelInstance {
  CMatrix h;
  double sigma_z = 1.0;
  double sigma_x = 1.0;
};

/// Real symmetric Toeplitz correlation matrix rho^|n-n'| (unit diagonal).
CMatrix exp_correlation_matrix(const CorrelationSpec& spec);

/// Caches R_r^{1/2} once so that repeated draws cost one N x M Gaussian
/// fill plus a matrix product. Transmit-side correlation is identity
/// (independently placed single-antenna users); extend here if a transmit
/// correlation model is ever needed.
class ChannelModel {
 public:
  ChannelModel(const CorrelationSpec& spec_r, int m);

  /// H = R_r^{1/2} G, G i.i.d. CN(0,1), filled row-major. Deterministic
  /// given the rng state.
  CMatrix draw(Rng& rng) const;

  int n() const { return spec_.n; }
  int m() const { return m_; }

 private:
  CorrelationSpec spec_;
  int m_ = 0;
  CMatrix r_sqrt_;
  bool correlated_ = false;
};

/// One-shot convenience form of ChannelModel::draw.
CMatrix generate_channel(const CorrelationSpec& spec_r, int m, Rng& rng);

/// y = Hx + z with z i.i.d. CN(0, sigma_z).
CVector transmit(const ChannelInstance& ch, const CVector& x, Rng& rng);

}  // namespace ovep
