#include "ovep/modem.hpp"

#include <cmath>
#include <limits>

#include "ovep/errors.hpp"

namespace ovep {

namespace {

int gray_to_binary(int g) {
  int b = g;
  b ^= b >> 1;
  b ^= b >> 2;
  b ^= b >> 4;
  return b;
}

bool is_power_of_four(int q) {
  if (q < 4) return false;
  while (q > 1) {
    if (q % 4 != 0) return false;
    q /= 4;
  }
  return true;
}

}  // namespace

Constellation Constellation::square(int q, double sigma_x) {
  if (!is_power_of_four(q)) {
    throw ConfigError("constellation: order must be a power of 4");
  }
  if (sigma_x <= 0.0) {
    throw ConfigError("constellation: sigma_x must be positive");
  }
  const int per_axis = static_cast<int>(std::lround(std::sqrt(static_cast<double>(q))));
  const int bits_per_axis = static_cast<int>(std::lround(std::log2(per_axis)));
  // Odd-integer levels {..,-3,-1,1,3,..} scaled so the mean energy is sigma_x.
  const double amp = std::sqrt(3.0 * sigma_x / (2.0 * (q - 1)));

  Constellation c;
  c.sigma_x_ = sigma_x;
  c.bits_per_symbol_ = 2 * bits_per_axis;
  c.points_.resize(q);
  for (int label = 0; label < q; ++label) {
    const int gi = label >> bits_per_axis;
    const int gq = label & (per_axis - 1);
    const int li = 2 * gray_to_binary(gi) - (per_axis - 1);
    const int lq = 2 * gray_to_binary(gq) - (per_axis - 1);
    c.points_[label] = Complex(amp * li, amp * lq);
  }
  return c;
}

CVector Constellation::map_bits(std::span<const std::uint8_t> bits) const {
  if (bits.size() % static_cast<std::size_t>(bits_per_symbol_) != 0) {
    throw LengthMismatch("map_bits: bit count must divide by bits_per_symbol");
  }
  const std::size_t n_sym = bits.size() / static_cast<std::size_t>(bits_per_symbol_);
  CVector x(static_cast<Eigen::Index>(n_sym));
  for (std::size_t s = 0; s < n_sym; ++s) {
    int label = 0;
    for (int b = 0; b < bits_per_symbol_; ++b) {
      label = (label << 1) | (bits[s * bits_per_symbol_ + b] & 1);
    }
    x[static_cast<Eigen::Index>(s)] = points_[static_cast<std::size_t>(label)];
  }
  return x;
}

std::vector<std::uint8_t> Constellation::demap_hard(const CVector& x_hat) const {
  std::vector<std::uint8_t> bits(static_cast<std::size_t>(x_hat.size()) *
                                 static_cast<std::size_t>(bits_per_symbol_));
  for (Eigen::Index m = 0; m < x_hat.size(); ++m) {
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (int k = 0; k < order(); ++k) {
      const double dd = std::norm(x_hat[m] - points_[static_cast<std::size_t>(k)]);
      if (dd < best_d) {
        best_d = dd;
        best = k;
      }
    }
    for (int b = 0; b < bits_per_symbol_; ++b) {
      bits[static_cast<std::size_t>(m) * bits_per_symbol_ + b] =
          static_cast<std::uint8_t>((best >> (bits_per_symbol_ - 1 - b)) & 1);
    }
  }
  return bits;
}

void denoise_into(const CVector& mu, const RVector& gamma, const Constellation& c,
                  DenoiserOutput& out) {
  const Eigen::Index m = mu.size();
  if (gamma.size() != m) {
    throw LengthMismatch("denoise: mu and gamma lengths differ");
  }
  out.x_hat.resize(m);
  out.v_hat.resize(m);
  out.gamma_hat.resize(m);

  const auto& pts = c.points();
  const int q = c.order();
  const double sigma_x = c.sigma_x();

  for (Eigen::Index i = 0; i < m; ++i) {
    const double g = gamma[i];
    if (!std::isfinite(g)) {
      throw DegeneratePrecision("denoise: non-finite precision");
    }
    const Complex u = mu[i];
    // Max-shifted exponents: gamma |x - mu|^2 overflows exp() for the huge
    // precisions the hard-decision regime produces.
    double emax = -std::numeric_limits<double>::infinity();
    double e[64];
    for (int k = 0; k < q; ++k) {
      e[k] = -g * std::norm(pts[static_cast<std::size_t>(k)] - u);
      if (e[k] > emax) emax = e[k];
    }
    double z = 0.0;
    Complex num(0.0, 0.0);
    double e2 = 0.0;
    for (int k = 0; k < q; ++k) {
      const double w = std::exp(e[k] - emax);
      z += w;
      num += w * pts[static_cast<std::size_t>(k)];
      e2 += w * std::norm(pts[static_cast<std::size_t>(k)]);
    }
    const Complex xh = num / z;
    double vh = e2 / z - std::norm(xh);
    vh = std::min(std::max(vh, kDenoiserVarFloor), sigma_x);
    out.x_hat[i] = xh;
    out.v_hat[i] = vh;
    out.gamma_hat[i] = 1.0 / vh;
  }
}

DenoiserOutput denoise(const CVector& mu, const RVector& gamma, const Constellation& c) {
  if (c.order() > 64) {
    throw ConfigError("denoise: constellation order above 64 not supported");
  }
  DenoiserOutput out;
  denoise_into(mu, gamma, c, out);
  return out;
}

DenoiserOutput denoise_qpsk(const CVector& mu, const RVector& gamma, double sigma_x) {
  const Eigen::Index m = mu.size();
  if (gamma.size() != m) {
    throw LengthMismatch("denoise_qpsk: mu and gamma lengths differ");
  }
  DenoiserOutput out;
  out.x_hat.resize(m);
  out.v_hat.resize(m);
  out.gamma_hat.resize(m);
  const double amp = std::sqrt(sigma_x / 2.0);
  const double slope = std::sqrt(2.0 * sigma_x);
  for (Eigen::Index i = 0; i < m; ++i) {
    const double g = gamma[i];
    if (!std::isfinite(g)) {
      throw DegeneratePrecision("denoise_qpsk: non-finite precision");
    }
    const Complex xh(amp * std::tanh(slope * g * mu[i].real()),
                     amp * std::tanh(slope * g * mu[i].imag()));
    double vh = sigma_x - std::norm(xh);
    vh = std::min(std::max(vh, kDenoiserVarFloor), sigma_x);
    out.x_hat[i] = xh;
    out.v_hat[i] = vh;
    out.gamma_hat[i] = 1.0 / vh;
  }
  return out;
}

}  // namespace ovep
