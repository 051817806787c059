#include "ovep/channel.hpp"

#include <cmath>

#include "ovep/errors.hpp"

namespace ovep {

namespace {

void validate(const CorrelationSpec& spec) {
  if (spec.n < 1) {
    throw ConfigError("correlation spec: antenna count must be >= 1");
  }
  if (!(spec.rho >= 0.0 && spec.rho <= 1.0)) {
    throw ConfigError("correlation spec: rho must lie in [0, 1]");
  }
}

}  // namespace

CMatrix exp_correlation_matrix(const CorrelationSpec& spec) {
  validate(spec);
  CMatrix r(spec.n, spec.n);
  for (int i = 0; i < spec.n; ++i) {
    for (int j = 0; j < spec.n; ++j) {
      r(i, j) = std::pow(spec.rho, std::abs(i - j));
    }
  }
  return r;
}

ChannelModel::ChannelModel(const CorrelationSpec& spec_r, int m) : spec_(spec_r), m_(m) {
  validate(spec_);
  if (m < 1) {
    throw ConfigError("channel model: user count must be >= 1");
  }
  correlated_ = spec_.rho > 0.0;
  if (correlated_) {
    r_sqrt_ = psd_sqrt(exp_correlation_matrix(spec_));
  }
}

CMatrix ChannelModel::draw(Rng& rng) const {
  CMatrix g(spec_.n, m_);
  for (int i = 0; i < spec_.n; ++i) {
    for (int j = 0; j < m_; ++j) {
      g(i, j) = rng.cnormal();
    }
  }
  if (!correlated_) {
    return g;
  }
  return r_sqrt_ * g;
}

CMatrix generate_channel(const CorrelationSpec& spec_r, int m, Rng& rng) {
  return ChannelModel(spec_r, m).draw(rng);
}

CVector transmit(const ChannelInstance& ch, const CVector& x, Rng& rng) {
  if (x.size() != ch.h.cols()) {
    throw LengthMismatch("transmit: x length must match cols(H)");
  }
  if (ch.sigma_z < 0.0) {
    throw ConfigError("transmit: sigma_z must be nonnegative");
  }
  CVector y = ch.h * x;
  const double scale = std::sqrt(ch.sigma_z);
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    y[i] += scale * rng.cnormal();
  }
  return y;
}

}  // namespace ovep
