#include "ovep/diagnostics.hpp"

#include <cmath>

#include "ovep/errors.hpp"

namespace ovep {

double CorrelationDiagnostic::mean_offdiag_abs() const {
  const Eigen::Index l = phi.rows();
  if (l < 2) return 0.0;
  double s = 0.0;
  for (Eigen::Index a = 0; a < l; ++a) {
    for (Eigen::Index b = 0; b < l; ++b) {
      if (a != b) s += std::abs(phi(a, b));
    }
  }
  return s / static_cast<double>(l * (l - 1));
}

FlopsEstimate flops_estimate(const DetectorConfig& cfg, int n, int m, int q) {
  if (n < 1 || m < 1 || q < 2 || cfg.t_max < 1) {
    throw ConfigError("flops_estimate: invalid dimensions");
  }
  const auto big_l = static_cast<std::uint64_t>(cfg.plan.l);
  const auto nb = static_cast<std::uint64_t>(cfg.plan.n_b);
  const auto nt = static_cast<std::uint64_t>(cfg.plan.n_tilde);
  const auto mm = static_cast<std::uint64_t>(m);
  const auto nn = static_cast<std::uint64_t>(n);

  FlopsEstimate est;
  switch (cfg.variant) {
    case DetectorVariant::kLmmseEp:
      est.filter_per_iteration = mm * mm * mm + mm * mm * nn;
      break;
    case DetectorVariant::kMfEp:
      est.filter_per_iteration = mm * nn;
      break;
    case DetectorVariant::kNovep:
    case DetectorVariant::kOvepNoSubtract:
      est.filter_per_iteration = big_l * (mm * nb * nb + nb * nb * nb);
      break;
    case DetectorVariant::kOvep:
      est.filter_per_iteration = big_l * (mm * nb * nb + nb * nb * nb) +
                                 (big_l - 1) * (mm * nt * nt + nt * nt * nt);
      break;
  }
  est.denoiser_per_iteration = mm * static_cast<std::uint64_t>(q);
  est.per_iteration = est.filter_per_iteration + est.denoiser_per_iteration;
  est.total = est.per_iteration * static_cast<std::uint64_t>(cfg.t_max);
  return est;
}

std::vector<CVector> per_block_contribution(const EpState& state) {
  if (state.iter < 1) {
    throw StaleState("per_block_contribution: state has no fresh denoiser input");
  }
  const std::size_t big_l = state.block_q.size();
  const Eigen::Index m = state.bar_q.mu.size();
  std::vector<CVector> out(big_l);
  for (std::size_t l = 0; l < big_l; ++l) {
    CVector v(m);
    const bool has_tilde = l < state.overlap_q.size();
    for (Eigen::Index i = 0; i < m; ++i) {
      const double gbar = state.bar_q.gamma[i];
      Complex c = (state.block_q[l].gamma[i] / gbar) * state.block_q[l].mu[i];
      if (has_tilde) {
        c -= (state.overlap_q[l].gamma[i] / gbar) * state.overlap_q[l].mu[i];
      }
      v[i] = c;
    }
    out[l] = std::move(v);
  }
  return out;
}

PhiAccumulator::PhiAccumulator(int l)
    : inner_(Eigen::MatrixXcd::Zero(l, l)), norm_(RVector::Zero(l)) {}

void PhiAccumulator::add(const EpState& state) {
  const auto contribs = per_block_contribution(state);
  const auto l = static_cast<Eigen::Index>(contribs.size());
  if (inner_.rows() == 0) {
    inner_ = Eigen::MatrixXcd::Zero(l, l);
    norm_ = RVector::Zero(l);
  }
  if (inner_.rows() != l) {
    throw LengthMismatch("PhiAccumulator: block count changed between trials");
  }
  for (Eigen::Index a = 0; a < l; ++a) {
    for (Eigen::Index b = a; b < l; ++b) {
      inner_(a, b) += contribs[static_cast<std::size_t>(a)].dot(contribs[static_cast<std::size_t>(b)]);
    }
    norm_[a] += contribs[static_cast<std::size_t>(a)].norm();
  }
  ++n_;
}

void PhiAccumulator::merge(const PhiAccumulator& other) {
  if (other.n_ == 0) return;
  if (n_ == 0) {
    *this = other;
    return;
  }
  if (inner_.rows() != other.inner_.rows()) {
    throw LengthMismatch("PhiAccumulator: merge with mismatched block count");
  }
  inner_ += other.inner_;
  norm_ += other.norm_;
  n_ += other.n_;
}

CorrelationDiagnostic PhiAccumulator::finalize() const {
  if (n_ < 100) {
    throw InsufficientTrials("interblock correlation: need at least 100 trials");
  }
  const Eigen::Index l = inner_.rows();
  const double inv_n = 1.0 / static_cast<double>(n_);
  CorrelationDiagnostic diag;
  diag.n_trials = n_;
  diag.phi.resize(l, l);
  for (Eigen::Index a = 0; a < l; ++a) {
    for (Eigen::Index b = 0; b < l; ++b) {
      const Complex inner = (b >= a) ? inner_(a, b) : std::conj(inner_(b, a));
      diag.phi(a, b) = inner * inv_n / (norm_[a] * inv_n * (norm_[b] * inv_n));
    }
  }
  return diag;
}

void MseAccumulator::add(const EpState& state, const CVector& x_truth) {
  if (state.iter < 1) {
    throw StaleState("mse decomposition: state has no fresh denoiser input");
  }
  if (x_truth.size() != state.bar_q.mu.size()) {
    throw LengthMismatch("mse decomposition: truth length mismatch");
  }
  const CVector& mu = state.bar_q.mu;
  const double corr = mu.squaredNorm();
  const Complex align = x_truth.dot(mu);
  const double direct = (mu - x_truth).squaredNorm();
  sum_corr_ += corr;
  sum_align_re_ += align.real();
  sum_align_im_ += align.imag();
  sum_direct_ += direct;
  sumsq_direct_ += direct * direct;
  // Per-trial gap between the assembled identity and the direct estimate is
  // exactly M sigma_x - ||x||^2; its spread gives the comparison noise.
  const double xnorm = x_truth.squaredNorm();
  sum_xnorm_ += xnorm;
  sumsq_xnorm_ += xnorm * xnorm;
  ++n_;
}

void MseAccumulator::merge(const MseAccumulator& other) {
  sum_corr_ += other.sum_corr_;
  sum_align_re_ += other.sum_align_re_;
  sum_align_im_ += other.sum_align_im_;
  sum_direct_ += other.sum_direct_;
  sumsq_direct_ += other.sumsq_direct_;
  sum_xnorm_ += other.sum_xnorm_;
  sumsq_xnorm_ += other.sumsq_xnorm_;
  n_ += other.n_;
}

MseDecomposition MseAccumulator::finalize(double sigma_x, int m) const {
  if (n_ < 100) {
    throw InsufficientTrials("mse decomposition: need at least 100 trials");
  }
  const double inv_n = 1.0 / static_cast<double>(n_);
  MseDecomposition d;
  d.n_trials = n_;
  d.term_corr = sum_corr_ * inv_n;
  d.term_align_re = sum_align_re_ * inv_n;
  d.term_align_im = sum_align_im_ * inv_n;
  d.term_energy = sigma_x * static_cast<double>(m);
  d.mse_identity = d.term_corr - 2.0 * d.term_align_re + d.term_energy;
  d.mse_direct = sum_direct_ * inv_n;
  const double var_direct =
      std::max(0.0, sumsq_direct_ * inv_n - d.mse_direct * d.mse_direct);
  d.se_direct = std::sqrt(var_direct * inv_n);
  const double mean_xnorm = sum_xnorm_ * inv_n;
  const double var_xnorm = std::max(0.0, sumsq_xnorm_ * inv_n - mean_xnorm * mean_xnorm);
  d.se_identity_minus_direct = std::sqrt(var_xnorm * inv_n);
  return d;
}

Histogram::Histogram(double lo_, double hi_, int bins) : lo(lo_), hi(hi_) {
  if (!(hi_ > lo_) || bins < 1) {
    throw ConfigError("histogram: need hi > lo and at least one bin");
  }
  counts.assign(static_cast<std::size_t>(bins), 0);
}

void Histogram::add(double v) {
  const auto bins = static_cast<int>(counts.size());
  int idx = static_cast<int>(std::floor((v - lo) / (hi - lo) * bins));
  idx = std::min(std::max(idx, 0), bins - 1);
  ++counts[static_cast<std::size_t>(idx)];
  ++total;
}

void Histogram::merge(const Histogram& other) {
  if (other.counts.empty()) return;
  if (counts.empty()) {
    *this = other;
    return;
  }
  if (counts.size() != other.counts.size()) {
    throw LengthMismatch("histogram: merge with mismatched bins");
  }
  for (std::size_t i = 0; i < counts.size(); ++i) counts[i] += other.counts[i];
  total += other.total;
}

DenoiserIoAccumulator::DenoiserIoAccumulator(double sigma_x, double in_lo, double in_hi,
                                             int in_bins, int out_bins,
                                             double small_v_threshold)
    : in_(in_lo, in_hi, in_bins),
      out_(0.0, sigma_x, out_bins),
      sigma_x_(sigma_x),
      small_v_threshold_(small_v_threshold) {}

void DenoiserIoAccumulator::add(const EpState& state) {
  if (state.iter < 1) {
    throw StaleState("denoiser io stats: state has no fresh denoiser input");
  }
  const Eigen::Index m = state.bar_q.mu.size();
  for (Eigen::Index i = 0; i < m; ++i) {
    in_.add(state.bar_q.gamma[i] * state.bar_q.mu[i].real());
    const double v = state.den.v_hat[i];
    out_.add(v);
    if (v < small_v_threshold_ * sigma_x_) ++small_v_;
    ++samples_;
  }
}

void DenoiserIoAccumulator::merge(const DenoiserIoAccumulator& other) {
  in_.merge(other.in_);
  out_.merge(other.out_);
  small_v_ += other.small_v_;
  samples_ += other.samples_;
}

double DenoiserIoAccumulator::small_v_fraction() const {
  return samples_ == 0 ? 0.0 : static_cast<double>(small_v_) / static_cast<double>(samples_);
}

CorrelationDiagnostic interblock_correlation(std::span<const EpState> runs) {
  PhiAccumulator acc;
  for (const auto& s : runs) acc.add(s);
  return acc.finalize();
}

MseDecomposition mse_decomposition(std::span<const EpState> runs,
                                   std::span<const CVector> x_truth, double sigma_x) {
  if (runs.size() != x_truth.size()) {
    throw LengthMismatch("mse_decomposition: runs and truths differ in count");
  }
  MseAccumulator acc;
  for (std::size_t i = 0; i < runs.size(); ++i) acc.add(runs[i], x_truth[i]);
  const int m = runs.empty() ? 0 : static_cast<int>(runs.front().bar_q.mu.size());
  return acc.finalize(sigma_x, m);
}

}  // namespace ovep
