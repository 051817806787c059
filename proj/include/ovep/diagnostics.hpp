#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "ovep/detector.hpp"

namespace ovep {

/// Normalized inter-block correlation estimated by sample means:
///   Phi(l,l') = E[mu_l^H mu_l'] / (E[||mu_l||] E[||mu_l'||]),
/// where mu_l is the l-th per-block contribution to the denoiser input.
struct CorrelationDiagnostic {
  Eigen::MatrixXcd phi;
  long n_trials = 0;

  /// Mean |Phi(l,l')| over l != l'.
  double mean_offdiag_abs() const;
};

struct MseDecomposition {
  double term_corr = 0.0;      // sum_{l,l'} E[mu_l^H mu_l']  (= E||mu_bar||^2)
  double term_align_re = 0.0;  // Re sum_l E[x^H mu_l]
  double term_align_im = 0.0;
  double term_energy = 0.0;  // M sigma_x
  double mse_identity = 0.0; // term_corr - 2 Re(term_align) + term_energy
  double mse_direct = 0.0;   // sample mean of ||mu_bar - x||^2
  double se_direct = 0.0;    // standard error of mse_direct
  double se_identity_minus_direct = 0.0;
  long n_trials = 0;
};

/// FLOPs model from the per-variant complexity rows, counted as complex
/// multiplications with leading-order constants set to 1 (the rows give
/// orders only):
///   LMMSE-EP: T (M^3 + M^2 N + MQ)
///   MF-EP:    T (M N + MQ)
///   NOvEP:    T (L (M Nb^2 + Nb^3) + MQ)
///   OvEP:     T (L (M Nb^2 + Nb^3) + (L-1)(M Nt^2 + Nt^3) + MQ)
/// The no-subtraction ablation runs block filters only, so it counts as
/// NOvEP with its own L.
struct FlopsEstimate {
  std::uint64_t filter_per_iteration = 0;
  std::uint64_t denoiser_per_iteration = 0;
  std::uint64_t per_iteration = 0;
  std::uint64_t total = 0;
};

FlopsEstimate flops_estimate(const DetectorConfig& cfg, int n, int m, int q);

/// Per-block contribution to the denoiser input,
///   mu_l = (gamma_q_l ./ gamma_bar) .* mu_q_l - (gamma_qt_l ./ gamma_bar) .* mu_qt_l,
/// whose sum over l reconstructs mu_bar. Requires a state past iteration 1.
std::vector<CVector> per_block_contribution(const EpState& state);

/// Streaming accumulator for Phi; mergeable so workers can accumulate
/// chunk-local partials that are reduced in a fixed order.
class PhiAccumulator {
 public:
  PhiAccumulator() = default;
  explicit PhiAccumulator(int l);

  void add(const EpState& state);
  void merge(const PhiAccumulator& other);
  long n_trials() const { return n_; }

  /// Throws InsufficientTrials below 100 trials.
  CorrelationDiagnostic finalize() const;

 private:
  Eigen::MatrixXcd inner_;
  RVector norm_;
  long n_ = 0;
};

/// Streaming accumulator for the denoiser-input MSE decomposition.
class MseAccumulator {
 public:
  void add(const EpState& state, const CVector& x_truth);
  void merge(const MseAccumulator& other);
  long n_trials() const { return n_; }

  /// Throws InsufficientTrials below 100 trials.
  MseDecomposition finalize(double sigma_x, int m) const;

 private:
  double sum_corr_ = 0.0;
  double sum_align_re_ = 0.0;
  double sum_align_im_ = 0.0;
  double sum_direct_ = 0.0;
  double sumsq_direct_ = 0.0;
  double sum_xnorm_ = 0.0;  // ||x||^2; its spread is the identity-vs-direct noise
  double sumsq_xnorm_ = 0.0;
  long n_ = 0;
};

/// Fixed-width histogram; out-of-range samples are clamped into the edge
/// bins so the total mass always equals the sample count.
struct Histogram {
  double lo = 0.0;
  double hi = 1.0;
  std::vector<std::uint64_t> counts;
  std::uint64_t total = 0;

  Histogram() = default;
  Histogram(double lo_, double hi_, int bins);
  void add(double v);
  void merge(const Histogram& other);
};

/// Denoiser input/output statistics at a fixed iteration: histogram of
/// Re[gamma_bar .* mu_bar], histogram of v_hat, and the fraction of
/// near-hard decisions v_hat < threshold * sigma_x.
class DenoiserIoAccumulator {
 public:
  DenoiserIoAccumulator() = default;
  DenoiserIoAccumulator(double sigma_x, double in_lo, double in_hi, int in_bins, int out_bins,
                        double small_v_threshold);

  void add(const EpState& state);
  void merge(const DenoiserIoAccumulator& other);

  const Histogram& input_histogram() const { return in_; }
  const Histogram& output_histogram() const { return out_; }
  std::uint64_t samples() const { return samples_; }
  double small_v_fraction() const;

 private:
  Histogram in_;
  Histogram out_;
  double sigma_x_ = 1.0;
  double small_v_threshold_ = 0.01;
  std::uint64_t small_v_ = 0;
  std::uint64_t samples_ = 0;
};

/// Batch forms over captured first-iteration states (unit-test scale; the
/// simulator streams through the accumulators instead).
CorrelationDiagnostic interblock_correlation(std::span<const EpState> runs);
MseDecomposition mse_decomposition(std::span<const EpState> runs,
                                   std::span<const CVector> x_truth, double sigma_x);

}  // namespace ovep
