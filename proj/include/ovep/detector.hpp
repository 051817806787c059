#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "ovep/channel.hpp"
#include "ovep/linalg.hpp"
#include "ovep/modem.hpp"

namespace ovep {

/// Entrywise guard threshold: extrinsic precisions at or below this (or
/// negative) retain their previous values instead of dividing by a nearly
/// zero precision, which is what produces denoiser-input outliers.
inline constexpr double kPrecisionGuardEps = 1e-12;

/// Sliding-window partition of N measurement rows: L blocks of size n_b at
/// stride n_s, overlapping by n_tilde = n_b - n_s rows.
struct PartitionPlan {
  int n = 0;
  int n_b = 0;
  int n_s = 0;
  int n_tilde = 0;
  int l = 0;  // block count, (n - n_b)/n_s + 1
  std::vector<std::vector<int>> block_indices;    // L sets, 0-based rows
  std::vector<std::vector<int>> overlap_indices;  // L-1 sets (empty when n_tilde = 0)

  int block_start(int li) const { return li * n_s; }
  int overlap_start(int li) const { return (li + 1) * n_s; }
  bool has_overlaps() const { return n_tilde > 0; }
};

/// Throws InvalidPartition unless 1 <= n_s <= n_b <= n and n_s divides n - n_b.
PartitionPlan make_partition(int n, int n_b, int n_s);

/// Diagonal Gaussian over the M users: mean vector and per-user precision.
/// The zero message (gamma = 0) represents "no information"; messages that
/// participate in filter updates always carry positive precisions.
struct GaussianMessage {
  CVector mu;
  RVector gamma;

  static GaussianMessage zero(Eigen::Index m) {
    return {CVector::Zero(m), RVector::Zero(m)};
  }
  static GaussianMessage flat(Eigen::Index m, double gamma0) {
    return {CVector::Zero(m), RVector::Constant(m, gamma0)};
  }
};

/// LMMSE filter posterior restricted to its diagonal.
struct FilterOutput {
  CVector mu_u;
  RVector gamma_u;       // 1 / sigma_u_diag
  RVector sigma_u_diag;  // diag of (sigma_z^{-1} H^H H + D(gamma_w))^{-1}
};

/// Counts of entrywise retain-previous events, split by update site.
struct GuardCounters {
  std::uint64_t extrinsic_q = 0;
  std::uint64_t combine = 0;
  std::uint64_t extrinsic_w = 0;
  std::uint64_t total() const { return extrinsic_q + combine + extrinsic_w; }
};

enum class DetectorVariant {
  kOvep,            // overlapping blocks, overlap outputs subtracted
  kOvepNoSubtract,  // same partition, overlap messages forced to zero
  kNovep,           // non-overlapping blocks (n_s = n_b)
  kLmmseEp,         // single full-size block (n_b = n_s = n)
  kMfEp,            // scalar blocks (n_b = n_s = 1)
};

struct DetectorConfig {
  PartitionPlan plan;
  int t_max = 32;
  double damping = 0.5;  // blend weight on the previous message, in [0, 1]
  double beta_x = 10.0;  // initial prior variance: gamma_w(0) = 1/beta_x
  DetectorVariant variant = DetectorVariant::kOvep;
};

/// Full iteration state, captured per iteration when tracing. overlap_q has
/// L entries with the last one permanently the zero message.
struct EpState {
  int iter = 0;
  std::vector<GaussianMessage> block_w;    // L
  std::vector<GaussianMessage> overlap_w;  // L-1
  std::vector<GaussianMessage> block_q;    // L
  std::vector<GaussianMessage> overlap_q;  // L, entry L-1 fixed to zero
  std::vector<FilterOutput> block_u;       // L
  std::vector<FilterOutput> overlap_u;     // L-1
  GaussianMessage bar_q;                   // denoiser input
  DenoiserOutput den;
};

enum class TraceMode {
  kNone,
  kXhatPerIteration,  // keep x_hat after every iteration
  kFinalState,        // keep the last full EpState
  kFullTrace,         // keep every full EpState
};

struct EpRunResult {
  DenoiserOutput out;
  double last_iterate_change = 0.0;  // ||x_hat(T) - x_hat(T-1)||_inf
  GuardCounters guards;
  std::vector<CVector> xhat_per_iteration;  // kXhatPerIteration / kFullTrace
  std::vector<EpState> trace;               // kFullTrace
  EpState final_state;                      // kFinalState / kFullTrace
  bool has_final_state = false;
};

/// LMMSE filter for one measurement block:
///   Sigma_u = (sigma_z^{-1} H^H H + D(gamma_w))^{-1}
///   mu_u    = Sigma_u (sigma_z^{-1} H^H y + gamma_w .* mu_w)
/// A Woodbury core of size rows(H) is used when rows(H) < cols(H), the
/// direct cols(H)-sized inverse otherwise.
FilterOutput block_filter(const CMatrix& h_l, const CVector& y_l, const GaussianMessage& w,
                          double sigma_z);

/// Identical computation on an overlap submatrix.
FilterOutput overlap_filter(const CMatrix& h_t, const CVector& y_t, const GaussianMessage& w,
                            double sigma_z);

/// gamma_q = gamma_u - gamma_w; mu_q = (gamma_u mu_u - gamma_w mu_w)/gamma_q.
/// Entries with gamma_q <= 0 or |gamma_q| < kPrecisionGuardEps keep prev_q.
GaussianMessage extrinsic_from_filter(const FilterOutput& f, const GaussianMessage& w,
                                      const GaussianMessage& prev_q,
                                      GuardCounters* guards = nullptr);

/// Denoiser input: gamma_bar = sum_l (gamma_q_l - gamma_qt_l) and the
/// matching precision-weighted mean. Entries where gamma_bar <= 0 keep the
/// previous bar message (zero message when absent).
GaussianMessage combine(std::span<const GaussianMessage> block_q,
                        std::span<const GaussianMessage> overlap_q,
                        const GaussianMessage* prev_bar = nullptr,
                        GuardCounters* guards = nullptr);

/// Extrinsic message back to a filter, damped in natural parameters:
///   target: gamma* = gamma_hat - gamma_q, gamma* mu* = gamma_hat x_hat - gamma_q mu_q
///   new:    gamma  = (1-d) gamma* + d gamma_prev,
///           gamma mu = (1-d)(gamma* mu*) + d (gamma_prev mu_prev)
/// Guarded entries keep prev_w before damping (hence exactly prev_w).
GaussianMessage extrinsic_to_filters(const DenoiserOutput& den, const GaussianMessage& q,
                                     const GaussianMessage& prev_w, double damping,
                                     GuardCounters* guards = nullptr);

/// Runs t_max iterations of the partition-parameterized EP loop: all block
/// filters, all overlap filters, combine, denoise, extrinsic updates.
EpRunResult run_ep(const ChannelInstance& ch, const CVector& y, const Constellation& c,
                   const DetectorConfig& cfg, TraceMode trace = TraceMode::kNone);

namespace detail {
struct EpDetectorImpl;
}

/// Reusable detector for Monte Carlo loops: buffers and per-block layouts
/// are allocated once and refilled per trial, keeping the per-trial path
/// allocation-free. run_ep is the one-shot convenience wrapper.
class EpDetector {
 public:
  EpDetector(const DetectorConfig& cfg, int m);
  ~EpDetector();
  EpDetector(EpDetector&&) noexcept;
  EpDetector& operator=(EpDetector&&) noexcept;

  EpRunResult run(const ChannelInstance& ch, const CVector& y, const Constellation& c,
                  TraceMode trace = TraceMode::kNone);

  const DetectorConfig& config() const;

 private:
  std::unique_ptr<detail::EpDetectorImpl> impl_;
};

/// Classic one-shot LMMSE estimate, shaped like a denoiser output:
///   x_hat = (sigma_z^{-1} H^H H + sigma_x^{-1} I)^{-1} sigma_z^{-1} H^H y.
DenoiserOutput lmmse_baseline(const ChannelInstance& ch, const CVector& y,
                              const Constellation& c);

/// At any fixed point the filter posteriors and the denoiser output agree:
/// gamma_1^u = ... = gamma_L^u = tilde gamma^u = gamma_hat and likewise for
/// the means. Deviations are normalized per user by the largest magnitude
/// in the compared set (the precisions grow to ~1/kDenoiserVarFloor at hard
/// decisions, so only relative spread is meaningful).
struct FixedPointReport {
  double iterate_change = 0.0;
  double max_gamma_dev = 0.0;  // relative, across {gamma_l^u, gamma~_l^u, gamma_hat}
  double max_mu_dev = 0.0;     // relative, across {mu_l^u, mu~_l^u, x_hat}
};

/// Requires a run captured with TraceMode::kFinalState or richer whose last
/// iterate change is below conv_tol; throws NotConverged otherwise.
FixedPointReport verify_fixed_point(const EpRunResult& run, double conv_tol);

}  // namespace ovep
