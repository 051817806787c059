#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ovep/diagnostics.hpp"

namespace ovep {

enum class SimDetector { kLmmse, kLmmseEp, kMfEp, kNovep, kOvep, kOvepNoSub };

const char* detector_name(SimDetector d);
std::optional<SimDetector> parse_detector(std::string_view name);

/// One detector entry in a sweep. Zero block/shift/iteration fields are
/// filled from the per-variant defaults: LMMSE-EP runs 16 iterations at
/// n_b = n_s = N, the block variants 32 at n_b = 2 (shift 1 when
/// overlapping, 2 otherwise), MF-EP 32 at n_b = n_s = 1.
struct VariantSpec {
  SimDetector det = SimDetector::kOvep;
  int n_b = 0;
  int n_s = 0;
  int t_max = 0;
};

struct SimConfig {
  int n = 32;
  int m = 24;
  int q = 4;
  double rho = 0.0;
  std::vector<double> snr_db;
  std::vector<VariantSpec> variants;
  double damping = 0.5;
  double beta_x = 10.0;
  double sigma_x = 1.0;
  long n_trials = 10000;
  std::uint64_t master_seed = 1;
  int threads = 1;
  // Diagnostics binning; Phi and the histograms are evaluated at the first
  // SNR in snr_db, the MSE terms at every listed SNR.
  double hist_in_lo = -100.0;
  double hist_in_hi = 100.0;
  int hist_in_bins = 200;
  int hist_out_bins = 100;
  double small_v_threshold = 0.01;  // fraction of sigma_x
};

/// Fills in defaulted fields and checks partition consistency.
VariantSpec resolve_variant(const VariantSpec& spec, int n);

/// Detector configuration for a resolved EP variant (not kLmmse).
DetectorConfig detector_config(const VariantSpec& resolved, const SimConfig& cfg);

struct BerCell {
  SimDetector det;
  double snr_db = 0.0;
  int iterations = 0;
  long trials = 0;
  std::uint64_t bits = 0;
  std::uint64_t bit_errors = 0;
  double ber = 0.0;
  double ber_stderr = 0.0;
  std::uint64_t guard_activations = 0;
};

struct IterCell {
  SimDetector det;
  double snr_db = 0.0;
  int iteration = 0;
  std::uint64_t bits = 0;
  std::uint64_t bit_errors = 0;
  double ber = 0.0;
  double ber_stderr = 0.0;
};

struct SweepResult {
  SimConfig cfg;
  std::vector<BerCell> ber;
  std::vector<IterCell> iters;
};

/// Per-trial outcome; sweeps aggregate these, the CSV files carry aggregates.
struct TrialRecord {
  long trial = 0;
  std::uint64_t seed = 0;
  SimDetector det = SimDetector::kOvep;
  double snr_db = 0.0;
  std::uint64_t bit_errors = 0;
  std::uint64_t bits = 0;
  std::uint64_t guard_activations = 0;
};

/// BER vs SNR over n_trials independent (H, x, z) draws per SNR point. All
/// variants of a given (trial, SNR) cell see the same draw, so comparisons
/// are paired. Identical master_seed gives byte-identical CSV for any
/// thread count.
SweepResult run_ber_sweep(const SimConfig& cfg);

/// As run_ber_sweep with per-iteration BER from traced runs.
SweepResult run_iteration_sweep(const SimConfig& cfg);

struct VariantDiag {
  SimDetector det;
  CorrelationDiagnostic phi;
  std::vector<MseDecomposition> mse;  // one entry per SNR in cfg.snr_db
  Histogram hist_in;
  Histogram hist_out;
  double small_v_fraction = 0.0;
  std::uint64_t samples = 0;
};

struct DiagResult {
  SimConfig cfg;
  double phi_snr_db = 0.0;
  std::vector<VariantDiag> variants;
};

/// First-iteration diagnostics (Phi, MSE decomposition, denoiser io stats)
/// over n_trials draws. EP variants only.
DiagResult run_diagnostics(const SimConfig& cfg);

// CSV emission. Deterministic: fixed row order, '\n' endings, floats with 9
// significant digits. Streams for testing, paths for the CLI (IO failures
// carry the path in the message).
void write_ber_csv(const SweepResult& r, std::ostream& os);
void write_iters_csv(const SweepResult& r, std::ostream& os);
void write_phi_csv(const DiagResult& r, std::ostream& os);
void write_mse_csv(const DiagResult& r, std::ostream& os);
void write_hist_csv(const DiagResult& r, bool input, std::ostream& os);
void write_flops_csv(const SimConfig& cfg, std::ostream& os);
void write_csv_file(const std::string& path, const std::string& content);

}  // namespace ovep
