#include "ovep/sim.hpp"

#include <atomic>
#include <cmath>
#include <optional>
#include <cstdio>
#include <fstream>
#include <functional>
#include <mutex>
#include <ostream>
#include <thread>

#include "ovep/errors.hpp"

namespace ovep {

namespace {

constexpr long kChunkTrials = 64;

constexpr std::uint64_t kTagChannel = 0x4368616e6e656cull;
constexpr std::uint64_t kTagSymbols = 0x53796d626f6c73ull;
constexpr std::uint64_t kTagNoise = 0x4e6f697365ull;

struct Counts {
  std::uint64_t bits = 0;
  std::uint64_t errors = 0;
  std::uint64_t guards = 0;
};

void validate_sim(const SimConfig& cfg) {
  if (cfg.n < 1 || cfg.m < 1) throw ConfigError("sim: n and m must be >= 1");
  if (cfg.snr_db.empty()) throw ConfigError("sim: SNR list must be nonempty");
  if (cfg.variants.empty()) throw ConfigError("sim: detector list must be nonempty");
  if (cfg.n_trials < 1) throw ConfigError("sim: n_trials must be >= 1");
  if (cfg.threads < 1) throw ConfigError("sim: threads must be >= 1");
  if (!(cfg.rho >= 0.0 && cfg.rho <= 1.0)) throw ConfigError("sim: rho must lie in [0, 1]");
  if (cfg.sigma_x <= 0.0) throw ConfigError("sim: sigma_x must be positive");
}

// Runs body(0..n_chunks-1) across a small worker pool. Chunk results are
// stored per chunk index and merged in order by the caller, so the output
// never depends on the thread count.
void parallel_chunks(long n_chunks, int threads, const std::function<void(long)>& body) {
  const long use = std::max<long>(1, std::min<long>(threads, n_chunks));
  if (use == 1) {
    for (long i = 0; i < n_chunks; ++i) body(i);
    return;
  }
  std::atomic<long> next{0};
  std::atomic<bool> failed{false};
  std::mutex err_mutex;
  std::exception_ptr err;
  auto worker = [&] {
    while (!failed.load(std::memory_order_relaxed)) {
      const long i = next.fetch_add(1);
      if (i >= n_chunks) return;
      try {
        body(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(err_mutex);
        if (!err) err = std::current_exception();
        failed.store(true);
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(use));
  for (long i = 0; i < use; ++i) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  if (err) std::rethrow_exception(err);
}

struct TrialDraw {
  CMatrix h;
  std::vector<std::uint8_t> bits;
  CVector x;
  CVector y;
  std::uint64_t base_seed = 0;
};

TrialDraw draw_trial(const ChannelModel& model, const Constellation& c, double sigma_z,
                     double sigma_x, std::uint64_t master, long trial, int snr_idx) {
  TrialDraw d;
  d.base_seed = fold_seed(fold_seed(master, static_cast<std::uint64_t>(snr_idx)),
                          static_cast<std::uint64_t>(trial));
  Rng rng_h(fold_seed(d.base_seed, kTagChannel));
  Rng rng_x(fold_seed(d.base_seed, kTagSymbols));
  Rng rng_z(fold_seed(d.base_seed, kTagNoise));
  d.h = model.draw(rng_h);
  d.bits.resize(static_cast<std::size_t>(model.m()) *
                static_cast<std::size_t>(c.bits_per_symbol()));
  for (auto& b : d.bits) b = static_cast<std::uint8_t>(rng_x.bit());
  d.x = c.map_bits(d.bits);
  const ChannelInstance ch{d.h, sigma_z, sigma_x};
  d.y = transmit(ch, d.x, rng_z);
  return d;
}

std::uint64_t count_bit_errors(const CVector& x_hat, const std::vector<std::uint8_t>& truth,
                               const Constellation& c) {
  const auto decided = c.demap_hard(x_hat);
  std::uint64_t e = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) e += decided[i] != truth[i];
  return e;
}

double ber_stderr(double p, std::uint64_t bits) {
  if (bits == 0) return 0.0;
  return std::sqrt(std::max(0.0, p * (1.0 - p)) / static_cast<double>(bits));
}

DetectorVariant to_detector_variant(SimDetector d) {
  switch (d) {
    case SimDetector::kLmmseEp:
      return DetectorVariant::kLmmseEp;
    case SimDetector::kMfEp:
      return DetectorVariant::kMfEp;
    case SimDetector::kNovep:
      return DetectorVariant::kNovep;
    case SimDetector::kOvepNoSub:
      return DetectorVariant::kOvepNoSubtract;
    case SimDetector::kOvep:
      return DetectorVariant::kOvep;
    case SimDetector::kLmmse:
      break;
  }
  throw ConfigError("plain LMMSE has no EP detector configuration");
}

struct ResolvedVariant {
  VariantSpec spec;
  DetectorConfig det;   // valid unless spec.det == kLmmse
  bool is_ep = false;
};

std::vector<ResolvedVariant> resolve_all(const SimConfig& cfg) {
  std::vector<ResolvedVariant> out;
  out.reserve(cfg.variants.size());
  for (const auto& v : cfg.variants) {
    ResolvedVariant rv;
    rv.spec = resolve_variant(v, cfg.n);
    rv.is_ep = v.det != SimDetector::kLmmse;
    if (rv.is_ep) rv.det = detector_config(rv.spec, cfg);
    out.push_back(std::move(rv));
  }
  return out;
}

std::string g9(double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

}  // namespace

const char* detector_name(SimDetector d) {
  switch (d) {
    case SimDetector::kLmmse:
      return "lmmse";
    case SimDetector::kLmmseEp:
      return "lmmse-ep";
    case SimDetector::kMfEp:
      return "mf-ep";
    case SimDetector::kNovep:
      return "novep";
    case SimDetector::kOvep:
      return "ovep";
    case SimDetector::kOvepNoSub:
      return "ovep-nosub";
  }
  return "?";
}

std::optional<SimDetector> parse_detector(std::string_view name) {
  if (name == "lmmse") return SimDetector::kLmmse;
  if (name == "lmmse-ep") return SimDetector::kLmmseEp;
  if (name == "mf-ep") return SimDetector::kMfEp;
  if (name == "novep") return SimDetector::kNovep;
  if (name == "ovep") return SimDetector::kOvep;
  if (name == "ovep-nosub") return SimDetector::kOvepNoSub;
  return std::nullopt;
}

VariantSpec resolve_variant(const VariantSpec& spec, int n) {
  VariantSpec r = spec;
  switch (spec.det) {
    case SimDetector::kLmmse:
      r.n_b = r.n_s = 0;
      r.t_max = 1;
      break;
    case SimDetector::kLmmseEp:
      r.n_b = r.n_s = n;
      if (r.t_max <= 0) r.t_max = 16;
      break;
    case SimDetector::kMfEp:
      r.n_b = r.n_s = 1;
      if (r.t_max <= 0) r.t_max = 32;
      break;
    case SimDetector::kNovep:
      if (r.n_b <= 0) r.n_b = 2;
      r.n_s = r.n_b;
      if (r.t_max <= 0) r.t_max = 32;
      break;
    case SimDetector::kOvep:
    case SimDetector::kOvepNoSub:
      if (r.n_b <= 0) r.n_b = 2;
      if (r.n_s <= 0) r.n_s = std::max(1, r.n_b - 1);
      if (r.t_max <= 0) r.t_max = 32;
      break;
  }
  return r;
}

DetectorConfig detector_config(const VariantSpec& resolved, const SimConfig& cfg) {
  DetectorConfig det;
  det.plan = make_partition(cfg.n, resolved.n_b, resolved.n_s);
  det.t_max = resolved.t_max;
  det.damping = cfg.damping;
  det.beta_x = cfg.beta_x;
  det.variant = to_detector_variant(resolved.det);
  return det;
}

SweepResult run_ber_sweep(const SimConfig& cfg) {
  validate_sim(cfg);
  const auto variants = resolve_all(cfg);
  const Constellation c = Constellation::square(cfg.q, cfg.sigma_x);
  const ChannelModel model({cfg.rho, cfg.n}, cfg.m);
  const std::size_t nv = variants.size();
  const long n_chunks = (cfg.n_trials + kChunkTrials - 1) / kChunkTrials;

  // grid[v][snr]
  std::vector<std::vector<Counts>> grid(nv, std::vector<Counts>(cfg.snr_db.size()));

  for (std::size_t si = 0; si < cfg.snr_db.size(); ++si) {
    const double sigma_z = cfg.sigma_x / std::pow(10.0, cfg.snr_db[si] / 10.0);
    std::vector<std::vector<Counts>> partial(static_cast<std::size_t>(n_chunks),
                                             std::vector<Counts>(nv));
    parallel_chunks(n_chunks, cfg.threads, [&](long ci) {
      auto& local = partial[static_cast<std::size_t>(ci)];
      std::vector<std::optional<EpDetector>> dets(nv);
      for (std::size_t v = 0; v < nv; ++v) {
        if (variants[v].is_ep) dets[v].emplace(variants[v].det, cfg.m);
      }
      const long lo = ci * kChunkTrials;
      const long hi = std::min(cfg.n_trials, lo + kChunkTrials);
      for (long trial = lo; trial < hi; ++trial) {
        const TrialDraw d = draw_trial(model, c, sigma_z, cfg.sigma_x, cfg.master_seed, trial,
                                       static_cast<int>(si));
        const ChannelInstance ch{d.h, sigma_z, cfg.sigma_x};
        for (std::size_t v = 0; v < nv; ++v) {
          std::uint64_t errs = 0;
          std::uint64_t guards = 0;
          if (!variants[v].is_ep) {
            errs = count_bit_errors(lmmse_baseline(ch, d.y, c).x_hat, d.bits, c);
          } else {
            const EpRunResult r = dets[v]->run(ch, d.y, c, TraceMode::kNone);
            errs = count_bit_errors(r.out.x_hat, d.bits, c);
            guards = r.guards.total();
          }
          local[v].bits += d.bits.size();
          local[v].errors += errs;
          local[v].guards += guards;
        }
      }
    });
    for (long ci = 0; ci < n_chunks; ++ci) {
      for (std::size_t v = 0; v < nv; ++v) {
        grid[v][si].bits += partial[static_cast<std::size_t>(ci)][v].bits;
        grid[v][si].errors += partial[static_cast<std::size_t>(ci)][v].errors;
        grid[v][si].guards += partial[static_cast<std::size_t>(ci)][v].guards;
      }
    }
  }

  SweepResult result;
  result.cfg = cfg;
  for (std::size_t v = 0; v < nv; ++v) {
    for (std::size_t si = 0; si < cfg.snr_db.size(); ++si) {
      BerCell cell;
      cell.det = variants[v].spec.det;
      cell.snr_db = cfg.snr_db[si];
      cell.iterations = variants[v].spec.t_max;
      cell.trials = cfg.n_trials;
      cell.bits = grid[v][si].bits;
      cell.bit_errors = grid[v][si].errors;
      cell.ber = cell.bits == 0 ? 0.0
                                : static_cast<double>(cell.bit_errors) /
                                      static_cast<double>(cell.bits);
      cell.ber_stderr = ber_stderr(cell.ber, cell.bits);
      cell.guard_activations = grid[v][si].guards;
      result.ber.push_back(cell);
    }
  }
  return result;
}

SweepResult run_iteration_sweep(const SimConfig& cfg) {
  validate_sim(cfg);
  const auto variants = resolve_all(cfg);
  const Constellation c = Constellation::square(cfg.q, cfg.sigma_x);
  const ChannelModel model({cfg.rho, cfg.n}, cfg.m);
  const std::size_t nv = variants.size();
  const long n_chunks = (cfg.n_trials + kChunkTrials - 1) / kChunkTrials;

  // errs[v][snr][iter]
  std::vector<std::vector<std::vector<std::uint64_t>>> errs(nv);
  for (std::size_t v = 0; v < nv; ++v) {
    errs[v].assign(cfg.snr_db.size(),
                   std::vector<std::uint64_t>(
                       static_cast<std::size_t>(std::max(1, variants[v].spec.t_max)), 0));
  }

  for (std::size_t si = 0; si < cfg.snr_db.size(); ++si) {
    const double sigma_z = cfg.sigma_x / std::pow(10.0, cfg.snr_db[si] / 10.0);
    std::vector<std::vector<std::vector<std::uint64_t>>> partial(
        static_cast<std::size_t>(n_chunks));
    for (auto& p : partial) {
      p.resize(nv);
      for (std::size_t v = 0; v < nv; ++v) {
        p[v].assign(static_cast<std::size_t>(std::max(1, variants[v].spec.t_max)), 0);
      }
    }
    parallel_chunks(n_chunks, cfg.threads, [&](long ci) {
      auto& local = partial[static_cast<std::size_t>(ci)];
      std::vector<std::optional<EpDetector>> dets(nv);
      for (std::size_t v = 0; v < nv; ++v) {
        if (variants[v].is_ep) dets[v].emplace(variants[v].det, cfg.m);
      }
      const long lo = ci * kChunkTrials;
      const long hi = std::min(cfg.n_trials, lo + kChunkTrials);
      for (long trial = lo; trial < hi; ++trial) {
        const TrialDraw d = draw_trial(model, c, sigma_z, cfg.sigma_x, cfg.master_seed, trial,
                                       static_cast<int>(si));
        const ChannelInstance ch{d.h, sigma_z, cfg.sigma_x};
        for (std::size_t v = 0; v < nv; ++v) {
          if (!variants[v].is_ep) {
            local[v][0] += count_bit_errors(lmmse_baseline(ch, d.y, c).x_hat, d.bits, c);
            continue;
          }
          const EpRunResult r = dets[v]->run(ch, d.y, c, TraceMode::kXhatPerIteration);
          for (std::size_t t = 0; t < r.xhat_per_iteration.size(); ++t) {
            local[v][t] += count_bit_errors(r.xhat_per_iteration[t], d.bits, c);
          }
        }
      }
    });
    for (long ci = 0; ci < n_chunks; ++ci) {
      for (std::size_t v = 0; v < nv; ++v) {
        for (std::size_t t = 0; t < errs[v][si].size(); ++t) {
          errs[v][si][t] += partial[static_cast<std::size_t>(ci)][v][t];
        }
      }
    }
  }

  SweepResult result;
  result.cfg = cfg;
  const std::uint64_t bits_per_cell = static_cast<std::uint64_t>(cfg.n_trials) *
                                      static_cast<std::uint64_t>(cfg.m) *
                                      static_cast<std::uint64_t>(c.bits_per_symbol());
  for (std::size_t v = 0; v < nv; ++v) {
    for (std::size_t si = 0; si < cfg.snr_db.size(); ++si) {
      for (std::size_t t = 0; t < errs[v][si].size(); ++t) {
        IterCell cell;
        cell.det = variants[v].spec.det;
        cell.snr_db = cfg.snr_db[si];
        cell.iteration = static_cast<int>(t) + 1;
        cell.bits = bits_per_cell;
        cell.bit_errors = errs[v][si][t];
        cell.ber = static_cast<double>(cell.bit_errors) / static_cast<double>(cell.bits);
        cell.ber_stderr = ber_stderr(cell.ber, cell.bits);
        result.iters.push_back(cell);
      }
    }
  }
  return result;
}

DiagResult run_diagnostics(const SimConfig& cfg) {
  validate_sim(cfg);
  const auto variants = resolve_all(cfg);
  for (const auto& v : variants) {
    if (!v.is_ep) {
      throw ConfigError("diagnostics: plain LMMSE has no EP iteration state");
    }
  }
  const Constellation c = Constellation::square(cfg.q, cfg.sigma_x);
  const ChannelModel model({cfg.rho, cfg.n}, cfg.m);
  const std::size_t nv = variants.size();
  const long n_chunks = (cfg.n_trials + kChunkTrials - 1) / kChunkTrials;

  struct VariantAcc {
    PhiAccumulator phi;
    DenoiserIoAccumulator io;
    std::vector<MseAccumulator> mse;  // per snr
  };
  auto fresh_acc = [&](std::size_t v) {
    VariantAcc acc;
    acc.phi = PhiAccumulator(variants[v].det.plan.l);
    acc.io = DenoiserIoAccumulator(cfg.sigma_x, cfg.hist_in_lo, cfg.hist_in_hi,
                                   cfg.hist_in_bins, cfg.hist_out_bins, cfg.small_v_threshold);
    acc.mse.resize(cfg.snr_db.size());
    return acc;
  };
  std::vector<VariantAcc> total;
  for (std::size_t v = 0; v < nv; ++v) total.push_back(fresh_acc(v));

  for (std::size_t si = 0; si < cfg.snr_db.size(); ++si) {
    const double sigma_z = cfg.sigma_x / std::pow(10.0, cfg.snr_db[si] / 10.0);
    std::vector<std::vector<VariantAcc>> partial(static_cast<std::size_t>(n_chunks));
    for (auto& p : partial) {
      for (std::size_t v = 0; v < nv; ++v) p.push_back(fresh_acc(v));
    }
    parallel_chunks(n_chunks, cfg.threads, [&](long ci) {
      auto& local = partial[static_cast<std::size_t>(ci)];
      std::vector<std::optional<EpDetector>> dets(nv);
      for (std::size_t v = 0; v < nv; ++v) {
        DetectorConfig one_iter = variants[v].det;
        one_iter.t_max = 1;
        dets[v].emplace(one_iter, cfg.m);
      }
      const long lo = ci * kChunkTrials;
      const long hi = std::min(cfg.n_trials, lo + kChunkTrials);
      for (long trial = lo; trial < hi; ++trial) {
        const TrialDraw d = draw_trial(model, c, sigma_z, cfg.sigma_x, cfg.master_seed, trial,
                                       static_cast<int>(si));
        const ChannelInstance ch{d.h, sigma_z, cfg.sigma_x};
        for (std::size_t v = 0; v < nv; ++v) {
          const EpRunResult r = dets[v]->run(ch, d.y, c, TraceMode::kFinalState);
          local[v].mse[si].add(r.final_state, d.x);
          if (si == 0) {
            local[v].phi.add(r.final_state);
            local[v].io.add(r.final_state);
          }
        }
      }
    });
    for (long ci = 0; ci < n_chunks; ++ci) {
      for (std::size_t v = 0; v < nv; ++v) {
        auto& p = partial[static_cast<std::size_t>(ci)][v];
        total[v].mse[si].merge(p.mse[si]);
        if (si == 0) {
          total[v].phi.merge(p.phi);
          total[v].io.merge(p.io);
        }
      }
    }
  }

  DiagResult result;
  result.cfg = cfg;
  result.phi_snr_db = cfg.snr_db.front();
  for (std::size_t v = 0; v < nv; ++v) {
    VariantDiag vd;
    vd.det = variants[v].spec.det;
    vd.phi = total[v].phi.finalize();
    for (std::size_t si = 0; si < cfg.snr_db.size(); ++si) {
      vd.mse.push_back(total[v].mse[si].finalize(cfg.sigma_x, cfg.m));
    }
    vd.hist_in = total[v].io.input_histogram();
    vd.hist_out = total[v].io.output_histogram();
    vd.small_v_fraction = total[v].io.small_v_fraction();
    vd.samples = total[v].io.samples();
    result.variants.push_back(std::move(vd));
  }
  return result;
}

void write_ber_csv(const SweepResult& r, std::ostream& os) {
  os << "variant,snr_db,iterations,trials,bits,bit_errors,ber,ber_stderr\n";
  for (const auto& cell : r.ber) {
    os << detector_name(cell.det) << ',' << g9(cell.snr_db) << ',' << cell.iterations << ','
       << cell.trials << ',' << cell.bits << ',' << cell.bit_errors << ',' << g9(cell.ber)
       << ',' << g9(cell.ber_stderr) << '\n';
  }
}

void write_iters_csv(const SweepResult& r, std::ostream& os) {
  os << "variant,snr_db,iteration,ber,ber_stderr\n";
  for (const auto& cell : r.iters) {
    os << detector_name(cell.det) << ',' << g9(cell.snr_db) << ',' << cell.iteration << ','
       << g9(cell.ber) << ',' << g9(cell.ber_stderr) << '\n';
  }
}

void write_phi_csv(const DiagResult& r, std::ostream& os) {
  os << "variant,rho,l,l_prime,abs_phi,re_phi,im_phi\n";
  for (const auto& vd : r.variants) {
    const auto l = vd.phi.phi.rows();
    for (Eigen::Index a = 0; a < l; ++a) {
      for (Eigen::Index b = 0; b < l; ++b) {
        const Complex p = vd.phi.phi(a, b);
        os << detector_name(vd.det) << ',' << g9(r.cfg.rho) << ',' << (a + 1) << ',' << (b + 1)
           << ',' << g9(std::abs(p)) << ',' << g9(p.real()) << ',' << g9(p.imag()) << '\n';
      }
    }
  }
}

void write_mse_csv(const DiagResult& r, std::ostream& os) {
  os << "variant,snr_db,term_corr,term_align_re,term_energy,mse_direct,mse_identity\n";
  for (const auto& vd : r.variants) {
    for (std::size_t si = 0; si < r.cfg.snr_db.size(); ++si) {
      const auto& m = vd.mse[si];
      os << detector_name(vd.det) << ',' << g9(r.cfg.snr_db[si]) << ',' << g9(m.term_corr)
         << ',' << g9(m.term_align_re) << ',' << g9(m.term_energy) << ',' << g9(m.mse_direct)
         << ',' << g9(m.mse_identity) << '\n';
    }
  }
}

void write_hist_csv(const DiagResult& r, bool input, std::ostream& os) {
  os << "variant,bin_lo,bin_hi,count\n";
  for (const auto& vd : r.variants) {
    const Histogram& h = input ? vd.hist_in : vd.hist_out;
    const auto bins = static_cast<int>(h.counts.size());
    const double w = (h.hi - h.lo) / bins;
    for (int b = 0; b < bins; ++b) {
      os << detector_name(vd.det) << ',' << g9(h.lo + b * w) << ',' << g9(h.lo + (b + 1) * w)
         << ',' << h.counts[static_cast<std::size_t>(b)] << '\n';
    }
  }
}

void write_flops_csv(const SimConfig& cfg, std::ostream& os) {
  validate_sim(cfg);
  os << "variant,n,m,nb,ns,q,t,flops_per_iter,flops_total\n";
  for (const auto& v : cfg.variants) {
    if (v.det == SimDetector::kLmmse) continue;  // no Table row for one-shot LMMSE
    const VariantSpec rv = resolve_variant(v, cfg.n);
    const DetectorConfig det = detector_config(rv, cfg);
    const FlopsEstimate est = flops_estimate(det, cfg.n, cfg.m, cfg.q);
    os << detector_name(rv.det) << ',' << cfg.n << ',' << cfg.m << ',' << rv.n_b << ','
       << rv.n_s << ',' << cfg.q << ',' << rv.t_max << ',' << est.per_iteration << ','
       << est.total << '\n';
  }
}

void write_csv_file(const std::string& path, const std::string& content) {
  std::ofstream os(path, std::ios::binary);
  if (!os) {
    throw ConfigError("cannot open output file: " + path);
  }
  os << content;
  os.flush();
  if (!os) {
    throw ConfigError("failed writing output file: " + path);
  }
}

}  // namespace ovep
