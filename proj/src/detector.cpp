#include "ovep/detector.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "ovep/errors.hpp"

namespace ovep {

PartitionPlan make_partition(int n, int n_b, int n_s) {
  if (!(1 <= n_s && n_s <= n_b && n_b <= n)) {
    throw InvalidPartition("make_partition: need 1 <= n_s <= n_b <= n");
  }
  if ((n - n_b) % n_s != 0) {
    throw InvalidPartition("make_partition: n_s must divide n - n_b");
  }
  PartitionPlan p;
  p.n = n;
  p.n_b = n_b;
  p.n_s = n_s;
  p.n_tilde = n_b - n_s;
  p.l = (n - n_b) / n_s + 1;
  p.block_indices.resize(static_cast<std::size_t>(p.l));
  for (int li = 0; li < p.l; ++li) {
    auto& set = p.block_indices[static_cast<std::size_t>(li)];
    set.resize(static_cast<std::size_t>(n_b));
    for (int i = 0; i < n_b; ++i) set[static_cast<std::size_t>(i)] = li * n_s + i;
  }
  if (p.n_tilde > 0) {
    p.overlap_indices.resize(static_cast<std::size_t>(p.l - 1));
    for (int li = 0; li + 1 < p.l; ++li) {
      auto& set = p.overlap_indices[static_cast<std::size_t>(li)];
      set.resize(static_cast<std::size_t>(p.n_tilde));
      for (int i = 0; i < p.n_tilde; ++i) set[static_cast<std::size_t>(i)] = (li + 1) * n_s + i;
    }
  }
  return p;
}

namespace {

// Per-block channel data, refreshed once per trial. The Woodbury path keeps
// the block rows in planar real arrays together with the per-user outer
// products h_r conj(h_c); those are iteration-invariant, so every filter
// evaluation reduces to real dot/axpy passes over length-M arrays.
struct BlockData {
  int nb = 0;
  int m = 0;
  bool woodbury = false;

  // direct path (nb >= m)
  CMatrix h;
  CMatrix gram;
  CVector hty;

  // planar woodbury data
  RVector hty_re, hty_im;
  std::vector<RVector> row_re, row_im;  // nb arrays over users
  std::vector<RVector> outer_diag;      // |h_rj|^2
  std::vector<RVector> off_re, off_im;  // h_rj conj(h_cj), pairs r > c

  void allocate(int nb_, int m_) {
    nb = nb_;
    m = m_;
    woodbury = nb_ < m_;
    if (!woodbury) {
      h.resize(nb_, m_);
      gram.resize(m_, m_);
      hty.resize(m_);
    }
    hty_re.resize(m_);
    hty_im.resize(m_);
    if (woodbury) {
      row_re.assign(static_cast<std::size_t>(nb_), RVector(m_));
      row_im.assign(static_cast<std::size_t>(nb_), RVector(m_));
      outer_diag.assign(static_cast<std::size_t>(nb_), RVector(m_));
      const std::size_t pairs = static_cast<std::size_t>(nb_) * (nb_ - 1) / 2;
      off_re.assign(pairs, RVector(m_));
      off_im.assign(pairs, RVector(m_));
    }
  }

  void load(const Eigen::Ref<const CMatrix>& h_rows, const Eigen::Ref<const CVector>& y_rows) {
    if (!woodbury) {
      h = h_rows;
      gram.noalias() = h_rows.adjoint() * h_rows;
      hty.noalias() = h_rows.adjoint() * y_rows;
      hty_re = hty.real();
      hty_im = hty.imag();
      return;
    }
    for (int r = 0; r < nb; ++r) {
      row_re[static_cast<std::size_t>(r)] = h_rows.row(r).real().transpose();
      row_im[static_cast<std::size_t>(r)] = h_rows.row(r).imag().transpose();
    }
    for (int r = 0; r < nb; ++r) {
      const RVector& ar = row_re[static_cast<std::size_t>(r)];
      const RVector& ai = row_im[static_cast<std::size_t>(r)];
      outer_diag[static_cast<std::size_t>(r)] = ar.cwiseProduct(ar) + ai.cwiseProduct(ai);
    }
    std::size_t pair = 0;
    for (int r = 1; r < nb; ++r) {
      for (int c = 0; c < r; ++c, ++pair) {
        const RVector& rr = row_re[static_cast<std::size_t>(r)];
        const RVector& ri = row_im[static_cast<std::size_t>(r)];
        const RVector& cr = row_re[static_cast<std::size_t>(c)];
        const RVector& ci = row_im[static_cast<std::size_t>(c)];
        off_re[pair] = rr.cwiseProduct(cr) + ri.cwiseProduct(ci);
        off_im[pair] = ri.cwiseProduct(cr) - rr.cwiseProduct(ci);
      }
    }
    // hty_r = sum_rows conj(h_r.) y_r accumulated per user
    hty_re.setZero();
    hty_im.setZero();
    for (int r = 0; r < nb; ++r) {
      const double yr = y_rows[r].real();
      const double yi = y_rows[r].imag();
      hty_re += yr * row_re[static_cast<std::size_t>(r)] + yi * row_im[static_cast<std::size_t>(r)];
      hty_im += yi * row_re[static_cast<std::size_t>(r)] - yr * row_im[static_cast<std::size_t>(r)];
    }
  }
};

struct FilterScratch {
  RVector dinv;
  RVector b_re, b_im;
  RVector db_re, db_im;
  RVector quad;
  RVector hs_re, hs_im;
  std::vector<Complex> core;  // nb x nb Woodbury core, Cholesky factor in place
  std::vector<Complex> kin;   // explicit core inverse
  std::vector<Complex> t, s;
  std::vector<double> linv;
  CMatrix a;  // direct path
  CMatrix a_inv;
  CVector b;

  void reserve(int nb_max, int m, bool direct) {
    dinv.resize(m);
    b_re.resize(m);
    b_im.resize(m);
    db_re.resize(m);
    db_im.resize(m);
    quad.resize(m);
    hs_re.resize(m);
    hs_im.resize(m);
    const std::size_t nn = static_cast<std::size_t>(std::max(nb_max, 1));
    core.resize(nn * nn);
    kin.resize(nn * nn);
    t.resize(nn);
    s.resize(nn);
    linv.resize(nn);
    if (direct) {
      a.resize(m, m);
      a_inv.resize(m, m);
      b.resize(m);
    }
  }
};

// In-place lower Cholesky of the Hermitian matrix held column-major in a,
// reciprocal pivots in linv. Returns false on a nonpositive pivot.
bool small_cholesky(int n, Complex* a, double* linv) {
  for (int j = 0; j < n; ++j) {
    double piv = a[j + j * n].real();
    for (int p = 0; p < j; ++p) piv -= std::norm(a[j + p * n]);
    if (!(piv > 0.0)) return false;
    const double ljj = std::sqrt(piv);
    const double inv = 1.0 / ljj;
    a[j + j * n] = ljj;
    linv[j] = inv;
    for (int i = j + 1; i < n; ++i) {
      Complex v = a[i + j * n];
      for (int p = 0; p < j; ++p) v -= a[i + p * n] * std::conj(a[j + p * n]);
      a[i + j * n] = v * inv;
    }
  }
  return true;
}

inline void small_forward(int n, const Complex* a, const double* linv, Complex* x) {
  for (int i = 0; i < n; ++i) {
    Complex v = x[i];
    for (int p = 0; p < i; ++p) v -= a[i + p * n] * x[p];
    x[i] = v * linv[i];
  }
}

inline void small_backward(int n, const Complex* a, const double* linv, Complex* x) {
  for (int i = n - 1; i >= 0; --i) {
    Complex v = x[i];
    for (int p = i + 1; p < n; ++p) v -= std::conj(a[p + i * n]) * x[p];
    x[i] = v * linv[i];
  }
}

// Sigma_u = (sigma_z^{-1} H^H H + D(gamma_w))^{-1}; mu_u = Sigma_u b with
// b = sigma_z^{-1} H^H y + gamma_w .* mu_w. Woodbury core when nb < m:
//   K = sigma_z I + H D^{-1} H^H,  d(Sigma_u) = d - d^2 .* (h^H K^{-1} h),
//   mu_u = d .* (b - H^H K^{-1} H D^{-1} b),   d = 1/gamma_w.
void lmmse_filter_core(const BlockData& bd, const GaussianMessage& w, double sigma_z,
                       FilterScratch& ws, FilterOutput& out) {
  const int nb = bd.nb;
  const int m = bd.m;
  const double inv_sz = 1.0 / sigma_z;

  out.mu_u.resize(m);
  out.gamma_u.resize(m);
  out.sigma_u_diag.resize(m);

  ws.dinv = w.gamma.cwiseInverse();

  if (bd.woodbury) {
    ws.b_re = inv_sz * bd.hty_re + w.gamma.cwiseProduct(w.mu.real());
    ws.b_im = inv_sz * bd.hty_im + w.gamma.cwiseProduct(w.mu.imag());
    ws.db_re = ws.dinv.cwiseProduct(ws.b_re);
    ws.db_im = ws.dinv.cwiseProduct(ws.b_im);

    Complex* k = ws.core.data();
    Complex* t = ws.t.data();
    Complex* s = ws.s.data();
    double* linv = ws.linv.data();
    for (int r = 0; r < nb; ++r) {
      k[r + r * nb] = sigma_z + ws.dinv.dot(bd.outer_diag[static_cast<std::size_t>(r)]);
      const RVector& rr = bd.row_re[static_cast<std::size_t>(r)];
      const RVector& ri = bd.row_im[static_cast<std::size_t>(r)];
      t[r] = Complex(rr.dot(ws.db_re) - ri.dot(ws.db_im), rr.dot(ws.db_im) + ri.dot(ws.db_re));
    }
    {
      std::size_t pair = 0;
      for (int r = 1; r < nb; ++r) {
        for (int c = 0; c < r; ++c, ++pair) {
          k[r + c * nb] =
              Complex(ws.dinv.dot(bd.off_re[pair]), ws.dinv.dot(bd.off_im[pair]));
        }
      }
    }
    if (!small_cholesky(nb, k, linv)) {
      throw NotPositiveDefinite("block filter: Woodbury core not positive definite");
    }
    std::copy(t, t + nb, s);
    small_forward(nb, k, linv, s);
    small_backward(nb, k, linv, s);  // s = K^{-1} H D^{-1} b

    // Explicit K^{-1} for the per-user quadratic forms.
    Complex* kin = ws.kin.data();
    for (int c = 0; c < nb; ++c) {
      Complex* col = kin + c * nb;
      std::fill(col, col + nb, Complex(0.0, 0.0));
      col[c] = 1.0;
      small_forward(nb, k, linv, col);
      small_backward(nb, k, linv, col);
    }

    // quad_j = h_j^H K^{-1} h_j assembled from the precomputed outer products.
    ws.quad = kin[0].real() * bd.outer_diag[0];
    for (int r = 1; r < nb; ++r) {
      ws.quad += kin[r + r * nb].real() * bd.outer_diag[static_cast<std::size_t>(r)];
    }
    {
      std::size_t pair = 0;
      for (int r = 1; r < nb; ++r) {
        for (int c = 0; c < r; ++c, ++pair) {
          const Complex wrc = kin[r + c * nb];
          ws.quad += (2.0 * wrc.real()) * bd.off_re[pair] + (2.0 * wrc.imag()) * bd.off_im[pair];
        }
      }
    }

    out.sigma_u_diag.array() =
        ws.dinv.array() * (1.0 - ws.dinv.array() * ws.quad.array());
    if (!(out.sigma_u_diag.array() > 0.0).all()) {
      throw NotPositiveDefinite("block filter: nonpositive posterior variance");
    }
    out.gamma_u = out.sigma_u_diag.cwiseInverse();

    // hs_j = sum_r conj(h_rj) s_r, then mu = d .* (b - hs).
    ws.hs_re.setZero();
    ws.hs_im.setZero();
    for (int r = 0; r < nb; ++r) {
      const double sr = s[r].real();
      const double si = s[r].imag();
      const RVector& rr = bd.row_re[static_cast<std::size_t>(r)];
      const RVector& ri = bd.row_im[static_cast<std::size_t>(r)];
      ws.hs_re += sr * rr + si * ri;
      ws.hs_im += si * rr - sr * ri;
    }
    out.mu_u.real() = ws.dinv.cwiseProduct(ws.b_re - ws.hs_re);
    out.mu_u.imag() = ws.dinv.cwiseProduct(ws.b_im - ws.hs_im);
    return;
  }

  // Direct path (nb >= m): invert the m x m system once per call.
  for (int j = 0; j < m; ++j) {
    ws.b[j] = inv_sz * bd.hty[j] + w.gamma[j] * w.mu[j];
  }
  ws.a = bd.gram * inv_sz;
  ws.a.diagonal() += w.gamma.cast<Complex>();
  Eigen::LLT<CMatrix> llt(ws.a);
  if (llt.info() != Eigen::Success) {
    throw NotPositiveDefinite("block filter: system matrix not positive definite");
  }
  ws.a_inv = llt.solve(CMatrix::Identity(m, m));
  for (int j = 0; j < m; ++j) {
    const double diag = ws.a_inv(j, j).real();
    if (!(diag > 0.0)) {
      throw NotPositiveDefinite("block filter: nonpositive posterior variance");
    }
    out.sigma_u_diag[j] = diag;
  }
  out.gamma_u = out.sigma_u_diag.cwiseInverse();
  out.mu_u.noalias() = ws.a_inv * ws.b;
}

void check_filter_args(const CMatrix& h, const CVector& y, const GaussianMessage& w,
                       double sigma_z, const char* who) {
  if (y.size() != h.rows() || w.mu.size() != h.cols() || w.gamma.size() != h.cols()) {
    throw LengthMismatch(std::string(who) + ": dimension mismatch");
  }
  if (h.rows() < 1) {
    throw LengthMismatch(std::string(who) + ": empty block");
  }
  if (sigma_z <= 0.0) {
    throw ConfigError(std::string(who) + ": sigma_z must be positive");
  }
  if ((w.gamma.array() <= 0.0).any()) {
    throw ConfigError(std::string(who) + ": message precision must be positive");
  }
}

FilterOutput run_filter_once(const CMatrix& h, const CVector& y, const GaussianMessage& w,
                             double sigma_z, const char* who) {
  check_filter_args(h, y, w, sigma_z, who);
  BlockData bd;
  bd.allocate(static_cast<int>(h.rows()), static_cast<int>(h.cols()));
  bd.load(h, y);
  FilterScratch ws;
  ws.reserve(static_cast<int>(h.rows()), static_cast<int>(h.cols()), !bd.woodbury);
  FilterOutput out;
  lmmse_filter_core(bd, w, sigma_z, ws, out);
  return out;
}

// Shared M-length temporaries for the vectorized candidate computations;
// division is batched through cwiseInverse, the guard loops only multiply.
struct MsgScratch {
  RVector cand;
  RVector inv;

  void reserve(Eigen::Index m) {
    cand.resize(m);
    inv.resize(m);
  }
};

void extrinsic_from_filter_into(const FilterOutput& f, const GaussianMessage& w,
                                GaussianMessage& q, MsgScratch& ms, GuardCounters* guards) {
  const Eigen::Index m = f.mu_u.size();
  ms.cand = f.gamma_u - w.gamma;
  ms.inv = ms.cand.cwiseInverse();  // guarded entries never read their slot
  for (Eigen::Index i = 0; i < m; ++i) {
    const double gq = ms.cand[i];
    if (!(gq > 0.0) || std::abs(gq) < kPrecisionGuardEps) {
      if (guards != nullptr) ++guards->extrinsic_q;
      continue;  // retain previous (mu, gamma)
    }
    q.mu[i] = (f.gamma_u[i] * f.mu_u[i] - w.gamma[i] * w.mu[i]) * ms.inv[i];
    q.gamma[i] = gq;
  }
}

void combine_into(std::span<const GaussianMessage> block_q,
                  std::span<const GaussianMessage> overlap_q, GaussianMessage& bar,
                  GuardCounters* guards) {
  const Eigen::Index m = block_q.front().mu.size();
  for (Eigen::Index i = 0; i < m; ++i) {
    double g = 0.0;
    Complex num(0.0, 0.0);
    for (std::size_t l = 0; l < block_q.size(); ++l) {
      g += block_q[l].gamma[i];
      num += block_q[l].gamma[i] * block_q[l].mu[i];
      if (l < overlap_q.size()) {
        g -= overlap_q[l].gamma[i];
        num -= overlap_q[l].gamma[i] * overlap_q[l].mu[i];
      }
    }
    if (!(g > 0.0) || !std::isfinite(g)) {
      if (guards != nullptr) ++guards->combine;
      continue;  // retain previous (mu_bar, gamma_bar)
    }
    bar.gamma[i] = g;
    bar.mu[i] = num * (1.0 / g);
  }
}

void extrinsic_to_filters_into(const DenoiserOutput& den, const GaussianMessage& q,
                               GaussianMessage& w, double damping, MsgScratch& ms,
                               GuardCounters* guards) {
  if (damping == 1.0) return;  // fully damped: the previous message, exactly
  const Eigen::Index m = q.mu.size();
  const double keep = damping;
  const double step = 1.0 - damping;
  ms.cand = den.gamma_hat - q.gamma;  // raw target gamma*
  ms.inv = (step * ms.cand + keep * w.gamma).cwiseInverse();
  for (Eigen::Index i = 0; i < m; ++i) {
    const double gt = ms.cand[i];
    if (!(gt > 0.0) || std::abs(gt) < kPrecisionGuardEps) {
      if (guards != nullptr) ++guards->extrinsic_w;
      continue;  // retain previous values before damping
    }
    const Complex gmu_t = den.gamma_hat[i] * den.x_hat[i] - q.gamma[i] * q.mu[i];
    const Complex gmu_new = step * gmu_t + keep * (w.gamma[i] * w.mu[i]);
    w.gamma[i] = step * gt + keep * w.gamma[i];
    w.mu[i] = gmu_new * ms.inv[i];
  }
}

void validate_config(const ChannelInstance& ch, const CVector& y, const DetectorConfig& cfg) {
  const auto& p = cfg.plan;
  if (ch.h.rows() != p.n || y.size() != p.n) {
    throw ConfigError("run_ep: partition plan does not match measurement dimension");
  }
  if (!all_finite(ch.h) || !all_finite(y)) {
    throw ConfigError("run_ep: non-finite channel or measurement entries");
  }
  if (ch.sigma_z <= 0.0 || ch.sigma_x <= 0.0) {
    throw ConfigError("run_ep: sigma_z and sigma_x must be positive");
  }
  switch (cfg.variant) {
    case DetectorVariant::kNovep:
      if (p.n_s != p.n_b) throw ConfigError("run_ep: NOvEP requires n_s = n_b");
      break;
    case DetectorVariant::kLmmseEp:
      if (p.n_b != p.n || p.n_s != p.n) throw ConfigError("run_ep: LMMSE-EP requires n_b = n_s = n");
      break;
    case DetectorVariant::kMfEp:
      if (p.n_b != 1 || p.n_s != 1) throw ConfigError("run_ep: MF-EP requires n_b = n_s = 1");
      break;
    default:
      break;
  }
}

}  // namespace

namespace detail {

struct EpDetectorImpl {
  DetectorConfig cfg;
  int m = 0;
  bool use_overlaps = false;
  int n_ov = 0;

  std::vector<BlockData> blocks;
  std::vector<BlockData> overlaps;
  std::vector<GaussianMessage> block_w, overlap_w, block_q, overlap_q;
  GaussianMessage bar;
  DenoiserOutput den;
  std::vector<FilterOutput> block_u, overlap_u;
  FilterScratch ws;
  MsgScratch ms;
  CVector prev_xhat;

  EpDetectorImpl(const DetectorConfig& cfg_, int m_) : cfg(cfg_), m(m_) {
    const auto& plan = cfg.plan;
    if (m < 1) throw ConfigError("detector: user count must be >= 1");
    if (cfg.t_max < 1) throw ConfigError("detector: t_max must be >= 1");
    if (!(cfg.damping >= 0.0 && cfg.damping <= 1.0)) {
      throw ConfigError("detector: damping must lie in [0, 1]");
    }
    if (cfg.beta_x <= 0.0) throw ConfigError("detector: beta_x must be positive");
    use_overlaps = plan.has_overlaps() && cfg.variant != DetectorVariant::kOvepNoSubtract;
    n_ov = use_overlaps ? plan.l - 1 : 0;

    blocks.resize(static_cast<std::size_t>(plan.l));
    for (auto& b : blocks) b.allocate(plan.n_b, m);
    overlaps.resize(static_cast<std::size_t>(n_ov));
    for (auto& b : overlaps) b.allocate(plan.n_tilde, m);

    block_w.assign(static_cast<std::size_t>(plan.l), GaussianMessage::zero(m));
    overlap_w.assign(static_cast<std::size_t>(n_ov), GaussianMessage::zero(m));
    block_q.assign(static_cast<std::size_t>(plan.l), GaussianMessage::zero(m));
    overlap_q.assign(static_cast<std::size_t>(plan.l), GaussianMessage::zero(m));
    bar = GaussianMessage::zero(m);
    block_u.resize(static_cast<std::size_t>(plan.l));
    overlap_u.resize(static_cast<std::size_t>(n_ov));
    ws.reserve(std::max(plan.n_b, plan.n_tilde), m, plan.n_b >= m);
    ms.reserve(m);
    prev_xhat.resize(m);
  }

  void reset(double sigma_x) {
    const double gamma0 = 1.0 / cfg.beta_x;
    for (auto& w : block_w) {
      w.mu.setZero();
      w.gamma.setConstant(gamma0);
    }
    for (auto& w : overlap_w) {
      w.mu.setZero();
      w.gamma.setConstant(gamma0);
    }
    for (auto& q : block_q) {
      q.mu.setZero();
      q.gamma.setZero();
    }
    for (auto& q : overlap_q) {
      q.mu.setZero();
      q.gamma.setZero();
    }
    bar.mu.setZero();
    bar.gamma.setZero();
    den.x_hat = CVector::Zero(m);
    den.v_hat = RVector::Constant(m, sigma_x);
    den.gamma_hat = RVector::Constant(m, 1.0 / sigma_x);
    prev_xhat.setZero();
  }

  EpRunResult run(const ChannelInstance& ch, const CVector& y, const Constellation& c,
                  TraceMode trace) {
    validate_config(ch, y, cfg);
    if (ch.h.cols() != m) {
      throw ConfigError("run_ep: channel user count does not match detector");
    }
    const auto& plan = cfg.plan;
    for (int l = 0; l < plan.l; ++l) {
      blocks[static_cast<std::size_t>(l)].load(ch.h.middleRows(plan.block_start(l), plan.n_b),
                                               y.segment(plan.block_start(l), plan.n_b));
    }
    for (int o = 0; o < n_ov; ++o) {
      overlaps[static_cast<std::size_t>(o)].load(
          ch.h.middleRows(plan.overlap_start(o), plan.n_tilde),
          y.segment(plan.overlap_start(o), plan.n_tilde));
    }
    reset(ch.sigma_x);

    EpRunResult result;
    result.last_iterate_change = std::numeric_limits<double>::infinity();

    for (int t = 1; t <= cfg.t_max; ++t) {
      for (int l = 0; l < plan.l; ++l) {
        const auto li = static_cast<std::size_t>(l);
        lmmse_filter_core(blocks[li], block_w[li], ch.sigma_z, ws, block_u[li]);
        extrinsic_from_filter_into(block_u[li], block_w[li], block_q[li], ms, &result.guards);
      }
      for (int o = 0; o < n_ov; ++o) {
        const auto oi = static_cast<std::size_t>(o);
        lmmse_filter_core(overlaps[oi], overlap_w[oi], ch.sigma_z, ws, overlap_u[oi]);
        extrinsic_from_filter_into(overlap_u[oi], overlap_w[oi], overlap_q[oi], ms,
                                   &result.guards);
      }
      combine_into(block_q, overlap_q, bar, &result.guards);
      denoise_into(bar.mu, bar.gamma, c, den);
      for (int l = 0; l < plan.l; ++l) {
        const auto li = static_cast<std::size_t>(l);
        extrinsic_to_filters_into(den, block_q[li], block_w[li], cfg.damping, ms,
                                  &result.guards);
      }
      for (int o = 0; o < n_ov; ++o) {
        const auto oi = static_cast<std::size_t>(o);
        extrinsic_to_filters_into(den, overlap_q[oi], overlap_w[oi], cfg.damping, ms,
                                  &result.guards);
      }

      if (t > 1) {
        result.last_iterate_change = (den.x_hat - prev_xhat).cwiseAbs().maxCoeff();
      }
      prev_xhat = den.x_hat;

      if (trace == TraceMode::kXhatPerIteration || trace == TraceMode::kFullTrace) {
        result.xhat_per_iteration.push_back(den.x_hat);
      }
      if (trace == TraceMode::kFullTrace ||
          (trace == TraceMode::kFinalState && t == cfg.t_max)) {
        EpState st;
        st.iter = t;
        st.block_w = block_w;
        st.overlap_w = overlap_w;
        st.block_q = block_q;
        st.overlap_q = overlap_q;
        st.block_u = block_u;
        st.overlap_u = overlap_u;
        st.bar_q = bar;
        st.den = den;
        if (trace == TraceMode::kFullTrace) {
          result.trace.push_back(st);
          if (t == cfg.t_max) {
            result.final_state = std::move(st);
            result.has_final_state = true;
          }
        } else {
          result.final_state = std::move(st);
          result.has_final_state = true;
        }
      }
    }

    result.out = den;
    return result;
  }
};

}  // namespace detail

EpDetector::EpDetector(const DetectorConfig& cfg, int m)
    : impl_(std::make_unique<detail::EpDetectorImpl>(cfg, m)) {}

EpDetector::~EpDetector() = default;
EpDetector::EpDetector(EpDetector&&) noexcept = default;
EpDetector& EpDetector::operator=(EpDetector&&) noexcept = default;

EpRunResult EpDetector::run(const ChannelInstance& ch, const CVector& y, const Constellation& c,
                            TraceMode trace) {
  return impl_->run(ch, y, c, trace);
}

const DetectorConfig& EpDetector::config() const { return impl_->cfg; }

FilterOutput block_filter(const CMatrix& h_l, const CVector& y_l, const GaussianMessage& w,
                          double sigma_z) {
  return run_filter_once(h_l, y_l, w, sigma_z, "block_filter");
}

FilterOutput overlap_filter(const CMatrix& h_t, const CVector& y_t, const GaussianMessage& w,
                            double sigma_z) {
  return run_filter_once(h_t, y_t, w, sigma_z, "overlap_filter");
}

GaussianMessage extrinsic_from_filter(const FilterOutput& f, const GaussianMessage& w,
                                      const GaussianMessage& prev_q, GuardCounters* guards) {
  GaussianMessage q = prev_q;
  MsgScratch ms;
  ms.reserve(f.mu_u.size());
  extrinsic_from_filter_into(f, w, q, ms, guards);
  return q;
}

GaussianMessage combine(std::span<const GaussianMessage> block_q,
                        std::span<const GaussianMessage> overlap_q,
                        const GaussianMessage* prev_bar, GuardCounters* guards) {
  if (block_q.empty()) {
    throw ConfigError("combine: need at least one block message");
  }
  if (!overlap_q.empty() && overlap_q.size() + 1 != block_q.size() &&
      overlap_q.size() != block_q.size()) {
    throw LengthMismatch("combine: overlap message count must be L-1 or L");
  }
  GaussianMessage bar =
      prev_bar != nullptr ? *prev_bar : GaussianMessage::zero(block_q.front().mu.size());
  combine_into(block_q, overlap_q, bar, guards);
  return bar;
}

GaussianMessage extrinsic_to_filters(const DenoiserOutput& den, const GaussianMessage& q,
                                     const GaussianMessage& prev_w, double damping,
                                     GuardCounters* guards) {
  GaussianMessage w = prev_w;
  MsgScratch ms;
  ms.reserve(q.mu.size());
  extrinsic_to_filters_into(den, q, w, damping, ms, guards);
  return w;
}

EpRunResult run_ep(const ChannelInstance& ch, const CVector& y, const Constellation& c,
                   const DetectorConfig& cfg, TraceMode trace) {
  EpDetector det(cfg, static_cast<int>(ch.h.cols()));
  return det.run(ch, y, c, trace);
}

DenoiserOutput lmmse_baseline(const ChannelInstance& ch, const CVector& y,
                              const Constellation& c) {
  if (ch.h.rows() != y.size()) {
    throw LengthMismatch("lmmse_baseline: rows(H) must match len(y)");
  }
  if (ch.sigma_z <= 0.0 || ch.sigma_x <= 0.0) {
    throw ConfigError("lmmse_baseline: sigma_z and sigma_x must be positive");
  }
  (void)c;
  const double inv_sz = 1.0 / ch.sigma_z;
  CMatrix a = ch.h.adjoint() * ch.h * inv_sz;
  a.diagonal().array() += 1.0 / ch.sigma_x;
  const CMatrix a_inv = hpd_inverse(a);
  DenoiserOutput out;
  out.x_hat = a_inv * (ch.h.adjoint() * y * inv_sz);
  out.v_hat = a_inv.diagonal().real().cwiseMax(kDenoiserVarFloor);
  out.gamma_hat = out.v_hat.cwiseInverse();
  return out;
}

FixedPointReport verify_fixed_point(const EpRunResult& run, double conv_tol) {
  if (!run.has_final_state) {
    throw StaleState("verify_fixed_point: run was not captured with a final state");
  }
  if (!(run.last_iterate_change < conv_tol)) {
    throw NotConverged("verify_fixed_point: consecutive-iterate change above tolerance");
  }
  const EpState& st = run.final_state;
  const Eigen::Index m = st.den.x_hat.size();

  FixedPointReport rep;
  rep.iterate_change = run.last_iterate_change;

  for (Eigen::Index i = 0; i < m; ++i) {
    double gmin = st.den.gamma_hat[i];
    double gmax = gmin;
    for (const auto& u : st.block_u) {
      gmin = std::min(gmin, u.gamma_u[i]);
      gmax = std::max(gmax, u.gamma_u[i]);
    }
    for (const auto& u : st.overlap_u) {
      gmin = std::min(gmin, u.gamma_u[i]);
      gmax = std::max(gmax, u.gamma_u[i]);
    }
    rep.max_gamma_dev = std::max(rep.max_gamma_dev, (gmax - gmin) / std::abs(gmax));

    double scale = std::abs(st.den.x_hat[i]);
    for (const auto& u : st.block_u) scale = std::max(scale, std::abs(u.mu_u[i]));
    for (const auto& u : st.overlap_u) scale = std::max(scale, std::abs(u.mu_u[i]));
    if (scale == 0.0) continue;
    double dev = 0.0;
    for (const auto& u : st.block_u) dev = std::max(dev, std::abs(u.mu_u[i] - st.den.x_hat[i]));
    for (const auto& u : st.overlap_u) dev = std::max(dev, std::abs(u.mu_u[i] - st.den.x_hat[i]));
    // Pairwise deviations among the filter means themselves.
    for (std::size_t a = 0; a < st.block_u.size(); ++a) {
      for (std::size_t b = a + 1; b < st.block_u.size(); ++b) {
        dev = std::max(dev, std::abs(st.block_u[a].mu_u[i] - st.block_u[b].mu_u[i]));
      }
      for (const auto& u : st.overlap_u) {
        dev = std::max(dev, std::abs(st.block_u[a].mu_u[i] - u.mu_u[i]));
      }
    }
    for (std::size_t a = 0; a < st.overlap_u.size(); ++a) {
      for (std::size_t b = a + 1; b < st.overlap_u.size(); ++b) {
        dev = std::max(dev, std::abs(st.overlap_u[a].mu_u[i] - st.overlap_u[b].mu_u[i]));
      }
    }
    rep.max_mu_dev = std::max(rep.max_mu_dev, dev / scale);
  }
  return rep;
}

}  // namespace ovep
