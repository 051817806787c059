#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "ovep/channel.hpp"
#include "ovep/detector.hpp"
#include "ovep/errors.hpp"
#include "reference_detectors.hpp"

using namespace ovep;

namespace {

CMatrix random_cmatrix(int rows, int cols, Rng& rng) {
  CMatrix a(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) a(i, j) = rng.cnormal();
  return a;
}

CVector random_cvector(int n, Rng& rng) {
  CVector v(n);
  for (int i = 0; i < n; ++i) v[i] = rng.cnormal();
  return v;
}

GaussianMessage random_message(int m, Rng& rng) {
  GaussianMessage w = GaussianMessage::zero(m);
  for (int i = 0; i < m; ++i) {
    w.mu[i] = rng.cnormal();
    w.gamma[i] = 0.1 + 2.0 * rng.uniform();
  }
  return w;
}

double rel_linf(const CVector& a, const CVector& b) {
  return (a - b).cwiseAbs().maxCoeff() / b.cwiseAbs().maxCoeff();
}

// v_hat at hard-decision saturation is an ill-conditioned difference of
// near-equal quantities, so iterate agreement is measured on the sigma_x
// scale the variances live on.
double rel_linf_scaled(const RVector& a, const RVector& b, double scale) {
  return (a - b).cwiseAbs().maxCoeff() / scale;
}

}  // namespace

TEST_CASE("make_partition: sliding-window example") {
  const PartitionPlan p = make_partition(6, 3, 1);
  CHECK(p.l == 4);
  CHECK(p.n_tilde == 2);
  CHECK(p.block_indices[0] == std::vector<int>{0, 1, 2});
  CHECK(p.block_indices[3] == std::vector<int>{3, 4, 5});
  CHECK(p.overlap_indices[0] == std::vector<int>{1, 2});
  CHECK(p.overlap_indices[2] == std::vector<int>{3, 4});
  // Blocks cover every measurement row.
  std::vector<bool> seen(6, false);
  for (const auto& blk : p.block_indices)
    for (int i : blk) seen[static_cast<std::size_t>(i)] = true;
  for (bool s : seen) CHECK(s);
}

TEST_CASE("make_partition: overlapping and non-overlapping sizes at n=32") {
  const PartitionPlan ov = make_partition(32, 2, 1);
  CHECK(ov.l == 31);
  CHECK(ov.n_tilde == 1);
  const PartitionPlan nov = make_partition(32, 2, 2);
  CHECK(nov.l == 16);
  CHECK(nov.n_tilde == 0);
  CHECK(nov.overlap_indices.empty());
}

TEST_CASE("make_partition: rejects inconsistent shapes") {
  CHECK_THROWS_AS(make_partition(6, 4, 3), InvalidPartition);   // (6-4) % 3 != 0
  CHECK_THROWS_AS(make_partition(6, 2, 3), InvalidPartition);   // n_s > n_b
  CHECK_THROWS_AS(make_partition(6, 7, 1), InvalidPartition);   // n_b > n
  CHECK_THROWS_AS(make_partition(6, 2, 0), InvalidPartition);   // n_s < 1
}

TEST_CASE("block_filter: zero channel passes the prior through") {
  Rng rng(5);
  for (int nb : {2, 6}) {  // Woodbury path and direct path
    const int m = 4;
    const CMatrix h = CMatrix::Zero(nb, m);
    const CVector y = random_cvector(nb, rng);
    const GaussianMessage w = random_message(m, rng);
    const FilterOutput f = block_filter(h, y, w, 0.7);
    CHECK((f.mu_u - w.mu).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((f.gamma_u - w.gamma).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("block_filter: infinitely noisy measurements keep the prior") {
  Rng rng(6);
  const CMatrix h = random_cmatrix(2, 5, rng);
  const CVector y = random_cvector(2, rng);
  const GaussianMessage w = random_message(5, rng);
  const FilterOutput f = block_filter(h, y, w, 1e12);
  CHECK((f.mu_u - w.mu).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("block_filter: direct-inversion oracle on both paths") {
  Rng rng(7);
  const double sigma_z = 0.42;
  for (int nb : {1, 2, 4, 8}) {
    const int m = 6;
    const CMatrix h = random_cmatrix(nb, m, rng);
    const CVector y = random_cvector(nb, rng);
    const GaussianMessage w = random_message(m, rng);

    CMatrix full = h.adjoint() * h / sigma_z;
    full += CMatrix(w.gamma.cast<Complex>().asDiagonal());
    const CMatrix sig = full.inverse();
    CVector b(m);
    for (int j = 0; j < m; ++j) b[j] = (h.adjoint() * y)[j] / sigma_z + w.gamma[j] * w.mu[j];
    const CVector mu_expect = sig * b;

    const FilterOutput f = block_filter(h, y, w, sigma_z);
    CHECK((f.mu_u - mu_expect).cwiseAbs().maxCoeff() < 1e-8);
    CHECK((f.sigma_u_diag - sig.diagonal().real()).cwiseAbs().maxCoeff() < 1e-8);
    CHECK((f.gamma_u.cwiseProduct(f.sigma_u_diag) - RVector::Ones(m)).cwiseAbs().maxCoeff() <
          1e-12);
  }
}

TEST_CASE("overlap_filter: mirrors block_filter on thin submatrices") {
  Rng rng(8);
  const CMatrix h = random_cmatrix(1, 5, rng);
  const CVector y = random_cvector(1, rng);
  const GaussianMessage w = random_message(5, rng);
  const FilterOutput a = overlap_filter(h, y, w, 0.3);
  const FilterOutput b = block_filter(h, y, w, 0.3);
  CHECK((a.mu_u - b.mu_u).cwiseAbs().maxCoeff() == 0.0);
  CHECK((a.gamma_u - b.gamma_u).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("extrinsic_from_filter: pass-through and guard cases") {
  const int m = 3;
  FilterOutput f;
  f.mu_u = CVector::Constant(m, Complex(0.4, -0.2));
  f.gamma_u = RVector::Constant(m, 2.0);
  f.sigma_u_diag = f.gamma_u.cwiseInverse();
  GaussianMessage w = GaussianMessage::zero(m);
  w.mu = CVector::Constant(m, Complex(0.4, -0.2));
  w.gamma = RVector::Constant(m, 1.0);
  const GaussianMessage prev = GaussianMessage::flat(m, 0.123);

  GuardCounters guards;
  const GaussianMessage q = extrinsic_from_filter(f, w, prev, &guards);
  CHECK(guards.extrinsic_q == 0);
  for (int i = 0; i < m; ++i) {
    CHECK(q.gamma[i] == doctest::Approx(1.0));
    CHECK(std::abs(q.mu[i] - Complex(0.4, -0.2)) < 1e-14);
  }

  // Equal precisions: update impossible, previous message kept.
  f.gamma_u = w.gamma;
  const GaussianMessage kept = extrinsic_from_filter(f, w, prev, &guards);
  CHECK(guards.extrinsic_q == static_cast<std::uint64_t>(m));
  CHECK((kept.gamma - prev.gamma).cwiseAbs().maxCoeff() == 0.0);
  CHECK((kept.mu - prev.mu).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("extrinsic_from_filter: natural-parameter additivity") {
  Rng rng(9);
  const int m = 8;
  for (int rep = 0; rep < 50; ++rep) {
    const GaussianMessage w = random_message(m, rng);
    FilterOutput f;
    f.mu_u = random_cvector(m, rng);
    f.gamma_u = w.gamma + RVector::Constant(m, 0.5);  // ensures gamma_q = 0.5
    for (int i = 0; i < m; ++i) f.gamma_u[i] += rng.uniform();
    f.sigma_u_diag = f.gamma_u.cwiseInverse();
    const GaussianMessage q = extrinsic_from_filter(f, w, GaussianMessage::zero(m));
    for (int i = 0; i < m; ++i) {
      const Complex lhs = f.gamma_u[i] * f.mu_u[i];
      const Complex rhs = q.gamma[i] * q.mu[i] + w.gamma[i] * w.mu[i];
      CHECK(std::abs(lhs - rhs) / std::abs(lhs) < 1e-12);
    }
  }
}

TEST_CASE("combine: single block with no overlaps is the identity") {
  Rng rng(10);
  const GaussianMessage q = random_message(4, rng);
  const std::vector<GaussianMessage> blocks{q};
  const GaussianMessage bar = combine(blocks, {});
  CHECK((bar.gamma - q.gamma).cwiseAbs().maxCoeff() == 0.0);
  CHECK((bar.mu - q.mu).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("combine: equal means average, overlap precisions subtract") {
  const int m = 3;
  GaussianMessage q0 = GaussianMessage::zero(m);
  q0.mu = CVector::Constant(m, Complex(0.7, 0.1));
  q0.gamma = RVector::Constant(m, 2.0);
  GaussianMessage qt = q0;
  qt.gamma = RVector::Constant(m, 1.0);  // gamma_0 / 2

  const std::vector<GaussianMessage> blocks{q0, q0};
  const std::vector<GaussianMessage> overlaps{qt, GaussianMessage::zero(m)};
  const GaussianMessage bar = combine(blocks, overlaps);
  for (int i = 0; i < m; ++i) {
    CHECK(bar.gamma[i] == doctest::Approx(3.0));  // 2*2 - 1
    CHECK(std::abs(bar.mu[i] - Complex(0.7, 0.1)) < 1e-14);
  }
}

TEST_CASE("combine: no-subtraction ablation sums block precisions only") {
  Rng rng(11);
  const int m = 4;
  const GaussianMessage a = random_message(m, rng);
  const GaussianMessage b = random_message(m, rng);
  const std::vector<GaussianMessage> blocks{a, b};
  const GaussianMessage bar = combine(blocks, {});
  CHECK((bar.gamma - (a.gamma + b.gamma)).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("extrinsic_to_filters: undamped, frozen, and averaged updates") {
  const int m = 2;
  DenoiserOutput den;
  den.x_hat = CVector::Constant(m, Complex(0.5, 0.5));
  den.gamma_hat = RVector::Constant(m, 2.0);
  den.v_hat = den.gamma_hat.cwiseInverse();
  GaussianMessage q = GaussianMessage::zero(m);
  q.mu = den.x_hat;
  q.gamma = RVector::Constant(m, 1.0);
  Rng rng(12);
  const GaussianMessage prev = random_message(m, rng);

  // damping 0: plain target.
  const GaussianMessage w0 = extrinsic_to_filters(den, q, prev, 0.0);
  for (int i = 0; i < m; ++i) {
    CHECK(w0.gamma[i] == doctest::Approx(1.0));
    CHECK(std::abs(w0.mu[i] - Complex(0.5, 0.5)) < 1e-14);
  }

  // damping 1: exactly the previous message.
  const GaussianMessage w1 = extrinsic_to_filters(den, q, prev, 1.0);
  CHECK((w1.gamma - prev.gamma).cwiseAbs().maxCoeff() == 0.0);
  CHECK((w1.mu - prev.mu).cwiseAbs().maxCoeff() == 0.0);

  // damping 0.5: natural parameters are arithmetic means.
  for (int rep = 0; rep < 20; ++rep) {
    DenoiserOutput d2;
    d2.x_hat = random_cvector(m, rng);
    d2.gamma_hat = RVector::Constant(m, 3.0);
    for (int i = 0; i < m; ++i) d2.gamma_hat[i] += rng.uniform();
    d2.v_hat = d2.gamma_hat.cwiseInverse();
    const GaussianMessage q2 = random_message(m, rng);
    const GaussianMessage p2 = random_message(m, rng);
    const GaussianMessage w = extrinsic_to_filters(d2, q2, p2, 0.5);
    for (int i = 0; i < m; ++i) {
      const double gt = d2.gamma_hat[i] - q2.gamma[i];
      if (gt <= 0.0) continue;
      const Complex gmu_t = d2.gamma_hat[i] * d2.x_hat[i] - q2.gamma[i] * q2.mu[i];
      CHECK(w.gamma[i] == doctest::Approx(0.5 * (gt + p2.gamma[i])));
      const Complex gmu = w.gamma[i] * w.mu[i];
      const Complex gmu_expect = 0.5 * (gmu_t + p2.gamma[i] * p2.mu[i]);
      CHECK(std::abs(gmu - gmu_expect) < 1e-12);
    }
  }
}

TEST_CASE("run_ep: special-case equivalence against independent references") {
  const int n = 8, m = 6, t_max = 8;
  const Constellation c = Constellation::square(4, 1.0);
  const double damping = 0.5, beta_x = 10.0;
  const double rhos[] = {0.0, 0.5, 0.9};
  const double snrs_db[] = {5.0, 15.0};
  int inst = 0;
  for (double rho : rhos) {
    for (double snr_db : snrs_db) {
      Rng rng(1000 + 17 * inst++);
      const ChannelModel model({rho, n}, m);
      const CMatrix h = model.draw(rng);
      const double sigma_z = 1.0 / std::pow(10.0, snr_db / 10.0);
      std::vector<std::uint8_t> bits(static_cast<std::size_t>(m) * 2);
      for (auto& bb : bits) bb = static_cast<std::uint8_t>(rng.bit());
      const CVector x = c.map_bits(bits);
      const ChannelInstance ch{h, sigma_z, 1.0};
      Rng noise(rng.next_u64());
      const CVector y = transmit(ch, x, noise);

      struct Case {
        int n_b, n_s;
        DetectorVariant variant;
      };
      const Case cases[] = {{n, n, DetectorVariant::kLmmseEp},
                            {1, 1, DetectorVariant::kMfEp},
                            {2, 2, DetectorVariant::kNovep}};
      for (const auto& cs : cases) {
        DetectorConfig cfg;
        cfg.plan = make_partition(n, cs.n_b, cs.n_s);
        cfg.t_max = t_max;
        cfg.damping = damping;
        cfg.beta_x = beta_x;
        cfg.variant = cs.variant;
        const EpRunResult run = run_ep(ch, y, c, cfg, TraceMode::kFullTrace);

        testref::RefResult ref;
        if (cs.variant == DetectorVariant::kLmmseEp) {
          ref = testref::lmmse_ep_reference(h, y, sigma_z, c, t_max, damping, beta_x);
        } else if (cs.variant == DetectorVariant::kMfEp) {
          ref = testref::mf_ep_reference(h, y, sigma_z, c, t_max, damping, beta_x);
        } else {
          ref = testref::novep_reference(h, y, sigma_z, c, cs.n_b, t_max, damping, beta_x);
        }
        for (int t = 0; t < t_max; ++t) {
          CHECK(rel_linf(run.xhat_per_iteration[static_cast<std::size_t>(t)],
                         ref.xhat_per_iter[static_cast<std::size_t>(t)]) < 1e-9);
          CHECK(rel_linf_scaled(run.trace[static_cast<std::size_t>(t)].den.v_hat,
                                ref.vhat_per_iter[static_cast<std::size_t>(t)], 1.0) < 1e-9);
        }
      }
    }
  }
}

TEST_CASE("run_ep: noiseless easy instance detects exactly") {
  const int n = 4, m = 2;
  const Constellation c = Constellation::square(4, 1.0);
  Rng rng(77);
  const CMatrix h = generate_channel({0.0, n}, m, rng);
  std::vector<std::uint8_t> bits{1, 0, 0, 1};
  const CVector x = c.map_bits(bits);
  const ChannelInstance ch{h, 1e-12, 1.0};
  Rng noise(3);
  const CVector y = transmit(ch, x, noise);
  DetectorConfig cfg;
  cfg.plan = make_partition(n, 2, 1);
  cfg.t_max = 10;
  const EpRunResult run = run_ep(ch, y, c, cfg);
  CHECK(c.demap_hard(run.out.x_hat) == bits);
}

TEST_CASE("run_ep: full damping freezes the state") {
  const int n = 8, m = 4;
  const Constellation c = Constellation::square(4, 1.0);
  Rng rng(21);
  const CMatrix h = generate_channel({0.6, n}, m, rng);
  const CVector y = random_cvector(n, rng);
  const ChannelInstance ch{h, 0.1, 1.0};
  DetectorConfig cfg;
  cfg.plan = make_partition(n, 2, 1);
  cfg.t_max = 5;
  cfg.damping = 1.0;
  const EpRunResult run = run_ep(ch, y, c, cfg, TraceMode::kFullTrace);
  for (int t = 1; t < cfg.t_max; ++t) {
    CHECK((run.xhat_per_iteration[static_cast<std::size_t>(t)] - run.xhat_per_iteration[0])
              .cwiseAbs()
              .maxCoeff() == 0.0);
    const auto& w0 = run.trace[0].block_w;
    const auto& wt = run.trace[static_cast<std::size_t>(t)].block_w;
    for (std::size_t l = 0; l < w0.size(); ++l) {
      CHECK((wt[l].gamma - w0[l].gamma).cwiseAbs().maxCoeff() == 0.0);
    }
  }
  CHECK(run.last_iterate_change == 0.0);
}

TEST_CASE("run_ep: combine matches the q-message sums at the first iteration") {
  const int n = 8, m = 4;
  const Constellation c = Constellation::square(4, 1.0);
  Rng rng(22);
  const CMatrix h = generate_channel({0.9, n}, m, rng);
  const CVector y = random_cvector(n, rng);
  const ChannelInstance ch{h, 0.2, 1.0};
  DetectorConfig cfg;
  cfg.plan = make_partition(n, 2, 1);
  cfg.t_max = 1;
  const EpRunResult run = run_ep(ch, y, c, cfg, TraceMode::kFullTrace);
  const EpState& st = run.trace[0];
  for (int i = 0; i < m; ++i) {
    double g = 0.0;
    for (std::size_t l = 0; l < st.block_q.size(); ++l) {
      g += st.block_q[l].gamma[i];
      if (l < st.overlap_q.size()) g -= st.overlap_q[l].gamma[i];
    }
    CHECK(st.bar_q.gamma[i] == g);
  }
}

TEST_CASE("run_ep: trailing overlap message stays the zero message") {
  const int n = 8, m = 4;
  const Constellation c = Constellation::square(4, 1.0);
  Rng rng(23);
  const CMatrix h = generate_channel({0.5, n}, m, rng);
  const CVector y = random_cvector(n, rng);
  const ChannelInstance ch{h, 0.3, 1.0};
  DetectorConfig cfg;
  cfg.plan = make_partition(n, 3, 1);
  cfg.t_max = 4;
  const EpRunResult run = run_ep(ch, y, c, cfg, TraceMode::kFullTrace);
  for (const auto& st : run.trace) {
    CHECK(st.overlap_q.back().gamma.cwiseAbs().maxCoeff() == 0.0);
    CHECK(st.overlap_q.back().mu.cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("run_ep: rejects inconsistent configurations") {
  const Constellation c = Constellation::square(4, 1.0);
  Rng rng(24);
  const CMatrix h = generate_channel({0.0, 8}, 4, rng);
  const CVector y = random_cvector(8, rng);
  const ChannelInstance ch{h, 0.1, 1.0};
  DetectorConfig cfg;
  cfg.plan = make_partition(8, 2, 1);
  cfg.variant = DetectorVariant::kNovep;  // requires n_s = n_b
  CHECK_THROWS_AS(run_ep(ch, y, c, cfg), ConfigError);
  cfg.variant = DetectorVariant::kOvep;
  cfg.plan = make_partition(6, 2, 1);  // wrong n
  CHECK_THROWS_AS(run_ep(ch, y, c, cfg), ConfigError);
}

TEST_CASE("lmmse_baseline: identity channel limits") {
  const Constellation c = Constellation::square(4, 1.0);
  const int m = 3;
  const CMatrix h = CMatrix::Identity(m, m);
  Rng rng(25);
  std::vector<std::uint8_t> bits{0, 1, 1, 1, 0, 0};
  const CVector x = c.map_bits(bits);

  // Near-noiseless: estimate recovers x.
  {
    const ChannelInstance ch{h, 1e-12, 1.0};
    Rng noise(4);
    const CVector y = transmit(ch, x, noise);
    const DenoiserOutput out = lmmse_baseline(ch, y, c);
    CHECK((out.x_hat - x).cwiseAbs().maxCoeff() < 1e-5);
  }

  // Scalar Wiener shrinkage.
  {
    const double sigma_z = 0.5, sigma_x = 2.0;
    const ChannelInstance ch{h, sigma_z, sigma_x};
    const CVector y = random_cvector(m, rng);
    const DenoiserOutput out = lmmse_baseline(ch, y, c);
    const double gain = sigma_x / (sigma_x + sigma_z);
    CHECK((out.x_hat - gain * y).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("lmmse_baseline: least-squares oracle") {
  Rng rng(26);
  const int n = 8, m = 5;
  const CMatrix h = random_cmatrix(n, m, rng);
  const CVector y = random_cvector(n, rng);
  const double sigma_z = 0.3, sigma_x = 1.0;
  // Regularized LS through a stacked QR factorization: minimize
  // ||y - Hx||^2/sigma_z + ||x||^2/sigma_x.
  CMatrix stacked(n + m, m);
  stacked.topRows(n) = h / std::sqrt(sigma_z);
  stacked.bottomRows(m) = CMatrix::Identity(m, m) / std::sqrt(sigma_x);
  CVector rhs = CVector::Zero(n + m);
  rhs.head(n) = y / std::sqrt(sigma_z);
  const CVector x_ls = stacked.colPivHouseholderQr().solve(rhs);

  const DenoiserOutput out = lmmse_baseline({h, sigma_z, sigma_x}, y, Constellation::square(4, sigma_x));
  CHECK((out.x_hat - x_ls).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("verify_fixed_point: converged high-SNR run satisfies the moment identity") {
  const int n = 32, m = 24;
  const Constellation c = Constellation::square(4, 1.0);
  Rng rng(27);
  const ChannelModel model({0.0, n}, m);
  const CMatrix h = model.draw(rng);
  std::vector<std::uint8_t> bits(static_cast<std::size_t>(m) * 2);
  for (auto& b : bits) b = static_cast<std::uint8_t>(rng.bit());
  const CVector x = c.map_bits(bits);
  const double sigma_z = 0.01;  // 20 dB
  const ChannelInstance ch{h, sigma_z, 1.0};
  Rng noise(15);
  const CVector y = transmit(ch, x, noise);

  DetectorConfig cfg;
  cfg.plan = make_partition(n, 2, 1);
  cfg.t_max = 200;
  const EpRunResult run = run_ep(ch, y, c, cfg, TraceMode::kFinalState);
  REQUIRE(run.last_iterate_change < 1e-10);
  const FixedPointReport rep = verify_fixed_point(run, 1e-10);
  CHECK(rep.max_gamma_dev < 1e-6);
  CHECK(rep.max_mu_dev < 1e-6);

  // Degenerate single-block configuration passes the same check.
  DetectorConfig lep;
  lep.plan = make_partition(n, n, n);
  lep.t_max = 200;
  lep.variant = DetectorVariant::kLmmseEp;
  const EpRunResult run2 = run_ep(ch, y, c, lep, TraceMode::kFinalState);
  REQUIRE(run2.last_iterate_change < 1e-10);
  const FixedPointReport rep2 = verify_fixed_point(run2, 1e-10);
  CHECK(rep2.max_gamma_dev < 1e-6);
  CHECK(rep2.max_mu_dev < 1e-6);
}

TEST_CASE("verify_fixed_point: single iteration is not converged") {
  const int n = 8, m = 4;
  const Constellation c = Constellation::square(4, 1.0);
  Rng rng(28);
  const CMatrix h = generate_channel({0.0, n}, m, rng);
  const CVector y = random_cvector(n, rng);
  const ChannelInstance ch{h, 0.1, 1.0};
  DetectorConfig cfg;
  cfg.plan = make_partition(n, 2, 1);
  cfg.t_max = 1;
  const EpRunResult run = run_ep(ch, y, c, cfg, TraceMode::kFinalState);
  CHECK_THROWS_AS(verify_fixed_point(run, 1e-10), NotConverged);

  const EpRunResult untraced = run_ep(ch, y, c, cfg, TraceMode::kNone);
  CHECK_THROWS_AS(verify_fixed_point(untraced, 1e-10), StaleState);
}

TEST_CASE("run_ep: OvEP with n_s = n_b collapses onto NOvEP") {
  const int n = 8, m = 4, t_max = 6;
  const Constellation c = Constellation::square(4, 1.0);
  Rng rng(29);
  const CMatrix h = generate_channel({0.8, n}, m, rng);
  const CVector y = random_cvector(n, rng);
  const ChannelInstance ch{h, 0.2, 1.0};
  DetectorConfig ov;
  ov.plan = make_partition(n, 2, 2);
  ov.t_max = t_max;
  ov.variant = DetectorVariant::kOvep;
  DetectorConfig nov = ov;
  nov.variant = DetectorVariant::kNovep;
  const EpRunResult a = run_ep(ch, y, c, ov, TraceMode::kXhatPerIteration);
  const EpRunResult b = run_ep(ch, y, c, nov, TraceMode::kXhatPerIteration);
  for (int t = 0; t < t_max; ++t) {
    CHECK((a.xhat_per_iteration[static_cast<std::size_t>(t)] -
           b.xhat_per_iteration[static_cast<std::size_t>(t)])
              .cwiseAbs()
              .maxCoeff() == 0.0);
  }
}
