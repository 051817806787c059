#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "ovep/errors.hpp"
#include "ovep/sim.hpp"

using namespace ovep;

namespace {

SimConfig small_config() {
  SimConfig cfg;
  cfg.n = 8;
  cfg.m = 4;
  cfg.q = 4;
  cfg.rho = 0.5;
  cfg.snr_db = {6.0, 12.0};
  cfg.variants = {{SimDetector::kOvep, 0, 0, 8}, {SimDetector::kLmmse, 0, 0, 0}};
  cfg.n_trials = 150;
  cfg.master_seed = 99;
  return cfg;
}

std::string ber_csv(const SweepResult& r) {
  std::ostringstream os;
  write_ber_csv(r, os);
  return os.str();
}

std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    std::vector<std::string> fields;
    std::istringstream ls(line);
    std::string f;
    while (std::getline(ls, f, ',')) fields.push_back(f);
    rows.push_back(std::move(fields));
  }
  return rows;
}

}  // namespace

TEST_CASE("sim config validation surfaces as ConfigError") {
  SimConfig cfg = small_config();
  cfg.snr_db.clear();
  CHECK_THROWS_AS(run_ber_sweep(cfg), ConfigError);

  cfg = small_config();
  cfg.n_trials = 0;
  CHECK_THROWS_AS(run_ber_sweep(cfg), ConfigError);

  cfg = small_config();
  cfg.rho = 1.5;
  CHECK_THROWS_AS(run_ber_sweep(cfg), ConfigError);

  cfg = small_config();
  cfg.variants = {{SimDetector::kLmmse, 0, 0, 0}};
  CHECK_THROWS_AS(run_diagnostics(cfg), ConfigError);

  // A partition that cannot tile the antennas.
  cfg = small_config();
  cfg.variants = {{SimDetector::kNovep, 3, 3, 8}};
  CHECK_THROWS_AS(run_ber_sweep(cfg), InvalidPartition);
}

TEST_CASE("resolve_variant fills the documented defaults") {
  const int n = 32;
  const VariantSpec ovep = resolve_variant({SimDetector::kOvep, 0, 0, 0}, n);
  CHECK(ovep.n_b == 2);
  CHECK(ovep.n_s == 1);
  CHECK(ovep.t_max == 32);
  const VariantSpec lep = resolve_variant({SimDetector::kLmmseEp, 0, 0, 0}, n);
  CHECK(lep.n_b == n);
  CHECK(lep.n_s == n);
  CHECK(lep.t_max == 16);
  const VariantSpec mf = resolve_variant({SimDetector::kMfEp, 0, 0, 0}, n);
  CHECK(mf.n_b == 1);
  CHECK(mf.n_s == 1);
  const VariantSpec nov = resolve_variant({SimDetector::kNovep, 4, 0, 0}, n);
  CHECK(nov.n_b == 4);
  CHECK(nov.n_s == 4);
}

TEST_CASE("detector name round trip") {
  for (SimDetector d : {SimDetector::kLmmse, SimDetector::kLmmseEp, SimDetector::kMfEp,
                        SimDetector::kNovep, SimDetector::kOvep, SimDetector::kOvepNoSub}) {
    const auto parsed = parse_detector(detector_name(d));
    REQUIRE(parsed.has_value());
    CHECK(*parsed == d);
  }
  CHECK(!parse_detector("amp").has_value());
}

TEST_CASE("noiseless easy instance: every EP variant is error free") {
  SimConfig cfg;
  cfg.n = 8;
  cfg.m = 2;
  cfg.rho = 0.0;
  cfg.snr_db = {100.0};
  cfg.variants = {{SimDetector::kLmmseEp, 0, 0, 8},
                  {SimDetector::kMfEp, 0, 0, 8},
                  {SimDetector::kNovep, 0, 0, 8},
                  {SimDetector::kOvep, 0, 0, 8},
                  {SimDetector::kOvepNoSub, 0, 0, 8}};
  cfg.n_trials = 50;
  const SweepResult r = run_ber_sweep(cfg);
  REQUIRE(r.ber.size() == 5);
  for (const auto& cell : r.ber) {
    CHECK(cell.bit_errors == 0);
    CHECK(cell.ber == 0.0);
  }
}

TEST_CASE("determinism: same master seed gives byte-identical CSV at any thread count") {
  SimConfig cfg = small_config();
  const std::string a = ber_csv(run_ber_sweep(cfg));
  const std::string b = ber_csv(run_ber_sweep(cfg));
  CHECK(a == b);

  cfg.threads = 3;
  const std::string c = ber_csv(run_ber_sweep(cfg));
  CHECK(a == c);

  SimConfig other = cfg;
  other.master_seed = 100;
  CHECK(a != ber_csv(run_ber_sweep(other)));
}

TEST_CASE("prefix property: first-iteration BER equals a single-iteration run") {
  SimConfig cfg = small_config();
  cfg.variants = {{SimDetector::kOvep, 0, 0, 4}};
  const SweepResult iters = run_iteration_sweep(cfg);

  SimConfig one = cfg;
  one.variants = {{SimDetector::kOvep, 0, 0, 1}};
  const SweepResult single = run_ber_sweep(one);

  for (const auto& cell : single.ber) {
    bool found = false;
    for (const auto& it : iters.iters) {
      if (it.iteration == 1 && it.snr_db == cell.snr_db) {
        CHECK(it.bit_errors == cell.bit_errors);
        found = true;
      }
    }
    CHECK(found);
  }
}

TEST_CASE("full damping produces a flat iteration curve") {
  SimConfig cfg = small_config();
  cfg.damping = 1.0;
  cfg.variants = {{SimDetector::kOvep, 0, 0, 5}};
  cfg.n_trials = 60;
  const SweepResult r = run_iteration_sweep(cfg);
  std::map<double, std::uint64_t> first;
  for (const auto& cell : r.iters) {
    auto [it, inserted] = first.try_emplace(cell.snr_db, cell.bit_errors);
    if (!inserted) CHECK(cell.bit_errors == it->second);
  }
}

TEST_CASE("iteration curve: OvEP improves across iterations under correlation") {
  SimConfig cfg;
  cfg.n = 32;
  cfg.m = 24;
  cfg.rho = 0.95;
  cfg.snr_db = {12.0};
  cfg.variants = {{SimDetector::kOvep, 0, 0, 16}};
  cfg.n_trials = 4000;
  cfg.master_seed = 7;
  const SweepResult r = run_iteration_sweep(cfg);
  REQUIRE(r.iters.size() == 16);
  // Non-increasing in aggregate, allowing transient upticks below 10%.
  for (std::size_t t = 1; t < r.iters.size(); ++t) {
    CHECK(r.iters[t].ber <= r.iters[t - 1].ber * 1.10);
  }
  CHECK(r.iters.back().ber < r.iters.front().ber);
}

TEST_CASE("csv writers: empty sweep emits the header only") {
  SweepResult empty;
  std::ostringstream os;
  write_ber_csv(empty, os);
  CHECK(os.str() == "variant,snr_db,iterations,trials,bits,bit_errors,ber,ber_stderr\n");
  std::ostringstream os2;
  write_iters_csv(empty, os2);
  CHECK(os2.str() == "variant,snr_db,iteration,ber,ber_stderr\n");
}

TEST_CASE("csv round trip: numeric fields parse back to the cells") {
  const SweepResult r = run_ber_sweep(small_config());
  const auto rows = parse_csv(ber_csv(r));
  REQUIRE(rows.size() == r.ber.size() + 1);
  for (std::size_t i = 0; i < r.ber.size(); ++i) {
    const auto& row = rows[i + 1];
    REQUIRE(row.size() == 8);
    CHECK(row[0] == detector_name(r.ber[i].det));
    CHECK(std::stod(row[1]) == doctest::Approx(r.ber[i].snr_db).epsilon(1e-8));
    CHECK(std::stoi(row[2]) == r.ber[i].iterations);
    CHECK(std::stoll(row[3]) == r.ber[i].trials);
    CHECK(std::stoull(row[4]) == r.ber[i].bits);
    CHECK(std::stoull(row[5]) == r.ber[i].bit_errors);
    CHECK(std::stod(row[6]) == doctest::Approx(r.ber[i].ber).epsilon(1e-8));
    CHECK(std::stod(row[7]) == doctest::Approx(r.ber[i].ber_stderr).epsilon(1e-8));
  }
}

TEST_CASE("ber standard error follows the binomial formula; zero-error cells flagged") {
  const SweepResult r = run_ber_sweep(small_config());
  for (const auto& cell : r.ber) {
    const double expect =
        std::sqrt(cell.ber * (1.0 - cell.ber) / static_cast<double>(cell.bits));
    CHECK(cell.ber_stderr == doctest::Approx(expect));
  }
}

TEST_CASE("flops csv lists the requested EP variants") {
  SimConfig cfg;
  cfg.n = 32;
  cfg.m = 24;
  cfg.q = 4;
  cfg.snr_db = {0.0};
  cfg.variants = {{SimDetector::kLmmseEp, 0, 0, 0},
                  {SimDetector::kMfEp, 0, 0, 0},
                  {SimDetector::kNovep, 0, 0, 0},
                  {SimDetector::kOvep, 0, 0, 0},
                  {SimDetector::kLmmse, 0, 0, 0}};
  std::ostringstream os;
  write_flops_csv(cfg, os);
  const auto rows = parse_csv(os.str());
  REQUIRE(rows.size() == 5);  // header + 4 EP rows; plain LMMSE has no row
  CHECK(rows[1][0] == std::string("lmmse-ep"));
  CHECK(rows[4][0] == std::string("ovep"));
  // flops_total = flops_per_iter * t
  for (std::size_t i = 1; i < rows.size(); ++i) {
    CHECK(std::stoull(rows[i][8]) ==
          std::stoull(rows[i][7]) * static_cast<std::uint64_t>(std::stoi(rows[i][6])));
  }
}

TEST_CASE("diagnostics sweep produces coherent summaries") {
  SimConfig cfg;
  cfg.n = 16;
  cfg.m = 12;
  cfg.rho = 0.95;
  cfg.snr_db = {12.0, 6.0};
  cfg.variants = {{SimDetector::kNovep, 0, 0, 0}, {SimDetector::kOvep, 0, 0, 0}};
  cfg.n_trials = 200;
  const DiagResult d = run_diagnostics(cfg);
  REQUIRE(d.variants.size() == 2);
  CHECK(d.phi_snr_db == 12.0);
  for (const auto& vd : d.variants) {
    CHECK(vd.phi.n_trials == 200);
    REQUIRE(vd.mse.size() == 2);
    CHECK(vd.samples == static_cast<std::uint64_t>(200 * cfg.m));
    // Histogram mass equals sample count.
    std::uint64_t mass = 0;
    for (auto ccount : vd.hist_in.counts) mass += ccount;
    CHECK(mass == vd.samples);
  }
  // CSV emission is deterministic.
  std::ostringstream p1, p2;
  write_phi_csv(d, p1);
  write_phi_csv(run_diagnostics(cfg), p2);
  CHECK(p1.str() == p2.str());
}
