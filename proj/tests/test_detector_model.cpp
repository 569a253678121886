#include <doctest.h>

#include <cmath>
#include <stdexcept>

#include "qkd/detector_model.hpp"
#include "qkd/errors.hpp"
#include "qkd/rng.hpp"
#include "test_fixtures.hpp"

using namespace qkd;
using test::reference_detector;
using test::link_at;
using test::timing_at;

namespace {

// Direct branch average: sum the decaying per-gate contributions of an event
// at gate l over the remaining gates, averaged over all branches.  Kept free
// of the closed form it checks.
double beta_branch_sum(long long n, double rho) {
  double total = 0.0;
  for (long long l = 0; l < n; ++l) {
    double pow_m = 1.0;
    for (long long m = 0; m < n - l; ++m) {
      total += pow_m;
      pow_m *= rho;
    }
  }
  double n_a = (static_cast<double>(n) + 1.0) / 2.0;
  return total / (n_a * static_cast<double>(n));
}

// Timing/detector pair with a prescribed decay ratio and gate budget.
std::pair<TimingParams, DetectorParams> synthetic_decay(long long n, double rho) {
  TimingParams timing;
  timing.frequency = 1.0;
  timing.frame_duration = static_cast<double>(n) + 0.5;
  timing.frame_period = timing.frame_duration;
  DetectorParams det;
  det.afterpulse_decay = -1.0 / std::log(rho);
  det.afterpulse_amplitude = 1e-3;
  det.dead_time = 0.0;
  return {timing, det};
}

}  // namespace

TEST_CASE("gate counting guards near-integer products") {
  CHECK(gate_count((500e-6 - 10e-6) * 5e6) == 2450);
  CHECK(gate_count(2449.3) == 2449);
  CHECK(gate_count(0.9999999999999) == 1);
  CHECK(gate_count(0.4) == 0);
}

TEST_CASE("parameter invariants are enforced") {
  DetectorParams det = reference_detector();
  det.efficiency = 1.5;
  CHECK_THROWS_AS(det.validate(), std::invalid_argument);
  det = reference_detector();
  det.afterpulse_decay = 0.0;
  CHECK_THROWS_AS(det.validate(), std::invalid_argument);

  TimingParams timing = timing_at(5e6);
  timing.frame_period = 1e-6;
  CHECK_THROWS_AS(timing.validate(), std::invalid_argument);

  SourceEnsemble bad{{0.4, 0.3}, {0.5, 0.5}};  // decoy not dominated
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  SourceEnsemble unnormalized{{0.4}, {0.9}};
  CHECK_THROWS_AS(unnormalized.validate(), std::invalid_argument);
  SourceEnsemble good{{0.4, 0.001, 0.0}, {0.93, 0.05, 0.02}};
  CHECK_NOTHROW(good.validate());
}

TEST_CASE("non-detection probability") {
  PhaseEnsemble phases = PhaseEnsemble::bb84();

  SUBCASE("no photons means no detection") {
    double p = non_detection_prob(SourceEnsemble::single(0.0), phases, link_at(0.0),
                                  reference_detector());
    CHECK(p == 1.0);
  }
  SUBCASE("zero efficiency means no detection") {
    DetectorParams det = reference_detector();
    det.efficiency = 0.0;
    double p = non_detection_prob(SourceEnsemble::single(0.4), phases, link_at(0.0), det);
    CHECK(p == 1.0);
  }
  SUBCASE("matches the high-precision term-by-term sum") {
    // frozen from tests/oracle/keyrate_oracle.py (V1)
    for (int w = 0; w < 2; ++w) {
      double p = non_detection_prob(SourceEnsemble::single(0.4), phases, link_at(0.0),
                                    reference_detector(w));
      CHECK_REL(p, 0.99074481089408249, 1e-13);
    }
  }
  SUBCASE("rejects an unnormalized ensemble") {
    SourceEnsemble bad{{0.4}, {0.5}};
    CHECK_THROWS_AS(
        non_detection_prob(bad, phases, link_at(0.0), reference_detector()),
        std::invalid_argument);
  }
}

TEST_CASE("averaging factor beta") {
  SUBCASE("single live gate collapses to one") {
    for (double rho : {0.1, 0.5, 0.99}) {
      auto [timing, det] = synthetic_decay(1, rho);
      CHECK(beta_factor(timing, det) == 1.0);
    }
  }
  SUBCASE("fast decay tends to one over the average gate count") {
    auto [timing, det] = synthetic_decay(16, 1e-12);
    CHECK_REL(beta_factor(timing, det), 1.0 / 8.5, 1e-9);
  }
  SUBCASE("agrees with the branch sum at N=4, rho=0.5") {
    auto [timing, det] = synthetic_decay(4, 0.5);
    CHECK_REL(beta_factor(timing, det), 0.6125, 1e-15);
    CHECK_REL(beta_branch_sum(4, 0.5), 0.6125, 1e-15);
  }
  SUBCASE("agrees with the branch sum across budgets and decay ratios") {
    for (long long n : {2LL, 3LL, 7LL, 16LL, 33LL, 64LL})
      for (double rho = 0.1; rho < 0.95; rho += 0.1) {
        auto [timing, det] = synthetic_decay(n, rho);
        CHECK_REL(beta_factor(timing, det), beta_branch_sum(n, rho), 1e-12);
      }
  }
  SUBCASE("dead time longer than the frame is rejected") {
    TimingParams timing = timing_at(5e6);
    DetectorParams det = reference_detector();
    det.dead_time = 600e-6;
    CHECK_THROWS_AS(beta_factor(timing, det), std::domain_error);
  }
}

TEST_CASE("per-gate afterpulse probability") {
  TimingParams timing = timing_at(5e6);
  SUBCASE("vanishes without afterpulse amplitude") {
    DetectorParams det = reference_detector();
    det.afterpulse_amplitude = 0.0;
    CHECK(per_gate_afterpulse(timing, det) == 0.0);
  }
  SUBCASE("long dead times suppress it") {
    DetectorParams det = reference_detector();
    det.dead_time = 400e-6;
    CHECK(per_gate_afterpulse(timing, det) < 1e-6);
  }
  SUBCASE("reference operating point") {
    // frozen from tests/oracle/keyrate_oracle.py (V3)
    DetectorParams det = reference_detector();
    CHECK(gate_budget(timing, det) == 2450);
    CHECK_REL(beta_factor(timing, det), 0.24960387146265534, 1e-12);
    CHECK_REL(per_gate_afterpulse(timing, det), 4.6592194705651839e-5, 1e-12);
  }
}

TEST_CASE("dead-time factor") {
  TimingParams timing = timing_at(5e6);
  DetectorParams det = reference_detector();
  SUBCASE("no events, no loss") { CHECK(dead_time_factor(0.0, timing, det) == 1.0); }
  SUBCASE("one dead gate collapses the denominator") {
    TimingParams t = timing;
    DetectorParams d = det;
    d.dead_time = 1.0 / t.frequency;
    CHECK(dead_time_factor(0.7, t, d) == 1.0);
  }
  SUBCASE("direct substitution") {
    DetectorParams d = det;
    d.dead_time = 51.0 / timing.frequency;  // F * dt = 51
    CHECK_REL(dead_time_factor(0.5, timing, d), 1.0 / 26.0, 1e-15);
  }
}

TEST_CASE("detection fixed point") {
  PhaseEnsemble phases = PhaseEnsemble::bb84();
  TimingParams timing = timing_at(5e6);

  SUBCASE("corrections vanish without noise sources") {
    DetectorParams det = reference_detector();
    det.dark_count_prob = 0.0;
    det.afterpulse_amplitude = 0.0;
    SourceEnsemble source = SourceEnsemble::single(0.4);
    DetectionSolution sol = solve_detection(source, phases, link_at(0.0), det, timing);
    double p_ph0 = non_detection_prob(source, phases, link_at(0.0), det);
    CHECK(sol.noise_prob == 0.0);
    CHECK(sol.afterpulse_core == 1.0);
    CHECK(sol.afterpulse_prob == 0.0);
    CHECK_REL(sol.intermediate_total, 1.0 - p_ph0, 1e-14);
  }

  SUBCASE("dark-count-only fixed point is self-consistent") {
    DetectorParams det = reference_detector();
    det.efficiency = 0.0;  // infinitely long channel
    DetectionSolution sol =
        solve_detection(SourceEnsemble::single(0.4), phases, link_at(0.0), det, timing);
    CHECK(sol.non_detection_ph == 1.0);
    CHECK(sol.converged);
    CHECK(sol.residual <= 10.0 * 1e-10);
  }

  SUBCASE("reference chain at L = 0") {
    // frozen from tests/oracle/keyrate_oracle.py (V4, L=0)
    DetectionSolution sol = solve_detection(SourceEnsemble::single(1.0), phases, link_at(0.0),
                                            reference_detector(), timing);
    CHECK(sol.converged);
    CHECK_REL(sol.non_detection_ph, 0.97710195172192402, 1e-13);
    CHECK_REL(sol.intermediate_total, 0.023527377843662263, 1e-9);
    CHECK_REL(sol.dead_time_factor, 0.46450237666790192, 1e-9);
    CHECK_REL(sol.corrected_total, 0.010928522925144859, 1e-9);
    CHECK_REL(sol.afterpulse_core, 0.99937618966155522, 1e-9);
    CHECK_REL(sol.afterpulse_prob, 0.00062381033844477796, 1e-6);
    CHECK_REL(sol.noise_prob, 0.00064407768757111430, 1e-6);
    CHECK(sol.afterpulse_prob == 1.0 - sol.afterpulse_core);
  }

  SUBCASE("reference chain at L = 50 km") {
    // frozen from tests/oracle/keyrate_oracle.py (V4, L=50)
    LinkParams link = link_at(50.0);
    SourceEnsemble source = SourceEnsemble::single(link.channel_transmittance());
    DetectionSolution sol =
        solve_detection(source, phases, link, reference_detector(), timing);
    CHECK_REL(sol.corrected_total, 0.00026487155713337374, 1e-9);
    CHECK_REL(sol.afterpulse_prob, 1.5123716475734559e-5, 1e-6);
  }

  SUBCASE("solution satisfies the fixed-point residual bound") {
    for (double length : {0.0, 30.0, 80.0, 140.0}) {
      LinkParams link = link_at(length);
      SourceEnsemble source = SourceEnsemble::single(link.channel_transmittance());
      DetectionSolution sol =
          solve_detection(source, phases, link, reference_detector(), timing);
      CHECK(sol.converged);
      CHECK(sol.residual <= 10.0 * 1e-10);
      CHECK(sol.intermediate_total >= 0.0);
      CHECK(sol.intermediate_total <= 1.0);
      CHECK(sol.corrected_total >= 0.0);
      CHECK(sol.corrected_total <= 1.0);
      CHECK(sol.dead_time_factor > 0.0);
      CHECK(sol.dead_time_factor <= 1.0);
    }
  }

  SUBCASE("corrected probability is non-increasing in dead time without afterpulsing") {
    DetectorParams det = reference_detector();
    det.afterpulse_amplitude = 0.0;
    double previous = 2.0;
    for (double dt : {0.2e-6, 1e-6, 5e-6, 20e-6, 80e-6}) {
      det.dead_time = dt;
      DetectionSolution sol = solve_detection(SourceEnsemble::single(1.0), phases,
                                              link_at(0.0), det, timing);
      CHECK(sol.corrected_total <= previous + 1e-15);
      previous = sol.corrected_total;
    }
  }

  SUBCASE("afterpulse probability strictly decreases with dead time") {
    DetectorParams det = reference_detector();
    double previous = 1.0;
    for (double dt : {1e-6, 5e-6, 20e-6, 80e-6}) {
      det.dead_time = dt;
      DetectionSolution sol = solve_detection(SourceEnsemble::single(1.0), phases,
                                              link_at(0.0), det, timing);
      CHECK(sol.afterpulse_prob < previous);
      previous = sol.afterpulse_prob;
    }
  }

  SUBCASE("sub-gate dead time is flagged, not rejected") {
    DetectorParams det = reference_detector();
    det.dead_time = 0.05e-6;  // a quarter gate at 5 MHz
    DetectionSolution sol = solve_detection(SourceEnsemble::single(1.0), phases, link_at(0.0),
                                            det, timing);
    CHECK(sol.sub_gate_dead_time);
    CHECK(sol.dead_time_factor > 1.0);
  }

  SUBCASE("validity-domain guard flags saturating branches") {
    DetectorParams det = reference_detector();
    det.efficiency = 1.0;
    LinkParams link = link_at(0.0);
    link.receiver_transmittance = 1.0;
    DetectionSolution sol =
        solve_detection(SourceEnsemble::single(2.0), phases, link, det, timing);
    CHECK(sol.beyond_validity);
  }

  SUBCASE("iteration budget exhaustion raises a convergence error") {
    SolverOptions opts;
    opts.tolerance = 1e-10;
    opts.max_iterations = 1;
    CHECK_THROWS_AS(solve_detection(SourceEnsemble::single(1.0), phases, link_at(0.0),
                                    reference_detector(), timing, opts),
                    ConvergenceError);
  }
}

TEST_CASE("fixed point holds its invariants on random operating points") {
  // hand-rolled generator over the physically sensible parameter box
  Xoshiro256pp rng(20250811);
  PhaseEnsemble phases = PhaseEnsemble::bb84();
  auto in_range = [&](double lo, double hi) { return lo + (hi - lo) * rng.uniform01(); };
  auto log_range = [&](double lo, double hi) {
    return lo * std::exp(std::log(hi / lo) * rng.uniform01());
  };
  for (int trial = 0; trial < 400; ++trial) {
    DetectorParams det;
    det.efficiency = in_range(0.01, 0.9);
    det.dark_count_prob = log_range(1e-8, 1e-3);
    det.afterpulse_amplitude = log_range(1e-10, 1e-7);
    det.afterpulse_decay = log_range(1e-6, 3e-4);
    TimingParams timing;
    timing.frequency = log_range(1e5, 1e8);
    timing.frame_duration = log_range(1e-4, 1e-2);
    timing.frame_period = timing.frame_duration * in_range(1.0, 4.0);
    det.dead_time = in_range(1.0, 40.0) / timing.frequency;
    if (gate_budget(timing, det) < 1) continue;
    LinkParams link = link_at(in_range(0.0, 150.0));
    SourceEnsemble source = SourceEnsemble::single(in_range(0.0, 1.0));

    CAPTURE(trial);
    DetectionSolution sol = solve_detection(source, phases, link, det, timing);
    CHECK(sol.converged);
    CHECK(sol.residual <= 10.0 * 1e-10);
    CHECK(sol.intermediate_total >= 0.0);
    CHECK(sol.intermediate_total <= 1.0);
    CHECK(sol.corrected_total >= 0.0);
    CHECK(sol.corrected_total <= 1.0);
    CHECK(sol.noise_prob >= 0.0);
    CHECK(sol.noise_prob <= 1.0);
    CHECK(sol.afterpulse_core >= 0.0);
    CHECK(sol.afterpulse_core <= 1.0);
    CHECK(sol.dead_time_factor > 0.0);
    CHECK(sol.dead_time_factor <= 1.0);
    CHECK(sol.afterpulse_prob == 1.0 - sol.afterpulse_core);
  }
}
