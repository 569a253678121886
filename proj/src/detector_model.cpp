#include "qkd/detector_model.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

#include "qkd/errors.hpp"

namespace qkd {

namespace {

constexpr double kPi = std::numbers::pi;

void require(bool ok, const std::string& message) {
  if (!ok) throw std::invalid_argument(message);
}

double clamp01(double x) { return x < 0.0 ? 0.0 : (x > 1.0 ? 1.0 : x); }

}  // namespace

void DetectorParams::validate() const {
  require(efficiency >= 0.0 && efficiency <= 1.0, "detector efficiency must be in [0,1]");
  require(dark_count_prob >= 0.0 && dark_count_prob < 1.0,
          "dark count probability must be in [0,1)");
  require(afterpulse_amplitude >= 0.0, "afterpulse amplitude must be >= 0");
  require(afterpulse_decay > 0.0 && std::isfinite(1.0 / afterpulse_decay),
          "afterpulse decay time must be positive and finite");
  require(dead_time >= 0.0, "dead time must be >= 0");
  require(label == 0 || label == 1, "detector label must be 0 or 1");
}

void TimingParams::validate() const {
  require(frequency > 0.0 && std::isfinite(frequency), "operating frequency must be positive");
  require(frame_duration > 0.0, "frame duration must be positive");
  require(frame_period >= frame_duration, "frame period must be >= frame duration");
}

double SourceEnsemble::decoy_mu_sum() const {
  double sum = 0.0;
  for (std::size_t k = 1; k < mean_photon_numbers.size(); ++k)
    sum += mean_photon_numbers[k];
  return sum;
}

void SourceEnsemble::validate() const {
  require(!mean_photon_numbers.empty(), "source ensemble must hold at least one state");
  require(mean_photon_numbers.size() == probabilities.size(),
          "source ensemble sizes mismatch");
  double total = 0.0;
  for (double p : probabilities) {
    require(p >= 0.0, "state probabilities must be >= 0");
    total += p;
  }
  require(std::abs(total - 1.0) <= 1e-12, "state probabilities must sum to 1");
  for (double mu : mean_photon_numbers)
    require(mu >= 0.0 && std::isfinite(mu), "mean photon numbers must be >= 0");
  if (mean_photon_numbers.size() > 1) {
    // decoy ordering: the signal dominates all decoys, decoys are sorted
    // strictly descending, and the signal probability dominates as well
    require(mean_photon_numbers[0] > decoy_mu_sum(),
            "signal mean photon number must exceed the decoy sum");
    for (std::size_t k = 1; k + 1 < mean_photon_numbers.size(); ++k)
      require(mean_photon_numbers[k] > mean_photon_numbers[k + 1],
              "decoy intensities must be strictly decreasing");
    double decoy_prob = 0.0;
    for (std::size_t k = 1; k < probabilities.size(); ++k) decoy_prob += probabilities[k];
    require(probabilities[0] > decoy_prob,
            "signal probability must exceed the decoy probability sum");
  }
}

PhaseEnsemble PhaseEnsemble::bb84() {
  PhaseEnsemble p;
  p.alice_phases = {0.0, kPi / 2.0, kPi, 3.0 * kPi / 2.0};
  p.alice_probs = {0.25, 0.25, 0.25, 0.25};
  p.bob_phases = {0.0, kPi / 2.0};
  p.bob_probs = {0.5, 0.5};
  return p;
}

double PhaseEnsemble::phase_argument(int i, int j, int w) const {
  double dphi = (alice_phases[i] - bob_phases[j]) / 2.0 + misalignment;
  return dphi - w * kPi / 2.0;
}

void PhaseEnsemble::validate() const {
  require(alice_phases.size() == 4 && alice_probs.size() == 4,
          "transmitter uses exactly four phases");
  require(bob_phases.size() == 2 && bob_probs.size() == 2,
          "receiver uses exactly two phases");
  const PhaseEnsemble ref = bb84();
  for (int i = 0; i < 4; ++i)
    require(std::abs(alice_phases[i] - ref.alice_phases[i]) <= 1e-12,
            "transmitter phases must be {0, pi/2, pi, 3pi/2}");
  for (int j = 0; j < 2; ++j)
    require(std::abs(bob_phases[j] - ref.bob_phases[j]) <= 1e-12,
            "receiver phases must be {0, pi/2}");
  double sa = 0.0, sb = 0.0;
  for (double p : alice_probs) {
    require(p >= 0.0, "phase probabilities must be >= 0");
    sa += p;
  }
  for (double p : bob_probs) {
    require(p >= 0.0, "phase probabilities must be >= 0");
    sb += p;
  }
  require(std::abs(sa - 1.0) <= 1e-12, "transmitter phase probabilities must sum to 1");
  require(std::abs(sb - 1.0) <= 1e-12, "receiver phase probabilities must sum to 1");
}

double LinkParams::channel_transmittance() const {
  return std::pow(10.0, -attenuation * length / 10.0);
}

double LinkParams::reduced_efficiency(const DetectorParams& det) const {
  return det.efficiency * channel_transmittance() * receiver_transmittance;
}

double LinkParams::branch_efficiency(const DetectorParams& det, const PhaseEnsemble& phases,
                                     int i, int j) const {
  double c = std::cos(phases.phase_argument(i, j, det.label));
  return reduced_efficiency(det) * c * c;
}

void LinkParams::validate() const {
  require(attenuation >= 0.0, "attenuation must be >= 0");
  require(length >= 0.0, "channel length must be >= 0");
  require(receiver_transmittance > 0.0 && receiver_transmittance <= 1.0,
          "receiver transmittance must be in (0,1]");
}

long long gate_count(double gates) {
  return static_cast<long long>(std::floor(gates * (1.0 + 2e-12) + 1e-9));
}

long long gate_budget(const TimingParams& timing, const DetectorParams& det) {
  return gate_count((timing.frame_duration - det.dead_time) * timing.frequency);
}

double non_detection_prob(const SourceEnsemble& source, const PhaseEnsemble& phases,
                          const LinkParams& link, const DetectorParams& det) {
  source.validate();
  phases.validate();
  link.validate();
  det.validate();
  double total = 0.0;
  for (std::size_t k = 0; k < source.mean_photon_numbers.size(); ++k)
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 2; ++j) {
        double gamma = link.branch_efficiency(det, phases, i, j);
        total += source.probabilities[k] * phases.alice_probs[i] * phases.bob_probs[j] *
                 std::exp(-gamma * source.mean_photon_numbers[k]);
      }
  return clamp01(total);
}

double beta_factor(const TimingParams& timing, const DetectorParams& det) {
  long long n = gate_budget(timing, det);
  if (n < 1) throw std::domain_error("dead time exceeds frame");
  if (n == 1) return 1.0;  // algebraic cancellation, exact for any decay ratio
  double k_tf = det.decay_rate() * timing.gate_period();
  double one_minus_rho = -std::expm1(-k_tf);
  double rho = 1.0 - one_minus_rho;
  double one_minus_rho_n = -std::expm1(-k_tf * static_cast<double>(n));
  double n_a = (static_cast<double>(n) + 1.0) / 2.0;
  double bracket = 1.0 - rho * one_minus_rho_n / (static_cast<double>(n) * one_minus_rho);
  return bracket / (n_a * one_minus_rho);
}

double per_gate_afterpulse(const TimingParams& timing, const DetectorParams& det) {
  double k = det.decay_rate();
  return beta_factor(timing, det) * k * det.afterpulse_amplitude *
         std::exp(-k * det.dead_time);
}

double dead_time_factor(double intermediate_total, const TimingParams& timing,
                        const DetectorParams& det) {
  double denom = intermediate_total * (timing.frequency * det.dead_time - 1.0) + 1.0;
  if (denom <= 0.0) throw std::domain_error("dead-time factor denominator is not positive");
  return 1.0 / denom;
}

DetectionSolution solve_detection_from_pph0(double p_ph0, const DetectorParams& det,
                                            const TimingParams& timing,
                                            const SolverOptions& options) {
  det.validate();
  timing.validate();
  require(p_ph0 >= 0.0 && p_ph0 <= 1.0, "non-detection probability must be in [0,1]");
  require(options.tolerance > 0.0, "solver tolerance must be positive");

  DetectionSolution sol;
  sol.non_detection_ph = p_ph0;
  sol.gate_budget = gate_budget(timing, det);
  sol.avg_gates = (static_cast<double>(sol.gate_budget) + 1.0) / 2.0;
  sol.averaging_factor = beta_factor(timing, det);  // throws when the budget is < 1
  sol.decay_ratio = std::exp(-det.decay_rate() * timing.gate_period());
  sol.per_gate_afterpulse = per_gate_afterpulse(timing, det);
  sol.sub_gate_dead_time = timing.frequency * det.dead_time < 1.0;

  const double dark_surv = 1.0 - det.dark_count_prob;
  auto step = [&](double p_t) {
    sol.dead_time_factor = dead_time_factor(p_t, timing, det);
    sol.corrected_total = p_t * sol.dead_time_factor;
    sol.afterpulse_core =
        std::exp(sol.avg_gates * std::log1p(-sol.corrected_total * sol.per_gate_afterpulse));
    sol.noise_prob = 1.0 - dark_surv * sol.afterpulse_core;
    return 1.0 - (1.0 - sol.noise_prob) * p_ph0;
  };

  double p_t = 1.0 - dark_surv * p_ph0;
  double rel = 0.0;
  for (int l = 0; l < options.max_iterations; ++l) {
    double next = step(p_t);
    if (!std::isfinite(next))
      throw NumericError("detection fixed point produced a non-finite value");
    double delta = std::abs(next - p_t);
    // relative criterion, with an absolute fallback at vanishing signal
    bool done = p_t > 1e-300 ? (delta / p_t < options.tolerance) : (delta < options.tolerance);
    rel = p_t > 1e-300 ? delta / p_t : delta;
    p_t = next;
    sol.iterations_used = l + 1;
    if (done) {
      sol.converged = true;
      break;
    }
  }
  if (!sol.converged)
    throw ConvergenceError("detection fixed point did not converge within " +
                               std::to_string(options.max_iterations) + " iterations",
                           rel);

  sol.intermediate_total = p_t;
  sol.residual = std::abs(p_t - step(p_t));
  sol.afterpulse_core = clamp01(sol.afterpulse_core);
  sol.afterpulse_prob = 1.0 - sol.afterpulse_core;
  sol.noise_prob = clamp01(sol.noise_prob);
  sol.intermediate_total = clamp01(sol.intermediate_total);
  if (!sol.sub_gate_dead_time) sol.corrected_total = clamp01(sol.corrected_total);
  return sol;
}

DetectionSolution solve_detection(const SourceEnsemble& source, const PhaseEnsemble& phases,
                                  const LinkParams& link, const DetectorParams& det,
                                  const TimingParams& timing, const SolverOptions& options) {
  double p_ph0 = non_detection_prob(source, phases, link, det);
  DetectionSolution sol = solve_detection_from_pph0(p_ph0, det, timing, options);
  for (std::size_t k = 0; k < source.mean_photon_numbers.size(); ++k)
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 2; ++j)
        if (link.branch_efficiency(det, phases, i, j) * source.mean_photon_numbers[k] >= 1.0)
          sol.beyond_validity = true;
  return sol;
}

}  // namespace qkd
