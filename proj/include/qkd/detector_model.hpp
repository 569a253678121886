#pragma once

#include <cstdint>
#include <vector>

namespace qkd {

/// Internal parameters of one gated single-photon detector.  Times are in
/// seconds; the afterpulse amplitude has dimension time so that
/// amplitude/decay is the dimensionless per-event afterpulse weight.
struct DetectorParams {
  double efficiency = 0.1;           ///< photodetection efficiency, in [0,1]
  double dark_count_prob = 0.0;      ///< dark count probability per gate, in [0,1)
  double afterpulse_amplitude = 0.0; ///< afterpulse amplitude (s)
  double afterpulse_decay = 1e-6;    ///< effective trap decay time (s), > 0
  double dead_time = 0.0;            ///< hold-off applied after a detection (s)
  int label = 0;                     ///< detector index w, 0 or 1

  double decay_rate() const { return 1.0 / afterpulse_decay; }
  void validate() const;
};

/// Frame/gate timing shared by both detectors.
struct TimingParams {
  double frequency = 1e6;       ///< gate repetition frequency F (Hz)
  double frame_duration = 1e-3; ///< active frame length t_S (s)
  double frame_period = 1e-3;   ///< frame repetition period t_fr (s)

  double gate_period() const { return 1.0 / frequency; }
  void validate() const;
};

/// Weak-coherent state ensemble: mean photon numbers with their occurrence
/// probabilities.  Index 0 is the signal state; any further entries are
/// decoy intensities and must satisfy the decoy ordering rules.
struct SourceEnsemble {
  std::vector<double> mean_photon_numbers;
  std::vector<double> probabilities;

  static SourceEnsemble single(double mu1) { return {{mu1}, {1.0}}; }
  double signal_mu() const { return mean_photon_numbers.front(); }
  double signal_prob() const { return probabilities.front(); }
  double decoy_mu_sum() const;
  void validate() const;
};

/// Phase encodings on the transmitter (four states) and the receiver
/// interferometer (two states).  The phase sets are fixed by the protocol;
/// only the occurrence probabilities and the misalignment offset vary.
struct PhaseEnsemble {
  std::vector<double> alice_phases;  ///< {0, pi/2, pi, 3pi/2}
  std::vector<double> alice_probs;
  std::vector<double> bob_phases;    ///< {0, pi/2}
  std::vector<double> bob_probs;
  double misalignment = 0.0;         ///< additive phase offset delta (rad)

  static PhaseEnsemble bb84();
  /// Interferometer phase argument for detector w and phase pair (i, j).
  double phase_argument(int i, int j, int w) const;
  void validate() const;
};

/// Quantum channel plus receiver optics.
struct LinkParams {
  double attenuation = 0.2;           ///< fiber attenuation (dB/km)
  double length = 0.0;                ///< channel length (km)
  double receiver_transmittance = 1.0;///< receiver optics transmittance T_B

  double channel_transmittance() const;
  /// Reduced total efficiency eta_w * T_c * T_B for one detector.
  double reduced_efficiency(const DetectorParams& det) const;
  /// Per-branch efficiency: reduced efficiency times the interferometric
  /// cos^2 of the phase argument.
  double branch_efficiency(const DetectorParams& det, const PhaseEnsemble& phases,
                           int i, int j) const;
  void validate() const;
};

/// Output of the coupled afterpulse/dead-time fixed point for one detector.
struct DetectionSolution {
  double non_detection_ph = 1.0;    ///< ensemble-averaged photon non-detection
  double intermediate_total = 0.0;  ///< total detection prob before dead-time loss
  double corrected_total = 0.0;     ///< detection prob with dead-time correction
  double dead_time_factor = 1.0;    ///< throughput factor C
  double noise_prob = 0.0;          ///< dark count + residual afterpulse prob
  double afterpulse_core = 1.0;     ///< average afterpulse non-detection prob
  double afterpulse_prob = 0.0;     ///< 1 - afterpulse_core
  double per_gate_afterpulse = 0.0; ///< branch-averaged afterpulse prob per gate
  double averaging_factor = 0.0;    ///< beta
  double decay_ratio = 0.0;         ///< rho = exp(-gate_period/decay_time)
  long long gate_budget = 0;        ///< live gates per frame N
  double avg_gates = 0.0;           ///< (N + 1) / 2
  int iterations_used = 0;
  bool converged = false;
  double residual = 0.0;            ///< |P_T - map(P_T)| at the returned point
  bool sub_gate_dead_time = false;  ///< dead time shorter than one gate period
  bool beyond_validity = false;     ///< some branch has efficiency*mu >= 1
};

struct SolverOptions {
  double tolerance = 1e-10;  ///< relative change stopping criterion
  int max_iterations = 10000;
};

/// Floor a gate count with a guard against products like 2450 coming out as
/// 2449.999... in floating point.
long long gate_count(double gates);

/// Live gates per frame for one detector: floor((t_S - dead_time) * F).
long long gate_budget(const TimingParams& timing, const DetectorParams& det);

/// Ensemble-averaged probability that a gate produces no photodetection.
double non_detection_prob(const SourceEnsemble& source, const PhaseEnsemble& phases,
                          const LinkParams& link, const DetectorParams& det);

/// Branch-averaged decay factor of the per-gate afterpulse probability.
/// Equals 1 when the frame holds a single live gate and tends to 1/avg_gates
/// when the trap decay is much faster than the gate period.
double beta_factor(const TimingParams& timing, const DetectorParams& det);

/// Average afterpulse probability contributed to one live gate by a previous
/// detection, after a dead time has elapsed.
double per_gate_afterpulse(const TimingParams& timing, const DetectorParams& det);

/// Dead-time throughput factor given the uncorrected detection probability.
double dead_time_factor(double intermediate_total, const TimingParams& timing,
                        const DetectorParams& det);

/// Solve the coupled detection/afterpulse/dead-time equations by fixed-point
/// iteration from a precomputed non-detection probability.
DetectionSolution solve_detection_from_pph0(double p_ph0, const DetectorParams& det,
                                            const TimingParams& timing,
                                            const SolverOptions& options = {});

/// Same, computing the non-detection probability from the full ensembles.
DetectionSolution solve_detection(const SourceEnsemble& source, const PhaseEnsemble& phases,
                                  const LinkParams& link, const DetectorParams& det,
                                  const TimingParams& timing,
                                  const SolverOptions& options = {});

}  // namespace qkd
