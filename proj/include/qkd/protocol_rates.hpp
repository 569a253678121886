#pragma once

#include <array>
#include <functional>
#include <string>
#include <vector>

#include "qkd/detector_model.hpp"

namespace qkd {

enum class ProtocolFamily { bb84, sarg04 };

/// Protocol selector.  The deterministic-outcome branch index drives sifting:
/// the aligned branch for BB84-style protocols, the diagonal branch for
/// SARG04-style ones.
struct ProtocolKind {
  ProtocolFamily family = ProtocolFamily::bb84;
  bool decoy = false;

  int deterministic_branch() const { return family == ProtocolFamily::bb84 ? 1 : 3; }
  std::string name() const;
  static ProtocolKind parse(const std::string& family_name, bool decoy);
};

/// Per-gate click probabilities of one detector by interferometer outcome
/// class.  `aligned` is the branch where the full signal lands on this
/// detector, `orthogonal` the one where only noise can fire, and `diagonal`
/// the two half-intensity classes (they share one value).
struct ClickProbs {
  double aligned = 0.0;
  double orthogonal = 0.0;
  double diagonal = 0.0;
};

/// Click probabilities after removing coincidences with the other detector.
struct SingleClickProbs {
  double aligned = 0.0;
  double orthogonal = 0.0;
  double diagonal = 0.0;
};

/// Yields conditional on the pulse carrying exactly n photons; same branch
/// layout as ClickProbs.  Used both before and after coincidence removal.
struct ProtoYields {
  double aligned = 0.0;
  double orthogonal = 0.0;
  double diagonal = 0.0;
};

struct SiftedRates {
  double sifted_rate = 0.0;  ///< per-class sifted detection rate
  double qber = 0.0;
};

struct PhotonStats {
  double yield = 0.0;       ///< detection probability given an n-photon pulse
  double rate = 0.0;        ///< Poisson-weighted contribution to the sifted rate
  double error_rate = 0.0;  ///< error fraction within the n-photon yield
};

struct SecretKeyRate {
  double raw = 0.0;      ///< may be negative when error correction dominates
  double clamped = 0.0;  ///< max(raw, 0)
};

/// Click probabilities of one detector given its converged dead-time factor
/// and noise probability.
ClickProbs signal_click_probs(double dead_time_factor, double noise_prob,
                              double reduced_efficiency, double mu1);

/// Remove double counts against the opposite detector.
SingleClickProbs single_event_probs(const ClickProbs& own, const ClickProbs& other);

/// Sifted rate and QBER from both detectors' single-event probabilities.
/// Throws std::domain_error when the sifted rate vanishes (QBER undefined).
SiftedRates sifted_and_qber(const std::array<SingleClickProbs, 2>& singles,
                            const ProtocolKind& kind);

/// Photon-number-resolved yields of one detector.
ProtoYields proto_yields(double dead_time_factor, double noise_prob,
                         double reduced_efficiency, long long n);

/// Remove double counts from proto-yields using the opposite detector's
/// (Poisson-averaged) click probabilities.
ProtoYields single_proto_yields(const ProtoYields& own, const ClickProbs& other);

/// n-photon yield, its Poisson-weighted rate, and its error fraction.
/// Throws std::domain_error when the yield vanishes (error rate undefined).
PhotonStats photon_number_stats(const std::array<ProtoYields, 2>& singles, double mu1,
                                const ProtocolKind& kind, long long n);

/// Binary Shannon entropy with H(0) = H(1) = 0 by continuity.
double binary_entropy(double u);

/// Secret key rate in bits per second.
SecretKeyRate secret_key_rate(double signal_prob, long long gate_budget,
                              double frame_period, double single_photon_rate,
                              double single_photon_error, double sifted_rate, double qber,
                              double error_correction_factor);

/// One fully specified operating point of the link.
struct RateInputs {
  ProtocolKind kind;
  std::array<DetectorParams, 2> detectors;
  TimingParams timing;
  LinkParams link;
  SourceEnsemble source;
  PhaseEnsemble phases = PhaseEnsemble::bb84();
  double error_correction_factor = 1.1;
  /// Optional QBER-dependent error-correction efficiency; overrides the
  /// constant factor when set.
  std::function<double(double)> error_correction_model;
  SolverOptions solver;
  int photon_stats_order = 8;  ///< report n-photon stats for n = 0..order
};

/// Everything the protocol layer derives from one operating point.
struct RateReport {
  std::array<DetectionSolution, 2> detection;
  std::array<ClickProbs, 2> clicks;
  std::array<SingleClickProbs, 2> singles;
  double mu1 = 0.0;
  double sifted_rate = 0.0;
  double qber = 0.0;
  bool qber_defined = false;
  std::vector<PhotonStats> photon;  ///< index = photon number
  double secret_rate_raw = 0.0;
  double secret_rate = 0.0;
  double error_correction_factor = 1.1;
  std::vector<std::string> warnings;
};

RateReport compute_rates(const RateInputs& in);

}  // namespace qkd
