#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "qkd/detector_model.hpp"
#include "qkd/protocol_rates.hpp"

namespace qkd {

/// Configuration of a gate-by-gate Monte Carlo run of the link.
struct SimConfig {
  std::array<DetectorParams, 2> detectors;
  TimingParams timing;
  LinkParams link;
  SourceEnsemble source;
  PhaseEnsemble phases = PhaseEnsemble::bb84();
  ProtocolKind protocol;  ///< SARG04 sifting is experimental
  long long frames = 10000;
  std::uint64_t seed = 1;
  int threads = 1;  ///< frames are independent; results do not depend on this

  /// Draw a photon number per pulse and tally rates by photon number.
  bool tag_photon_numbers = false;
  int max_tagged_photons = 4;

  /// Keep per-event gate indices for the first few frames (test hook).
  bool record_event_gates = false;

  long long gates_per_frame() const { return gate_count(timing.frame_duration * timing.frequency); }
  long long dead_gates() const { return gate_count(detectors[0].dead_time * timing.frequency); }
  void validate() const;
};

struct SimResult {
  double sifted_rate = 0.0;     ///< frame-averaged sifted detection rate
  double sifted_rate_se = 0.0;
  double qber = 0.0;            ///< QBER pooled over frames (event-weighted)
  double qber_se = 0.0;         ///< cluster-robust over frames
  bool qber_defined = false;
  long long frames = 0;
  long long qber_frames = 0;    ///< frames that contributed sifted events

  std::array<long long, 2> click_events{};  ///< raw recorded events per detector
  std::array<double, 2> click_rate{};       ///< events / (gates * frames)
  std::array<double, 2> click_rate_se{};
  long long sifted_events = 0;
  long long error_events = 0;
  long long double_counts = 0;

  /// Photon-number-tagged rate estimates (only when tag_photon_numbers).
  std::vector<double> tagged_rate;
  std::vector<double> tagged_rate_se;

  /// (frame, gate) of every recorded event in the recorded frames (test hook).
  std::array<std::vector<std::pair<long long, long long>>, 2> event_gates;
};

/// Run the simulation.  Deterministic for a fixed config and seed: per-frame
/// RNG streams are derived from the master seed and the reduction over frames
/// is order-independent, so `threads` never changes the result.
SimResult simulate(const SimConfig& config);

/// Root-mean-square relative deviation between simulated and modeled series.
double relative_deviation(std::span<const double> sim, std::span<const double> model);

/// Order-independent sum used for the frame averages.
double pairwise_sum(std::span<const double> values);

}  // namespace qkd
