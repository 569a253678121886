#pragma once

#include <cmath>

#include "qkd/protocol_rates.hpp"

// Shared fixtures: the fitted id201-style detector and the 500 us frame at a
// 1 ms repetition period used across the test suite.
namespace qkd::test {

inline DetectorParams reference_detector(int label = 0) {
  DetectorParams det;
  det.efficiency = 0.0932;
  det.dark_count_prob = 2.028e-5;
  det.afterpulse_amplitude = 15.35e-9;
  det.afterpulse_decay = 71.5e-6;
  det.dead_time = 10e-6;
  det.label = label;
  return det;
}

inline TimingParams timing_at(double frequency) {
  TimingParams timing;
  timing.frequency = frequency;
  timing.frame_duration = 500e-6;
  timing.frame_period = 1e-3;
  return timing;
}

inline LinkParams link_at(double length_km) {
  LinkParams link;
  link.attenuation = 0.2;
  link.length = length_km;
  link.receiver_transmittance = 0.5;
  return link;
}

// Standard BB84 operating point with the signal photon number pinned to the
// channel transmittance.
inline RateInputs bb84_standard_at(double length_km, double frequency = 5e6) {
  RateInputs in;
  in.kind = ProtocolKind{ProtocolFamily::bb84, false};
  in.detectors = {reference_detector(0), reference_detector(1)};
  in.timing = timing_at(frequency);
  in.link = link_at(length_km);
  in.source = SourceEnsemble::single(in.link.channel_transmittance());
  return in;
}

// Three-intensity decoy BB84 operating point.
inline RateInputs bb84_decoy_at(double length_km, double frequency = 5e6) {
  RateInputs in;
  in.kind = ProtocolKind{ProtocolFamily::bb84, true};
  in.detectors = {reference_detector(0), reference_detector(1)};
  in.timing = timing_at(frequency);
  in.link = link_at(length_km);
  in.source.mean_photon_numbers = {0.4, 0.001, 0.0};
  in.source.probabilities = {0.93, 0.05, 0.02};
  return in;
}

inline bool rel_eq(double a, double b, double tol) {
  double scale = std::max({std::abs(a), std::abs(b), 1e-300});
  return std::abs(a - b) <= tol * scale;
}

}  // namespace qkd::test

#define CHECK_REL(a, b, tol) CHECK_MESSAGE(qkd::test::rel_eq((a), (b), (tol)), \
                                           (a), " vs ", (b), " (tol ", (tol), ")")
