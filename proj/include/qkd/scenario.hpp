#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "qkd/calibration.hpp"
#include "qkd/mc_sim.hpp"
#include "qkd/optimizer.hpp"
#include "qkd/protocol_rates.hpp"

namespace qkd {

/// How the signal mean photon number is chosen at each distance.
enum class Mu1Rule {
  fixed,          ///< take it from the source section
  bb84_standard,  ///< mu1 = channel transmittance
  sarg04_2sqrt,   ///< mu1 = min(1, 2 * sqrt(T_c))
  sarg04_sqrt2,   ///< mu1 = min(1, sqrt(2) * sqrt(T_c)); legacy preset
};

struct OptimizerSettings {
  double dead_time_lo = 0.0;  ///< 0 = derive from timing (one gate period)
  double dead_time_hi = 0.0;  ///< 0 = derive from timing (frame minus one gate)
  double mu_lo = 0.05;
  double mu_hi = 1.0;
  std::string mode = "auto";  ///< auto | dead-time | joint | fixed-mu
  double fixed_mu = 0.0;
};

struct McSettings {
  long long frames = 10000;
  std::uint64_t seed = 1;
  bool tag_photon_numbers = false;
};

struct CalibrationSettings {
  std::string data_path;
  DetectorParams guess{0.05, 1e-5, 5e-9, 30e-6, 0.0, 0};
  double frame_duration = 1.0;
};

/// Parsed scenario file: everything needed to run any of the CLI commands.
struct ScenarioConfig {
  ProtocolKind protocol;
  double error_correction_factor = 1.1;
  Mu1Rule mu1_rule = Mu1Rule::bb84_standard;
  std::array<DetectorParams, 2> detectors;
  TimingParams timing;
  LinkParams link;
  std::vector<double> distances_km;
  SourceEnsemble source = SourceEnsemble::single(0.1);
  bool source_given = false;
  PhaseEnsemble phases = PhaseEnsemble::bb84();
  OptimizerSettings optimizer;
  McSettings mc;
  CalibrationSettings calibration;

  /// Parse and validate; throws ParseError with file/line on any problem.
  static ScenarioConfig load(const std::string& path);

  /// Signal mean photon number at one distance under the configured rule.
  double mu1_at(double length_km) const;

  /// Fully resolved operating point at one distance.
  RateInputs rate_inputs_at(double length_km) const;

  SimConfig sim_config_at(double length_km) const;

  OptimizationProblem optimization_problem() const;
};

}  // namespace qkd
