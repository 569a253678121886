#pragma once

#include <span>
#include <string>
#include <vector>

#include "qkd/protocol_rates.hpp"

namespace qkd {

enum class OptimizeMode {
  dead_time_only,     ///< maximize S over the dead time, photon number fixed
  joint,              ///< maximize S over dead time and signal photon number
  dead_time_fixed_mu  ///< dead-time-only at a pinned minimal photon number
};

struct OptimizationProblem {
  RateInputs base;  ///< operating point; link.length is the swept distance
  OptimizeMode mode = OptimizeMode::dead_time_only;
  double dead_time_lo = 0.0;
  double dead_time_hi = 0.0;
  double mu_lo = 0.0;          ///< joint mode bracket
  double mu_hi = 0.0;
  double fixed_mu = 0.0;       ///< dead_time_fixed_mu mode

  void validate() const;
};

struct OptimizationResult {
  double length_km = 0.0;
  double dead_time_opt = 0.0;
  double mu_opt = 0.0;          ///< NaN unless the photon number was optimized
  double secret_rate_opt = 0.0; ///< raw (unclamped) maximum
  double afterpulse_prob = 0.0; ///< residual afterpulse probability at the optimum
  long long evaluations = 0;
  bool secure = false;          ///< secret_rate_opt > 0
  bool boundary = false;        ///< optimum sits on a search bound
  bool failed = false;
  std::string message;          ///< "no secure key at this distance", error text, ...
};

/// Maximize the secret key rate over the dead time at the problem's distance.
OptimizationResult optimize_dead_time(const OptimizationProblem& problem);

/// Jointly maximize over dead time and signal mean photon number.
OptimizationResult optimize_joint(const OptimizationProblem& problem);

/// Run the problem's mode at each distance.  Per-distance failures are
/// captured in the corresponding result, never aborting the sweep.
std::vector<OptimizationResult> scan_distance(const OptimizationProblem& problem,
                                              std::span<const double> distances_km,
                                              int jobs = 1);

}  // namespace qkd
