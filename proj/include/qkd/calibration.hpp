#pragma once

#include <array>
#include <string>
#include <vector>

#include "qkd/detector_model.hpp"

namespace qkd {

/// One measured click-probability point of a single gated detector.
struct CalibrationRecord {
  double frequency = 0.0;          ///< gate frequency (Hz)
  double dead_time = 0.0;          ///< dead-time setting (s)
  double mean_photon_number = 0.0; ///< 0 for dark runs, mu_c for lit runs
  double click_prob = 0.0;         ///< measured click probability per gate
  double weight = 1.0;
};

/// Click probability vs frequency at several dead-time and source settings.
struct CalibrationDataset {
  std::vector<CalibrationRecord> records;
  double frame_duration = 1.0;  ///< t_S used during calibration (s)
  double frame_period = 1.0;

  /// Columns: F_hz, dead_time_s, mu, p_click[, weight]; header required,
  /// '#' starts a comment.  Throws ParseError with the offending line.
  static CalibrationDataset from_csv(const std::string& path);

  void validate() const;
  /// Non-fatal issues that make the fit poorly identified.
  std::vector<std::string> identifiability_warnings() const;
};

/// Forward model for one record: single detector, no interferometer, so the
/// non-detection probability is exp(-efficiency * mu).
double predict_click_prob(const DetectorParams& params, double frequency, double dead_time,
                          double mu, double frame_duration,
                          const SolverOptions& options = {});

struct FitOptions {
  // box bounds on (efficiency, dark_count_prob, amplitude, decay); all positive
  std::array<double, 4> lower{1e-4, 1e-12, 1e-13, 1e-8};
  std::array<double, 4> upper{1.0, 0.5, 1e-5, 1.0};
  int max_iterations = 500;
  double objective_tolerance = 1e-10;  ///< relative objective decrease to stop
  SolverOptions solver{1e-13, 10000};
};

struct FitResult {
  DetectorParams estimate;
  std::array<double, 4> std_errors{};  ///< efficiency, dark count, amplitude, decay
  std::array<std::array<double, 4>, 4> covariance{};
  double fit_deviation = 0.0;          ///< RMS relative residual of the fit
  double objective_initial = 0.0;
  double objective_final = 0.0;
  int iterations = 0;
  bool converged = false;
  std::vector<std::string> warnings;
  /// Every accepted iterate (efficiency, dark count, amplitude, decay), for
  /// auditing bound feasibility.
  std::vector<std::array<double, 4>> iterates;
};

/// Fit the four detector parameters to the dataset by bounded
/// Levenberg-Marquardt on log-scaled parameters, minimizing the sum of
/// squared relative residuals (click_prob - model) / model.
FitResult fit_detector(const CalibrationDataset& dataset, const DetectorParams& initial_guess,
                       const FitOptions& options = {});

}  // namespace qkd
