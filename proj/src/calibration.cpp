#include "qkd/calibration.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "qkd/errors.hpp"

namespace qkd {

namespace {

std::string trim(const std::string& s) {
  auto a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return {};
  auto b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, ',')) out.push_back(trim(field));
  return out;
}

using Params4 = std::array<double, 4>;

Params4 to_array(const DetectorParams& p) {
  return {p.efficiency, p.dark_count_prob, p.afterpulse_amplitude, p.afterpulse_decay};
}

DetectorParams to_params(const Params4& a) {
  DetectorParams p;
  p.efficiency = a[0];
  p.dark_count_prob = a[1];
  p.afterpulse_amplitude = a[2];
  p.afterpulse_decay = a[3];
  return p;
}

// Solve A x = b for a small dense system by Gaussian elimination with
// partial pivoting.  Returns false when the matrix is singular.
bool solve_linear(std::array<Params4, 4> a, Params4 b, Params4& x) {
  for (int col = 0; col < 4; ++col) {
    int pivot = col;
    for (int row = col + 1; row < 4; ++row)
      if (std::abs(a[row][col]) > std::abs(a[pivot][col])) pivot = row;
    if (std::abs(a[pivot][col]) < 1e-300) return false;
    std::swap(a[col], a[pivot]);
    std::swap(b[col], b[pivot]);
    for (int row = col + 1; row < 4; ++row) {
      double f = a[row][col] / a[col][col];
      for (int k = col; k < 4; ++k) a[row][k] -= f * a[col][k];
      b[row] -= f * b[col];
    }
  }
  for (int row = 3; row >= 0; --row) {
    double acc = b[row];
    for (int k = row + 1; k < 4; ++k) acc -= a[row][k] * x[k];
    x[row] = acc / a[row][row];
  }
  return true;
}

bool invert4(const std::array<Params4, 4>& a, std::array<Params4, 4>& inv) {
  for (int col = 0; col < 4; ++col) {
    Params4 e{};
    e[col] = 1.0;
    Params4 x{};
    if (!solve_linear(a, e, x)) return false;
    for (int row = 0; row < 4; ++row) inv[row][col] = x[row];
  }
  return true;
}

}  // namespace

CalibrationDataset CalibrationDataset::from_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(path, 0, "cannot open dataset");
  CalibrationDataset dataset;
  std::string line;
  int line_no = 0;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++line_no;
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    if (trim(line).empty()) continue;
    auto fields = split_csv(line);
    if (!header_seen) {
      static const std::vector<std::string> expected{"F_hz", "dead_time_s", "mu", "p_click"};
      if (fields.size() < 4 || fields.size() > 5)
        throw ParseError(path, line_no, "header must list F_hz, dead_time_s, mu, p_click[, weight]");
      for (std::size_t i = 0; i < expected.size(); ++i)
        if (fields[i] != expected[i])
          throw ParseError(path, line_no,
                           "column " + std::to_string(i + 1) + " must be '" + expected[i] + "'");
      if (fields.size() == 5 && fields[4] != "weight")
        throw ParseError(path, line_no, "column 5 must be 'weight'");
      header_seen = true;
      continue;
    }
    if (fields.size() < 4 || fields.size() > 5)
      throw ParseError(path, line_no, "expected 4 or 5 comma-separated values");
    CalibrationRecord rec;
    try {
      rec.frequency = std::stod(fields[0]);
      rec.dead_time = std::stod(fields[1]);
      rec.mean_photon_number = std::stod(fields[2]);
      rec.click_prob = std::stod(fields[3]);
      if (fields.size() == 5) rec.weight = std::stod(fields[4]);
    } catch (const std::exception&) {
      throw ParseError(path, line_no, "malformed numeric field");
    }
    dataset.records.push_back(rec);
  }
  if (!header_seen) throw ParseError(path, 0, "missing header row");
  return dataset;
}

void CalibrationDataset::validate() const {
  if (records.empty()) throw std::invalid_argument("calibration dataset is empty");
  for (const auto& rec : records) {
    if (!(rec.click_prob >= 0.0 && rec.click_prob <= 1.0))
      throw std::invalid_argument("click probabilities must be in [0,1]");
    if (rec.frequency <= 0.0) throw std::invalid_argument("frequencies must be positive");
    if (rec.dead_time < 0.0) throw std::invalid_argument("dead times must be >= 0");
    if (rec.mean_photon_number < 0.0)
      throw std::invalid_argument("mean photon numbers must be >= 0");
    if (rec.weight <= 0.0) throw std::invalid_argument("weights must be positive");
  }
  if (frame_duration <= 0.0) throw std::invalid_argument("frame duration must be positive");
}

std::vector<std::string> CalibrationDataset::identifiability_warnings() const {
  std::vector<std::string> warnings;
  std::set<double> dead_times, mus;
  for (const auto& rec : records) {
    dead_times.insert(rec.dead_time);
    mus.insert(rec.mean_photon_number);
  }
  if (dead_times.size() < 2)
    warnings.push_back("fewer than two dead-time settings: afterpulse decay is weakly identified");
  if (mus.size() < 2)
    warnings.push_back("single source setting: efficiency and dark counts are degenerate");
  return warnings;
}

double predict_click_prob(const DetectorParams& params, double frequency, double dead_time,
                          double mu, double frame_duration, const SolverOptions& options) {
  DetectorParams det = params;
  det.dead_time = dead_time;
  TimingParams timing;
  timing.frequency = frequency;
  timing.frame_duration = frame_duration;
  timing.frame_period = frame_duration;
  double p_ph0 = std::exp(-det.efficiency * mu);
  return solve_detection_from_pph0(p_ph0, det, timing, options).corrected_total;
}

FitResult fit_detector(const CalibrationDataset& dataset, const DetectorParams& initial_guess,
                       const FitOptions& options) {
  dataset.validate();
  initial_guess.validate();
  const std::size_t m = dataset.records.size();

  FitResult result;
  result.warnings = dataset.identifiability_warnings();

  Params4 log_lo, log_hi;
  for (int i = 0; i < 4; ++i) {
    if (!(options.lower[i] > 0.0 && options.lower[i] < options.upper[i]))
      throw std::invalid_argument("fit bounds must be positive with lower < upper");
    log_lo[i] = std::log(options.lower[i]);
    log_hi[i] = std::log(options.upper[i]);
  }
  auto clamp_log = [&](Params4 p) {
    for (int i = 0; i < 4; ++i) p[i] = std::clamp(p[i], log_lo[i], log_hi[i]);
    return p;
  };

  Params4 guess = to_array(initial_guess);
  Params4 theta;
  bool projected = false;
  for (int i = 0; i < 4; ++i) {
    double v = std::clamp(guess[i], options.lower[i], options.upper[i]);
    projected |= v != guess[i];
    theta[i] = std::log(v);
  }
  if (projected) result.warnings.push_back("initial guess projected into the fit bounds");

  auto residuals = [&](const Params4& log_p, std::vector<double>& r) {
    DetectorParams det = to_params({std::exp(log_p[0]), std::exp(log_p[1]),
                                    std::exp(log_p[2]), std::exp(log_p[3])});
    double chi2 = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      const auto& rec = dataset.records[i];
      double model = predict_click_prob(det, rec.frequency, rec.dead_time,
                                        rec.mean_photon_number, dataset.frame_duration,
                                        options.solver);
      if (!(model > 0.0) || !std::isfinite(model))
        throw NumericError("forward model returned a non-positive click probability");
      r[i] = std::sqrt(rec.weight) * (rec.click_prob - model) / model;
      chi2 += r[i] * r[i];
    }
    return chi2;
  };

  std::vector<double> r(m), r_trial(m), r_pert(m);
  double chi2 = residuals(theta, r);
  result.objective_initial = chi2;
  result.iterates.push_back({std::exp(theta[0]), std::exp(theta[1]), std::exp(theta[2]),
                             std::exp(theta[3])});

  std::vector<Params4> jac(m);
  double lambda = 1e-3;
  bool stagnated = false;
  constexpr double kStep = 1e-6;

  for (int iter = 0; iter < options.max_iterations && !stagnated; ++iter) {
    result.iterations = iter + 1;
    for (int p = 0; p < 4; ++p) {
      Params4 pert = theta;
      pert[p] = std::min(pert[p] + kStep, log_hi[p]);
      double h = pert[p] - theta[p];
      if (h == 0.0) {
        pert[p] = theta[p] - kStep;
        h = -kStep;
      }
      residuals(pert, r_pert);
      for (std::size_t i = 0; i < m; ++i) jac[i][p] = (r_pert[i] - r[i]) / h;
    }

    std::array<Params4, 4> jtj{};
    Params4 jtr{};
    for (std::size_t i = 0; i < m; ++i)
      for (int a = 0; a < 4; ++a) {
        jtr[a] += jac[i][a] * r[i];
        for (int b = 0; b < 4; ++b) jtj[a][b] += jac[i][a] * jac[i][b];
      }

    bool accepted = false;
    while (!accepted) {
      std::array<Params4, 4> damped = jtj;
      for (int a = 0; a < 4; ++a) damped[a][a] += lambda * std::max(jtj[a][a], 1e-12);
      Params4 delta{};
      Params4 neg_g;
      for (int a = 0; a < 4; ++a) neg_g[a] = -jtr[a];
      if (!solve_linear(damped, neg_g, delta)) {
        lambda *= 10.0;
        if (lambda > 1e14) stagnated = true;
        if (stagnated) break;
        continue;
      }
      Params4 trial = clamp_log({theta[0] + delta[0], theta[1] + delta[1],
                                 theta[2] + delta[2], theta[3] + delta[3]});
      double chi2_trial;
      try {
        chi2_trial = residuals(trial, r_trial);
      } catch (const std::exception&) {
        // a trial at an extreme corner can break the forward model; reject it
        chi2_trial = std::numeric_limits<double>::infinity();
      }
      if (chi2_trial < chi2) {
        double drop = chi2 - chi2_trial;
        theta = trial;
        chi2 = chi2_trial;
        r.swap(r_trial);
        lambda = std::max(lambda * 0.3, 1e-12);
        accepted = true;
        result.iterates.push_back({std::exp(theta[0]), std::exp(theta[1]),
                                   std::exp(theta[2]), std::exp(theta[3])});
        if (drop <= options.objective_tolerance * std::max(chi2, 1e-300) || chi2 < 1e-28) {
          result.converged = true;
          stagnated = true;
        }
      } else {
        lambda *= 10.0;
        if (lambda > 1e14) {
          // cannot improve in any direction: treat as a converged local optimum
          result.converged = true;
          stagnated = true;
          break;
        }
      }
    }
  }
  if (!stagnated)
    result.warnings.push_back("iteration budget exhausted before the objective settled");

  result.estimate = to_params({std::exp(theta[0]), std::exp(theta[1]), std::exp(theta[2]),
                               std::exp(theta[3])});
  result.objective_final = chi2;

  // unweighted RMS relative deviation of the returned fit
  double dev = 0.0;
  for (const auto& rec : dataset.records) {
    double model = predict_click_prob(result.estimate, rec.frequency, rec.dead_time,
                                      rec.mean_photon_number, dataset.frame_duration,
                                      options.solver);
    double rel = (rec.click_prob - model) / model;
    dev += rel * rel;
  }
  result.fit_deviation = m > 1 ? std::sqrt(dev / (static_cast<double>(m) - 1.0)) : 0.0;

  if (m > 4) {
    for (int p = 0; p < 4; ++p) {
      Params4 pert = theta;
      pert[p] = std::min(pert[p] + kStep, log_hi[p]);
      double h = pert[p] - theta[p];
      if (h == 0.0) {
        pert[p] = theta[p] - kStep;
        h = -kStep;
      }
      residuals(pert, r_pert);
      for (std::size_t i = 0; i < m; ++i) jac[i][p] = (r_pert[i] - r[i]) / h;
    }
    std::array<Params4, 4> jtj{};
    for (std::size_t i = 0; i < m; ++i)
      for (int a = 0; a < 4; ++a)
        for (int b = 0; b < 4; ++b) jtj[a][b] += jac[i][a] * jac[i][b];
    std::array<Params4, 4> inv{};
    if (invert4(jtj, inv)) {
      double s2 = chi2 / (static_cast<double>(m) - 4.0);
      Params4 p = {result.estimate.efficiency, result.estimate.dark_count_prob,
                   result.estimate.afterpulse_amplitude, result.estimate.afterpulse_decay};
      for (int a = 0; a < 4; ++a) {
        for (int b = 0; b < 4; ++b) result.covariance[a][b] = p[a] * p[b] * inv[a][b] * s2;
        result.std_errors[a] = p[a] * std::sqrt(std::max(inv[a][a] * s2, 0.0));
      }
    } else {
      result.warnings.push_back("normal matrix is singular: no covariance estimate");
      result.std_errors.fill(std::numeric_limits<double>::quiet_NaN());
    }
  }
  return result;
}

}  // namespace qkd
