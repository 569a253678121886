#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <vector>

#include "qkd/calibration.hpp"
#include "qkd/errors.hpp"
#include "qkd/rng.hpp"
#include "test_fixtures.hpp"

using namespace qkd;
using test::reference_detector;

namespace {

// Frequency sweep over four dead times with dark and lit runs, as used for
// detector characterization; t_S = t_fr = 1 s.  The sweep dwells at high gate
// rates: the dead-time contrast of the residual afterpulse, which carries the
// decay-time information, is only resolvable there.
CalibrationDataset synthetic_dataset(const DetectorParams& truth, double noise,
                                     std::uint64_t seed) {
  CalibrationDataset dataset;
  dataset.frame_duration = 1.0;
  dataset.frame_period = 1.0;
  std::vector<double> freqs;
  for (int i = 0; i < 8; ++i) freqs.push_back(1e3 * std::pow(1e6 / 1e3, i / 7.0));
  for (int i = 0; i < 24; ++i) freqs.push_back(4e6 + (8e6 - 4e6) * i / 23.0);
  Xoshiro256pp rng(seed);
  for (double f : freqs)
    for (double dt : {2e-6, 5e-6, 10e-6, 20e-6})
      for (double mu : {0.0, 1.16e-2}) {
        CalibrationRecord rec;
        rec.frequency = f;
        rec.dead_time = dt;
        rec.mean_photon_number = mu;
        rec.click_prob = predict_click_prob(truth, f, dt, mu, 1.0);
        if (noise > 0.0) {
          // multiplicative Gaussian noise via Box-Muller
          double u1 = rng.uniform01(), u2 = rng.uniform01();
          double g = std::sqrt(-2.0 * std::log(u1 + 1e-300)) * std::cos(6.283185307179586 * u2);
          rec.click_prob *= 1.0 + noise * g;
        }
        dataset.records.push_back(rec);
      }
  return dataset;
}

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / name;
}

}  // namespace

TEST_CASE("dataset CSV ingestion") {
  auto path = temp_file("qkd_calib_ok.csv");
  {
    std::ofstream out(path);
    out << "# comment line\n"
        << "F_hz, dead_time_s, mu, p_click\n"
        << "1e6, 10e-6, 0.0, 2.1e-5\n"
        << "1e6, 10e-6, 1.16e-2, 1.1e-3  # inline comment\n";
  }
  CalibrationDataset ds = CalibrationDataset::from_csv(path.string());
  REQUIRE(ds.records.size() == 2);
  CHECK(ds.records[0].frequency == 1e6);
  CHECK(ds.records[1].mean_photon_number == 1.16e-2);
  CHECK(ds.records[1].weight == 1.0);

  SUBCASE("malformed numeric field reports its line") {
    auto bad = temp_file("qkd_calib_bad.csv");
    {
      std::ofstream out(bad);
      out << "F_hz, dead_time_s, mu, p_click\n"
          << "1e6, 10e-6, 0.0, 2.1e-5\n"
          << "1e6, oops, 0.0, 2.1e-5\n";
    }
    try {
      CalibrationDataset::from_csv(bad.string());
      FAIL("expected ParseError");
    } catch (const ParseError& e) {
      CHECK(e.line() == 3);
    }
  }
  SUBCASE("missing header is rejected") {
    auto bad = temp_file("qkd_calib_nohdr.csv");
    {
      std::ofstream out(bad);
      out << "1e6, 10e-6, 0.0, 2.1e-5\n";
    }
    CHECK_THROWS_AS(CalibrationDataset::from_csv(bad.string()), ParseError);
  }
  SUBCASE("identifiability warnings") {
    CalibrationDataset narrow;
    narrow.records.push_back({1e6, 10e-6, 0.0, 2e-5, 1.0});
    CHECK(narrow.identifiability_warnings().size() == 2);
  }
}

TEST_CASE("forward click-probability model") {
  DetectorParams truth = reference_detector();
  SUBCASE("dark and quiet detector never clicks") {
    DetectorParams det = truth;
    det.dark_count_prob = 0.0;
    det.afterpulse_amplitude = 0.0;
    CHECK(predict_click_prob(det, 1e6, 10e-6, 0.0, 1.0) == 0.0);
  }
  SUBCASE("low-frequency limit matches the closed form") {
    // frozen from tests/oracle/keyrate_oracle.py (V9); at 1 kHz the residual
    // afterpulse shifts the click probability by ~2e-7, so the closed form
    // with the afterpulse factor dropped (dead-time factor kept) holds to
    // 1e-6 absolutely
    double p = predict_click_prob(truth, 1e3, 20e-6, 1.16e-2, 1.0);
    CHECK_REL(p, 0.0011021617531653688, 1e-9);
    double p_t = 1.0 - (1.0 - truth.dark_count_prob) * std::exp(-truth.efficiency * 1.16e-2);
    double closed = p_t / (p_t * (1e3 * 20e-6 - 1.0) + 1.0);
    CHECK(std::abs(p - closed) <= 1e-6);
  }
  SUBCASE("high-frequency point shows the afterpulse boost") {
    // frozen from tests/oracle/keyrate_oracle.py (V10)
    CHECK_REL(predict_click_prob(truth, 8e6, 2e-6, 1.16e-2, 1.0), 0.0012240083129502633,
              1e-8);
  }
  SUBCASE("monotone in the photon number and in the dark counts") {
    double low = predict_click_prob(truth, 1e6, 10e-6, 1e-3, 1.0);
    double high = predict_click_prob(truth, 1e6, 10e-6, 2e-3, 1.0);
    CHECK(high > low);
    DetectorParams noisier = truth;
    noisier.dark_count_prob *= 2.0;
    CHECK(predict_click_prob(noisier, 1e6, 10e-6, 1e-3, 1.0) > low);
  }
}

TEST_CASE("detector fit") {
  DetectorParams truth = reference_detector();
  DetectorParams guess;
  guess.efficiency = 0.05;
  guess.dark_count_prob = 1e-5;
  guess.afterpulse_amplitude = 5e-9;
  guess.afterpulse_decay = 30e-6;

  SUBCASE("noise-free data is recovered to high precision") {
    CalibrationDataset data = synthetic_dataset(truth, 0.0, 0);
    FitResult fit = fit_detector(data, guess);
    CHECK(fit.converged);
    CHECK_REL(fit.estimate.efficiency, truth.efficiency, 1e-6);
    CHECK_REL(fit.estimate.dark_count_prob, truth.dark_count_prob, 1e-6);
    CHECK_REL(fit.estimate.afterpulse_amplitude, truth.afterpulse_amplitude, 1e-6);
    CHECK_REL(fit.estimate.afterpulse_decay, truth.afterpulse_decay, 1e-6);
    CHECK(fit.objective_final <= fit.objective_initial);
    CHECK(fit.fit_deviation < 1e-7);
  }

  SUBCASE("noisy data recovers the parameters to a few percent") {
    CalibrationDataset data = synthetic_dataset(truth, 0.01, 12345);
    FitResult fit = fit_detector(data, guess);
    CHECK(fit.converged);
    CHECK_REL(fit.estimate.efficiency, truth.efficiency, 0.05);
    CHECK_REL(fit.estimate.afterpulse_amplitude, truth.afterpulse_amplitude, 0.10);
    CHECK_REL(fit.estimate.afterpulse_decay, truth.afterpulse_decay, 0.25);
    CHECK_REL(fit.estimate.dark_count_prob, truth.dark_count_prob, 0.10);
    CHECK(fit.fit_deviation > 0.0);
    CHECK(fit.std_errors[0] > 0.0);
  }

  SUBCASE("every iterate stays within bounds") {
    CalibrationDataset data = synthetic_dataset(truth, 0.01, 7);
    FitOptions options;
    FitResult fit = fit_detector(data, guess, options);
    REQUIRE(!fit.iterates.empty());
    for (const auto& it : fit.iterates)
      for (int i = 0; i < 4; ++i) {
        CHECK(it[i] >= options.lower[i] * (1.0 - 1e-12));
        CHECK(it[i] <= options.upper[i] * (1.0 + 1e-12));
      }
  }

  SUBCASE("guess outside the fit bounds is projected with a warning") {
    CalibrationDataset data = synthetic_dataset(truth, 0.0, 0);
    DetectorParams wild = guess;
    wild.efficiency = 1e-5;  // valid detector value, below the fit's lower bound
    FitResult fit = fit_detector(data, wild);
    bool noted = false;
    for (const auto& w : fit.warnings) noted |= w.find("projected") != std::string::npos;
    CHECK(noted);
    CHECK(fit.iterates.front()[0] >= FitOptions{}.lower[0] * (1.0 - 1e-12));
  }
}
