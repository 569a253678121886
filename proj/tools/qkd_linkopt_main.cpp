#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "qkd/calibration.hpp"
#include "qkd/errors.hpp"
#include "qkd/mc_sim.hpp"
#include "qkd/optimizer.hpp"
#include "qkd/rng.hpp"
#include "qkd/scenario.hpp"
#include "qkd/units.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;
constexpr int kExitPartial = 4;

using qkd::units::format_sig;

int default_jobs() {
  if (const char* env = std::getenv("QKD_LINKOPT_JOBS")) {
    int n = std::atoi(env);
    if (n > 0) return n;
  }
  unsigned hw = std::thread::hardware_concurrency();
  return hw > 0 ? static_cast<int>(hw) : 1;
}

void write_output(const std::string& out_path, const std::string& content) {
  if (out_path.empty()) {
    std::cout << content;
    return;
  }
  std::ofstream out(out_path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open output file '" + out_path + "'");
  out << content;
}

// Runs one job per row index on a small worker pool; rows land in input order.
void for_each_index(std::size_t count, int jobs, const std::function<void(std::size_t)>& fn) {
  jobs = std::max(1, jobs);
  if (jobs == 1 || count <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> cursor{0};
  auto work = [&]() {
    for (;;) {
      std::size_t i = cursor.fetch_add(1);
      if (i >= count) return;
      fn(i);
    }
  };
  std::vector<std::thread> pool;
  for (int t = 0; t < jobs; ++t) pool.emplace_back(work);
  for (auto& th : pool) th.join();
}

struct RowOutcome {
  std::string row;
  bool failed = false;
  bool numeric_failure = false;
};

int sweep_exit_code(const std::vector<RowOutcome>& rows) {
  std::size_t failures = 0, numeric = 0;
  for (const auto& r : rows) {
    failures += r.failed ? 1 : 0;
    numeric += r.numeric_failure ? 1 : 0;
  }
  if (failures == 0) return kExitOk;
  if (failures == rows.size() && numeric == failures) return kExitNumeric;
  return kExitPartial;
}

std::string join_status(const std::vector<std::string>& warnings) {
  if (warnings.empty()) return "ok";
  std::string s;
  for (const auto& w : warnings) {
    if (!s.empty()) s += "; ";
    s += w;
  }
  return s;
}

int cmd_rates(const qkd::ScenarioConfig& cfg, const std::string& out_path, int jobs) {
  std::ostringstream csv;
  csv << "L_km,mu1,dead_time_s,P_TC_0,P_TC_1,p_AP,R_mu1,E_mu1,r_1,e_1,S_raw,S_clamped,status\n";
  std::vector<RowOutcome> rows(cfg.distances_km.size());
  for_each_index(cfg.distances_km.size(), jobs, [&](std::size_t i) {
    double length = cfg.distances_km[i];
    std::ostringstream row;
    try {
      qkd::RateInputs in = cfg.rate_inputs_at(length);
      qkd::RateReport report = qkd::compute_rates(in);
      double p_ap = std::max(report.detection[0].afterpulse_prob,
                             report.detection[1].afterpulse_prob);
      row << format_sig(length) << ',' << format_sig(report.mu1) << ','
          << format_sig(in.detectors[0].dead_time) << ','
          << format_sig(report.detection[0].corrected_total) << ','
          << format_sig(report.detection[1].corrected_total) << ',' << format_sig(p_ap)
          << ',' << format_sig(report.sifted_rate) << ',' << format_sig(report.qber) << ','
          << format_sig(report.photon[1].rate) << ','
          << format_sig(report.photon[1].error_rate) << ','
          << format_sig(report.secret_rate_raw) << ',' << format_sig(report.secret_rate)
          << ',' << join_status(report.warnings);
    } catch (const std::exception& e) {
      row << format_sig(length) << ",nan,nan,nan,nan,nan,nan,nan,nan,nan,nan,nan,"
          << "error: " << e.what();
      rows[i].failed = true;
      rows[i].numeric_failure = true;
    }
    rows[i].row = row.str();
  });
  for (const auto& r : rows) csv << r.row << '\n';
  write_output(out_path, csv.str());
  return sweep_exit_code(rows);
}

int cmd_optimize(const qkd::ScenarioConfig& cfg, const std::string& out_path, int jobs,
                 double fixed_mu1m) {
  std::ostringstream csv;
  csv << "L_km,mu1,dead_time_s,P_TC_0,P_TC_1,p_AP,R_mu1,E_mu1,r_1,e_1,S_raw,S_clamped,"
         "dead_time_opt_s,mu1_opt,S_opt,evals,status\n";
  std::vector<RowOutcome> rows(cfg.distances_km.size());
  // the problem is rebuilt per distance so that distance-dependent photon
  // number rules (standard BB84/SARG04) are applied at each sweep point
  for_each_index(cfg.distances_km.size(), jobs, [&](std::size_t i) {
    double length = cfg.distances_km[i];
    std::ostringstream row;
    try {
      qkd::OptimizationProblem problem = cfg.optimization_problem();
      problem.base = cfg.rate_inputs_at(length);
      if (fixed_mu1m > 0.0) {
        problem.mode = qkd::OptimizeMode::dead_time_fixed_mu;
        problem.fixed_mu = fixed_mu1m;
      }
      qkd::OptimizationResult res = problem.mode == qkd::OptimizeMode::joint
                                        ? qkd::optimize_joint(problem)
                                        : qkd::optimize_dead_time(problem);
      qkd::RateInputs in = problem.base;
      in.detectors[0].dead_time = res.dead_time_opt;
      in.detectors[1].dead_time = res.dead_time_opt;
      if (!std::isnan(res.mu_opt)) in.source.mean_photon_numbers[0] = res.mu_opt;
      qkd::RateReport report = qkd::compute_rates(in);
      row << format_sig(length) << ',' << format_sig(report.mu1) << ','
          << format_sig(res.dead_time_opt) << ','
          << format_sig(report.detection[0].corrected_total) << ','
          << format_sig(report.detection[1].corrected_total) << ','
          << format_sig(res.afterpulse_prob) << ',' << format_sig(report.sifted_rate) << ','
          << format_sig(report.qber) << ',' << format_sig(report.photon[1].rate) << ','
          << format_sig(report.photon[1].error_rate) << ','
          << format_sig(report.secret_rate_raw) << ',' << format_sig(report.secret_rate)
          << ',' << format_sig(res.dead_time_opt) << ',' << format_sig(res.mu_opt) << ','
          << format_sig(res.secret_rate_opt) << ',' << res.evaluations << ','
          << (res.message.empty() ? "ok" : res.message);
    } catch (const std::exception& e) {
      row << format_sig(length)
          << ",nan,nan,nan,nan,nan,nan,nan,nan,nan,nan,nan,nan,nan,nan,0,error: "
          << e.what();
      rows[i].failed = true;
      rows[i].numeric_failure = true;
    }
    rows[i].row = row.str();
  });
  for (const auto& r : rows) csv << r.row << '\n';
  write_output(out_path, csv.str());
  return sweep_exit_code(rows);
}

int cmd_simulate(const qkd::ScenarioConfig& cfg, const std::string& out_path, int jobs,
                 std::uint64_t seed_override, bool seed_given) {
  std::uint64_t master_seed = seed_given ? seed_override : cfg.mc.seed;
  std::ostringstream csv;
  csv << "L_km,R_sim,R_sim_se,E_sim,E_sim_se,R_model,E_model,status\n";
  std::vector<RowOutcome> rows(cfg.distances_km.size());
  std::vector<double> r_sim(cfg.distances_km.size()), r_mod(cfg.distances_km.size());
  std::vector<double> e_sim(cfg.distances_km.size()), e_mod(cfg.distances_km.size());
  std::vector<bool> ok(cfg.distances_km.size(), false);

  for_each_index(cfg.distances_km.size(), jobs, [&](std::size_t i) {
    double length = cfg.distances_km[i];
    std::ostringstream row;
    try {
      qkd::SimConfig sim_cfg = cfg.sim_config_at(length);
      // one independent stream per sweep point; unaffected by --jobs
      sim_cfg.seed = qkd::derive_stream_seed(master_seed, static_cast<std::uint64_t>(i));
      qkd::SimResult sim = qkd::simulate(sim_cfg);
      qkd::RateReport model = qkd::compute_rates(cfg.rate_inputs_at(length));
      row << format_sig(length) << ',' << format_sig(sim.sifted_rate) << ','
          << format_sig(sim.sifted_rate_se) << ',' << format_sig(sim.qber) << ','
          << format_sig(sim.qber_se) << ',' << format_sig(model.sifted_rate) << ','
          << format_sig(model.qber) << ',' << join_status(model.warnings);
      r_sim[i] = sim.sifted_rate;
      r_mod[i] = model.sifted_rate;
      e_sim[i] = sim.qber;
      e_mod[i] = model.qber;
      ok[i] = sim.qber_defined && model.qber_defined;
    } catch (const std::exception& e) {
      row << format_sig(length) << ",nan,nan,nan,nan,nan,nan,error: " << e.what();
      rows[i].failed = true;
      rows[i].numeric_failure = true;
    }
    rows[i].row = row.str();
  });
  for (const auto& r : rows) csv << r.row << '\n';

  std::vector<double> rs, rm, es, em;
  for (std::size_t i = 0; i < ok.size(); ++i)
    if (ok[i]) {
      rs.push_back(r_sim[i]);
      rm.push_back(r_mod[i]);
      es.push_back(e_sim[i]);
      em.push_back(e_mod[i]);
    }
  std::string sig_r = "nan", sig_e = "nan";
  if (rs.size() >= 2) {
    try {
      sig_r = format_sig(qkd::relative_deviation(rs, rm));
      sig_e = format_sig(qkd::relative_deviation(es, em));
    } catch (const std::exception&) {
    }
  }
  csv << "sigma_e," << sig_r << ",," << sig_e << ",,,,\n";
  write_output(out_path, csv.str());
  return sweep_exit_code(rows);
}

int cmd_calibrate(const qkd::ScenarioConfig& cfg, const std::string& data_override,
                  const std::string& out_path) {
  std::string data_path =
      !data_override.empty() ? data_override : cfg.calibration.data_path;
  if (data_path.empty())
    throw qkd::ParseError("<config>", 0, "no calibration dataset: set [calibration] data or --data");
  qkd::CalibrationDataset dataset = qkd::CalibrationDataset::from_csv(data_path);
  dataset.frame_duration = cfg.calibration.frame_duration;
  dataset.frame_period = cfg.calibration.frame_duration;

  qkd::FitResult fit = qkd::fit_detector(dataset, cfg.calibration.guess);

  const char* names[4] = {"efficiency", "dark_count_prob", "afterpulse_amplitude_s",
                          "afterpulse_decay_s"};
  double values[4] = {fit.estimate.efficiency, fit.estimate.dark_count_prob,
                      fit.estimate.afterpulse_amplitude, fit.estimate.afterpulse_decay};

  std::cout << "fit over " << dataset.records.size() << " records\n";
  for (int i = 0; i < 4; ++i)
    std::cout << "  " << names[i] << " = " << format_sig(values[i]) << " +- "
              << format_sig(fit.std_errors[i]) << '\n';
  std::cout << "  fit_deviation = " << format_sig(fit.fit_deviation) << '\n'
            << "  iterations = " << fit.iterations << '\n'
            << "  converged = " << (fit.converged ? "yes" : "no") << '\n';
  for (const auto& w : fit.warnings) std::cout << "  warning: " << w << '\n';

  std::ostringstream csv;
  csv << "param,estimate,std_error\n";
  for (int i = 0; i < 4; ++i)
    csv << names[i] << ',' << format_sig(values[i]) << ',' << format_sig(fit.std_errors[i])
        << '\n';
  csv << "fit_deviation," << format_sig(fit.fit_deviation) << ",\n";
  csv << "converged," << (fit.converged ? 1 : 0) << ",\n";
  if (!out_path.empty()) write_output(out_path, csv.str());
  return fit.converged ? kExitOk : kExitNumeric;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"qkd-linkopt: model, optimize and Monte-Carlo-validate gated-detector "
               "prepare-and-measure QKD links"};
  app.require_subcommand(1);

  std::string config_path, out_path, data_path;
  int jobs = default_jobs();
  std::uint64_t seed = 0;
  bool seed_given = false;
  double fixed_mu1m = 0.0;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "scenario file")->required();
    sub->add_option("--out", out_path, "output CSV path (default: stdout)");
    sub->add_option("--jobs", jobs, "worker threads for sweeps");
  };
  CLI::App* rates = app.add_subcommand("rates", "model the sifted/secret key rates over distance");
  add_common(rates);
  CLI::App* optimize = app.add_subcommand("optimize", "optimize dead time (and photon number)");
  add_common(optimize);
  optimize->add_option("--fixed-mu1m", fixed_mu1m,
                       "pin the signal photon number and optimize only the dead time");
  CLI::App* simulate = app.add_subcommand("simulate", "Monte Carlo vs model comparison");
  add_common(simulate);
  simulate->add_option("--seed", seed, "override the master RNG seed")
      ->each([&](const std::string&) { seed_given = true; });
  CLI::App* calibrate = app.add_subcommand("calibrate", "fit detector parameters to click data");
  add_common(calibrate);
  calibrate->add_option("--data", data_path, "dataset CSV (overrides [calibration] data)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    qkd::ScenarioConfig cfg = qkd::ScenarioConfig::load(config_path);
    if (rates->parsed()) return cmd_rates(cfg, out_path, jobs);
    if (optimize->parsed()) return cmd_optimize(cfg, out_path, jobs, fixed_mu1m);
    if (simulate->parsed()) return cmd_simulate(cfg, out_path, jobs, seed, seed_given);
    if (calibrate->parsed()) return cmd_calibrate(cfg, data_path, out_path);
  } catch (const qkd::ParseError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const qkd::ConvergenceError& e) {
    std::cerr << "numeric error: " << e.what()
              << " (last residual " << e.last_residual() << ")\n";
    return kExitNumeric;
  } catch (const qkd::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitNumeric;
  }
  return kExitOk;
}
