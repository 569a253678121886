#include "qkd/protocol_rates.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "qkd/errors.hpp"

namespace qkd {

std::string ProtocolKind::name() const {
  std::string base = family == ProtocolFamily::bb84 ? "bb84" : "sarg04";
  return decoy ? base + "-decoy" : base;
}

ProtocolKind ProtocolKind::parse(const std::string& family_name, bool decoy) {
  ProtocolKind kind;
  kind.decoy = decoy;
  if (family_name == "bb84")
    kind.family = ProtocolFamily::bb84;
  else if (family_name == "sarg04")
    kind.family = ProtocolFamily::sarg04;
  else
    throw std::invalid_argument("unknown protocol family '" + family_name + "'");
  return kind;
}

ClickProbs signal_click_probs(double dead_time_factor, double noise_prob,
                              double reduced_efficiency, double mu1) {
  double signal_surv = 1.0 - noise_prob;
  ClickProbs p;
  p.aligned = dead_time_factor * (1.0 - signal_surv * std::exp(-reduced_efficiency * mu1));
  p.orthogonal = dead_time_factor * noise_prob;
  p.diagonal = dead_time_factor * (1.0 - signal_surv * std::exp(-reduced_efficiency * mu1 / 2.0));
  return p;
}

SingleClickProbs single_event_probs(const ClickProbs& own, const ClickProbs& other) {
  SingleClickProbs s;
  s.aligned = own.aligned * (1.0 - other.orthogonal);
  s.orthogonal = own.orthogonal * (1.0 - other.aligned);
  s.diagonal = own.diagonal * (1.0 - other.diagonal);
  return s;
}

SiftedRates sifted_and_qber(const std::array<SingleClickProbs, 2>& singles,
                            const ProtocolKind& kind) {
  bool diag = kind.deterministic_branch() == 3;
  SiftedRates r;
  double errors = 0.0;
  for (const auto& s : singles) {
    double kept = diag ? s.diagonal : s.aligned;
    r.sifted_rate += kept + s.orthogonal;
    errors += s.orthogonal;
  }
  if (r.sifted_rate <= 0.0) throw std::domain_error("sifted rate is zero; QBER undefined");
  r.qber = errors / r.sifted_rate;
  return r;
}

ProtoYields proto_yields(double dead_time_factor, double noise_prob,
                         double reduced_efficiency, long long n) {
  if (n < 0) throw std::invalid_argument("photon number must be >= 0");
  double signal_surv = 1.0 - noise_prob;
  double nd = static_cast<double>(n);
  ProtoYields z;
  z.aligned = dead_time_factor * (1.0 - signal_surv * std::pow(1.0 - reduced_efficiency, nd));
  z.orthogonal = dead_time_factor * noise_prob;
  z.diagonal =
      dead_time_factor * (1.0 - signal_surv * std::pow(1.0 - reduced_efficiency / 2.0, nd));
  return z;
}

ProtoYields single_proto_yields(const ProtoYields& own, const ClickProbs& other) {
  ProtoYields s;
  s.aligned = own.aligned * (1.0 - other.orthogonal);
  s.orthogonal = own.orthogonal * (1.0 - other.aligned);
  s.diagonal = own.diagonal * (1.0 - other.diagonal);
  return s;
}

namespace {

// mu^n exp(-mu) / n!, built up iteratively to stay finite for large n
double poisson_weight(double mu, long long n) {
  double term = std::exp(-mu);
  for (long long i = 1; i <= n; ++i) term *= mu / static_cast<double>(i);
  return term;
}

}  // namespace

PhotonStats photon_number_stats(const std::array<ProtoYields, 2>& singles, double mu1,
                                const ProtocolKind& kind, long long n) {
  if (n < 0) throw std::invalid_argument("photon number must be >= 0");
  bool diag = kind.deterministic_branch() == 3;
  PhotonStats stats;
  double errors = 0.0;
  for (const auto& s : singles) {
    stats.yield += (diag ? s.diagonal : s.aligned) + s.orthogonal;
    errors += s.orthogonal;
  }
  if (stats.yield <= 0.0)
    throw std::domain_error("n-photon yield is zero; error rate undefined");
  stats.rate = stats.yield * poisson_weight(mu1, n);
  stats.error_rate = errors / stats.yield;
  return stats;
}

double binary_entropy(double u) {
  if (u < 0.0 || u > 1.0) throw std::domain_error("binary entropy argument outside [0,1]");
  if (u == 0.0 || u == 1.0) return 0.0;
  return -u * std::log2(u) - (1.0 - u) * std::log2(1.0 - u);
}

SecretKeyRate secret_key_rate(double signal_prob, long long gate_budget,
                              double frame_period, double single_photon_rate,
                              double single_photon_error, double sifted_rate, double qber,
                              double error_correction_factor) {
  if (error_correction_factor < 1.0)
    throw std::invalid_argument("error correction factor must be >= 1");
  double bracket = single_photon_rate * (1.0 - binary_entropy(single_photon_error)) -
                   error_correction_factor * sifted_rate * binary_entropy(qber);
  SecretKeyRate s;
  s.raw = signal_prob * static_cast<double>(gate_budget) / (2.0 * frame_period) * bracket;
  s.clamped = std::max(s.raw, 0.0);
  return s;
}

RateReport compute_rates(const RateInputs& in) {
  RateReport report;
  report.mu1 = in.source.signal_mu();
  report.error_correction_factor = in.error_correction_factor;

  std::array<double, 2> gamma{};
  for (int w = 0; w < 2; ++w) {
    report.detection[w] =
        solve_detection(in.source, in.phases, in.link, in.detectors[w], in.timing, in.solver);
    gamma[w] = in.link.reduced_efficiency(in.detectors[w]);
    report.clicks[w] = signal_click_probs(report.detection[w].dead_time_factor,
                                          report.detection[w].noise_prob, gamma[w], report.mu1);
    if (report.detection[w].sub_gate_dead_time)
      report.warnings.push_back("detector " + std::to_string(w) +
                                ": dead time is shorter than one gate period");
    if (report.detection[w].beyond_validity)
      report.warnings.push_back("detector " + std::to_string(w) +
                                ": branch efficiency times mean photon number reaches 1;"
                                " model accuracy degrades");
  }
  for (int w = 0; w < 2; ++w)
    report.singles[w] = single_event_probs(report.clicks[w], report.clicks[1 - w]);

  try {
    SiftedRates sr = sifted_and_qber(report.singles, in.kind);
    report.sifted_rate = sr.sifted_rate;
    report.qber = sr.qber;
    report.qber_defined = true;
  } catch (const std::domain_error&) {
    report.sifted_rate = 0.0;
    report.qber = std::numeric_limits<double>::quiet_NaN();
    report.qber_defined = false;
    report.warnings.push_back("no sifted signal: QBER undefined");
  }

  int order = std::max(in.photon_stats_order, 1);
  report.photon.resize(order + 1);
  for (long long n = 0; n <= order; ++n) {
    std::array<ProtoYields, 2> singles;
    for (int w = 0; w < 2; ++w) {
      ProtoYields z = proto_yields(report.detection[w].dead_time_factor,
                                   report.detection[w].noise_prob, gamma[w], n);
      singles[w] = single_proto_yields(z, report.clicks[1 - w]);
    }
    try {
      report.photon[n] = photon_number_stats(singles, report.mu1, in.kind, n);
    } catch (const std::domain_error&) {
      report.photon[n] = PhotonStats{0.0, 0.0, std::numeric_limits<double>::quiet_NaN()};
    }
  }

  long long budget = std::min(gate_budget(in.timing, in.detectors[0]),
                              gate_budget(in.timing, in.detectors[1]));
  if (gate_budget(in.timing, in.detectors[0]) != gate_budget(in.timing, in.detectors[1]))
    report.warnings.push_back("detectors have different gate budgets; using the smaller one");

  double r1 = report.photon[1].rate;
  double e1 = report.photon[1].yield > 0.0 ? report.photon[1].error_rate : 0.0;
  double qber = report.qber_defined ? report.qber : 0.0;
  double f = in.error_correction_model ? in.error_correction_model(qber)
                                       : in.error_correction_factor;
  report.error_correction_factor = f;
  SecretKeyRate s = secret_key_rate(in.source.signal_prob(), budget, in.timing.frame_period,
                                    r1, e1, report.sifted_rate, qber, f);
  report.secret_rate_raw = s.raw;
  report.secret_rate = s.clamped;
  return report;
}

}  // namespace qkd
