#include "qkd/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "qkd/errors.hpp"
#include "qkd/units.hpp"

namespace qkd {

namespace {

struct Entry {
  std::string value;
  int line = 0;
  mutable bool used = false;
};

// section name -> key -> entry
using Sections = std::map<std::string, std::map<std::string, Entry>>;

std::string trim(const std::string& s) {
  auto a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return {};
  auto b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

Sections read_sections(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(path, 0, "cannot open scenario file");
  Sections sections;
  std::string line, section;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ParseError(path, line_no, "unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      if (section.empty()) throw ParseError(path, line_no, "empty section name");
      sections[section];
      continue;
    }
    auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError(path, line_no, "expected 'key = value'");
    if (section.empty()) throw ParseError(path, line_no, "key outside any section");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ParseError(path, line_no, "empty key");
    if (value.empty()) throw ParseError(path, line_no, "empty value for '" + key + "'");
    auto [it, inserted] = sections[section].insert({key, Entry{value, line_no}});
    if (!inserted) throw ParseError(path, line_no, "duplicate key '" + key + "'");
  }
  return sections;
}

class Reader {
 public:
  Reader(const std::string& path, const Sections& sections)
      : path_(path), sections_(sections) {}

  bool has(const std::string& section, const std::string& key) const {
    auto s = sections_.find(section);
    return s != sections_.end() && s->second.count(key) > 0;
  }

  const Entry* find(const std::string& section, const std::string& key) const {
    auto s = sections_.find(section);
    if (s == sections_.end()) return nullptr;
    auto k = s->second.find(key);
    if (k == s->second.end()) return nullptr;
    k->second.used = true;
    return &k->second;
  }

  const Entry& require(const std::string& section, const std::string& key) const {
    const Entry* e = find(section, key);
    if (!e)
      throw ParseError(path_, 0, "missing required key '" + key + "' in [" + section + "]");
    return *e;
  }

  double number(const std::string& section, const std::string& key,
                const std::function<double(std::string_view)>& parse, double fallback,
                bool required = false) const {
    const Entry* e = required ? &require(section, key) : find(section, key);
    if (!e) return fallback;
    try {
      return parse(e->value);
    } catch (const std::exception& ex) {
      throw ParseError(path_, e->line, std::string("in '") + key + "': " + ex.what());
    }
  }

  std::string text(const std::string& section, const std::string& key,
                   const std::string& fallback, bool required = false) const {
    const Entry* e = required ? &require(section, key) : find(section, key);
    return e ? e->value : fallback;
  }

  std::vector<double> list(const std::string& section, const std::string& key) const {
    const Entry* e = find(section, key);
    if (!e) return {};
    std::vector<double> out;
    std::stringstream ss(e->value);
    std::string tok;
    while (ss >> tok) {
      try {
        out.push_back(units::parse_plain(tok));
      } catch (const std::exception& ex) {
        throw ParseError(path_, e->line, std::string("in '") + key + "': " + ex.what());
      }
    }
    return out;
  }

  void fail(const std::string& section, const std::string& key,
            const std::string& message) const {
    const Entry* e = find(section, key);
    throw ParseError(path_, e ? e->line : 0, message);
  }

  void reject_unknown() const {
    for (const auto& [section, keys] : sections_)
      for (const auto& [key, entry] : keys)
        if (!entry.used)
          throw ParseError(path_, entry.line,
                           "unknown key '" + key + "' in [" + section + "]");
  }

  const std::string& path() const { return path_; }

 private:
  const std::string& path_;
  const Sections& sections_;
};

// "0:120:10", "0 10 20", or a single value; an optional distance suffix
// applies to every number.
std::vector<double> parse_distances(const Entry& entry, const std::string& path) {
  std::string value = entry.value;
  double scale = 1.0;
  if (value.size() >= 2 && value.substr(value.size() - 2) == "km") {
    value = trim(value.substr(0, value.size() - 2));
  } else if (!value.empty() && value.back() == 'm') {
    scale = 1e-3;
    value = trim(value.substr(0, value.size() - 1));
  }
  std::vector<double> out;
  try {
    if (value.find(':') != std::string::npos) {
      std::stringstream ss(value);
      std::string a, b, c;
      std::getline(ss, a, ':');
      std::getline(ss, b, ':');
      std::getline(ss, c);
      double start = units::parse_plain(a), stop = units::parse_plain(b);
      double step = units::parse_plain(c);
      if (step <= 0.0) throw std::invalid_argument("distance step must be positive");
      if (stop < start) throw std::invalid_argument("distance stop is before start");
      for (double x = start; x <= stop + 1e-9 * std::max(1.0, std::abs(stop)); x += step)
        out.push_back(x * scale);
    } else {
      std::stringstream ss(value);
      std::string tok;
      while (ss >> tok) out.push_back(units::parse_plain(tok) * scale);
    }
  } catch (const std::exception& ex) {
    throw ParseError(path, entry.line, std::string("in 'distances': ") + ex.what());
  }
  if (!std::is_sorted(out.begin(), out.end()))
    throw ParseError(path, entry.line, "distances must be sorted ascending");
  return out;
}

DetectorParams read_detector(const Reader& reader, const std::string& section,
                             const DetectorParams& base, bool required) {
  DetectorParams det = base;
  auto plain = [](std::string_view v) { return units::parse_plain(v); };
  auto time = [](std::string_view v) { return units::parse_time(v); };
  det.efficiency = reader.number(section, "efficiency", plain, det.efficiency, required);
  det.dark_count_prob =
      reader.number(section, "dark_count_prob", plain, det.dark_count_prob, required);
  det.afterpulse_amplitude =
      reader.number(section, "afterpulse_amplitude", time, det.afterpulse_amplitude, required);
  det.afterpulse_decay =
      reader.number(section, "afterpulse_decay", time, det.afterpulse_decay, required);
  det.dead_time = reader.number(section, "dead_time", time, det.dead_time, required);
  return det;
}

}  // namespace

ScenarioConfig ScenarioConfig::load(const std::string& path) {
  Sections sections = read_sections(path);
  Reader reader(path, sections);
  ScenarioConfig cfg;

  auto plain = [](std::string_view v) { return units::parse_plain(v); };
  auto time = [](std::string_view v) { return units::parse_time(v); };

  // [protocol]
  std::string family = reader.text("protocol", "family", "", true);
  std::string decoy_text = reader.text("protocol", "decoy", "false");
  if (decoy_text != "true" && decoy_text != "false")
    reader.fail("protocol", "decoy", "decoy must be 'true' or 'false'");
  try {
    cfg.protocol = ProtocolKind::parse(family, decoy_text == "true");
  } catch (const std::exception& ex) {
    reader.fail("protocol", "family", ex.what());
  }
  cfg.error_correction_factor =
      reader.number("protocol", "error_correction_factor", plain, 1.1);
  std::string rule = reader.text("protocol", "mu1_rule", "auto");
  if (rule == "auto") {
    if (cfg.protocol.decoy)
      cfg.mu1_rule = Mu1Rule::fixed;
    else if (cfg.protocol.family == ProtocolFamily::bb84)
      cfg.mu1_rule = Mu1Rule::bb84_standard;
    else
      cfg.mu1_rule = Mu1Rule::sarg04_2sqrt;
  } else if (rule == "fixed") {
    cfg.mu1_rule = Mu1Rule::fixed;
  } else if (rule == "bb84-tc") {
    cfg.mu1_rule = Mu1Rule::bb84_standard;
  } else if (rule == "sarg04-2sqrt") {
    cfg.mu1_rule = Mu1Rule::sarg04_2sqrt;
  } else if (rule == "sarg04-sqrt2") {
    cfg.mu1_rule = Mu1Rule::sarg04_sqrt2;
  } else {
    reader.fail("protocol", "mu1_rule",
                "mu1_rule must be auto, fixed, bb84-tc, sarg04-2sqrt or sarg04-sqrt2");
  }

  // [detector], with optional per-detector overrides
  DetectorParams shared = read_detector(reader, "detector", DetectorParams{}, true);
  for (int w = 0; w < 2; ++w) {
    std::string section = "detector." + std::to_string(w);
    cfg.detectors[w] =
        sections.count(section) ? read_detector(reader, section, shared, false) : shared;
    cfg.detectors[w].label = w;
    try {
      cfg.detectors[w].validate();
    } catch (const std::exception& ex) {
      throw ParseError(path, 0, std::string("[detector] ") + ex.what());
    }
  }

  // [timing]
  cfg.timing.frequency =
      reader.number("timing", "frequency",
                    [](std::string_view v) { return units::parse_frequency(v); }, 0.0, true);
  cfg.timing.frame_duration = reader.number("timing", "frame_duration", time, 0.0, true);
  cfg.timing.frame_period = reader.number("timing", "frame_period", time, 0.0, true);
  try {
    cfg.timing.validate();
  } catch (const std::exception& ex) {
    throw ParseError(path, 0, std::string("[timing] ") + ex.what());
  }

  // [link]
  cfg.link.attenuation = reader.number(
      "link", "attenuation", [](std::string_view v) { return units::parse_attenuation(v); },
      0.2);
  cfg.link.receiver_transmittance =
      reader.number("link", "receiver_transmittance", plain, 1.0);
  if (const Entry* e = reader.find("link", "distances"))
    cfg.distances_km = parse_distances(*e, path);
  else if (reader.has("link", "distance"))
    cfg.distances_km = {reader.number("link", "distance",
                                      [](std::string_view v) { return units::parse_distance_km(v); },
                                      0.0, true)};
  try {
    cfg.link.validate();
  } catch (const std::exception& ex) {
    throw ParseError(path, 0, std::string("[link] ") + ex.what());
  }

  // [source]
  std::vector<double> mus = reader.list("source", "mu");
  std::vector<double> eps = reader.list("source", "epsilon");
  if (!mus.empty()) {
    if (eps.empty() && mus.size() == 1) eps = {1.0};
    cfg.source.mean_photon_numbers = mus;
    cfg.source.probabilities = eps;
    cfg.source_given = true;
    try {
      cfg.source.validate();
    } catch (const std::exception& ex) {
      throw ParseError(path, 0, std::string("[source] ") + ex.what());
    }
  } else if (!eps.empty()) {
    throw ParseError(path, 0, "[source] epsilon given without mu");
  }
  if (cfg.protocol.decoy && !cfg.source_given)
    throw ParseError(path, 0, "decoy protocols need a [source] section with mu and epsilon");
  if (cfg.mu1_rule == Mu1Rule::fixed && !cfg.source_given)
    throw ParseError(path, 0, "mu1_rule = fixed needs a [source] section");

  // [phases]
  cfg.phases = PhaseEnsemble::bb84();
  cfg.phases.misalignment = reader.number("phases", "delta", plain, 0.0);
  std::vector<double> ta = reader.list("phases", "theta_a");
  std::vector<double> tb = reader.list("phases", "theta_b");
  if (!ta.empty()) cfg.phases.alice_probs = ta;
  if (!tb.empty()) cfg.phases.bob_probs = tb;
  try {
    cfg.phases.validate();
  } catch (const std::exception& ex) {
    throw ParseError(path, 0, std::string("[phases] ") + ex.what());
  }

  // [optimizer]
  cfg.optimizer.dead_time_lo = reader.number("optimizer", "dead_time_min", time, 0.0);
  cfg.optimizer.dead_time_hi = reader.number("optimizer", "dead_time_max", time, 0.0);
  cfg.optimizer.mu_lo = reader.number("optimizer", "mu_min", plain, cfg.optimizer.mu_lo);
  cfg.optimizer.mu_hi = reader.number("optimizer", "mu_max", plain, cfg.optimizer.mu_hi);
  cfg.optimizer.mode = reader.text("optimizer", "mode", "auto");
  if (cfg.optimizer.mode != "auto" && cfg.optimizer.mode != "dead-time" &&
      cfg.optimizer.mode != "joint" && cfg.optimizer.mode != "fixed-mu")
    reader.fail("optimizer", "mode", "mode must be auto, dead-time, joint or fixed-mu");
  cfg.optimizer.fixed_mu = reader.number("optimizer", "fixed_mu", plain, 0.0);

  // [mc]
  cfg.mc.frames = static_cast<long long>(reader.number("mc", "frames", plain, 10000.0));
  cfg.mc.seed = static_cast<std::uint64_t>(reader.number("mc", "seed", plain, 1.0));
  std::string tag = reader.text("mc", "tag_photon_numbers", "false");
  if (tag != "true" && tag != "false")
    reader.fail("mc", "tag_photon_numbers", "must be 'true' or 'false'");
  cfg.mc.tag_photon_numbers = tag == "true";
  if (cfg.mc.frames < 1) reader.fail("mc", "frames", "frames must be >= 1");

  // [calibration]
  cfg.calibration.data_path = reader.text("calibration", "data", "");
  cfg.calibration.frame_duration =
      reader.number("calibration", "frame_duration", time, 1.0);
  cfg.calibration.guess.efficiency =
      reader.number("calibration", "guess_efficiency", plain, cfg.calibration.guess.efficiency);
  cfg.calibration.guess.dark_count_prob = reader.number(
      "calibration", "guess_dark_count_prob", plain, cfg.calibration.guess.dark_count_prob);
  cfg.calibration.guess.afterpulse_amplitude =
      reader.number("calibration", "guess_afterpulse_amplitude", time,
                    cfg.calibration.guess.afterpulse_amplitude);
  cfg.calibration.guess.afterpulse_decay =
      reader.number("calibration", "guess_afterpulse_decay", time,
                    cfg.calibration.guess.afterpulse_decay);

  reader.reject_unknown();
  return cfg;
}

double ScenarioConfig::mu1_at(double length_km) const {
  LinkParams link = this->link;
  link.length = length_km;
  double tc = link.channel_transmittance();
  switch (mu1_rule) {
    case Mu1Rule::fixed:
      return source.signal_mu();
    case Mu1Rule::bb84_standard:
      return tc;
    case Mu1Rule::sarg04_2sqrt:
      return std::min(1.0, 2.0 * std::sqrt(tc));
    case Mu1Rule::sarg04_sqrt2:
      return std::min(1.0, std::sqrt(2.0) * std::sqrt(tc));
  }
  return source.signal_mu();
}

RateInputs ScenarioConfig::rate_inputs_at(double length_km) const {
  RateInputs in;
  in.kind = protocol;
  in.detectors = detectors;
  in.timing = timing;
  in.link = link;
  in.link.length = length_km;
  in.source = source_given ? source : SourceEnsemble::single(0.0);
  in.source.mean_photon_numbers[0] = mu1_at(length_km);
  in.phases = phases;
  in.error_correction_factor = error_correction_factor;
  return in;
}

SimConfig ScenarioConfig::sim_config_at(double length_km) const {
  SimConfig sim;
  RateInputs in = rate_inputs_at(length_km);
  sim.detectors = in.detectors;
  sim.timing = in.timing;
  sim.link = in.link;
  sim.source = in.source;
  sim.phases = in.phases;
  sim.protocol = in.kind;
  sim.frames = mc.frames;
  sim.seed = mc.seed;
  sim.tag_photon_numbers = mc.tag_photon_numbers;
  return sim;
}

OptimizationProblem ScenarioConfig::optimization_problem() const {
  OptimizationProblem problem;
  problem.base = rate_inputs_at(distances_km.empty() ? 0.0 : distances_km.front());
  double t_f = timing.gate_period();
  problem.dead_time_lo = optimizer.dead_time_lo > 0.0 ? optimizer.dead_time_lo : t_f;
  problem.dead_time_hi = optimizer.dead_time_hi > 0.0
                             ? optimizer.dead_time_hi
                             : timing.frame_duration - 2.0 * t_f;
  problem.mu_lo = optimizer.mu_lo;
  problem.mu_hi = optimizer.mu_hi;
  if (optimizer.mode == "dead-time") {
    problem.mode = OptimizeMode::dead_time_only;
  } else if (optimizer.mode == "joint") {
    problem.mode = OptimizeMode::joint;
  } else if (optimizer.mode == "fixed-mu") {
    problem.mode = OptimizeMode::dead_time_fixed_mu;
    problem.fixed_mu = optimizer.fixed_mu;
  } else {
    problem.mode = protocol.decoy ? OptimizeMode::joint : OptimizeMode::dead_time_only;
  }
  if (problem.mode == OptimizeMode::joint)
    problem.mu_lo = std::max(problem.mu_lo, source.decoy_mu_sum() + 1e-9);
  return problem;
}

}  // namespace qkd
