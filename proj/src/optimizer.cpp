#include "qkd/optimizer.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <functional>
#include <limits>
#include <stdexcept>
#include <thread>

#include "qkd/errors.hpp"

namespace qkd {

namespace {

constexpr double kTieRel = 1e-15;       // plateau width treated as a tie
constexpr double kDeadTimeTol = 1e-9;   // polish resolution (s); report tol is 10 ns
constexpr double kMuTol = 1e-4;
constexpr double kBoundaryTol = 1e-8;   // 10 ns

struct Best {
  double x = std::numeric_limits<double>::quiet_NaN();
  double value = -std::numeric_limits<double>::infinity();

  // Keep the larger value; on a tie keep the smaller coordinate.
  void offer(double xx, double vv) {
    if (std::isnan(vv)) return;
    if (std::isnan(x)) {
      x = xx;
      value = vv;
      return;
    }
    double scale = std::max({std::abs(vv), std::abs(value), 1e-300});
    if (vv - value > kTieRel * scale) {
      x = xx;
      value = vv;
    } else if (std::abs(vv - value) <= kTieRel * scale && xx < x) {
      x = xx;
    }
  }
};

// Golden-section maximization of a smooth scalar function on [a, b].
void golden_max(const std::function<double(double)>& f, double a, double b, double tol,
                Best& best) {
  constexpr double inv_phi = 0.6180339887498949;
  double x1 = b - inv_phi * (b - a);
  double x2 = a + inv_phi * (b - a);
  double f1 = f(x1), f2 = f(x2);
  best.offer(x1, f1);
  best.offer(x2, f2);
  while (b - a > tol) {
    if (f1 < f2) {
      a = x1;
      x1 = x2;
      f1 = f2;
      x2 = a + inv_phi * (b - a);
      f2 = f(x2);
      best.offer(x2, f2);
    } else {
      b = x2;
      x2 = x1;
      f2 = f1;
      x1 = b - inv_phi * (b - a);
      f1 = f(x1);
      best.offer(x1, f1);
    }
  }
}

class Objective {
 public:
  explicit Objective(const OptimizationProblem& problem) : inputs_(problem.base) {
    inputs_.photon_stats_order = 1;  // only the single-photon stats feed S
  }

  double operator()(double dead_time, double mu) {
    ++evaluations_;
    inputs_.detectors[0].dead_time = dead_time;
    inputs_.detectors[1].dead_time = dead_time;
    inputs_.source.mean_photon_numbers[0] = mu;
    return compute_rates(inputs_).secret_rate_raw;
  }

  RateReport report_at(double dead_time, double mu) {
    inputs_.detectors[0].dead_time = dead_time;
    inputs_.detectors[1].dead_time = dead_time;
    inputs_.source.mean_photon_numbers[0] = mu;
    return compute_rates(inputs_);
  }

  long long evaluations() const { return evaluations_; }
  const TimingParams& timing() const { return inputs_.timing; }

 private:
  RateInputs inputs_;
  long long evaluations_ = 0;
};

// The objective is smooth in the dead time except at the gate-budget steps
// Δ = t_S - m·t_F, where the live-gate count drops by one.  The search scans
// those segments around the best coarse grid points, then polishes the
// leading segments with golden sections.
class DeadTimeSearch {
 public:
  DeadTimeSearch(Objective& objective, double lo, double hi, double mu)
      : f_(objective), lo_(lo), hi_(hi), mu_(mu) {}

  Best run() {
    Best best;
    std::vector<double> grid = log_grid(lo_, hi_, 64);
    std::vector<double> values(grid.size());
    for (std::size_t i = 0; i < grid.size(); ++i) {
      values[i] = eval(grid[i]);
      best.offer(grid[i], values[i]);
    }

    // brackets around the three best coarse points
    std::vector<std::size_t> order(grid.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return values[a] > values[b]; });
    for (std::size_t rank = 0; rank < std::min<std::size_t>(3, order.size()); ++rank) {
      std::size_t i = order[rank];
      double a = grid[i > 0 ? i - 1 : i];
      double b = grid[std::min(i + 1, grid.size() - 1)];
      refine_bracket(a, b, best);
    }
    return best;
  }

 private:
  double eval(double dt) { return f_(dt, mu_); }

  static std::vector<double> log_grid(double lo, double hi, int points) {
    std::vector<double> grid(points);
    double la = std::log(lo), lb = std::log(hi);
    for (int i = 0; i < points; ++i)
      grid[i] = std::exp(la + (lb - la) * i / (points - 1));
    grid.front() = lo;
    grid.back() = hi;
    return grid;
  }

  // Dead times at which the live-gate budget steps down, intersected with [a, b].
  std::vector<double> segment_edges(double a, double b) const {
    const double t_s = f_.timing().frame_duration;
    const double t_f = f_.timing().gate_period();
    std::vector<double> edges;
    long long m_lo = gate_count((t_s - b) * f_.timing().frequency);
    long long m_hi = gate_count((t_s - a) * f_.timing().frequency);
    for (long long m = m_lo; m <= m_hi + 1; ++m) {
      double edge = t_s - static_cast<double>(m) * t_f;
      if (edge > a && edge < b) edges.push_back(edge);
    }
    std::sort(edges.begin(), edges.end());
    return edges;
  }

  void refine_bracket(double a, double b, Best& best) {
    a = std::max(a, lo_);
    b = std::min(b, hi_);
    if (b <= a) return;

    // narrow wide brackets before enumerating segments
    std::vector<double> edges = segment_edges(a, b);
    while (edges.size() > 512) {
      Best local;
      for (int i = 0; i < 128; ++i) {
        double x = a + (b - a) * i / 127.0;
        double v = eval(x);
        local.offer(x, v);
        best.offer(x, v);
      }
      double width = (b - a) / 127.0;
      a = std::max(a, local.x - width);
      b = std::min(b, local.x + width);
      edges = segment_edges(a, b);
    }

    // segment endpoints, nudged inside so each probe lands in its segment
    std::vector<double> bounds;
    bounds.push_back(a);
    bounds.insert(bounds.end(), edges.begin(), edges.end());
    bounds.push_back(b);
    const double nudge = f_.timing().gate_period() * 1e-4;

    struct Segment {
      double lo, hi, score;
    };
    std::vector<Segment> segments;
    for (std::size_t s = 0; s + 1 < bounds.size(); ++s) {
      double sa = bounds[s], sb = bounds[s + 1];
      double pa = std::min(sa + nudge, sb);
      double pb = std::max(sb - nudge, sa);
      double va = eval(pa);
      double vb = eval(pb);
      best.offer(pa, va);
      best.offer(pb, vb);
      segments.push_back({sa, sb, std::max(va, vb)});
    }

    std::sort(segments.begin(), segments.end(),
              [](const Segment& x, const Segment& y) { return x.score > y.score; });
    std::size_t polish = std::min<std::size_t>(10, segments.size());
    for (std::size_t s = 0; s < polish; ++s) {
      double sa = std::min(segments[s].lo + nudge, segments[s].hi);
      double sb = std::max(segments[s].hi - nudge, segments[s].lo);
      if (sb - sa > kDeadTimeTol)
        golden_max([this](double x) { return eval(x); }, sa, sb,
                   std::min(kDeadTimeTol, (sb - sa) * 1e-3), best);
    }
  }

  Objective& f_;
  double lo_, hi_, mu_;
};

OptimizationResult finish(Objective& objective, const OptimizationProblem& problem,
                          double dt, double mu, double value, bool mu_optimized,
                          bool mu_boundary) {
  OptimizationResult result;
  result.length_km = problem.base.link.length;
  result.dead_time_opt = dt;
  result.mu_opt = mu_optimized ? mu : std::numeric_limits<double>::quiet_NaN();
  result.secret_rate_opt = value;
  result.evaluations = objective.evaluations();
  result.secure = value > 0.0;
  if (!result.secure) result.message = "no secure key at this distance";
  result.boundary = mu_boundary || dt <= problem.dead_time_lo + kBoundaryTol ||
                    dt >= problem.dead_time_hi - kBoundaryTol;
  if (result.boundary)
    result.message += result.message.empty() ? "boundary-optimum" : "; boundary-optimum";
  RateReport report = objective.report_at(dt, mu);
  result.afterpulse_prob = std::max(report.detection[0].afterpulse_prob,
                                    report.detection[1].afterpulse_prob);
  return result;
}

}  // namespace

void OptimizationProblem::validate() const {
  base.timing.validate();
  const double t_f = base.timing.gate_period();
  const double t_s = base.timing.frame_duration;
  if (!(dead_time_lo >= t_f && dead_time_lo < dead_time_hi && dead_time_hi < t_s))
    throw std::invalid_argument(
        "dead-time bounds must satisfy gate_period <= lo < hi < frame_duration");
  if (gate_count((t_s - dead_time_hi) * base.timing.frequency) < 1)
    throw std::invalid_argument("upper dead-time bound leaves no live gate in the frame");
  if (mode == OptimizeMode::joint) {
    if (!(mu_lo > 0.0 && mu_lo <= mu_hi))
      throw std::invalid_argument("photon-number bounds must satisfy 0 < lo <= hi");
    if (mu_lo <= base.source.decoy_mu_sum())
      throw std::invalid_argument(
          "photon-number lower bound must exceed the decoy intensity sum");
  }
  if (mode == OptimizeMode::dead_time_fixed_mu && !(fixed_mu > 0.0))
    throw std::invalid_argument("fixed photon number must be positive");
}

OptimizationResult optimize_dead_time(const OptimizationProblem& problem) {
  problem.validate();
  Objective objective(problem);
  double mu = problem.mode == OptimizeMode::dead_time_fixed_mu
                  ? problem.fixed_mu
                  : problem.base.source.signal_mu();
  Best best = DeadTimeSearch(objective, problem.dead_time_lo, problem.dead_time_hi, mu).run();
  return finish(objective, problem, best.x, mu, best.value,
                problem.mode == OptimizeMode::dead_time_fixed_mu, false);
}

OptimizationResult optimize_joint(const OptimizationProblem& problem) {
  problem.validate();
  Objective objective(problem);

  if (problem.mu_hi - problem.mu_lo < 1e-12) {  // degenerate bracket: dead time only
    Best best =
        DeadTimeSearch(objective, problem.dead_time_lo, problem.dead_time_hi, problem.mu_lo)
            .run();
    return finish(objective, problem, best.x, problem.mu_lo, best.value, true, false);
  }

  double best_mu = problem.mu_lo, best_dt = problem.dead_time_lo;
  double best_value = -std::numeric_limits<double>::infinity();
  constexpr int mu_points = 64;
  for (int i = 0; i < mu_points; ++i) {
    double mu = problem.mu_lo + (problem.mu_hi - problem.mu_lo) * i / (mu_points - 1);
    Best best =
        DeadTimeSearch(objective, problem.dead_time_lo, problem.dead_time_hi, mu).run();
    if (best.value > best_value) {
      best_value = best.value;
      best_mu = mu;
      best_dt = best.x;
    }
  }

  for (int round = 0; round < 20; ++round) {
    double prev_mu = best_mu, prev_dt = best_dt;
    Best mu_best;
    golden_max([&](double mu) { return objective(best_dt, mu); }, problem.mu_lo,
               problem.mu_hi, kMuTol * 0.5, mu_best);
    if (mu_best.value >= best_value) {
      best_mu = mu_best.x;
      best_value = mu_best.value;
    }
    Best dt_best =
        DeadTimeSearch(objective, problem.dead_time_lo, problem.dead_time_hi, best_mu).run();
    if (dt_best.value >= best_value) {
      best_dt = dt_best.x;
      best_value = dt_best.value;
    }
    if (std::abs(best_mu - prev_mu) < kMuTol && std::abs(best_dt - prev_dt) < 10e-9) break;
  }

  bool mu_boundary =
      best_mu <= problem.mu_lo + kMuTol || best_mu >= problem.mu_hi - kMuTol;
  return finish(objective, problem, best_dt, best_mu, best_value, true, mu_boundary);
}

std::vector<OptimizationResult> scan_distance(const OptimizationProblem& problem,
                                              std::span<const double> distances_km,
                                              int jobs) {
  std::vector<OptimizationResult> results(distances_km.size());
  std::atomic<std::size_t> cursor{0};
  auto work = [&]() {
    for (;;) {
      std::size_t i = cursor.fetch_add(1);
      if (i >= distances_km.size()) return;
      OptimizationProblem local = problem;
      local.base.link.length = distances_km[i];
      try {
        results[i] = local.mode == OptimizeMode::joint ? optimize_joint(local)
                                                       : optimize_dead_time(local);
      } catch (const std::exception& e) {
        results[i].length_km = distances_km[i];
        results[i].failed = true;
        results[i].message = e.what();
      }
    }
  };
  int n = std::max(1, jobs);
  if (n == 1 || distances_km.size() <= 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < n; ++t) pool.emplace_back(work);
    for (auto& th : pool) th.join();
  }
  return results;
}

}  // namespace qkd
