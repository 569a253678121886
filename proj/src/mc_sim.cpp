#include "qkd/mc_sim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <thread>
#include <utility>

#include "qkd/errors.hpp"
#include "qkd/rng.hpp"

namespace qkd {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// Outcome class of one detector for one phase pair.
enum Branch : int { kAligned = 0, kOrthogonal = 1, kDiagonal = 2 };

struct SimContext {
  long long n_s = 0;
  std::array<long long, 2> n_d{};
  int n_states = 1;
  std::vector<double> state_cdf;
  std::array<double, 4> alice_cdf{};
  std::array<double, 2> bob_cdf{};
  // survival of the Poisson-averaged signal, indexed [combo * K + k][w]
  std::vector<std::array<double, 2>> state_surv;
  std::array<std::array<double, 2>, 8> gamma{};   // per-photon branch efficiency
  std::array<std::array<int, 2>, 8> branch{};
  std::array<double, 2> p_corr_class{};  // class prob feeding correct events per w
  std::array<double, 2> p_err_class{};   // class prob feeding error events per w
  std::array<double, 2> dark_surv{};
  std::array<std::vector<double>, 2> ap_factor;  // survival factor per gate offset
  std::vector<std::vector<double>> poisson_cdf;  // per state (tagged mode)
  bool diag_sift = false;                        // SARG04-style sifting
  bool tagged = false;
  int max_n = 0;
};

struct FrameTallies {
  std::array<long long, 2> clicks{};
  long long doubles = 0;
  long long sifted = 0;
  long long errors = 0;
  std::array<long long, 2> corr{};
  std::array<long long, 2> err{};
  std::vector<long long> corr_n;  // [w * (max_n+1) + n], signal state only
  std::vector<long long> err_n;
};

std::vector<double> make_cdf(const std::vector<double>& probs) {
  std::vector<double> cdf(probs.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    acc += probs[i];
    cdf[i] = acc;
  }
  cdf.back() = 1.0;
  return cdf;
}

int draw_index(Xoshiro256pp& rng, const double* cdf, int size) {
  double u = rng.uniform01();
  for (int i = 0; i + 1 < size; ++i)
    if (u < cdf[i]) return i;
  return size - 1;
}

SimContext build_context(const SimConfig& cfg) {
  SimContext ctx;
  ctx.n_s = cfg.gates_per_frame();
  ctx.n_states = static_cast<int>(cfg.source.mean_photon_numbers.size());
  ctx.state_cdf = make_cdf(cfg.source.probabilities);
  auto acdf = make_cdf(cfg.phases.alice_probs);
  auto bcdf = make_cdf(cfg.phases.bob_probs);
  std::copy(acdf.begin(), acdf.end(), ctx.alice_cdf.begin());
  std::copy(bcdf.begin(), bcdf.end(), ctx.bob_cdf.begin());
  ctx.diag_sift = cfg.protocol.deterministic_branch() == 3;
  ctx.tagged = cfg.tag_photon_numbers;
  ctx.max_n = cfg.max_tagged_photons;

  ctx.state_surv.resize(8 * ctx.n_states);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 2; ++j) {
      int combo = i * 2 + j;
      for (int w = 0; w < 2; ++w) {
        ctx.gamma[combo][w] = cfg.link.branch_efficiency(cfg.detectors[w], cfg.phases, i, j);
        for (int k = 0; k < ctx.n_states; ++k)
          ctx.state_surv[combo * ctx.n_states + k][w] =
              std::exp(-ctx.gamma[combo][w] * cfg.source.mean_photon_numbers[k]);
        // classify by the announced phases (misalignment does not move the class)
        double h = (cfg.phases.alice_phases[i] - cfg.phases.bob_phases[j]) / 2.0 -
                   w * 1.5707963267948966;
        double c2 = std::cos(h) * std::cos(h);
        ctx.branch[combo][w] =
            c2 > 1.0 - 1e-9 ? kAligned : (c2 < 1e-9 ? kOrthogonal : kDiagonal);
      }
    }

  double p_diag = 0.0;
  std::array<double, 2> p_aligned{}, p_orth{};
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 2; ++j) {
      int combo = i * 2 + j;
      double prob = cfg.phases.alice_probs[i] * cfg.phases.bob_probs[j];
      if (ctx.branch[combo][0] == kDiagonal) p_diag += prob;
      for (int w = 0; w < 2; ++w) {
        if (ctx.branch[combo][w] == kAligned) p_aligned[w] += prob;
        if (ctx.branch[combo][w] == kOrthogonal) p_orth[w] += prob;
      }
    }
  for (int w = 0; w < 2; ++w) {
    ctx.p_corr_class[w] = ctx.diag_sift ? p_diag : p_aligned[w];
    ctx.p_err_class[w] = p_orth[w];
  }

  for (int w = 0; w < 2; ++w) {
    const DetectorParams& det = cfg.detectors[w];
    ctx.n_d[w] = gate_count(det.dead_time * cfg.timing.frequency);
    ctx.dark_surv[w] = 1.0 - det.dark_count_prob;
    double amp = det.afterpulse_amplitude / det.afterpulse_decay;
    double rho = std::exp(-cfg.timing.gate_period() / det.afterpulse_decay);
    ctx.ap_factor[w].resize(ctx.n_s + 1);
    double decay = amp;
    for (long long d = 0; d <= ctx.n_s; ++d) {
      ctx.ap_factor[w][d] = std::max(1.0 - decay, 0.0);
      decay *= rho;
    }
  }

  if (ctx.tagged) {
    ctx.poisson_cdf.resize(ctx.n_states);
    for (int k = 0; k < ctx.n_states; ++k) {
      double mu = cfg.source.mean_photon_numbers[k];
      double term = std::exp(-mu);
      double acc = term;
      std::vector<double> cdf{acc};
      for (int n = 1; n < 64 && 1.0 - acc > 1e-16; ++n) {
        term *= mu / n;
        acc += term;
        cdf.push_back(acc);
      }
      cdf.back() = 1.0;
      ctx.poisson_cdf[k] = std::move(cdf);
    }
  }
  return ctx;
}

void run_frame(const SimConfig& cfg, const SimContext& ctx, long long frame,
               std::array<std::vector<double>, 2>& ap_surv, FrameTallies& t,
               std::array<std::vector<std::pair<long long, long long>>, 2>* gates_out) {
  Xoshiro256pp rng = Xoshiro256pp::for_stream(cfg.seed, static_cast<std::uint64_t>(frame));
  for (int w = 0; w < 2; ++w) std::fill(ap_surv[w].begin(), ap_surv[w].end(), 1.0);
  std::array<long long, 2> next_live{0, 0};

  for (long long m = 0; m < ctx.n_s; ++m) {
    if (m < next_live[0] && m < next_live[1]) {
      m = std::min(next_live[0], next_live[1]) - 1;  // both blind: jump ahead
      continue;
    }
    int k = ctx.n_states > 1
                ? draw_index(rng, ctx.state_cdf.data(), ctx.n_states)
                : 0;
    int i = draw_index(rng, ctx.alice_cdf.data(), 4);
    int j = draw_index(rng, ctx.bob_cdf.data(), 2);
    int combo = i * 2 + j;

    int photons = 0;
    std::array<int, 2> routed{0, 0};
    if (ctx.tagged) {
      const auto& cdf = ctx.poisson_cdf[k];
      photons = draw_index(rng, cdf.data(), static_cast<int>(cdf.size()));
      for (int ph = 0; ph < photons; ++ph) {
        double u = rng.uniform01();
        if (u < ctx.gamma[combo][0])
          ++routed[0];
        else if (u < ctx.gamma[combo][0] + ctx.gamma[combo][1])
          ++routed[1];
      }
    }

    std::array<bool, 2> click{false, false};
    for (int w = 0; w < 2; ++w) {
      if (m < next_live[w]) continue;
      double surv = ctx.tagged ? (routed[w] > 0 ? 0.0 : 1.0)
                               : ctx.state_surv[combo * ctx.n_states + k][w];
      surv *= ctx.dark_surv[w] * ap_surv[w][m];
      if (rng.uniform01() < 1.0 - surv) click[w] = true;
    }

    for (int w = 0; w < 2; ++w) {
      if (!click[w]) continue;
      ++t.clicks[w];
      if (gates_out) (*gates_out)[w].emplace_back(frame, m);
      next_live[w] = m + ctx.n_d[w] + 1;
      const auto& factor = ctx.ap_factor[w];
      for (long long mp = next_live[w]; mp < ctx.n_s; ++mp)
        ap_surv[w][mp] *= factor[mp - m];
    }

    if (click[0] && click[1]) {
      ++t.doubles;
    } else if (click[0] || click[1]) {
      int w = click[0] ? 0 : 1;
      int br = ctx.branch[combo][w];
      bool correct = ctx.diag_sift ? (br == kDiagonal) : (br == kAligned);
      bool error = (br == kOrthogonal);
      if (correct || error) {
        ++t.sifted;
        (correct ? t.corr : t.err)[w] += 1;
        if (error) ++t.errors;
        if (ctx.tagged && k == 0 && photons <= ctx.max_n) {
          auto& bucket = correct ? t.corr_n : t.err_n;
          ++bucket[w * (ctx.max_n + 1) + photons];
        }
      }
    }
  }
}

double pairwise_sum_impl(const double* data, std::size_t n) {
  if (n <= 32) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += data[i];
    return s;
  }
  std::size_t half = n / 2;
  return pairwise_sum_impl(data, half) + pairwise_sum_impl(data + half, n - half);
}

}  // namespace

double pairwise_sum(std::span<const double> values) {
  return pairwise_sum_impl(values.data(), values.size());
}

void SimConfig::validate() const {
  for (const auto& det : detectors) det.validate();
  timing.validate();
  link.validate();
  source.validate();
  phases.validate();
  if (frames < 1) throw std::invalid_argument("frame count must be >= 1");
  if (gates_per_frame() < 1) throw std::invalid_argument("frame must hold at least one gate");
  if (max_tagged_photons < 0) throw std::invalid_argument("max tagged photons must be >= 0");
}

SimResult simulate(const SimConfig& cfg) {
  cfg.validate();
  const SimContext ctx = build_context(cfg);
  const long long frames = cfg.frames;
  const double n_s = static_cast<double>(ctx.n_s);

  std::vector<double> rate_f(frames, 0.0);
  std::vector<double> err_f(frames, 0.0);  // weighted error count per frame
  std::vector<long long> clicks_f0(frames, 0), clicks_f1(frames, 0);

  const int tag_slots = ctx.tagged ? 2 * (ctx.max_n + 1) : 0;
  const int threads = std::max(1, cfg.threads);
  std::vector<FrameTallies> totals(threads);
  std::vector<std::array<std::vector<std::pair<long long, long long>>, 2>> gate_logs(
      cfg.record_event_gates ? frames : 0);

  std::array<double, 2> inv_corr{}, inv_err{};
  for (int w = 0; w < 2; ++w) {
    inv_corr[w] = ctx.p_corr_class[w] > 0.0 ? 1.0 / (n_s * ctx.p_corr_class[w]) : 0.0;
    inv_err[w] = ctx.p_err_class[w] > 0.0 ? 1.0 / (n_s * ctx.p_err_class[w]) : 0.0;
  }

  auto worker = [&](int tid, long long lo, long long hi) {
    std::array<std::vector<double>, 2> ap_surv;
    for (auto& v : ap_surv) v.resize(ctx.n_s);
    FrameTallies& total = totals[tid];
    total.corr_n.assign(tag_slots, 0);
    total.err_n.assign(tag_slots, 0);
    FrameTallies t;
    t.corr_n.assign(tag_slots, 0);
    t.err_n.assign(tag_slots, 0);
    for (long long f = lo; f < hi; ++f) {
      t.clicks = {0, 0};
      t.doubles = t.sifted = t.errors = 0;
      t.corr = t.err = {0, 0};
      std::fill(t.corr_n.begin(), t.corr_n.end(), 0);
      std::fill(t.err_n.begin(), t.err_n.end(), 0);
      run_frame(cfg, ctx, f, ap_surv, t,
                cfg.record_event_gates ? &gate_logs[f] : nullptr);

      double rate = 0.0, errors = 0.0;
      for (int w = 0; w < 2; ++w) {
        rate += t.corr[w] * inv_corr[w] + t.err[w] * inv_err[w];
        errors += t.err[w] * inv_err[w];
      }
      rate_f[f] = rate;
      err_f[f] = errors;
      clicks_f0[f] = t.clicks[0];
      clicks_f1[f] = t.clicks[1];

      for (int w = 0; w < 2; ++w) {
        total.clicks[w] += t.clicks[w];
        total.corr[w] += t.corr[w];
        total.err[w] += t.err[w];
      }
      total.doubles += t.doubles;
      total.sifted += t.sifted;
      total.errors += t.errors;
      for (int s = 0; s < tag_slots; ++s) {
        total.corr_n[s] += t.corr_n[s];
        total.err_n[s] += t.err_n[s];
      }
    }
  };

  if (threads == 1) {
    worker(0, 0, frames);
  } else {
    std::vector<std::thread> pool;
    long long chunk = (frames + threads - 1) / threads;
    for (int tid = 0; tid < threads; ++tid) {
      long long lo = tid * chunk;
      long long hi = std::min(frames, lo + chunk);
      if (lo >= hi) break;
      pool.emplace_back(worker, tid, lo, hi);
    }
    for (auto& th : pool) th.join();
  }

  FrameTallies sum;
  sum.corr_n.assign(tag_slots, 0);
  sum.err_n.assign(tag_slots, 0);
  for (const auto& part : totals) {
    if (part.corr_n.empty() && tag_slots > 0) continue;
    for (int w = 0; w < 2; ++w) {
      sum.clicks[w] += part.clicks[w];
      sum.corr[w] += part.corr[w];
      sum.err[w] += part.err[w];
    }
    sum.doubles += part.doubles;
    sum.sifted += part.sifted;
    sum.errors += part.errors;
    for (int s = 0; s < tag_slots; ++s) {
      sum.corr_n[s] += part.corr_n[s];
      sum.err_n[s] += part.err_n[s];
    }
  }

  SimResult result;
  result.frames = frames;
  result.click_events = sum.clicks;
  result.double_counts = sum.doubles;
  result.sifted_events = sum.sifted;
  result.error_events = sum.errors;

  double fr = static_cast<double>(frames);
  result.sifted_rate = pairwise_sum(rate_f) / fr;
  if (frames > 1) {
    std::vector<double> dev(frames);
    for (long long f = 0; f < frames; ++f) {
      double d = rate_f[f] - result.sifted_rate;
      dev[f] = d * d;
    }
    result.sifted_rate_se = std::sqrt(pairwise_sum(dev) / (fr - 1.0) / fr);
  }

  // QBER pooled over frames (event-weighted): equal-weight frame averaging
  // would bias it low, because afterpulse errors concentrate in frames with
  // many events.  The standard error treats frames as independent clusters.
  double total_rate = pairwise_sum(rate_f);
  double total_err = pairwise_sum(err_f);
  for (long long f = 0; f < frames; ++f)
    if (rate_f[f] > 0.0) ++result.qber_frames;
  if (total_rate > 0.0) {
    result.qber_defined = true;
    result.qber = total_err / total_rate;
    if (frames > 1) {
      std::vector<double> dev(frames);
      for (long long f = 0; f < frames; ++f) {
        double d = err_f[f] - result.qber * rate_f[f];
        dev[f] = d * d;
      }
      result.qber_se = std::sqrt(pairwise_sum(dev)) / total_rate;
    }
  } else {
    result.qber = kNaN;
  }

  for (int w = 0; w < 2; ++w) {
    const auto& cf = w == 0 ? clicks_f0 : clicks_f1;
    result.click_rate[w] = static_cast<double>(sum.clicks[w]) / (n_s * fr);
    if (frames > 1) {
      double mean = static_cast<double>(sum.clicks[w]) / fr;
      double ss = 0.0;
      for (long long f = 0; f < frames; ++f) {
        double d = static_cast<double>(cf[f]) - mean;
        ss += d * d;
      }
      result.click_rate_se[w] = std::sqrt(ss / (fr - 1.0) / fr) / n_s;
    }
  }

  if (ctx.tagged) {
    double denom = n_s * fr * cfg.source.signal_prob();
    result.tagged_rate.assign(ctx.max_n + 1, 0.0);
    result.tagged_rate_se.assign(ctx.max_n + 1, 0.0);
    for (int n = 0; n <= ctx.max_n; ++n) {
      double value = 0.0, var = 0.0;
      for (int w = 0; w < 2; ++w) {
        double wc = inv_corr[w] * n_s;  // per-class weight
        double we = inv_err[w] * n_s;
        long long c = sum.corr_n[w * (ctx.max_n + 1) + n];
        long long e = sum.err_n[w * (ctx.max_n + 1) + n];
        value += c * wc + e * we;
        var += c * wc * wc + e * we * we;  // Poisson counting error
      }
      result.tagged_rate[n] = value / denom;
      result.tagged_rate_se[n] = std::sqrt(var) / denom;
    }
  }

  if (cfg.record_event_gates)
    for (long long f = 0; f < frames; ++f)
      for (int w = 0; w < 2; ++w)
        result.event_gates[w].insert(result.event_gates[w].end(), gate_logs[f][w].begin(),
                                     gate_logs[f][w].end());
  return result;
}

double relative_deviation(std::span<const double> sim, std::span<const double> model) {
  if (sim.size() != model.size()) throw std::invalid_argument("series lengths differ");
  if (sim.size() < 2) throw std::invalid_argument("need at least two points");
  double acc = 0.0;
  for (std::size_t n = 0; n < sim.size(); ++n) {
    if (model[n] == 0.0) throw std::domain_error("model value is zero");
    double rel = (sim[n] - model[n]) / model[n];
    acc += rel * rel;
  }
  return std::sqrt(acc / (static_cast<double>(sim.size()) - 1.0));
}

}  // namespace qkd
