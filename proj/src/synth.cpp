#include "bedexit/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "bedexit/error.hpp"
#include "bedexit/rng.hpp"

namespace bedexit::synth {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

void check_range(const Range& r, const char* name, double min_lo) {
  require(r.lo <= r.hi && r.lo >= min_lo && std::isfinite(r.hi), ErrorCode::config,
          std::string("synth.") + name + ": empty or invalid range");
}

double draw(CounterRng& rng, const Range& r) { return rng.uniform(r.lo, r.hi); }

// Monotone raised-cosine step from 0 to 1 over u in [0, 1].
double smooth_step(double u) { return 0.5 - 0.5 * std::cos(std::numbers::pi * std::clamp(u, 0.0, 1.0)); }

}  // namespace

void SynthConfig::validate() const {
  require(sample_rate_hz > 0.0, ErrorCode::config, "synth.sample_rate_hz must be positive");
  require(n_episodes >= 1, ErrorCode::config, "synth.n_episodes must be >= 1");
  check_range(body_weight_kg, "body_weight_kg", 1.0);
  check_range(tare_kg, "tare_kg", 0.0);
  check_range(transition_minutes, "transition_minutes", 1e-3);
  check_range(stable_hours, "stable_hours", 1e-4);
  check_range(empty_minutes, "empty_minutes", 1e-3);
  require(reposition_rate_per_hour >= 0.0, ErrorCode::config, "synth.reposition_rate_per_hour must be >= 0");
  require(noise_std_kg >= 0.0, ErrorCode::config, "synth.noise_std_kg must be >= 0");
  require(positive_fraction > 0.0 && positive_fraction < 1.0, ErrorCode::config,
          "synth.positive_fraction must be in (0, 1)");
  require(max_positives_per_episode >= 1, ErrorCode::config, "synth.max_positives_per_episode must be >= 1");
}

std::string phase_name(Phase p) {
  switch (p) {
    case Phase::empty: return "empty";
    case Phase::non_active: return "non_active";
    case Phase::transition: return "transition";
    case Phase::exit: return "exit";
  }
  return "empty";
}

std::vector<Interval> EpisodePlan::intervals() const {
  return {{0.0, entry_s, Phase::empty},
          {entry_s, transition_start_s, Phase::non_active},
          {transition_start_s, exit_s, Phase::transition},
          {exit_s, exit_s + exit_ramp_s, Phase::exit},
          {exit_s + exit_ramp_s, end_s, Phase::empty}};
}

double EpisodePlan::clean_load(double t) const {
  const double w = body_weight_kg;
  if (t < entry_s) return tare_kg;
  if (t < entry_s + entry_ramp_s) return tare_kg + w * smooth_step((t - entry_s) / entry_ramp_s);
  if (t < transition_start_s) {
    double load = tare_kg + w;
    for (const auto& b : bumps) {
      if (t >= b.start_s && t < b.start_s + b.duration_s) {
        const double s = std::sin(std::numbers::pi * (t - b.start_s) / b.duration_s);
        load += b.amplitude_kg * s * s;
      }
    }
    return load;
  }
  if (t < exit_s) {
    const double u = (t - transition_start_s) / (exit_s - transition_start_s);
    const double envelope = oscillation_frac * w * (0.3 + 0.7 * u);
    return tare_kg + w * (1.0 - drift_frac * u) +
           envelope * std::sin(kTwoPi * oscillation_hz * (t - transition_start_s) + oscillation_phase);
  }
  if (t < exit_s + exit_ramp_s) {
    const double level = w * (1.0 - drift_frac);
    return tare_kg + level * (1.0 - smooth_step((t - exit_s) / exit_ramp_s));
  }
  return tare_kg;
}

bool EpisodePlan::occupied(double t) const {
  return t >= entry_s + 0.5 * entry_ramp_s && t < exit_s + 0.5 * exit_ramp_s;
}

std::vector<signal::LabelInterval> Episode::labels() const {
  std::vector<signal::LabelInterval> out;
  for (const auto& iv : intervals) {
    if (iv.phase == Phase::non_active) out.push_back({iv.start_s, iv.end_s, signal::Label::non_active});
    if (iv.phase == Phase::transition) out.push_back({iv.start_s, iv.end_s, signal::Label::transition});
  }
  return out;
}

EpisodePlan plan_episode(const SynthConfig& config, std::uint64_t episode_index) {
  config.validate();
  CounterRng rng(derive_seed(config.seed, "episode", episode_index));
  EpisodePlan p;
  p.body_weight_kg = draw(rng, config.body_weight_kg);
  p.tare_kg = draw(rng, config.tare_kg);
  p.entry_s = 60.0 * draw(rng, config.empty_minutes);
  p.entry_ramp_s = rng.uniform(2.0, 5.0);
  const double stable_s = 3600.0 * draw(rng, config.stable_hours);
  p.transition_start_s = p.entry_s + p.entry_ramp_s + stable_s;
  p.exit_s = p.transition_start_s + 60.0 * draw(rng, config.transition_minutes);
  p.exit_ramp_s = rng.uniform(2.0, 5.0);
  p.end_s = p.exit_s + p.exit_ramp_s + 60.0 * draw(rng, config.empty_minutes);
  p.oscillation_hz = rng.uniform(0.7, 3.0);
  p.oscillation_frac = rng.uniform(0.05, 0.15);
  p.oscillation_phase = rng.uniform(0.0, kTwoPi);
  p.drift_frac = rng.uniform(0.05, 0.20);

  // Reposition bumps: Poisson arrivals inside the stable phase, kept clear of its edges.
  if (config.reposition_rate_per_hour > 0.0) {
    const double rate_per_s = config.reposition_rate_per_hour / 3600.0;
    const double first = p.entry_s + p.entry_ramp_s + 60.0;
    const double last = p.transition_start_s - 60.0;
    double t = first;
    while (true) {
      t += -std::log(1.0 - rng.uniform()) / rate_per_s;
      const double duration = rng.uniform(5.0, 20.0);
      const double magnitude = rng.uniform(0.03, 0.10) * p.body_weight_kg;
      const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
      if (t + duration > last) break;
      p.bumps.push_back({t, duration, sign * magnitude});
      t += duration;
    }
  }
  return p;
}

Episode generate_episode(const SynthConfig& config, std::uint64_t episode_index) {
  Episode ep;
  ep.plan = plan_episode(config, episode_index);
  ep.intervals = ep.plan.intervals();
  const double fs = config.sample_rate_hz;
  const auto n = static_cast<std::size_t>(std::llround(ep.plan.end_s * fs));
  ep.raw.sample_rate_hz = fs;
  ep.raw.timestamps.resize(n);
  ep.raw.load.resize(n);
  CounterRng noise(derive_seed(config.seed, "episode-noise", episode_index));
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / fs;
    double v = ep.plan.clean_load(t);
    if (config.noise_std_kg > 0.0) v += config.noise_std_kg * noise.normal();
    ep.raw.timestamps[i] = t;
    ep.raw.load[i] = std::max(0.0, v);
  }
  return ep;
}

std::string split_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "train";
}

Split parse_split(const std::string& text) {
  if (text == "train") return Split::train;
  if (text == "val") return Split::val;
  if (text == "test") return Split::test;
  fail(ErrorCode::usage, "unknown split '" + text + "' (expected train, val or test)");
}

std::array<std::vector<std::size_t>, 3> split_episodes(std::size_t n_episodes, std::uint64_t seed) {
  std::vector<std::size_t> order(n_episodes);
  std::iota(order.begin(), order.end(), 0);
  CounterRng rng(derive_seed(seed, "split"));
  for (std::size_t i = n_episodes; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  const auto n_train = static_cast<std::size_t>(std::llround(0.6 * static_cast<double>(n_episodes)));
  const auto n_val = static_cast<std::size_t>(std::llround(0.2 * static_cast<double>(n_episodes)));
  std::array<std::vector<std::size_t>, 3> out;
  for (std::size_t i = 0; i < n_episodes; ++i) {
    const std::size_t s = i < n_train ? 0 : (i < n_train + n_val ? 1 : 2);
    out[s].push_back(order[i]);
  }
  for (auto& v : out) std::sort(v.begin(), v.end());
  return out;
}

double DatasetSummary::positive_fraction(Split s) const {
  const auto i = static_cast<std::size_t>(s);
  return windows[i] ? static_cast<double>(positives[i]) / static_cast<double>(windows[i]) : 0.0;
}

namespace {

// Uniform subset of size k from `pool`, returned in the pool's (time) order.
std::vector<signal::WindowRef> choose(std::vector<signal::WindowRef> pool, std::size_t k, CounterRng& rng) {
  k = std::min(k, pool.size());
  for (std::size_t i = 0; i < k; ++i) std::swap(pool[i], pool[i + rng.below(pool.size() - i)]);
  pool.resize(k);
  std::sort(pool.begin(), pool.end(), [](const auto& a, const auto& b) { return a.end_index < b.end_index; });
  return pool;
}

}  // namespace

DatasetSummary build_dataset(std::size_t n_episodes, const DatasetOptions& options, const EpisodeSource& source,
                             const WindowVisitor& visit) {
  require(n_episodes >= 10, ErrorCode::config, "a dataset needs at least 10 episodes");
  require(options.positive_fraction > 0.0 && options.positive_fraction < 1.0, ErrorCode::config,
          "positive_fraction must be in (0, 1)");
  DatasetSummary summary;
  summary.episodes = split_episodes(n_episodes, options.seed);
  const double neg_per_pos = (1.0 - options.positive_fraction) / options.positive_fraction;

  for (std::size_t s = 0; s < 3; ++s) {
    std::size_t pos_total = 0, neg_total = 0;
    for (const std::size_t ep : summary.episodes[s]) {
      const EpisodeData data = source(ep);
      const signal::SignalFrame frame = signal::derive_frame(data.raw, options.signal);
      std::vector<signal::WindowRef> pos, neg;
      for (const auto& ref : signal::plan_windows(frame, options.window, data.labels)) {
        if (options.exclude_padded && ref.padded) continue;
        (ref.label == signal::Label::transition ? pos : neg).push_back(ref);
      }
      CounterRng rng(derive_seed(options.seed, "windows", ep));
      const auto chosen_pos = choose(std::move(pos), static_cast<std::size_t>(options.max_positives_per_episode), rng);
      pos_total += chosen_pos.size();
      // Error diffusion keeps the running negative count at round(positives * ratio).
      const auto target_neg = static_cast<std::size_t>(std::llround(static_cast<double>(pos_total) * neg_per_pos));
      const std::size_t want_neg = target_neg > neg_total ? target_neg - neg_total : 0;
      if (want_neg > neg.size())
        fail(ErrorCode::data, "positive_fraction " + std::to_string(options.positive_fraction) +
                                  " is infeasible: episode " + std::to_string(ep) + " has " +
                                  std::to_string(neg.size()) + " negative windows, " + std::to_string(want_neg) +
                                  " needed");
      const auto chosen_neg = choose(std::move(neg), want_neg, rng);
      neg_total += chosen_neg.size();

      std::vector<signal::WindowRef> chosen(chosen_pos);
      chosen.insert(chosen.end(), chosen_neg.begin(), chosen_neg.end());
      std::sort(chosen.begin(), chosen.end(), [](const auto& a, const auto& b) { return a.end_index < b.end_index; });
      const std::size_t length = signal::window_length(options.window, frame.sample_rate_hz);
      for (const auto& ref : chosen) {
        signal::Window w = signal::slice_window(frame, length, ref.end_index);
        w.t_end = ref.t_end;
        w.label = ref.label;
        visit(static_cast<Split>(s), ep, w);
      }
    }
    summary.windows[s] = pos_total + neg_total;
    summary.positives[s] = pos_total;
  }
  return summary;
}

DatasetSummary build_dataset(const SynthConfig& config, const DatasetOptions& options, const WindowVisitor& visit) {
  config.validate();
  DatasetOptions opts = options;
  opts.seed = config.seed;
  opts.positive_fraction = config.positive_fraction;
  opts.max_positives_per_episode = config.max_positives_per_episode;
  opts.signal.sample_rate_hz = config.sample_rate_hz;
  return build_dataset(
      static_cast<std::size_t>(config.n_episodes), opts,
      [&](std::size_t ep) {
        Episode e = generate_episode(config, ep);
        return EpisodeData{std::move(e.raw), e.labels()};
      },
      visit);
}

}  // namespace bedexit::synth
