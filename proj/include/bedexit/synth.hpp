#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "bedexit/signal_core.hpp"

namespace bedexit::synth {

struct Range {
  double lo = 0.0;
  double hi = 0.0;
};

struct SynthConfig {
  std::uint64_t seed = 42;
  double sample_rate_hz = 25.0;
  int n_episodes = 200;
  Range body_weight_kg{45.0, 95.0};
  Range tare_kg{3.0, 8.0};
  Range transition_minutes{1.0, 10.0};
  Range stable_hours{2.0, 8.0};
  Range empty_minutes{5.0, 15.0};  // empty bed before entry and after exit
  double reposition_rate_per_hour = 0.5;
  double noise_std_kg = 0.05;
  double positive_fraction = 0.5;
  int max_positives_per_episode = 8;

  void validate() const;
};

enum class Phase { empty, non_active, transition, exit };

std::string phase_name(Phase p);

struct Interval {
  double start_s = 0.0;
  double end_s = 0.0;
  Phase phase = Phase::empty;
};

struct Bump {
  double start_s = 0.0;
  double duration_s = 0.0;
  double amplitude_kg = 0.0;  // signed
};

/// Every random quantity of one episode, drawn before any sample is rendered.
struct EpisodePlan {
  double body_weight_kg = 0.0;
  double tare_kg = 0.0;
  double entry_s = 0.0;         // entry ramp start
  double entry_ramp_s = 0.0;
  double transition_start_s = 0.0;
  double exit_s = 0.0;          // transition end, exit ramp start
  double exit_ramp_s = 0.0;
  double end_s = 0.0;
  double oscillation_hz = 0.0;
  double oscillation_frac = 0.0;  // final envelope as a fraction of body weight
  double oscillation_phase = 0.0;
  double drift_frac = 0.0;        // load lost towards the bed edge by the end of the transition
  std::vector<Bump> bumps;

  double transition_minutes() const { return (exit_s - transition_start_s) / 60.0; }
  /// Tiling of [0, end_s): empty, non_active, transition, exit, empty.
  std::vector<Interval> intervals() const;
  /// Noise-free load at time t.
  double clean_load(double t) const;
  /// Ground-truth occupancy: occupied from the midpoint of the entry ramp to the
  /// midpoint of the exit ramp.
  bool occupied(double t) const;
};

struct Episode {
  EpisodePlan plan;
  signal::RawStream raw;
  std::vector<Interval> intervals;

  /// Transition and non_active intervals, the classification label set.
  std::vector<signal::LabelInterval> labels() const;
};

EpisodePlan plan_episode(const SynthConfig& config, std::uint64_t episode_index);

/// Deterministic per (seed, episode_index).
Episode generate_episode(const SynthConfig& config, std::uint64_t episode_index);

enum class Split : int { train = 0, val = 1, test = 2 };

std::string split_name(Split s);
Split parse_split(const std::string& text);

/// Seeded episode-level 60/20/20 assignment.
std::array<std::vector<std::size_t>, 3> split_episodes(std::size_t n_episodes, std::uint64_t seed);

struct DatasetOptions {
  signal::SignalConfig signal;
  signal::WindowSpec window;
  bool exclude_padded = false;
  double positive_fraction = 0.5;
  int max_positives_per_episode = 8;
  std::uint64_t seed = 42;
};

struct EpisodeData {
  signal::RawStream raw;
  std::vector<signal::LabelInterval> labels;
};

using EpisodeSource = std::function<EpisodeData(std::size_t index)>;
using WindowVisitor =
    std::function<void(Split split, std::size_t episode, const signal::Window& window)>;

struct DatasetSummary {
  std::array<std::vector<std::size_t>, 3> episodes;
  std::array<std::size_t, 3> windows{};
  std::array<std::size_t, 3> positives{};

  double positive_fraction(Split s) const;
};

/// Derives each episode's frame, selects up to max_positives_per_episode positive windows
/// (t_end inside a transition) and enough negative windows (t_end inside non_active) to
/// reach the requested positive fraction, and hands every selected window to `visit`,
/// split by episode. Throws Error(data) when an episode has too few negative candidates.
DatasetSummary build_dataset(std::size_t n_episodes, const DatasetOptions& options, const EpisodeSource& source,
                             const WindowVisitor& visit);

/// Same, with episodes drawn from the generator.
DatasetSummary build_dataset(const SynthConfig& config, const DatasetOptions& options, const WindowVisitor& visit);

}  // namespace bedexit::synth
