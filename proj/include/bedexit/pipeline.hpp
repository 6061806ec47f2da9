#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "bedexit/config.hpp"
#include "bedexit/fusion_model.hpp"
#include "bedexit/imaging.hpp"
#include "bedexit/signal_core.hpp"
#include "bedexit/synth.hpp"

namespace bedexit::pipeline {

std::string episode_id(std::size_t index);

/// `<episode id>_t<whole seconds of t_end>`.
std::string window_id(std::size_t episode, double t_end);

/// Model input for one window: both encodings rounded to 8-bit levels, so in-memory
/// inputs are bit-identical to inputs decoded from the written PNGs.
imaging::ImagePair encode_for_model(const signal::Window& window, const imaging::EncodingConfig& config);

struct EncodedWindow {
  std::string id;
  std::size_t episode = 0;
  int label = 0;
  double t_end = 0.0;
  imaging::ImagePair images;
};

struct EncodedDataset {
  std::array<std::vector<EncodedWindow>, 3> splits;  // indexed by synth::Split
  synth::DatasetSummary summary;

  const std::vector<EncodedWindow>& split(synth::Split s) const { return splits[static_cast<int>(s)]; }
};

EncodedDataset encode_dataset(const config::RunConfig& config, std::size_t n_episodes,
                              const synth::EpisodeSource& source);

/// Episodes straight from the generator (config.synth).
EncodedDataset encode_synthetic(const config::RunConfig& config);

std::vector<model::Example> as_examples(const std::vector<EncodedWindow>& windows);

// On-disk layouts.
//   <data>/episodes/<id>/raw.csv, labels.csv
//   <encoded>/<split>/<id>_line.png, <id>_texture.png, manifest.csv (id,label,t_end)

void write_episode(const std::filesystem::path& dir, const synth::Episode& episode);
synth::EpisodeData read_episode(const std::filesystem::path& dir, double sample_rate_hz);
/// Episode directories under `<data>/episodes`, sorted by name.
std::vector<std::filesystem::path> list_episodes(const std::filesystem::path& data_dir);

void write_encoded_split(const std::filesystem::path& dir, const std::vector<EncodedWindow>& windows);
std::vector<EncodedWindow> read_encoded_split(const std::filesystem::path& dir);

struct TracePoint {
  double t_s = 0.0;
  double probability = 0.0;
  bool alarm = false;
};

/// One prediction per stride step across the whole frame.
std::vector<TracePoint> probability_trace(const model::ModelParams<float>& params, const signal::SignalFrame& frame,
                                          const config::RunConfig& config);

std::string format_trace_csv(const std::vector<TracePoint>& trace);

/// Load (red) over the frame, probability (green) on a fixed [0, 1] axis and the
/// dashed alarm threshold (black) on one white canvas.
imaging::ImageTensor render_trace(const signal::SignalFrame& frame, const std::vector<TracePoint>& trace,
                                  double threshold, int width = 640, int height = 240);

/// Alarm timing of one episode relative to its labelled transition.
struct EarlyWarning {
  bool has_transition = false;
  double transition_start_s = 0.0;
  double exit_s = 0.0;  // end of the transition interval
  std::optional<double> first_alarm_s;
  bool false_alarm = false;  // first alarm before the transition started
  bool early = false;        // first alarm inside [transition start, exit)
  double lead_s = 0.0;       // exit_s - first_alarm_s when early
};

EarlyWarning assess_early_warning(const std::vector<TracePoint>& trace,
                                  const std::vector<signal::LabelInterval>& labels);

}  // namespace bedexit::pipeline
