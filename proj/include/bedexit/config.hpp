#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "bedexit/fusion_model.hpp"
#include "bedexit/imaging.hpp"
#include "bedexit/signal_core.hpp"
#include "bedexit/synth.hpp"
#include "bedexit/training.hpp"

namespace bedexit::config {

struct WindowConfig {
  double lookback_s = 10800.0;
  double stride_s = 30.0;
  bool exclude_padded = false;
};

struct PathConfig {
  std::string data_dir = "data";
  std::string checkpoint = "run/model.ckpt";
  std::string out_dir = "run";
};

/// Everything a CLI run depends on. `seed` drives every random stream (synthesis, window
/// selection, split assignment, initialisation, shuffling, dropout).
struct RunConfig {
  std::uint64_t seed = 42;
  signal::SignalConfig signal;
  WindowConfig window;
  imaging::EncodingConfig encoding{64, 0.10, 8, 64};
  model::ModelConfig model;
  double alarm_threshold = 0.5;
  train::TrainConfig training;
  synth::SynthConfig synth;
  PathConfig paths;

  /// Copies `seed` into the per-module configs and validates every section.
  void finalize();

  signal::WindowSpec window_spec() const { return {window.lookback_s, window.stride_s}; }
  synth::DatasetOptions dataset_options() const;
};

/// Parses a JSON document. Every key is optional; unknown keys and wrongly typed values
/// throw Error(config) naming the key path.
RunConfig parse(const std::string& json_text);

RunConfig load(const std::filesystem::path& path);

/// Resolved configuration (all fields) as pretty-printed JSON; parse(to_json(c)) == c.
std::string to_json(const RunConfig& config);

/// Loads `path` when given, otherwise the defaults; applies the seed override and finalizes.
RunConfig resolve(const std::optional<std::filesystem::path>& path, std::optional<std::uint64_t> seed_override);

}  // namespace bedexit::config
