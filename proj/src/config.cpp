#include "bedexit/config.hpp"

#include <functional>

#include "json.hpp"

#include "bedexit/error.hpp"
#include "bedexit/io.hpp"

namespace bedexit::config {

using nlohmann::ordered_json;

namespace {

using Setter = std::function<void(const ordered_json&, const std::string&)>;

[[noreturn]] void bad_type(const std::string& path, const char* want) {
  fail(ErrorCode::config, "config key '" + path + "' must be " + want);
}

Setter real(double& dst) {
  return [p = &dst](const ordered_json& v, const std::string& path) {
    if (!v.is_number()) bad_type(path, "a number");
    *p = v.get<double>();
  };
}

Setter integer(int& dst) {
  return [p = &dst](const ordered_json& v, const std::string& path) {
    if (!v.is_number_integer()) bad_type(path, "an integer");
    const auto x = v.get<std::int64_t>();
    if (x < INT32_MIN || x > INT32_MAX) bad_type(path, "a 32-bit integer");
    *p = static_cast<int>(x);
  };
}

Setter u64(std::uint64_t& dst) {
  return [p = &dst](const ordered_json& v, const std::string& path) {
    if (v.is_number_unsigned()) *p = v.get<std::uint64_t>();
    else if (v.is_number_integer() && v.get<std::int64_t>() >= 0) *p = static_cast<std::uint64_t>(v.get<std::int64_t>());
    else bad_type(path, "a non-negative integer");
  };
}

Setter boolean(bool& dst) {
  return [p = &dst](const ordered_json& v, const std::string& path) {
    if (!v.is_boolean()) bad_type(path, "true or false");
    *p = v.get<bool>();
  };
}

Setter text(std::string& dst) {
  return [p = &dst](const ordered_json& v, const std::string& path) {
    if (!v.is_string()) bad_type(path, "a string");
    *p = v.get<std::string>();
  };
}

Setter range(synth::Range& dst) {
  return [p = &dst](const ordered_json& v, const std::string& path) {
    if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number()) bad_type(path, "[lo, hi]");
    *p = {v[0].get<double>(), v[1].get<double>()};
  };
}

template <typename E>
Setter enumeration(E& dst, E (*parse_fn)(const std::string&)) {
  return [p = &dst, parse_fn](const ordered_json& v, const std::string& path) {
    if (!v.is_string()) bad_type(path, "a string");
    try {
      *p = parse_fn(v.get<std::string>());
    } catch (const Error& e) {
      fail(ErrorCode::config, "config key '" + path + "': " + e.what());
    }
  };
}

using Table = std::vector<std::pair<std::string, Setter>>;

void apply(const ordered_json& obj, const Table& table, const std::string& prefix) {
  if (!obj.is_object()) bad_type(prefix.empty() ? "<root>" : prefix, "an object");
  for (const auto& [key, value] : obj.items()) {
    const std::string path = prefix.empty() ? key : prefix + "." + key;
    bool found = false;
    for (const auto& [name, set] : table) {
      if (name == key) {
        set(value, path);
        found = true;
        break;
      }
    }
    if (!found) fail(ErrorCode::config, "unknown config key '" + path + "'");
  }
}

Setter section(const std::function<Table()>& make, const std::string& name) {
  return [make, name](const ordered_json& v, const std::string&) { apply(v, make(), name); };
}

Table root_table(RunConfig& c) {
  RunConfig* pc = &c;
  return {
      {"seed", u64(c.seed)},
      {"signal", section(
                     [pc] {
                       auto& c = *pc;
                       return Table{
                           {"sample_rate_hz", real(c.signal.sample_rate_hz)},
                           {"band_low_hz", real(c.signal.band_low_hz)},
                           {"band_high_hz", real(c.signal.band_high_hz)},
                           {"occupancy", section(
                                             [pc] {
                                               auto& occ = pc->signal.occupancy;
                                               return Table{{"horizon_s", real(occ.horizon_s)},
                                                            {"hysteresis_frac", real(occ.hysteresis_frac)},
                                                            {"min_dwell_s", real(occ.min_dwell_s)},
                                                            {"min_range_kg", real(occ.min_range_kg)},
                                                            {"min_separation_kg", real(occ.min_separation_kg)},
                                                            {"bin_kg", real(occ.bin_kg)}};
                                             },
                                             "signal.occupancy")}};
                     },
                     "signal")},
      {"window", section(
                     [pc] {
                       auto& c = *pc;
                       return Table{{"lookback_s", real(c.window.lookback_s)},
                                    {"stride_s", real(c.window.stride_s)},
                                    {"exclude_padded", boolean(c.window.exclude_padded)}};
                     },
                     "window")},
      {"encoding", section(
                       [pc] {
                         auto& c = *pc;
                         return Table{{"series_len_n", integer(c.encoding.series_len_n)},
                                      {"rp_epsilon_quantile", real(c.encoding.rp_epsilon_quantile)},
                                      {"mtf_bins_q", integer(c.encoding.mtf_bins_q)},
                                      {"image_size", integer(c.encoding.image_size)}};
                       },
                       "encoding")},
      {"model", section(
                    [pc] {
                      auto& c = *pc;
                      auto& m = c.model;
                      return Table{{"input_size", integer(m.input_size)},
                                   {"patch_size", integer(m.patch_size)},
                                   {"embed_dim", integer(m.embed_dim)},
                                   {"num_blocks_per_stream", integer(m.num_blocks_per_stream)},
                                   {"attn_heads", integer(m.attn_heads)},
                                   {"window_tokens", integer(m.window_tokens)},
                                   {"mlp_ratio", integer(m.mlp_ratio)},
                                   {"fusion_mode", enumeration(m.fusion_mode, &model::parse_fusion_mode)},
                                   {"fusion_heads", integer(m.fusion_heads)},
                                   {"dropout", real(m.dropout)},
                                   {"modality", enumeration(m.modality, &model::parse_modality)},
                                   {"alarm_threshold", real(c.alarm_threshold)}};
                    },
                    "model")},
      {"training", section(
                       [pc] {
                         auto& t = pc->training;
                         return Table{{"learning_rate", real(t.learning_rate)},
                                      {"weight_decay", real(t.weight_decay)},
                                      {"batch_size", integer(t.batch_size)},
                                      {"patience", integer(t.patience)},
                                      {"max_steps", integer(t.max_steps)},
                                      {"eval_every", integer(t.eval_every)}};
                       },
                       "training")},
      {"synth", section(
                    [pc] {
                      auto& s = pc->synth;
                      return Table{{"n_episodes", integer(s.n_episodes)},
                                   {"body_weight_kg", range(s.body_weight_kg)},
                                   {"tare_kg", range(s.tare_kg)},
                                   {"transition_minutes", range(s.transition_minutes)},
                                   {"stable_hours", range(s.stable_hours)},
                                   {"empty_minutes", range(s.empty_minutes)},
                                   {"reposition_rate_per_hour", real(s.reposition_rate_per_hour)},
                                   {"noise_std_kg", real(s.noise_std_kg)},
                                   {"positive_fraction", real(s.positive_fraction)},
                                   {"max_positives_per_episode", integer(s.max_positives_per_episode)}};
                    },
                    "synth")},
      {"paths", section(
                    [pc] {
                      auto& c = *pc;
                      return Table{{"data_dir", text(c.paths.data_dir)},
                                   {"checkpoint", text(c.paths.checkpoint)},
                                   {"out_dir", text(c.paths.out_dir)}};
                    },
                    "paths")},
  };
}

ordered_json range_json(const synth::Range& r) { return ordered_json::array({r.lo, r.hi}); }

}  // namespace

void RunConfig::finalize() {
  synth.seed = seed;
  synth.sample_rate_hz = signal.sample_rate_hz;
  training.seed = seed;
  require(signal.sample_rate_hz > 0.0, ErrorCode::config, "signal.sample_rate_hz must be positive");
  require(signal.band_low_hz > 0.0 && signal.band_low_hz < signal.band_high_hz &&
              signal.band_high_hz < signal.sample_rate_hz / 2.0,
          ErrorCode::config, "signal band must satisfy 0 < band_low_hz < band_high_hz < sample_rate_hz / 2");
  const auto& o = signal.occupancy;
  require(o.horizon_s > 0 && o.hysteresis_frac >= 0 && o.hysteresis_frac < 0.5 && o.min_dwell_s >= 0 &&
              o.min_range_kg >= 0 && o.min_separation_kg >= 0 && o.bin_kg > 0,
          ErrorCode::config, "signal.occupancy values out of range");
  require(window.lookback_s > 0 && window.stride_s >= 1.0, ErrorCode::config,
          "window.lookback_s must be positive and window.stride_s >= 1");
  window_length(window_spec(), signal.sample_rate_hz);
  encoding.validate();
  model.validate();
  require(model.input_size == encoding.image_size, ErrorCode::config,
          "model.input_size must equal encoding.image_size");
  require(alarm_threshold >= 0.0 && alarm_threshold <= 1.01, ErrorCode::config,
          "model.alarm_threshold must lie in [0, 1.01]");
  training.validate();
  synth.validate();
  require(!paths.data_dir.empty() && !paths.checkpoint.empty() && !paths.out_dir.empty(), ErrorCode::config,
          "paths entries must be non-empty");
}

synth::DatasetOptions RunConfig::dataset_options() const {
  synth::DatasetOptions d;
  d.signal = signal;
  d.window = window_spec();
  d.exclude_padded = window.exclude_padded;
  d.positive_fraction = synth.positive_fraction;
  d.max_positives_per_episode = synth.max_positives_per_episode;
  d.seed = seed;
  return d;
}

RunConfig parse(const std::string& json_text) {
  ordered_json doc;
  try {
    doc = ordered_json::parse(json_text);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::config, std::string("config is not valid JSON: ") + e.what());
  }
  RunConfig c;
  apply(doc, root_table(c), "");
  return c;
}

RunConfig load(const std::filesystem::path& path) {
  try {
    return parse(io::read_file(path));
  } catch (const Error& e) {
    if (e.code() == ErrorCode::config) fail(ErrorCode::config, path.string() + ": " + e.what());
    throw;
  }
}

std::string to_json(const RunConfig& c) {
  const auto& o = c.signal.occupancy;
  const auto& m = c.model;
  const auto& t = c.training;
  const auto& s = c.synth;
  ordered_json j;
  j["seed"] = c.seed;
  j["signal"] = {{"sample_rate_hz", c.signal.sample_rate_hz},
                 {"band_low_hz", c.signal.band_low_hz},
                 {"band_high_hz", c.signal.band_high_hz},
                 {"occupancy",
                  {{"horizon_s", o.horizon_s},
                   {"hysteresis_frac", o.hysteresis_frac},
                   {"min_dwell_s", o.min_dwell_s},
                   {"min_range_kg", o.min_range_kg},
                   {"min_separation_kg", o.min_separation_kg},
                   {"bin_kg", o.bin_kg}}}};
  j["window"] = {{"lookback_s", c.window.lookback_s},
                 {"stride_s", c.window.stride_s},
                 {"exclude_padded", c.window.exclude_padded}};
  j["encoding"] = {{"series_len_n", c.encoding.series_len_n},
                   {"rp_epsilon_quantile", c.encoding.rp_epsilon_quantile},
                   {"mtf_bins_q", c.encoding.mtf_bins_q},
                   {"image_size", c.encoding.image_size}};
  j["model"] = {{"input_size", m.input_size},
                {"patch_size", m.patch_size},
                {"embed_dim", m.embed_dim},
                {"num_blocks_per_stream", m.num_blocks_per_stream},
                {"attn_heads", m.attn_heads},
                {"window_tokens", m.window_tokens},
                {"mlp_ratio", m.mlp_ratio},
                {"fusion_mode", model::fusion_mode_name(m.fusion_mode)},
                {"fusion_heads", m.fusion_heads},
                {"dropout", m.dropout},
                {"modality", model::modality_name(m.modality)},
                {"alarm_threshold", c.alarm_threshold}};
  j["training"] = {{"learning_rate", t.learning_rate},
                   {"weight_decay", t.weight_decay},
                   {"batch_size", t.batch_size},
                   {"patience", t.patience},
                   {"max_steps", t.max_steps},
                   {"eval_every", t.eval_every}};
  j["synth"] = {{"n_episodes", s.n_episodes},
                {"body_weight_kg", range_json(s.body_weight_kg)},
                {"tare_kg", range_json(s.tare_kg)},
                {"transition_minutes", range_json(s.transition_minutes)},
                {"stable_hours", range_json(s.stable_hours)},
                {"empty_minutes", range_json(s.empty_minutes)},
                {"reposition_rate_per_hour", s.reposition_rate_per_hour},
                {"noise_std_kg", s.noise_std_kg},
                {"positive_fraction", s.positive_fraction},
                {"max_positives_per_episode", s.max_positives_per_episode}};
  j["paths"] = {{"data_dir", c.paths.data_dir}, {"checkpoint", c.paths.checkpoint}, {"out_dir", c.paths.out_dir}};
  return j.dump(2) + "\n";
}

RunConfig resolve(const std::optional<std::filesystem::path>& path, std::optional<std::uint64_t> seed_override) {
  RunConfig c = path ? load(*path) : RunConfig{};
  if (seed_override) c.seed = *seed_override;
  c.finalize();
  return c;
}

}  // namespace bedexit::config
