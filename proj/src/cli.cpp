#include "bedexit/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"

#include "bedexit/checkpoint.hpp"
#include "bedexit/config.hpp"
#include "bedexit/error.hpp"
#include "bedexit/io.hpp"
#include "bedexit/metrics.hpp"
#include "bedexit/pipeline.hpp"
#include "bedexit/png_io.hpp"
#include "bedexit/training.hpp"

namespace bedexit::cli {

namespace fs = std::filesystem;

namespace {

struct Options {
  std::string config_path;
  std::string out;
  std::string data;
  std::string checkpoint;
  std::string split = "test";
  std::string input;
  std::string episode;
  std::uint64_t seed = 0;
  bool seed_given = false;
};

config::RunConfig resolve(const Options& o) {
  std::optional<fs::path> path;
  if (!o.config_path.empty()) path = o.config_path;
  std::optional<std::uint64_t> seed;
  if (o.seed_given) seed = o.seed;
  config::RunConfig c = config::resolve(path, seed);
  if (!o.data.empty()) c.paths.data_dir = o.data;
  if (!o.checkpoint.empty()) c.paths.checkpoint = o.checkpoint;
  return c;
}

fs::path out_dir(const Options& o, const config::RunConfig& c, const fs::path& fallback) {
  if (!o.out.empty()) return o.out;
  return fallback.empty() ? fs::path(c.paths.out_dir) : fallback;
}

void echo_config(const fs::path& dir, const config::RunConfig& c) { io::write_atomic(dir / "config.json", config::to_json(c)); }

fs::path encoded_dir(const config::RunConfig& c) { return fs::path(c.paths.data_dir) / "encoded"; }

model::ModelParams<float> load_checkpoint(const config::RunConfig& c) {
  model::ModelParams<float> params = checkpoint::load(c.paths.checkpoint);
  checkpoint::check_compatible(params, c.model);
  return params;
}

std::string json_prediction(const std::string& id_key, const std::string& id, const train::Prediction& p,
                            std::optional<int> label) {
  char prob[40];
  std::snprintf(prob, sizeof(prob), "%.17g", p.probability);
  std::string s = "{\"" + id_key + "\":" + id;
  if (label) s += ",\"label\":" + std::to_string(*label);
  s += std::string(",\"probability\":") + prob + ",\"alarm\":" + (p.alarm ? "true" : "false") + "}\n";
  return s;
}

std::string quoted(const std::string& s) { return "\"" + s + "\""; }

int cmd_synth(const Options& o, std::ostream& out) {
  const config::RunConfig c = resolve(o);
  const fs::path dir = out_dir(o, c, c.paths.data_dir);
  const auto splits = synth::split_episodes(static_cast<std::size_t>(c.synth.n_episodes), c.seed);
  std::vector<std::string> split_of(static_cast<std::size_t>(c.synth.n_episodes));
  for (int s = 0; s < 3; ++s)
    for (auto ep : splits[static_cast<std::size_t>(s)]) split_of[ep] = synth::split_name(static_cast<synth::Split>(s));
  std::ostringstream index;
  index << "id,split,transition_start_s,exit_s,end_s\n";
  for (std::size_t ep = 0; ep < split_of.size(); ++ep) {
    const synth::Episode e = synth::generate_episode(c.synth, ep);
    const std::string id = pipeline::episode_id(ep);
    pipeline::write_episode(dir / "episodes" / id, e);
    index << id << ',' << split_of[ep] << ',' << io::format_double(e.plan.transition_start_s) << ','
          << io::format_double(e.plan.exit_s) << ',' << io::format_double(e.plan.end_s) << '\n';
  }
  io::write_atomic(dir / "episodes.csv", index.str());
  echo_config(dir, c);
  out << "wrote " << split_of.size() << " episodes to " << (dir / "episodes").string() << "\n";
  return 0;
}

int cmd_encode(const Options& o, std::ostream& out) {
  const config::RunConfig c = resolve(o);
  const auto episodes = pipeline::list_episodes(c.paths.data_dir);
  const fs::path dir = out_dir(o, c, encoded_dir(c));
  const auto data = pipeline::encode_dataset(c, episodes.size(), [&](std::size_t i) {
    return pipeline::read_episode(episodes[i], c.signal.sample_rate_hz);
  });
  for (int s = 0; s < 3; ++s) {
    const auto split = static_cast<synth::Split>(s);
    pipeline::write_encoded_split(dir / synth::split_name(split), data.split(split));
    out << synth::split_name(split) << ": " << data.summary.windows[static_cast<std::size_t>(s)] << " windows ("
        << data.summary.positives[static_cast<std::size_t>(s)] << " transition) from "
        << data.summary.episodes[static_cast<std::size_t>(s)].size() << " episodes\n";
  }
  echo_config(dir, c);
  return 0;
}

int cmd_train(const Options& o, std::ostream& out) {
  const config::RunConfig c = resolve(o);
  const fs::path dir = out_dir(o, c, {});
  const auto train_set = pipeline::read_encoded_split(encoded_dir(c) / "train");
  const auto val_set = pipeline::read_encoded_split(encoded_dir(c) / "val");
  const auto tr = pipeline::as_examples(train_set);
  const auto va = pipeline::as_examples(val_set);
  const auto result = train::train(c.model, c.training, tr, va, [&](const train::LogRow& r) {
    out << "step " << r.step << " " << r.split << " loss " << io::format_double(r.loss) << " accuracy "
        << io::format_double(r.accuracy) << "\n";
  });
  const fs::path ckpt = o.checkpoint.empty() ? dir / "model.ckpt" : fs::path(o.checkpoint);
  checkpoint::save(ckpt, result.best);
  io::write_atomic(dir / "train_log.csv", train::format_log_csv(result.log));
  std::ostringstream summary;
  summary << "{\"best_step\":" << result.best_step
          << ",\"best_val_accuracy\":" << io::format_double(result.best_val_accuracy)
          << ",\"steps_run\":" << result.steps_run << ",\"early_stopped\":" << (result.early_stopped ? "true" : "false")
          << "}\n";
  io::write_atomic(dir / "train_summary.json", summary.str());
  echo_config(dir, c);
  out << "best step " << result.best_step << " (val accuracy " << io::format_double(result.best_val_accuracy)
      << "), checkpoint " << ckpt.string() << "\n";
  return 0;
}

int cmd_eval(const Options& o, std::ostream& out) {
  const config::RunConfig c = resolve(o);
  const fs::path dir = out_dir(o, c, {});
  const auto params = load_checkpoint(c);
  const auto split = synth::parse_split(o.split);
  const auto windows = pipeline::read_encoded_split(encoded_dir(c) / synth::split_name(split));
  std::vector<imaging::ImagePair> images;
  std::vector<int> labels;
  for (const auto& w : windows) {
    images.push_back(w.images);
    labels.push_back(w.label);
  }
  const auto probs = train::predict_probabilities(params, images);
  const auto report = metrics::evaluate(probs, labels, c.alarm_threshold);
  out << metrics::format_report(report);
  io::write_atomic(dir / ("eval_" + synth::split_name(split) + ".json"), metrics::to_json(report));
  echo_config(dir, c);
  return 0;
}

int cmd_predict(const Options& o, std::ostream& out) {
  const config::RunConfig c = resolve(o);
  const fs::path dir = out_dir(o, c, {});
  const auto params = load_checkpoint(c);
  model::Network<float> net(params);
  std::string lines;
  std::string name;
  if (!o.input.empty()) {
    const signal::RawStream raw = io::read_raw_stream(o.input, c.signal.sample_rate_hz);
    const signal::SignalFrame frame = signal::derive_frame(raw, c.signal);
    for (const auto& p : pipeline::probability_trace(params, frame, c)) {
      train::Prediction pred{p.probability, p.alarm};
      lines += json_prediction("t_end", io::format_double(p.t_s), pred, std::nullopt);
    }
    name = "predictions_" + fs::path(o.input).stem().string() + ".jsonl";
  } else {
    const auto split = synth::parse_split(o.split);
    for (const auto& w : pipeline::read_encoded_split(encoded_dir(c) / synth::split_name(split))) {
      const auto pred = train::make_prediction(net.forward(w.images), c.alarm_threshold);
      lines += json_prediction("id", quoted(w.id), pred, w.label);
    }
    name = "predictions_" + synth::split_name(split) + ".jsonl";
  }
  io::write_atomic(dir / name, lines);
  echo_config(dir, c);
  out << "wrote " << (dir / name).string() << "\n";
  return 0;
}

int cmd_trace(const Options& o, std::ostream& out) {
  const config::RunConfig c = resolve(o);
  const fs::path dir = out_dir(o, c, {}) / "traces";
  const auto params = load_checkpoint(c);
  const auto episodes = pipeline::list_episodes(c.paths.data_dir);
  std::vector<std::size_t> chosen;
  if (!o.episode.empty()) {
    for (std::size_t i = 0; i < episodes.size(); ++i)
      if (episodes[i].filename() == o.episode) chosen.push_back(i);
    require(!chosen.empty(), ErrorCode::invalid_argument, "no episode named '" + o.episode + "'");
  } else {
    const auto split = synth::parse_split(o.split);
    chosen = synth::split_episodes(episodes.size(), c.seed)[static_cast<std::size_t>(split)];
  }
  std::ostringstream summary;
  summary << "id,transition_start_s,exit_s,first_alarm_s,lead_s,early,false_alarm\n";
  std::size_t with_transition = 0, early = 0;
  std::vector<double> leads;
  for (const std::size_t i : chosen) {
    const std::string id = episodes[i].filename().string();
    const auto data = pipeline::read_episode(episodes[i], c.signal.sample_rate_hz);
    const signal::SignalFrame frame = signal::derive_frame(data.raw, c.signal);
    const auto trace = pipeline::probability_trace(params, frame, c);
    io::write_atomic(dir / (id + "_trace.csv"), pipeline::format_trace_csv(trace));
    png::write_rgb8(dir / (id + "_trace.png"), pipeline::render_trace(frame, trace, c.alarm_threshold));
    const auto w = pipeline::assess_early_warning(trace, data.labels);
    if (w.has_transition) ++with_transition;
    if (w.early) {
      ++early;
      leads.push_back(w.lead_s);
    }
    summary << id << ',' << (w.has_transition ? io::format_double(w.transition_start_s) : "") << ','
            << (w.has_transition ? io::format_double(w.exit_s) : "") << ','
            << (w.first_alarm_s ? io::format_double(*w.first_alarm_s) : "") << ','
            << (w.early ? io::format_double(w.lead_s) : "") << ',' << (w.early ? 1 : 0) << ','
            << (w.false_alarm ? 1 : 0) << '\n';
  }
  io::write_atomic(dir / "early_warning.csv", summary.str());
  echo_config(dir, c);
  out << "traced " << chosen.size() << " episodes; " << early << " of " << with_transition
      << " alarmed during the transition before exit";
  if (!leads.empty()) {
    std::sort(leads.begin(), leads.end());
    const std::size_t m = leads.size();
    const double median = m % 2 ? leads[m / 2] : 0.5 * (leads[m / 2 - 1] + leads[m / 2]);
    out << ", median lead " << io::format_double(median) << " s";
  }
  out << "\n";
  return 0;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Bed-exit prediction from load-cell signals"};
  app.require_subcommand(1);
  Options o;
  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config_path, "JSON run configuration");
    sub->add_option("--out", o.out, "output directory");
    sub->add_option("--seed", o.seed, "seed (overrides the config)")->each([&](const std::string&) { o.seed_given = true; });
    sub->add_option("--data", o.data, "data directory (overrides paths.data_dir)");
  };
  auto* synth_cmd = app.add_subcommand("synth", "generate synthetic episodes");
  common(synth_cmd);
  auto* encode_cmd = app.add_subcommand("encode", "encode windows of every episode into image pairs");
  common(encode_cmd);
  auto* train_cmd = app.add_subcommand("train", "train a model on the encoded train/val splits");
  common(train_cmd);
  train_cmd->add_option("--checkpoint", o.checkpoint, "checkpoint output path");
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on an encoded split");
  common(eval_cmd);
  auto* predict_cmd = app.add_subcommand("predict", "predict windows of a raw stream or an encoded split");
  common(predict_cmd);
  auto* trace_cmd = app.add_subcommand("trace", "probability traces over whole episodes");
  common(trace_cmd);
  for (auto* sub : {eval_cmd, predict_cmd, trace_cmd}) {
    sub->add_option("--checkpoint", o.checkpoint, "checkpoint path");
    sub->add_option("--split", o.split, "train, val or test")->check(CLI::IsMember({"train", "val", "test"}));
  }
  predict_cmd->add_option("--input", o.input, "raw load file (CSV or JSON lines)");
  trace_cmd->add_option("--episode", o.episode, "single episode id");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << error_code_name(ErrorCode::usage) << ": " << e.what() << "\n";
    return static_cast<int>(ErrorCode::usage);
  }

  try {
    if (synth_cmd->parsed()) return cmd_synth(o, out);
    if (encode_cmd->parsed()) return cmd_encode(o, out);
    if (train_cmd->parsed()) return cmd_train(o, out);
    if (eval_cmd->parsed()) return cmd_eval(o, out);
    if (predict_cmd->parsed()) return cmd_predict(o, out);
    if (trace_cmd->parsed()) return cmd_trace(o, out);
  } catch (const Error& e) {
    err << "error: " << error_code_name(e.code()) << ": " << e.what() << "\n";
    return static_cast<int>(e.code());
  } catch (const fs::filesystem_error& e) {
    err << "error: " << error_code_name(ErrorCode::io) << ": " << e.what() << "\n";
    return static_cast<int>(ErrorCode::io);
  } catch (const std::exception& e) {
    err << "error: E_INTERNAL: " << e.what() << "\n";
    return 1;
  }
  return static_cast<int>(ErrorCode::usage);
}

}  // namespace bedexit::cli
