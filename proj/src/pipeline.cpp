#include "bedexit/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "bedexit/error.hpp"
#include "bedexit/io.hpp"
#include "bedexit/png_io.hpp"

namespace bedexit::pipeline {

namespace fs = std::filesystem;

std::string episode_id(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "ep%04zu", index);
  return buf;
}

std::string window_id(std::size_t episode, double t_end) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "_t%06lld", static_cast<long long>(std::llround(t_end)));
  return episode_id(episode) + buf;
}

imaging::ImagePair encode_for_model(const signal::Window& window, const imaging::EncodingConfig& config) {
  imaging::ImagePair pair = imaging::encode_window(window, config);
  imaging::quantize_u8(pair.line);
  imaging::quantize_u8(pair.texture);
  return pair;
}

EncodedDataset encode_dataset(const config::RunConfig& config, std::size_t n_episodes,
                              const synth::EpisodeSource& source) {
  EncodedDataset out;
  out.summary = synth::build_dataset(n_episodes, config.dataset_options(), source,
                                     [&](synth::Split split, std::size_t ep, const signal::Window& w) {
                                       EncodedWindow e;
                                       e.id = window_id(ep, w.t_end);
                                       e.episode = ep;
                                       e.label = w.label == signal::Label::transition ? 1 : 0;
                                       e.t_end = w.t_end;
                                       e.images = encode_for_model(w, config.encoding);
                                       out.splits[static_cast<int>(split)].push_back(std::move(e));
                                     });
  return out;
}

EncodedDataset encode_synthetic(const config::RunConfig& config) {
  return encode_dataset(config, static_cast<std::size_t>(config.synth.n_episodes), [&](std::size_t ep) {
    synth::Episode e = synth::generate_episode(config.synth, ep);
    return synth::EpisodeData{std::move(e.raw), e.labels()};
  });
}

std::vector<model::Example> as_examples(const std::vector<EncodedWindow>& windows) {
  std::vector<model::Example> out;
  out.reserve(windows.size());
  for (const auto& w : windows) out.push_back({&w.images, w.label});
  return out;
}

void write_episode(const fs::path& dir, const synth::Episode& episode) {
  io::write_atomic(dir / "raw.csv", io::format_raw_csv(episode.raw));
  io::write_atomic(dir / "labels.csv", io::format_labels_csv(episode.labels()));
}

synth::EpisodeData read_episode(const fs::path& dir, double sample_rate_hz) {
  synth::EpisodeData d;
  d.raw = io::read_raw_stream(dir / "raw.csv", sample_rate_hz);
  d.labels = io::read_labels(dir / "labels.csv");
  return d;
}

std::vector<fs::path> list_episodes(const fs::path& data_dir) {
  const fs::path root = data_dir / "episodes";
  require(fs::is_directory(root), ErrorCode::io, "no episode directory at " + root.string());
  std::vector<fs::path> dirs;
  for (const auto& entry : fs::directory_iterator(root))
    if (entry.is_directory()) dirs.push_back(entry.path());
  std::sort(dirs.begin(), dirs.end());
  require(!dirs.empty(), ErrorCode::data, "no episodes under " + root.string());
  return dirs;
}

void write_encoded_split(const fs::path& dir, const std::vector<EncodedWindow>& windows) {
  std::ostringstream manifest;
  manifest << "id,label,t_end\n";
  for (const auto& w : windows) {
    png::write_rgb8(dir / (w.id + "_line.png"), w.images.line);
    png::write_rgb8(dir / (w.id + "_texture.png"), w.images.texture);
    manifest << w.id << ',' << signal::label_name(static_cast<signal::Label>(w.label)) << ','
             << io::format_double(w.t_end) << '\n';
  }
  io::write_atomic(dir / "manifest.csv", manifest.str());
}

std::vector<EncodedWindow> read_encoded_split(const fs::path& dir) {
  const fs::path manifest = dir / "manifest.csv";
  std::istringstream in(io::read_file(manifest));
  std::string line;
  require(std::getline(in, line) && line == "id,label,t_end", ErrorCode::format,
          manifest.string() + ": expected header 'id,label,t_end'");
  std::vector<EncodedWindow> out;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto cols = io::split_csv_line(line);
    require(cols.size() == 3, ErrorCode::format, manifest.string() + ":" + std::to_string(line_no) + ": expected 3 columns");
    EncodedWindow w;
    w.id = cols[0];
    try {
      w.label = static_cast<int>(signal::parse_label(cols[1]));
      w.t_end = std::stod(cols[2]);
    } catch (const std::exception& e) {
      fail(ErrorCode::format, manifest.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
    const auto us = w.id.find('_');
    if (w.id.size() > 2 && w.id.rfind("ep", 0) == 0 && us != std::string::npos)
      w.episode = static_cast<std::size_t>(std::strtoull(w.id.substr(2, us - 2).c_str(), nullptr, 10));
    w.images.line = png::read_rgb8(dir / (w.id + "_line.png"));
    w.images.texture = png::read_rgb8(dir / (w.id + "_texture.png"));
    out.push_back(std::move(w));
  }
  return out;
}

std::vector<TracePoint> probability_trace(const model::ModelParams<float>& params, const signal::SignalFrame& frame,
                                          const config::RunConfig& config) {
  const signal::WindowSpec spec = config.window_spec();
  const std::vector<signal::LabelInterval> whole{{frame.start_time_s, frame.end_time_s(), signal::Label::non_active}};
  const std::size_t length = signal::window_length(spec, frame.sample_rate_hz);
  model::Network<float> net(params);
  std::vector<TracePoint> trace;
  for (const auto& ref : signal::plan_windows(frame, spec, whole)) {
    signal::Window w = signal::slice_window(frame, length, ref.end_index);
    w.t_end = ref.t_end;
    const double p = model::sigmoid(net.forward(encode_for_model(w, config.encoding)));
    trace.push_back({ref.t_end, p, p >= config.alarm_threshold});
  }
  return trace;
}

std::string format_trace_csv(const std::vector<TracePoint>& trace) {
  std::ostringstream out;
  out << "t_s,probability,alarm\n";
  for (const auto& p : trace)
    out << io::format_double(p.t_s) << ',' << io::format_double(p.probability) << ',' << (p.alarm ? 1 : 0) << '\n';
  return out.str();
}

imaging::ImageTensor render_trace(const signal::SignalFrame& frame, const std::vector<TracePoint>& trace,
                                  double threshold, int width, int height) {
  require(width >= 32 && height >= 32, ErrorCode::invalid_argument, "trace image too small");
  constexpr int kMargin = 8;
  imaging::Canvas canvas(width, height);
  const int x0 = kMargin, x1 = width - 1 - kMargin;
  const int y0 = kMargin, y1 = height - 1 - kMargin;
  const double t0 = frame.start_time_s, t1 = frame.end_time_s();
  auto column = [&](double t) {
    const double u = t1 > t0 ? (t - t0) / (t1 - t0) : 0.0;
    return x0 + static_cast<int>(std::lround(std::clamp(u, 0.0, 1.0) * (x1 - x0)));
  };
  if (frame.size() > 0) canvas.polyline(frame.load, x0, x1, y0, y1, {1.0f, 0.0f, 0.0f});
  const imaging::Rgb green{0.0f, 0.6f, 0.0f};
  for (std::size_t i = 0; i < trace.size(); ++i) {
    const int x = column(trace[i].t_s);
    const int y = imaging::scale_to_row(trace[i].probability, 0.0, 1.0, y0, y1);
    if (i == 0) {
      canvas.set(x, y, green);
    } else {
      canvas.line(column(trace[i - 1].t_s), imaging::scale_to_row(trace[i - 1].probability, 0.0, 1.0, y0, y1), x, y,
                  green);
    }
  }
  canvas.dashed_hline(x0, x1, imaging::scale_to_row(std::clamp(threshold, 0.0, 1.0), 0.0, 1.0, y0, y1), 6, 4,
                      {0.0f, 0.0f, 0.0f});
  return canvas.take();
}

EarlyWarning assess_early_warning(const std::vector<TracePoint>& trace,
                                  const std::vector<signal::LabelInterval>& labels) {
  EarlyWarning w;
  for (const auto& iv : labels) {
    if (iv.label == signal::Label::transition) {
      w.has_transition = true;
      w.transition_start_s = iv.start_s;
      w.exit_s = iv.end_s;
      break;
    }
  }
  for (const auto& p : trace) {
    if (p.alarm) {
      w.first_alarm_s = p.t_s;
      break;
    }
  }
  if (!w.has_transition || !w.first_alarm_s) return w;
  w.false_alarm = *w.first_alarm_s < w.transition_start_s;
  w.early = !w.false_alarm && *w.first_alarm_s < w.exit_s;
  if (w.early) w.lead_s = w.exit_s - *w.first_alarm_s;
  return w;
}

}  // namespace bedexit::pipeline
