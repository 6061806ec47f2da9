#include "doctest.h"
#include "json.hpp"

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "bedexit/checkpoint.hpp"
#include "bedexit/cli.hpp"
#include "bedexit/config.hpp"
#include "bedexit/error.hpp"
#include "bedexit/io.hpp"
#include "bedexit/metrics.hpp"
#include "bedexit/pipeline.hpp"
#include "bedexit/png_io.hpp"

namespace fs = std::filesystem;
using namespace bedexit;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("bedexit_unit_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

int run_cli(const std::vector<std::string>& args, std::string* out_text = nullptr, std::string* err_text = nullptr) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  if (out_text) *out_text = out.str();
  if (err_text) *err_text = err.str();
  return code;
}

std::string small_config(const fs::path& root) {
  return R"({
  "seed": 7,
  "window": {"lookback_s": 1800, "stride_s": 60},
  "encoding": {"image_size": 32, "series_len_n": 32},
  "model": {"input_size": 32, "embed_dim": 16, "patch_size": 8, "num_blocks_per_stream": 1},
  "training": {"max_steps": 4, "eval_every": 2, "batch_size": 8},
  "synth": {"n_episodes": 10, "stable_hours": [0.5, 0.6]},
  "paths": {"data_dir": ")" + (root / "data").string() + R"(", "out_dir": ")" + (root / "run").string() +
         R"(", "checkpoint": ")" + (root / "run" / "model.ckpt").string() + R"("}
})";
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) out.push_back(line);
  return out;
}

}  // namespace

TEST_CASE("double formatting round trips") {
  CounterRng rng(41);
  for (int i = 0; i < 1000; ++i) {
    const double v = (rng.uniform() - 0.5) * std::pow(10.0, static_cast<double>(rng.below(40)) - 20.0);
    CHECK(std::stod(io::format_double(v)) == v);
  }
  CHECK(io::format_double(0.5) == "0.5");
}

TEST_CASE("raw stream and label files round trip") {
  const auto dir = scratch("raw");
  signal::RawStream raw;
  raw.sample_rate_hz = 25.0;
  for (int i = 0; i < 100; ++i) {
    raw.timestamps.push_back(i / 25.0);
    raw.load.push_back(60.0 + 0.01 * i);
  }
  io::write_atomic(dir / "raw.csv", io::format_raw_csv(raw));
  const auto back = io::read_raw_stream(dir / "raw.csv", 25.0);
  CHECK(back.load == raw.load);
  CHECK(back.timestamps == raw.timestamps);
  CHECK_THROWS_AS(io::read_raw_stream(dir / "raw.csv", 10.0), Error);

  std::ofstream(dir / "raw.jsonl") << "{\"t\": 0, \"load\": 1.5}\n{\"t\": 0.04, \"load\": 2.5}\n";
  const auto j = io::read_raw_stream(dir / "raw.jsonl", 25.0);
  CHECK(j.load == std::vector<double>{1.5, 2.5});

  const std::vector<signal::LabelInterval> labels{{0.0, 10.5, signal::Label::non_active},
                                                  {10.5, 70.25, signal::Label::transition}};
  io::write_atomic(dir / "labels.csv", io::format_labels_csv(labels));
  const auto lb = io::read_labels(dir / "labels.csv");
  REQUIRE(lb.size() == 2);
  CHECK(lb[1].start_s == 10.5);
  CHECK(lb[1].label == signal::Label::transition);

  std::ofstream(dir / "bad.csv") << "timestamp_s,load_kg\n0,abc\n";
  CHECK_THROWS_AS(io::read_raw_stream(dir / "bad.csv", 25.0), Error);
  CHECK_THROWS_AS(io::read_raw_stream(dir / "missing.csv", 25.0), Error);
}

TEST_CASE("checkpoint round trip is bit exact") {
  model::ModelConfig c;
  c.input_size = 32;
  c.embed_dim = 16;
  c.fusion_mode = model::FusionMode::gated;
  const auto p = model::init_params<float>(c, 12);
  const auto bytes = checkpoint::serialize(p);
  CHECK(bytes.substr(0, 4) == "BXFC");
  const auto q = checkpoint::deserialize(bytes);
  CHECK(q.config == c);
  REQUIRE(q.size() == p.size());
  for (std::size_t i = 0; i < p.size(); ++i) CHECK(q.tensors[i] == p.tensors[i]);
  CHECK(checkpoint::serialize(q) == bytes);

  const auto dir = scratch("ckpt");
  checkpoint::save(dir / "m.ckpt", p);
  CHECK(io::read_file(dir / "m.ckpt") == bytes);
  CHECK(checkpoint::serialize(checkpoint::load(dir / "m.ckpt")) == bytes);
}

TEST_CASE("corrupt checkpoints are rejected") {
  model::ModelConfig c;
  c.input_size = 16;
  c.patch_size = 4;
  c.embed_dim = 8;
  c.attn_heads = 2;
  c.fusion_heads = 2;
  const auto bytes = checkpoint::serialize(model::init_params<float>(c, 1));
  auto expect_checkpoint_error = [](const std::string& b) {
    try {
      checkpoint::deserialize(b);
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::checkpoint);
    }
  };
  expect_checkpoint_error("XXXX" + bytes.substr(4));
  expect_checkpoint_error(bytes.substr(0, bytes.size() - 3));
  expect_checkpoint_error(bytes + "x");
  std::string nan_bytes = bytes;
  const float nan = std::nanf("");
  std::memcpy(nan_bytes.data() + nan_bytes.size() - 4, &nan, 4);
  expect_checkpoint_error(nan_bytes);

  const auto p = checkpoint::deserialize(bytes);
  CHECK_NOTHROW(checkpoint::check_compatible(p, c));
  model::ModelConfig other = c;
  other.dropout = 0.3;
  CHECK_NOTHROW(checkpoint::check_compatible(p, other));
  other.fusion_mode = model::FusionMode::mid_concat;
  CHECK_THROWS_AS(checkpoint::check_compatible(p, other), Error);
}

TEST_CASE("config parse, echo and errors") {
  const auto c = config::parse(R"({"seed": 9, "model": {"fusion_mode": "gated"}, "synth": {"tare_kg": [1, 2]}})");
  CHECK(c.seed == 9);
  CHECK(c.model.fusion_mode == model::FusionMode::gated);
  CHECK(c.synth.tare_kg.hi == 2.0);
  auto f = c;
  f.finalize();
  CHECK(f.synth.seed == 9);
  CHECK(f.training.seed == 9);
  const auto text = config::to_json(f);
  auto again = config::parse(text);
  again.finalize();
  CHECK(config::to_json(again) == text);

  auto code_of = [](const std::string& json) {
    try {
      auto r = config::parse(json);
      r.finalize();
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::usage;
  };
  CHECK(code_of(R"({"modle": {}})") == ErrorCode::config);
  CHECK(code_of(R"({"model": {"embed_dim": "big"}})") == ErrorCode::config);
  CHECK(code_of(R"({"encoding": {"image_size": 32}})") == ErrorCode::config);
  CHECK(code_of(R"({"window": {"stride_s": 0}})") == ErrorCode::config);
  CHECK(code_of("{not json") == ErrorCode::config);

  const auto r = config::resolve(std::nullopt, 123);
  CHECK(r.seed == 123);
  CHECK(r.synth.seed == 123);
}

TEST_CASE("ids and encoded splits round trip through PNG") {
  CHECK(pipeline::episode_id(3) == "ep0003");
  CHECK(pipeline::window_id(12, 3600.0) == "ep0012_t003600");

  CounterRng rng(42);
  signal::Window w;
  for (auto& ch : w.channels) {
    ch.resize(2000);
    for (auto& v : ch) v = rng.uniform(0.0, 80.0);
  }
  const imaging::EncodingConfig enc{32, 0.1, 8, 32};
  std::vector<pipeline::EncodedWindow> ws;
  for (int i = 0; i < 3; ++i)
    ws.push_back({pipeline::window_id(4, 600.0 * (i + 1)), 4, i % 2, 600.0 * (i + 1), pipeline::encode_for_model(w, enc)});
  const auto dir = scratch("encoded");
  pipeline::write_encoded_split(dir, ws);
  const auto back = pipeline::read_encoded_split(dir);
  REQUIRE(back.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(back[i].id == ws[i].id);
    CHECK(back[i].episode == 4);
    CHECK(back[i].label == ws[i].label);
    CHECK(back[i].t_end == ws[i].t_end);
    CHECK(back[i].images.line.values == ws[i].images.line.values);
    CHECK(back[i].images.texture.values == ws[i].images.texture.values);
  }
}

TEST_CASE("early warning assessment") {
  const std::vector<signal::LabelInterval> labels{{0.0, 1000.0, signal::Label::non_active},
                                                  {1000.0, 1300.0, signal::Label::transition}};
  auto trace_with_alarm_at = [](std::optional<double> t) {
    std::vector<pipeline::TracePoint> tr;
    for (double s = 60.0; s <= 1400.0; s += 60.0) {
      const bool a = t && s >= *t;
      tr.push_back({s, a ? 0.9 : 0.1, a});
    }
    return tr;
  };
  const auto early = pipeline::assess_early_warning(trace_with_alarm_at(1080.0), labels);
  CHECK(early.has_transition);
  CHECK(early.early);
  CHECK_FALSE(early.false_alarm);
  CHECK(early.lead_s == 220.0);
  const auto late = pipeline::assess_early_warning(trace_with_alarm_at(1320.0), labels);
  CHECK_FALSE(late.early);
  const auto noisy = pipeline::assess_early_warning(trace_with_alarm_at(600.0), labels);
  CHECK(noisy.false_alarm);
  CHECK_FALSE(noisy.early);
  const auto silent = pipeline::assess_early_warning(trace_with_alarm_at(std::nullopt), labels);
  CHECK_FALSE(silent.first_alarm_s.has_value());
  CHECK_FALSE(silent.early);
}

TEST_CASE("trace rendering and CSV") {
  signal::SignalFrame f;
  f.sample_rate_hz = 1.0;
  for (int i = 0; i < 600; ++i) {
    f.load.push_back(i < 300 ? 70.0 : 5.0);
    f.vibration.push_back(0.0);
    f.occupancy.push_back(i < 300);
    f.in_bed_duration.push_back(0.0);
  }
  const std::vector<pipeline::TracePoint> tr{{60.0, 0.2, false}, {120.0, 0.75, true}};
  CHECK(pipeline::format_trace_csv(tr) == "t_s,probability,alarm\n60,0.2,0\n120,0.75,1\n");
  const auto img = pipeline::render_trace(f, tr, 0.5);
  CHECK(img.width == 640);
  CHECK(img.height == 240);
  CHECK(img.valid());
  CHECK(png::encode_rgb8(img) == png::encode_rgb8(pipeline::render_trace(f, tr, 0.5)));
}

TEST_CASE("CLI usage errors and help") {
  std::string out, err;
  CHECK(run_cli({"--help"}, &out) == 0);
  CHECK(out.find("synth") != std::string::npos);
  CHECK(run_cli({"frobnicate"}, nullptr, &err) == 2);
  CHECK(err.rfind("error: E_USAGE", 0) == 0);
  CHECK(run_cli({"train", "--config", "/nonexistent/cfg.json"}, nullptr, &err) != 0);
  CHECK(run_cli({"eval", "--split", "dev"}, nullptr, &err) == 2);
}

TEST_CASE("CLI pipeline on a small config") {
  const auto root = scratch("cli");
  io::write_atomic(root / "cfg.json", small_config(root));
  const std::string cfg = (root / "cfg.json").string();
  std::string out, err;
  REQUIRE(run_cli({"synth", "--config", cfg}, &out, &err) == 0);
  CHECK(fs::exists(root / "data" / "episodes" / "ep0000" / "raw.csv"));
  CHECK(fs::exists(root / "data" / "episodes.csv"));
  REQUIRE(run_cli({"encode", "--config", cfg}, &out, &err) == 0);
  CHECK(fs::exists(root / "data" / "encoded" / "train" / "manifest.csv"));
  REQUIRE(run_cli({"train", "--config", cfg}, &out, &err) == 0);
  CHECK(fs::exists(root / "run" / "model.ckpt"));
  CHECK(lines_of(io::read_file(root / "run" / "train_log.csv")).front() == "step,split,loss,accuracy");
  REQUIRE(run_cli({"eval", "--config", cfg, "--split", "val"}, &out, &err) == 0);
  CHECK(out.find("F1") != std::string::npos);
  CHECK(fs::exists(root / "run" / "eval_val.json"));
  REQUIRE(run_cli({"predict", "--config", cfg, "--split", "val"}, &out, &err) == 0);
  const auto preds = lines_of(io::read_file(root / "run" / "predictions_val.jsonl"));
  CHECK_FALSE(preds.empty());
  std::vector<double> probs;
  std::vector<int> labels;
  for (const auto& line : preds) {
    const auto j = nlohmann::json::parse(line);
    probs.push_back(j.at("probability").get<double>());
    labels.push_back(j.at("label").get<int>());
    CHECK(j.at("alarm").get<bool>() == (probs.back() >= 0.5));
  }
  CHECK(metrics::to_json(metrics::evaluate(probs, labels, 0.5)) == io::read_file(root / "run" / "eval_val.json"));
  REQUIRE(run_cli({"trace", "--config", cfg, "--episode", "ep0000"}, &out, &err) == 0);
  CHECK(fs::exists(root / "run" / "traces" / "ep0000_trace.csv"));
  CHECK(fs::exists(root / "run" / "traces" / "ep0000_trace.png"));

  // Checkpoint built for another architecture.
  std::string bad = small_config(root);
  bad.replace(bad.find("\"embed_dim\": 16"), 15, "\"embed_dim\": 32");
  io::write_atomic(root / "bad.json", bad);
  CHECK(run_cli({"eval", "--config", (root / "bad.json").string()}, nullptr, &err) ==
        static_cast<int>(ErrorCode::checkpoint));
  CHECK(err.rfind("error: E_CHECKPOINT", 0) == 0);
}

TEST_CASE("CLI binary exit codes") {
  const std::string bin = BEDEXIT_CLI_PATH;
  CHECK(std::system((bin + " --help > /dev/null").c_str()) == 0);
  CHECK(std::system((bin + " nope > /dev/null 2>&1").c_str()) != 0);
}
