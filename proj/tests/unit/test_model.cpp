#include "doctest.h"

#include <algorithm>
#include <cmath>

#include "bedexit/error.hpp"
#include "bedexit/fusion_model.hpp"
#include "bedexit/training.hpp"

using namespace bedexit;
using namespace bedexit::model;

namespace {

imaging::ImagePair random_pair(int n, CounterRng& rng) {
  imaging::ImagePair p{imaging::ImageTensor(n, n, 3), imaging::ImageTensor(n, n, 3)};
  for (auto& v : p.line.values) v = static_cast<float>(rng.uniform());
  for (auto& v : p.texture.values) v = static_cast<float>(rng.uniform());
  return p;
}

ModelConfig tiny(FusionMode mode, Modality modality = Modality::both) {
  ModelConfig c;
  c.input_size = 16;
  c.patch_size = 4;
  c.embed_dim = 8;
  c.attn_heads = 2;
  c.fusion_heads = 2;
  c.window_tokens = 2;
  c.num_blocks_per_stream = 1;
  c.fusion_mode = mode;
  c.modality = modality;
  return c;
}

template <typename T>
void perturb(ModelParams<T>& p, CounterRng& rng, double scale) {
  for (auto& t : p.tensors)
    for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] += static_cast<T>(scale * (rng.uniform() - 0.5));
}

double worst_gradient_error(ModelParams<double>& p, std::span<const Example> batch) {
  auto g = Gradients<double>::zeros_like(p);
  loss_and_gradients<double>(p, batch, g);
  double worst = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k)
    for (Eigen::Index i = 0; i < p.tensors[k].size(); ++i) {
      double& w = p.tensors[k].data()[i];
      const double orig = w, h = 1e-5;
      w = orig + h;
      const double up = batch_loss<double>(p, batch);
      w = orig - h;
      const double down = batch_loss<double>(p, batch);
      w = orig;
      const double fd = (up - down) / (2 * h), an = g.tensors[k].data()[i];
      worst = std::max(worst, std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-6}));
    }
  return worst;
}

struct ToySet {
  std::vector<imaging::ImagePair> images;
  std::vector<Example> examples;
};

// Class 1 has a bright line image, class 0 a dark one; textures are pure noise.
ToySet separable_toy(std::size_t n, int size, std::uint64_t seed, bool flip = false) {
  CounterRng rng(seed);
  ToySet s;
  s.images.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto p = random_pair(size, rng);
    const int label = static_cast<int>(i % 2);
    for (auto& v : p.line.values) v = static_cast<float>((label ? 0.7 : 0.3) + 0.2 * (rng.uniform() - 0.5));
    s.images.push_back(std::move(p));
  }
  for (std::size_t i = 0; i < n; ++i) s.examples.push_back({&s.images[i], static_cast<int>(i % 2) ^ (flip ? 1 : 0)});
  return s;
}

train::TrainConfig toy_training() {
  train::TrainConfig t;
  t.learning_rate = 1e-2;
  t.batch_size = 8;
  t.max_steps = 300;
  t.eval_every = 10;
  t.patience = 100;
  t.seed = 5;
  return t;
}

}  // namespace

TEST_CASE("name round trips") {
  for (auto m : {FusionMode::early_concat, FusionMode::mid_concat, FusionMode::gated, FusionMode::cross})
    CHECK(parse_fusion_mode(fusion_mode_name(m)) == m);
  for (auto m : {Modality::both, Modality::line, Modality::texture}) CHECK(parse_modality(modality_name(m)) == m);
  CHECK_THROWS_AS(parse_fusion_mode("late"), Error);
  CHECK_THROWS_AS(parse_modality("audio"), Error);
}

TEST_CASE("config derived sizes and validation") {
  ModelConfig c;
  CHECK(c.grid() == 8);
  CHECK(c.tokens() == 64);
  CHECK(c.num_streams() == 2);
  CHECK(c.fused_dim() == 128);
  c.fusion_mode = FusionMode::early_concat;
  CHECK(c.in_channels() == 6);
  CHECK(c.num_streams() == 1);
  c.fusion_mode = FusionMode::gated;
  CHECK(c.fused_dim() == 64);
  c.modality = Modality::line;
  CHECK(c.num_streams() == 1);
  CHECK(c.in_channels() == 3);

  ModelConfig bad;
  bad.patch_size = 7;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = ModelConfig{};
  bad.embed_dim = 30;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = ModelConfig{};
  bad.dropout = 1.0;
  CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("config key-value round trip") {
  ModelConfig c = tiny(FusionMode::gated, Modality::texture);
  c.dropout = 0.1;
  CHECK(ModelConfig::from_kv(c.to_kv()) == c);
  auto kv = c.to_kv();
  kv.push_back({"mystery", "1"});
  CHECK_THROWS_AS(ModelConfig::from_kv(kv), Error);
}

TEST_CASE("parameter layout matches tensor specs") {
  for (auto m : {FusionMode::early_concat, FusionMode::mid_concat, FusionMode::gated, FusionMode::cross}) {
    const auto c = tiny(m);
    const auto specs = tensor_specs(c);
    const auto p = init_params<float>(c, 1);
    REQUIRE(p.size() == specs.size());
    for (std::size_t i = 0; i < specs.size(); ++i) {
      CHECK(p.names[i] == specs[i].name);
      CHECK(p.dims[i] == specs[i].dims);
    }
    CHECK(p.index_of(p.names.back()) == p.size() - 1);
    CHECK_THROWS_AS(p.index_of("nope"), Error);
  }
  ModelConfig def;
  CHECK(init_params<float>(def, 1).count() == 209153);
}

TEST_CASE("initialization is seeded") {
  const auto c = tiny(FusionMode::cross);
  const auto a = init_params<float>(c, 9), b = init_params<float>(c, 9), d = init_params<float>(c, 10);
  bool all_same = true, any_diff = false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    all_same = all_same && a.tensors[i] == b.tensors[i];
    any_diff = any_diff || a.tensors[i] != d.tensors[i];
  }
  CHECK(all_same);
  CHECK(any_diff);
  const auto& pos = a.tensors[a.index_of("stream0.pos")];
  CHECK(pos.cwiseAbs().maxCoeff() <= 0.04f);
}

TEST_CASE("analytic gradients match central differences") {
  CounterRng rng(31);
  const std::vector<std::pair<FusionMode, Modality>> cases{
      {FusionMode::cross, Modality::both},      {FusionMode::gated, Modality::both},
      {FusionMode::mid_concat, Modality::both}, {FusionMode::early_concat, Modality::both},
      {FusionMode::cross, Modality::line},      {FusionMode::cross, Modality::texture}};
  for (const auto& [mode, modality] : cases) {
    auto p = init_params<double>(tiny(mode, modality), 3);
    perturb(p, rng, 0.4);
    auto a = random_pair(16, rng), b = random_pair(16, rng);
    const std::vector<Example> batch{{&a, 1}, {&b, 0}};
    const double err = worst_gradient_error(p, batch);
    CHECK_MESSAGE(err <= 1e-4, fusion_mode_name(mode) << "/" << modality_name(modality) << " error " << err);
  }
}

TEST_CASE("zero weights give probability one half") {
  const auto p = zero_params<float>(ModelConfig{});
  const Network<float> net(p);
  CounterRng rng(32);
  for (int i = 0; i < 3; ++i) {
    const auto x = random_pair(64, rng);
    CHECK(sigmoid(net.forward(x)) == 0.5);
  }
}

TEST_CASE("cross fusion with zero projections reduces to concatenation") {
  CounterRng rng(33);
  auto cross = init_params<float>(ModelConfig{}, 4);
  for (std::size_t i = 0; i < cross.size(); ++i)
    if (cross.names[i].rfind("fusion.", 0) == 0 && cross.names[i].find(".ln_") == std::string::npos)
      cross.tensors[i].setZero();
  ModelConfig mc = cross.config;
  mc.fusion_mode = FusionMode::mid_concat;
  const Network<float> net_cross(cross);
  const auto streams = net_cross.encode(random_pair(64, rng));
  const Mat<float> got = net_cross.fuse(streams);
  Mat<float> want(1, 128);
  want << streams[0].colwise().mean(), streams[1].colwise().mean();
  CHECK(got == want);

  auto mid = zero_params<float>(mc);
  for (std::size_t i = 0; i < mid.size(); ++i) mid.tensors[i] = cross.tensors[cross.index_of(mid.names[i])];
  const auto x = random_pair(64, rng);
  CHECK(Network<float>(mid).forward(x) == net_cross.forward(x));
}

TEST_CASE("gated fusion with zero gate weights averages the streams") {
  CounterRng rng(34);
  ModelConfig c;
  c.fusion_mode = FusionMode::gated;
  auto p = init_params<float>(c, 6);
  p.tensors[p.index_of("fusion.gate.weight")].setZero();
  const Network<float> net(p);
  const auto streams = net.encode(random_pair(64, rng));
  const Mat<float> a = streams[0].colwise().mean(), b = streams[1].colwise().mean();
  const Mat<float> want = ((a + b) / 2.0f).eval();
  CHECK(net.fuse(streams) == want);
}

TEST_CASE("head bias moves the probability monotonically") {
  CounterRng rng(35);
  auto p = init_params<double>(tiny(FusionMode::cross), 7);
  const auto x = random_pair(16, rng);
  const std::size_t bias = p.index_of("head.fc2.bias");
  double prev = -1.0;
  for (double b = -5.0; b <= 5.0; b += 0.5) {
    p.tensors[bias](0, 0) = b;
    const double prob = sigmoid(Network<double>(p).forward(x));
    CHECK(prob > prev);
    prev = prob;
  }
}

TEST_CASE("binary cross-entropy") {
  CHECK(bce_with_logit(0.0, 1) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  CHECK(bce_with_logit(0.0, 0) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  CHECK(bce_with_logit(20.0, 1) <= 1e-8);
  CHECK(bce_with_logit(-20.0, 0) <= 1e-8);
  CHECK(std::isfinite(bce_with_logit(1000.0, 0)));
  CHECK(bce_with_logit(1000.0, 0) == doctest::Approx(1000.0));
  for (double z : {-3.0, -0.5, 0.7, 4.0}) {
    CHECK(bce_with_logit(z, 1) == doctest::Approx(-std::log(sigmoid(z))).epsilon(1e-12));
    CHECK(bce_with_logit(z, 0) == doctest::Approx(-std::log(1.0 - sigmoid(z))).epsilon(1e-12));
  }
}

TEST_CASE("inputs of the wrong shape are rejected") {
  const auto p = init_params<float>(tiny(FusionMode::cross), 1);
  const Network<float> net(p);
  CounterRng rng(36);
  CHECK_THROWS_AS(net.forward(random_pair(32, rng)), Error);
  auto x = random_pair(16, rng);
  x.texture = imaging::ImageTensor(16, 16, 1);
  CHECK_THROWS_AS(net.forward(x), Error);
}

TEST_CASE("a non-finite input is a numeric error") {
  const auto p = init_params<float>(tiny(FusionMode::mid_concat), 1);
  CounterRng rng(37);
  auto x = random_pair(16, rng);
  x.line.values[3] = std::nanf("");
  const std::vector<Example> batch{{&x, 1}};
  auto g = Gradients<float>::zeros_like(p);
  try {
    loss_and_gradients<float>(p, batch, g);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::numeric);
  }
}

TEST_CASE("AdamW single step") {
  ModelParams<double> p = zero_params<double>(tiny(FusionMode::mid_concat));
  for (auto& t : p.tensors) t.setConstant(1.0);
  auto g = Gradients<double>::zeros_like(p);
  for (auto& t : g.tensors) t.setConstant(1.0);
  auto state = train::AdamState<double>::zeros_like(p);
  train::TrainConfig cfg;
  cfg.learning_rate = 0.1;
  cfg.weight_decay = 0.0;
  train::adamw_step(p, g, state, cfg);
  CHECK(p.tensors[0](0, 0) == doctest::Approx(0.9).epsilon(1e-6));

  for (auto& t : p.tensors) t.setConstant(1.0);
  for (auto& t : g.tensors) t.setZero();
  state = train::AdamState<double>::zeros_like(p);
  cfg.learning_rate = 0.01;
  cfg.weight_decay = 0.1;
  train::adamw_step(p, g, state, cfg);
  CHECK(1.0 - p.tensors[0](0, 0) == doctest::Approx(0.001).epsilon(1e-9));

  const auto before = p.tensors;
  for (auto& t : g.tensors) t.setConstant(3.0);
  cfg.learning_rate = 0.0;
  train::adamw_step(p, g, state, cfg);
  for (std::size_t i = 0; i < p.size(); ++i) CHECK(p.tensors[i] == before[i]);
}

TEST_CASE("training separates a toy set and follows the labels") {
  const auto c = tiny(FusionMode::cross);
  const auto toy = separable_toy(40, 16, 8);
  const auto r = train::train(c, toy_training(), toy.examples, toy.examples);
  CHECK(r.best_val_accuracy == 1.0);
  CHECK(train::evaluate_examples(r.best, toy.examples).accuracy == 1.0);

  const auto flipped = separable_toy(40, 16, 8, true);
  const auto rf = train::train(c, toy_training(), flipped.examples, flipped.examples);
  CHECK(rf.best_val_accuracy == 1.0);
  const Network<float> a(r.best), b(rf.best);
  for (const auto& img : toy.images) CHECK((a.forward(img) >= 0) != (b.forward(img) >= 0));
}

TEST_CASE("training is deterministic") {
  const auto c = tiny(FusionMode::gated);
  const auto toy = separable_toy(24, 16, 9);
  auto cfg = toy_training();
  cfg.max_steps = 20;
  cfg.eval_every = 5;
  const auto a = train::train(c, cfg, toy.examples, toy.examples);
  const auto b = train::train(c, cfg, toy.examples, toy.examples);
  for (std::size_t i = 0; i < a.best.size(); ++i) CHECK(a.best.tensors[i] == b.best.tensors[i]);
  CHECK(train::format_log_csv(a.log) == train::format_log_csv(b.log));
  CHECK(train::format_log_csv(a.log).rfind("step,split,loss,accuracy\n", 0) == 0);
}

TEST_CASE("zero learning rate exhausts patience and keeps the initial weights") {
  const auto c = tiny(FusionMode::mid_concat);
  const auto toy = separable_toy(16, 16, 10);
  auto cfg = toy_training();
  cfg.learning_rate = 0.0;
  cfg.patience = 3;
  cfg.eval_every = 2;
  cfg.max_steps = 100;
  const auto r = train::train(c, cfg, toy.examples, toy.examples);
  CHECK(r.early_stopped);
  CHECK(r.steps_run == 6);
  CHECK(r.best_step == 0);
  const auto init = init_params<float>(c, cfg.seed);
  for (std::size_t i = 0; i < init.size(); ++i) CHECK(r.best.tensors[i] == init.tensors[i]);
}

TEST_CASE("predictions threshold the sigmoid") {
  CHECK(train::make_prediction(0.0, 0.5).alarm);
  CHECK(train::make_prediction(0.0, 0.5).probability == 0.5);
  CHECK_FALSE(train::make_prediction(-0.01, 0.5).alarm);
  CHECK_FALSE(train::make_prediction(2.0, 0.9).alarm);
  const auto p = zero_params<float>(tiny(FusionMode::cross));
  CounterRng rng(38);
  const std::vector<imaging::ImagePair> xs{random_pair(16, rng), random_pair(16, rng)};
  for (double v : train::predict_probabilities(p, xs)) CHECK(v == 0.5);
}

TEST_CASE("training config validation") {
  train::TrainConfig t;
  CHECK_NOTHROW(t.validate());
  t.batch_size = 0;
  CHECK_THROWS_AS(t.validate(), Error);
  t = train::TrainConfig{};
  t.learning_rate = -1.0;
  CHECK_THROWS_AS(t.validate(), Error);
}
