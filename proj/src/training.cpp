#include "bedexit/training.hpp"

#include <cmath>
#include <sstream>

#include "bedexit/error.hpp"
#include "bedexit/io.hpp"

namespace bedexit::train {

using model::Example;
using model::Gradients;
using model::Mat;
using model::ModelParams;

void TrainConfig::validate() const {
  require(learning_rate >= 0.0 && std::isfinite(learning_rate), ErrorCode::config,
          "training.learning_rate must be finite and >= 0");
  require(weight_decay >= 0.0 && std::isfinite(weight_decay), ErrorCode::config,
          "training.weight_decay must be finite and >= 0");
  require(batch_size > 0, ErrorCode::config, "training.batch_size must be positive");
  require(patience >= 1, ErrorCode::config, "training.patience must be >= 1");
  require(max_steps > 0, ErrorCode::config, "training.max_steps must be positive");
  require(eval_every > 0, ErrorCode::config, "training.eval_every must be positive");
}

template <typename T>
AdamState<T> AdamState<T>::zeros_like(const ModelParams<T>& p) {
  AdamState s;
  for (const auto& t : p.tensors) {
    s.m.push_back(Mat<T>::Zero(t.rows(), t.cols()));
    s.v.push_back(Mat<T>::Zero(t.rows(), t.cols()));
  }
  return s;
}

template <typename T>
void adamw_step(ModelParams<T>& params, const Gradients<T>& grads, AdamState<T>& state, const TrainConfig& config) {
  require(grads.tensors.size() == params.size() && state.m.size() == params.size(), ErrorCode::invalid_argument,
          "adamw_step: parameter, gradient and state sets differ in size");
  ++state.step;
  const T lr = static_cast<T>(config.learning_rate);
  const T decay = static_cast<T>(1.0 - config.learning_rate * config.weight_decay);
  const T b1 = static_cast<T>(kBeta1), b2 = static_cast<T>(kBeta2);
  const T c1 = static_cast<T>(1.0 - std::pow(kBeta1, static_cast<double>(state.step)));
  const T c2 = static_cast<T>(1.0 - std::pow(kBeta2, static_cast<double>(state.step)));
  const T eps = static_cast<T>(kAdamEps);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params.tensors[i];
    const auto& g = grads.tensors[i];
    require(g.rows() == p.rows() && g.cols() == p.cols(), ErrorCode::invalid_argument,
            "adamw_step: shape mismatch for '" + params.names[i] + "'");
    state.m[i] = b1 * state.m[i] + (T(1) - b1) * g;
    state.v[i] = b2 * state.v[i] + (T(1) - b2) * g.cwiseProduct(g);
    if (config.learning_rate == 0.0) continue;
    p *= decay;
    p.array() -= lr * (state.m[i].array() / c1) / ((state.v[i].array() / c2).sqrt() + eps);
  }
}

std::string format_log_csv(const std::vector<LogRow>& log) {
  std::ostringstream out;
  out << "step,split,loss,accuracy\n";
  for (const auto& r : log)
    out << r.step << ',' << r.split << ',' << io::format_double(r.loss) << ',' << io::format_double(r.accuracy)
        << '\n';
  return out.str();
}

SplitStats evaluate_examples(const ModelParams<float>& params, std::span<const Example> examples) {
  require(!examples.empty(), ErrorCode::data, "cannot evaluate an empty split");
  model::Network<float> net(params);
  double loss = 0.0;
  std::size_t correct = 0;
  for (const auto& ex : examples) {
    const double z = net.forward(*ex.images);
    loss += model::bce_with_logit(z, ex.label);
    if ((z >= 0.0) == (ex.label == 1)) ++correct;
  }
  const auto n = static_cast<double>(examples.size());
  return {loss / n, static_cast<double>(correct) / n};
}

namespace {

std::vector<std::size_t> permutation(std::size_t n, CounterRng& rng) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  for (std::size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[rng.below(i)]);
  return idx;
}

}  // namespace

TrainResult train(const model::ModelConfig& model_config, const TrainConfig& config,
                  std::span<const Example> train_set, std::span<const Example> val_set, const ProgressFn& progress) {
  config.validate();
  model_config.validate();
  require(!train_set.empty(), ErrorCode::data, "training split is empty");
  require(!val_set.empty(), ErrorCode::data, "validation split is empty");

  ModelParams<float> params = model::init_params<float>(model_config, config.seed);
  AdamState<float> state = AdamState<float>::zeros_like(params);
  Gradients<float> grads = Gradients<float>::zeros_like(params);
  CounterRng dropout_rng(derive_seed(config.seed, "dropout"));

  TrainResult result;
  auto record = [&](const LogRow& row) {
    result.log.push_back(row);
    if (progress) progress(row);
  };

  const SplitStats base = evaluate_examples(params, val_set);
  record({0, "val", base.loss, base.accuracy});
  result.best = params;
  result.best_val_accuracy = base.accuracy;
  int stale = 0;

  std::uint64_t epoch = 0;
  CounterRng shuffle_rng(derive_seed(config.seed, "shuffle", epoch));
  std::vector<std::size_t> order = permutation(train_set.size(), shuffle_rng);
  std::size_t cursor = 0;
  std::vector<Example> batch;
  double run_loss = 0.0;
  std::size_t run_correct = 0, run_seen = 0;

  for (int step = 1; step <= config.max_steps; ++step) {
    batch.clear();
    while (batch.size() < static_cast<std::size_t>(config.batch_size)) {
      if (cursor == order.size()) {
        shuffle_rng = CounterRng(derive_seed(config.seed, "shuffle", ++epoch));
        order = permutation(train_set.size(), shuffle_rng);
        cursor = 0;
        if (batch.size() >= train_set.size()) break;
      }
      batch.push_back(train_set[order[cursor++]]);
    }
    const auto r = model::loss_and_gradients<float>(params, batch, grads, &dropout_rng);
    adamw_step(params, grads, state, config);
    run_loss += static_cast<double>(r.loss) * static_cast<double>(batch.size());
    run_correct += r.correct;
    run_seen += batch.size();
    result.steps_run = step;

    if (step % config.eval_every != 0 && step != config.max_steps) continue;
    record({step, "train", run_loss / static_cast<double>(run_seen),
            static_cast<double>(run_correct) / static_cast<double>(run_seen)});
    run_loss = 0.0;
    run_correct = run_seen = 0;
    const SplitStats val = evaluate_examples(params, val_set);
    record({step, "val", val.loss, val.accuracy});
    if (val.accuracy > result.best_val_accuracy) {
      result.best = params;
      result.best_step = step;
      result.best_val_accuracy = val.accuracy;
      stale = 0;
    } else if (++stale >= config.patience) {
      result.early_stopped = true;
      break;
    }
  }
  return result;
}

Prediction make_prediction(double logit, double alarm_threshold) {
  Prediction p;
  p.probability = model::sigmoid(logit);
  p.alarm = p.probability >= alarm_threshold;
  return p;
}

std::vector<double> predict_probabilities(const ModelParams<float>& params, std::span<const imaging::ImagePair> images) {
  model::Network<float> net(params);
  std::vector<double> out;
  out.reserve(images.size());
  for (const auto& im : images) out.push_back(model::sigmoid(net.forward(im)));
  return out;
}

template struct AdamState<float>;
template struct AdamState<double>;
template void adamw_step<float>(ModelParams<float>&, const Gradients<float>&, AdamState<float>&, const TrainConfig&);
template void adamw_step<double>(ModelParams<double>&, const Gradients<double>&, AdamState<double>&,
                                 const TrainConfig&);

}  // namespace bedexit::train
