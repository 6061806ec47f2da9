#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "bedexit/fusion_model.hpp"

namespace bedexit::train {

struct TrainConfig {
  double learning_rate = 1e-3;
  double weight_decay = 0.01;
  int batch_size = 32;
  int patience = 10;
  int max_steps = 600;
  int eval_every = 25;
  std::uint64_t seed = 42;

  void validate() const;
};

/// First and second moment estimates, one pair per parameter tensor.
template <typename T>
struct AdamState {
  std::vector<model::Mat<T>> m, v;
  std::int64_t step = 0;

  static AdamState zeros_like(const model::ModelParams<T>& p);
};

inline constexpr double kBeta1 = 0.9;
inline constexpr double kBeta2 = 0.999;
inline constexpr double kAdamEps = 1e-8;

/// Decoupled weight decay (p *= 1 - lr*wd) followed by the bias-corrected Adam update.
template <typename T>
void adamw_step(model::ModelParams<T>& params, const model::Gradients<T>& grads, AdamState<T>& state,
                const TrainConfig& config);

struct LogRow {
  int step = 0;
  std::string split;
  double loss = 0.0;
  double accuracy = 0.0;
};

std::string format_log_csv(const std::vector<LogRow>& log);

struct SplitStats {
  double loss = 0.0;
  double accuracy = 0.0;
};

/// Mean loss and accuracy (logit >= 0 counts as a positive call).
SplitStats evaluate_examples(const model::ModelParams<float>& params, std::span<const model::Example> examples);

struct TrainResult {
  model::ModelParams<float> best;
  int best_step = 0;
  double best_val_accuracy = 0.0;
  int steps_run = 0;
  bool early_stopped = false;
  std::vector<LogRow> log;
};

using ProgressFn = std::function<void(const LogRow&)>;

/// Mini-batch AdamW on shuffled training examples (a fresh permutation per epoch).
/// Validation accuracy is measured before the first step and every eval_every steps;
/// training stops after `patience` consecutive evaluations without a strictly higher
/// accuracy, or at max_steps. Returns the parameters of the best evaluation (earliest
/// on ties).
TrainResult train(const model::ModelConfig& model_config, const TrainConfig& config,
                  std::span<const model::Example> train_set, std::span<const model::Example> val_set,
                  const ProgressFn& progress = {});

struct Prediction {
  double probability = 0.5;
  bool alarm = true;
};

Prediction make_prediction(double logit, double alarm_threshold);

std::vector<double> predict_probabilities(const model::ModelParams<float>& params,
                                          std::span<const imaging::ImagePair> images);

}  // namespace bedexit::train
