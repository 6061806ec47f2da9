#pragma once

#include <cstdint>
#include <span>
#include <string>

namespace bedexit::metrics {

struct Confusion {
  std::int64_t tp = 0, fp = 0, tn = 0, fn = 0;

  std::int64_t total() const { return tp + fp + tn + fn; }
};

struct EvalReport {
  Confusion counts;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double accuracy = 0.0;
  double auprc = 0.0;
};

/// A sample is predicted positive iff prob >= threshold.
Confusion confusion(std::span<const double> probs, std::span<const int> labels, double threshold);

/// Precision, recall, F1 and accuracy; zero where a denominator is zero.
EvalReport summarize(const Confusion& c);

/// Step-wise average precision over descending unique scores; tied scores enter as one
/// group. Throws Error(data) when there is no positive label.
double auprc(std::span<const double> probs, std::span<const int> labels);

EvalReport evaluate(std::span<const double> probs, std::span<const int> labels, double threshold = 0.5);

/// Fixed-order, human-readable report.
std::string format_report(const EvalReport& r);

/// JSON object with the five metrics plus counts, keys in fixed order.
std::string to_json(const EvalReport& r);

}  // namespace bedexit::metrics
