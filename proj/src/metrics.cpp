#include "bedexit/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <vector>

#include "bedexit/error.hpp"
#include "bedexit/io.hpp"

namespace bedexit::metrics {

namespace {

void check_inputs(std::span<const double> probs, std::span<const int> labels) {
  require(!probs.empty(), ErrorCode::invalid_argument, "metrics: empty input");
  require(probs.size() == labels.size(), ErrorCode::invalid_argument, "metrics: probs and labels differ in length");
  for (std::size_t i = 0; i < probs.size(); ++i) {
    require(labels[i] == 0 || labels[i] == 1, ErrorCode::invalid_argument, "metrics: labels must be 0/1");
    require(std::isfinite(probs[i]), ErrorCode::invalid_argument, "metrics: non-finite score");
  }
}

double ratio(std::int64_t num, std::int64_t den) {
  return den > 0 ? static_cast<double>(num) / static_cast<double>(den) : 0.0;
}

}  // namespace

Confusion confusion(std::span<const double> probs, std::span<const int> labels, double threshold) {
  check_inputs(probs, labels);
  Confusion c;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const bool pred = probs[i] >= threshold;
    if (labels[i] == 1)
      (pred ? c.tp : c.fn) += 1;
    else
      (pred ? c.fp : c.tn) += 1;
  }
  return c;
}

EvalReport summarize(const Confusion& c) {
  EvalReport r;
  r.counts = c;
  r.precision = ratio(c.tp, c.tp + c.fp);
  r.recall = ratio(c.tp, c.tp + c.fn);
  r.f1 = (r.precision + r.recall) > 0.0 ? 2.0 * r.precision * r.recall / (r.precision + r.recall) : 0.0;
  r.accuracy = ratio(c.tp + c.tn, c.total());
  return r;
}

double auprc(std::span<const double> probs, std::span<const int> labels) {
  check_inputs(probs, labels);
  const auto positives = std::count(labels.begin(), labels.end(), 1);
  require(positives > 0, ErrorCode::data, "AUPRC is undefined without positive labels");

  std::vector<std::size_t> order(probs.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return probs[a] > probs[b]; });

  double ap = 0.0;
  double prev_recall = 0.0;
  std::int64_t tp = 0, seen = 0;
  for (std::size_t k = 0; k < order.size();) {
    const double score = probs[order[k]];
    while (k < order.size() && probs[order[k]] == score) {
      tp += labels[order[k]];
      ++seen;
      ++k;
    }
    const double recall = static_cast<double>(tp) / static_cast<double>(positives);
    const double precision = static_cast<double>(tp) / static_cast<double>(seen);
    ap += (recall - prev_recall) * precision;
    prev_recall = recall;
  }
  return ap;
}

EvalReport evaluate(std::span<const double> probs, std::span<const int> labels, double threshold) {
  EvalReport r = summarize(confusion(probs, labels, threshold));
  r.auprc = auprc(probs, labels);
  return r;
}

std::string format_report(const EvalReport& r) {
  char buf[512];
  std::snprintf(buf, sizeof(buf),
                "F1         %.6f\nRecall     %.6f\nPrecision  %.6f\nAccuracy   %.6f\nAUPRC      %.6f\n"
                "TP %lld  FP %lld  TN %lld  FN %lld\n",
                r.f1, r.recall, r.precision, r.accuracy, r.auprc, static_cast<long long>(r.counts.tp),
                static_cast<long long>(r.counts.fp), static_cast<long long>(r.counts.tn),
                static_cast<long long>(r.counts.fn));
  return buf;
}

std::string to_json(const EvalReport& r) {
  using io::format_double;
  return "{\"f1\": " + format_double(r.f1) + ", \"recall\": " + format_double(r.recall) +
         ", \"precision\": " + format_double(r.precision) + ", \"accuracy\": " + format_double(r.accuracy) +
         ", \"auprc\": " + format_double(r.auprc) + ", \"tp\": " + std::to_string(r.counts.tp) +
         ", \"fp\": " + std::to_string(r.counts.fp) + ", \"tn\": " + std::to_string(r.counts.tn) +
         ", \"fn\": " + std::to_string(r.counts.fn) + "}\n";
}

}  // namespace bedexit::metrics
