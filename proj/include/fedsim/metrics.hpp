#pragma once

// Per-class accuracy tracking and forgetting measures.
//
// Per-class accuracies use NaN for classes absent from the evaluation set;
// every average below skips such classes and divides by the number of
// classes that remain defined.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <utility>
#include <vector>

#include "fedsim/common.hpp"
#include "fedsim/data.hpp"
#include "fedsim/losses.hpp"
#include "fedsim/nn.hpp"

namespace fedsim {

inline constexpr double kUndefined = std::numeric_limits<double>::quiet_NaN();

// A[t][c]: global model accuracy on class c after round t; row 0 is the
// initial model.
struct AccuracyMatrix {
  std::vector<std::vector<double>> rows;

  std::size_t num_rounds() const { return rows.empty() ? 0 : rows.size() - 1; }
};

struct RoundRecord {
  std::uint64_t round = 0;
  std::vector<std::uint64_t> participants;
  std::vector<double> prev_global_acc;               // per class, w_{t-1}
  std::vector<std::vector<double>> client_acc;       // per participant, per class, w_{k,t}
  std::vector<double> global_per_class_acc;          // per class, w_t
  double global_acc = 0.0;                           // overall accuracy of w_t
  double mean_local_test_loss = 0.0;
  double global_test_loss = 0.0;
  double prev_global_test_loss = 0.0;
  std::uint64_t server_distill_epochs = 0;
  double round_forgetting = 0.0;
  double local_forgetting = 0.0;
  double aggregation_forgetting = 0.0;
};

inline std::vector<double> per_class_accuracy(std::span<const int> predictions, std::span<const int> labels,
                                              std::size_t num_classes) {
  require(!labels.empty(), "per_class_accuracy: empty test set");
  require(predictions.size() == labels.size(), "per_class_accuracy: prediction count mismatch");
  std::vector<double> correct(num_classes, 0.0);
  std::vector<double> total(num_classes, 0.0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto y = static_cast<std::size_t>(labels[i]);
    total[y] += 1.0;
    if (predictions[i] == labels[i]) correct[y] += 1.0;
  }
  std::vector<double> acc(num_classes);
  for (std::size_t c = 0; c < num_classes; ++c) acc[c] = total[c] > 0.0 ? correct[c] / total[c] : kUndefined;
  return acc;
}

inline std::vector<double> per_class_accuracy(const ModelParams& params, const LabeledDataset& test) {
  require(!test.empty(), "per_class_accuracy: empty test set");
  return per_class_accuracy(predict(params, test.features), test.labels, test.num_classes);
}

// Evaluation of one model on the test set.
struct Evaluation {
  std::vector<double> per_class;
  double accuracy = 0.0;
  double loss = 0.0;
};

inline Evaluation evaluate(const ModelParams& params, const LabeledDataset& test) {
  require(!test.empty(), "evaluate: empty test set");
  const Matrix logits = forward_logits(params, test.features);
  std::vector<int> predictions(logits.rows);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < logits.rows; ++i) {
    const auto row = logits.row(i);
    predictions[i] = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
    if (predictions[i] == test.labels[i]) ++correct;
  }
  Evaluation out;
  out.per_class = per_class_accuracy(predictions, test.labels, test.num_classes);
  out.accuracy = static_cast<double>(correct) / static_cast<double>(test.size());
  out.loss = cross_entropy(logits, test.labels).value;
  return out;
}

namespace detail {

// (1/C') sum over defined classes of max(0, before_c - after_c).
inline double mean_drop(std::span<const double> before, std::span<const double> after) {
  require(before.size() == after.size(), "forgetting: class count mismatch");
  double sum = 0.0;
  std::size_t defined = 0;
  for (std::size_t c = 0; c < before.size(); ++c) {
    if (std::isnan(before[c]) || std::isnan(after[c])) continue;
    sum += std::max(0.0, before[c] - after[c]);
    ++defined;
  }
  return defined == 0 ? 0.0 : sum / static_cast<double>(defined);
}

}  // namespace detail

// F_t = -(1/C) sum_c min(0, A_t^c - A_{t-1}^c): only drops count.
inline double round_forgetting(const AccuracyMatrix& a, std::size_t t) {
  require(t >= 1 && t < a.rows.size(), "round_forgetting: round out of range");
  return detail::mean_drop(a.rows[t - 1], a.rows[t]);
}

// (1/C) sum_c max_{t < T} (A_t^c - A_T^c), with T the last row. Can be
// negative when every class ends at its best.
inline double aggregate_forgetting(const AccuracyMatrix& a) {
  require(a.rows.size() >= 2, "aggregate_forgetting: need at least two rounds");
  const auto& last = a.rows.back();
  double sum = 0.0;
  std::size_t defined = 0;
  for (std::size_t c = 0; c < last.size(); ++c) {
    if (std::isnan(last[c])) continue;
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t t = 0; t + 1 < a.rows.size(); ++t)
      if (!std::isnan(a.rows[t][c])) best = std::max(best, a.rows[t][c] - last[c]);
    if (std::isinf(best)) continue;
    sum += best;
    ++defined;
  }
  return defined == 0 ? 0.0 : sum / static_cast<double>(defined);
}

// Distinct sorted values with the fraction of observations <= each.
inline std::vector<std::pair<double, double>> ecdf(std::vector<double> values) {
  require(!values.empty(), "ecdf: empty input");
  std::sort(values.begin(), values.end());
  const double n = static_cast<double>(values.size());
  std::vector<std::pair<double, double>> steps;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i + 1 < values.size() && values[i + 1] == values[i]) continue;
    steps.emplace_back(values[i], static_cast<double>(i + 1) / n);
  }
  return steps;
}

// First 1-based round whose accuracy reaches target * fraction.
inline std::optional<std::size_t> rounds_to_target(std::span<const double> trace, double target, double fraction) {
  require(fraction > 0.0 && fraction <= 1.0, "rounds_to_target: fraction must be in (0,1]");
  require(!trace.empty(), "rounds_to_target: empty trace");
  const double threshold = target * fraction;
  for (std::size_t t = 0; t < trace.size(); ++t)
    if (trace[t] >= threshold) return t + 1;
  return std::nullopt;
}

struct ForgettingDecomposition {
  double local = 0.0;
  double aggregation = 0.0;
};

// local: mean over clients of the per-class drop from w_{t-1} to w_{k,t}.
// aggregation: per-class drop from the best client model to w_t.
inline ForgettingDecomposition forgetting_decomposition(const RoundRecord& record) {
  require(!record.client_acc.empty(), "forgetting_decomposition: record has no client models");
  const std::size_t num_classes = record.global_per_class_acc.size();
  require(record.prev_global_acc.size() == num_classes, "forgetting_decomposition: missing previous accuracies");

  ForgettingDecomposition out;
  std::vector<double> best(num_classes, kUndefined);
  for (const auto& client : record.client_acc) {
    require(client.size() == num_classes, "forgetting_decomposition: client accuracy width mismatch");
    out.local += detail::mean_drop(record.prev_global_acc, client);
    for (std::size_t c = 0; c < num_classes; ++c)
      if (!std::isnan(client[c])) best[c] = std::isnan(best[c]) ? client[c] : std::max(best[c], client[c]);
  }
  out.local /= static_cast<double>(record.client_acc.size());
  out.aggregation = detail::mean_drop(best, record.global_per_class_acc);
  return out;
}

}  // namespace fedsim
