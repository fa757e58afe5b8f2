#pragma once

#include "hyperpersona/common.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace hyperpersona {

// Gold and predicted label of one (item, annotator) test pair.
struct LabeledPrediction {
  std::size_t item = 0;
  std::size_t annotator = 0;
  int gold = 0;
  int pred = 0;
};

// Itemised trainable-parameter count, in insertion order.
struct ParamBreakdown {
  std::vector<std::pair<std::string, std::uint64_t>> items;

  void add(const std::string& component, std::uint64_t count);
  std::uint64_t total() const;
  std::uint64_t get(const std::string& component) const;
};

// Unweighted mean of per-class F1. Classes absent from both gold and
// predictions are left out of the mean.
double macro_f1(std::span<const int> gold, std::span<const int> pred, int num_classes);

// For single-label predictions micro-F1 equals accuracy; computed from the
// pooled TP/FP/FN counts.
double micro_f1(std::span<const int> gold, std::span<const int> pred, int num_classes);

struct AnnotatorLevelF1 {
  double score = 0.0;
  std::map<std::size_t, double> per_annotator;
};

AnnotatorLevelF1 annotator_level_f1(std::span<const LabeledPrediction> preds, int num_classes);

struct GlobalScores {
  double f1 = 0.0;
  double accuracy = 0.0;
};

GlobalScores global_f1_and_accuracy(std::span<const LabeledPrediction> preds, int num_classes);

struct Correlation {
  std::optional<double> value;
  std::string reason;  // set when value is absent
};

// Pearson correlation between gold and predicted item-level disagreement.
// Predicted disagreement uses exactly the annotators present in preds for
// the item.
Correlation disagreement_correlation(std::span<const LabeledPrediction> preds);

double pearson(std::span<const double> x, std::span<const double> y, std::string* reason = nullptr);

struct MetricsReport {
  double annotator_f1 = 0.0;
  double global_f1 = 0.0;
  double global_accuracy = 0.0;
  double micro_f1 = 0.0;
  Correlation disagreement_corr;
  std::uint64_t trainable_params = 0;
  ParamBreakdown params_breakdown;
  std::map<std::string, double> per_annotator_f1;
};

// Full report; per-annotator scores are keyed by the given annotator ids.
MetricsReport evaluate_predictions(std::span<const LabeledPrediction> preds, int num_classes,
                                   const std::vector<std::string>& annotator_ids);

}  // namespace hyperpersona
