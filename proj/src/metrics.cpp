#include "hyperpersona/metrics.hpp"
#include "hyperpersona/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace hyperpersona {

void ParamBreakdown::add(const std::string& component, std::uint64_t count) {
  for (auto& [name, n] : items) {
    if (name == component) {
      n += count;
      return;
    }
  }
  items.emplace_back(component, count);
}

std::uint64_t ParamBreakdown::total() const {
  std::uint64_t sum = 0;
  for (const auto& [name, n] : items) sum += n;
  return sum;
}

std::uint64_t ParamBreakdown::get(const std::string& component) const {
  for (const auto& [name, n] : items) {
    if (name == component) return n;
  }
  return 0;
}

namespace {

struct ClassCounts {
  std::vector<std::uint64_t> tp, fp, fn;
};

ClassCounts confusion(std::span<const int> gold, std::span<const int> pred, int num_classes) {
  if (gold.size() != pred.size()) throw ContractError("metric: gold and prediction lengths differ");
  if (gold.empty()) throw ContractError("metric: empty label sequence");
  const auto C = static_cast<std::size_t>(num_classes);
  ClassCounts c{std::vector<std::uint64_t>(C), std::vector<std::uint64_t>(C), std::vector<std::uint64_t>(C)};
  for (std::size_t k = 0; k < gold.size(); ++k) {
    const int g = gold[k];
    const int p = pred[k];
    if (g < 0 || g >= num_classes || p < 0 || p >= num_classes) {
      throw ContractError("metric: label outside class range");
    }
    if (g == p) {
      ++c.tp[static_cast<std::size_t>(g)];
    } else {
      ++c.fp[static_cast<std::size_t>(p)];
      ++c.fn[static_cast<std::size_t>(g)];
    }
  }
  return c;
}

}  // namespace

double macro_f1(std::span<const int> gold, std::span<const int> pred, int num_classes) {
  const auto c = confusion(gold, pred, num_classes);
  double sum = 0.0;
  int present = 0;
  for (std::size_t k = 0; k < c.tp.size(); ++k) {
    const auto denom = 2 * c.tp[k] + c.fp[k] + c.fn[k];
    if (denom == 0) continue;
    sum += 2.0 * static_cast<double>(c.tp[k]) / static_cast<double>(denom);
    ++present;
  }
  return sum / present;
}

double micro_f1(std::span<const int> gold, std::span<const int> pred, int num_classes) {
  const auto c = confusion(gold, pred, num_classes);
  const auto tp = std::accumulate(c.tp.begin(), c.tp.end(), std::uint64_t{0});
  const auto fp = std::accumulate(c.fp.begin(), c.fp.end(), std::uint64_t{0});
  const auto fn = std::accumulate(c.fn.begin(), c.fn.end(), std::uint64_t{0});
  return 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn);
}

AnnotatorLevelF1 annotator_level_f1(std::span<const LabeledPrediction> preds, int num_classes) {
  if (preds.empty()) throw ContractError("annotator_level_f1: no predictions");
  std::map<std::size_t, std::pair<std::vector<int>, std::vector<int>>> by_annotator;
  for (const auto& p : preds) {
    auto& [g, q] = by_annotator[p.annotator];
    g.push_back(p.gold);
    q.push_back(p.pred);
  }
  AnnotatorLevelF1 out;
  for (const auto& [annotator, labels] : by_annotator) {
    const double f1 = macro_f1(labels.first, labels.second, num_classes);
    out.per_annotator.emplace(annotator, f1);
    out.score += f1;
  }
  out.score /= static_cast<double>(out.per_annotator.size());
  return out;
}

GlobalScores global_f1_and_accuracy(std::span<const LabeledPrediction> preds, int num_classes) {
  if (preds.empty()) throw ContractError("global_f1_and_accuracy: no predictions");
  std::vector<int> gold, pred;
  gold.reserve(preds.size());
  pred.reserve(preds.size());
  std::size_t correct = 0;
  for (const auto& p : preds) {
    gold.push_back(p.gold);
    pred.push_back(p.pred);
    correct += p.gold == p.pred;
  }
  return {macro_f1(gold, pred, num_classes), static_cast<double>(correct) / static_cast<double>(preds.size())};
}

double pearson(std::span<const double> x, std::span<const double> y, std::string* reason) {
  if (x.size() != y.size()) throw ContractError("pearson: length mismatch");
  if (x.size() < 2) {
    if (reason) *reason = "fewer_than_two_items";
    return std::nan("");
  }
  // Constant inputs are detected exactly; a floating-point mean of equal
  // values need not reproduce them, so sxx can come out as a tiny residue.
  auto constant = [](std::span<const double> v) {
    return std::all_of(v.begin(), v.end(), [&](double e) { return e == v.front(); });
  };
  if (constant(x) || constant(y)) {
    if (reason) *reason = constant(x) ? "zero_variance_gold" : "zero_variance_predicted";
    return std::nan("");
  }
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    const double dx = x[k] - mx;
    const double dy = y[k] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) {
    if (reason) *reason = sxx == 0.0 ? "zero_variance_gold" : "zero_variance_predicted";
    return std::nan("");
  }
  return sxy / std::sqrt(sxx * syy);
}

Correlation disagreement_correlation(std::span<const LabeledPrediction> preds) {
  std::map<std::size_t, std::pair<std::vector<int>, std::vector<int>>> by_item;
  for (const auto& p : preds) {
    auto& [g, q] = by_item[p.item];
    g.push_back(p.gold);
    q.push_back(p.pred);
  }
  std::vector<double> gold_d, pred_d;
  for (const auto& [item, votes] : by_item) {
    gold_d.push_back(disagreement(votes.first));
    pred_d.push_back(disagreement(votes.second));
  }
  Correlation out;
  std::string reason;
  const double r = pearson(gold_d, pred_d, &reason);
  if (std::isnan(r)) {
    out.reason = reason;
  } else {
    out.value = r;
  }
  return out;
}

MetricsReport evaluate_predictions(std::span<const LabeledPrediction> preds, int num_classes,
                                   const std::vector<std::string>& annotator_ids) {
  MetricsReport report;
  const auto ann = annotator_level_f1(preds, num_classes);
  report.annotator_f1 = ann.score;
  for (const auto& [a, f1] : ann.per_annotator) {
    report.per_annotator_f1[a < annotator_ids.size() ? annotator_ids[a] : std::to_string(a)] = f1;
  }
  const auto global = global_f1_and_accuracy(preds, num_classes);
  report.global_f1 = global.f1;
  report.global_accuracy = global.accuracy;
  std::vector<int> gold, pred;
  for (const auto& p : preds) {
    gold.push_back(p.gold);
    pred.push_back(p.pred);
  }
  report.micro_f1 = micro_f1(gold, pred, num_classes);
  report.disagreement_corr = disagreement_correlation(preds);
  return report;
}

}  // namespace hyperpersona
