#pragma once

// Brute-force reference metrics written from the definitions (precision and
// recall per class, plain Pearson sums), sharing no code with the library.

#include "hyperpersona/metrics.hpp"
#include "hyperpersona/rng.hpp"

#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <vector>

namespace hptest {

using hyperpersona::LabeledPrediction;
using hyperpersona::Rng;

struct OracleMetrics {
  double annotator_f1 = 0;
  double global_f1 = 0;
  double accuracy = 0;
  std::optional<double> correlation;
};

inline double oracle_macro_f1(const std::vector<int>& gold, const std::vector<int>& pred) {
  double sum = 0;
  int classes = 0;
  for (int c = 0; c < 2; ++c) {
    int tp = 0, fp = 0, fn = 0;
    bool present = false;
    for (std::size_t k = 0; k < gold.size(); ++k) {
      if (gold[k] == c || pred[k] == c) present = true;
      if (pred[k] == c && gold[k] == c) ++tp;
      if (pred[k] == c && gold[k] != c) ++fp;
      if (pred[k] != c && gold[k] == c) ++fn;
    }
    if (!present) continue;
    const double precision = tp + fp > 0 ? double(tp) / (tp + fp) : 0.0;
    const double recall = tp + fn > 0 ? double(tp) / (tp + fn) : 0.0;
    sum += precision + recall > 0 ? 2 * precision * recall / (precision + recall) : 0.0;
    ++classes;
  }
  return sum / classes;
}

inline double oracle_disagreement(const std::vector<int>& votes) {
  int best = 0;
  for (int c = 0; c < 2; ++c) {
    int n = 0;
    for (int v : votes) n += v == c;
    best = std::max(best, n);
  }
  return 1.0 - double(best) / double(votes.size());
}

inline OracleMetrics oracle_metrics(const std::vector<LabeledPrediction>& preds) {
  OracleMetrics out;
  std::set<std::size_t> annotators, items;
  for (const auto& p : preds) {
    annotators.insert(p.annotator);
    items.insert(p.item);
  }
  for (std::size_t a : annotators) {
    std::vector<int> g, q;
    for (const auto& p : preds) {
      if (p.annotator == a) {
        g.push_back(p.gold);
        q.push_back(p.pred);
      }
    }
    out.annotator_f1 += oracle_macro_f1(g, q);
  }
  out.annotator_f1 /= double(annotators.size());

  std::vector<int> g, q;
  int correct = 0;
  for (const auto& p : preds) {
    g.push_back(p.gold);
    q.push_back(p.pred);
    correct += p.gold == p.pred;
  }
  out.global_f1 = oracle_macro_f1(g, q);
  out.accuracy = double(correct) / double(preds.size());

  std::vector<double> x, y;
  for (std::size_t i : items) {
    std::vector<int> gv, pv;
    for (const auto& p : preds) {
      if (p.item == i) {
        gv.push_back(p.gold);
        pv.push_back(p.pred);
      }
    }
    x.push_back(oracle_disagreement(gv));
    y.push_back(oracle_disagreement(pv));
  }
  auto constant = [](const std::vector<double>& v) {
    for (double e : v) {
      if (e != v.front()) return false;
    }
    return true;
  };
  if (x.size() >= 2 && !constant(x) && !constant(y)) {
    const double n = double(x.size());
    double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
    for (std::size_t k = 0; k < x.size(); ++k) {
      sx += x[k];
      sy += y[k];
      sxx += x[k] * x[k];
      syy += y[k] * y[k];
      sxy += x[k] * y[k];
    }
    out.correlation = (n * sxy - sx * sy) / std::sqrt((n * sxx - sx * sx) * (n * syy - sy * sy));
  }
  return out;
}

// Up to max_items items and max_annotators annotators, C = 2. Each item gets
// a random non-empty subset of annotators; predictions agree with gold with
// a per-set probability so that both easy and hard sets occur.
inline std::vector<LabeledPrediction> random_test_set(Rng& rng, int max_items, int max_annotators) {
  const int n_items = static_cast<int>(rng.between(1, max_items));
  const int n_ann = static_cast<int>(rng.between(1, max_annotators));
  const double agree = rng.uniform(0.3, 1.0);
  std::vector<LabeledPrediction> out;
  for (int i = 0; i < n_items; ++i) {
    bool any = false;
    for (int a = 0; a < n_ann; ++a) {
      if (!rng.bernoulli(0.7) && (any || a + 1 < n_ann)) continue;
      any = true;
      LabeledPrediction p;
      p.item = static_cast<std::size_t>(i);
      p.annotator = static_cast<std::size_t>(a);
      p.gold = rng.bernoulli(0.5) ? 1 : 0;
      p.pred = rng.bernoulli(agree) ? p.gold : 1 - p.gold;
      out.push_back(p);
    }
  }
  return out;
}

// One prediction per item shared by all its annotators, as a single-task
// model would produce.
inline void make_annotator_blind(std::vector<LabeledPrediction>& preds, Rng& rng) {
  std::map<std::size_t, int> label;
  for (const auto& p : preds) {
    if (!label.count(p.item)) label[p.item] = rng.bernoulli(0.5) ? 1 : 0;
  }
  for (auto& p : preds) p.pred = label[p.item];
}

}  // namespace hptest
