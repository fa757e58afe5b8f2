#pragma once

// Training loop, grid search and multi-seed driver shared by every system.
//
// Every system starts from a base encoder fitted on the item-level majority
// labels of the training split. single_task is that fit; hypernet and
// separate_lora freeze it; aart and ae fine-tune all of it.

#include "hyperpersona/accounting.hpp"
#include "hyperpersona/baselines.hpp"
#include "hyperpersona/checkpoint.hpp"
#include "hyperpersona/corpus.hpp"
#include "hyperpersona/encoder.hpp"
#include "hyperpersona/hypernet.hpp"
#include "hyperpersona/metrics.hpp"

#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace hyperpersona {

struct TrainConfig {
  SystemKind system = SystemKind::Hypernet;
  int epochs = 5;
  int batch_size = 100;
  double learning_rate = 1e-5;
  double dropout_p = 0.25;
  int rank = 2;
  double alpha = 32.0;
  EncoderConfig encoder = EncoderConfig::desk();

  // Majority-label fit of the base encoder.
  int base_epochs = 5;
  int base_batch_size = 32;
  double base_learning_rate = 1e-3;

  int separate_lora_epochs = 10;
  bool train_head = true;
  bool train_layer_embeddings = false;
  AartSettings aart;
  double aart_agreement_threshold = 0.8;

  std::vector<std::uint64_t> seeds{0};
  std::vector<double> grid_dropouts{0.0, 0.1, 0.25};
  std::vector<double> grid_learning_rates{5e-5, 1e-5, 5e-6};

  bool log_progress = false;

  void validate() const;
  // Every resolved key in a stable order; this text is what the
  // fingerprint hashes.
  std::vector<std::pair<std::string, std::string>> resolved() const;
  std::string fingerprint() const;
};

struct RunResult {
  std::uint64_t seed = 0;
  SystemKind system = SystemKind::Hypernet;
  std::vector<double> train_loss;    // mean loss per epoch
  std::vector<double> dev_micro_f1;  // per epoch
  MetricsReport dev;
  MetricsReport test;
  double seconds = 0.0;
  std::string fingerprint;
  std::vector<std::pair<std::string, std::string>> config;
};

// Majority-label base fit, kept so several runs on one split can share it.
struct BaseModel {
  EncoderState<float> encoder;
  std::vector<double> train_loss;
  std::vector<double> dev_micro_f1;
};

// Optional by-products of a run.
struct RunArtifacts {
  std::optional<EncoderState<float>> base_before;  // the frozen/initial encoder as trained on majority labels
  std::optional<EncoderState<float>> base_after;   // the same encoder after the run
  std::optional<HypernetState<float>> hypernet;
  std::optional<ClassifierHead<float>> head;
  Checkpoint checkpoint;
};

// Mean cross-entropy of the hypernetwork system on a batch. Overlays are
// generated once per distinct annotator of the batch; in train mode the
// dropout masks come from (run_seed, step, annotator, target). Gradients
// are accumulated into grad / head_grad when given; the base encoder is
// treated as constant.
template <typename Scalar>
Scalar hypernet_loss(const EncoderState<Scalar>& base, const HypernetState<Scalar>& hn,
                     const ClassifierHead<Scalar>& head, std::span<const TokenizedExample> batch, Mode mode,
                     std::uint64_t run_seed, std::uint64_t step, HypernetState<Scalar>* grad = nullptr,
                     ClassifierHead<Scalar>* head_grad = nullptr) {
  if (batch.empty()) throw ContractError("hypernet_loss: empty batch");
  std::map<int, std::vector<const TokenizedExample*>> groups;
  for (const auto& ex : batch) groups[ex.annotator].push_back(&ex);
  const Scalar inv_n = static_cast<Scalar>(1.0 / static_cast<double>(batch.size()));
  Scalar total = 0;
  std::vector<GenerateCache<Scalar>> caches;
  for (const auto& [annotator, examples] : groups) {
    const AdapterSet<Scalar> overlays = assemble_overlays(hn, annotator, mode, run_seed, step, grad ? &caches : nullptr);
    AdapterSet<Scalar> overlay_grad;
    if (grad) overlay_grad = overlays.zeros_like();
    for (const TokenizedExample* ex : examples) {
      EncoderCache<Scalar> ec;
      HeadCache<Scalar> hc;
      const Vector<Scalar> pooled = encode(base, ex->tokens, &overlays, grad ? &ec : nullptr);
      const Vector<Scalar> logits = classify(head, pooled, &hc);
      Vector<Scalar> dlogits;
      total += cross_entropy(logits, ex->label, grad ? &dlogits : nullptr);
      if (!grad) continue;
      dlogits *= inv_n;
      const Vector<Scalar> dpooled = classify_backward(head, hc, dlogits, head_grad);
      encode_backward(base, ex->tokens, &overlays, ec, dpooled, nullptr, &overlay_grad);
    }
    if (!grad) continue;
    for (int j = 0; j < hn.config.num_targets; ++j) {
      hn.generate_backward(annotator, j, caches[static_cast<std::size_t>(j)],
                           *overlay_grad.find(TargetKey::from_index(j)), *grad);
    }
  }
  return total * inv_n;
}

// Tokens of every corpus item.
std::vector<std::vector<int>> tokenize_corpus(const PerspectivistCorpus& corpus, const EncoderConfig& config);

BaseModel fit_base(const PerspectivistCorpus& corpus, const SplitBundle& split,
                   const std::vector<std::vector<int>>& tokens, const TrainConfig& config, std::uint64_t seed);

RunResult train(const PerspectivistCorpus& corpus, const SplitBundle& split, const TrainConfig& config,
                std::uint64_t seed, RunArtifacts* artifacts = nullptr);

// As train, reusing an already fitted base.
RunResult train_from_base(const PerspectivistCorpus& corpus, const SplitBundle& split,
                          const std::vector<std::vector<int>>& tokens, const BaseModel& base,
                          const TrainConfig& config, std::uint64_t seed, RunArtifacts* artifacts = nullptr);

struct GridCell {
  double dropout_p = 0.0;
  double learning_rate = 0.0;
  double dev_micro_f1 = 0.0;
  RunResult result;
};

struct GridResult {
  std::vector<GridCell> cells;  // dropout-major, in the configured order
  std::size_t selected = 0;
};

// Highest dev micro-F1; ties go to the lower learning rate, then the higher
// dropout.
std::size_t select_cell(const std::vector<GridCell>& cells);

GridResult grid_search(const PerspectivistCorpus& corpus, const SplitBundle& split, const TrainConfig& config,
                       std::uint64_t seed, int jobs = 1);

struct MetricSummary {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation
  std::size_t count = 0;
};

struct Aggregate {
  SystemKind system = SystemKind::Hypernet;
  std::vector<std::pair<std::string, MetricSummary>> metrics;
  std::vector<std::string> absent_reasons;  // disagreement_corr reasons per seed where it was undefined
  std::uint64_t trainable_params = 0;
  ParamBreakdown params_breakdown;
  std::string fingerprint;

  const MetricSummary* find(const std::string& name) const;
};

MetricSummary summarize(const std::vector<double>& values);
Aggregate aggregate(const std::vector<RunResult>& runs);

// One fresh stratified split and one run per seed; runs are dispatched to
// `jobs` threads and collected in seed order.
// With artifacts, one entry per seed is filled.
std::vector<RunResult> multi_seed(const PerspectivistCorpus& corpus, const TrainConfig& config, int jobs = 1,
                                  std::vector<RunArtifacts>* artifacts = nullptr);

}  // namespace hyperpersona
