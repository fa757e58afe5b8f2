#include "hyperpersona/training.hpp"
#include "hyperpersona/optim.hpp"
#include "hyperpersona/rng.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <functional>
#include <iostream>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <thread>

namespace hyperpersona {

namespace {

using F = float;

// Seed streams of one run.
enum StreamTag : std::uint64_t {
  kEncoderInit = 1,
  kModelInit = 2,
  kShuffle = 3,
  kBaseShuffle = 4,
  kDropout = 5,
  kAdapterInit = 6,
};

void check_finite(double loss, std::size_t step, std::size_t batch, double lr, const char* phase) {
  if (!std::isfinite(loss)) {
    throw NumericalError(std::string(phase) + ": non-finite loss at step " + std::to_string(step) + " (batch " +
                         std::to_string(batch) + ", learning rate " + std::to_string(lr) + ")");
  }
}

void log_step(const TrainConfig& cfg, const char* phase, int epoch, std::size_t step, double loss) {
  if (cfg.log_progress) {
    std::cerr << phase << " epoch " << epoch << " step " << step << " loss " << loss << '\n';
  }
}

MetricsReport evaluate(const PerspectivistCorpus& corpus, const std::vector<AnnotationRecord>& records,
                       const std::vector<int>& predicted) {
  if (records.empty()) {
    MetricsReport empty;
    empty.disagreement_corr.reason = "fewer_than_two_items";
    return empty;
  }
  std::vector<LabeledPrediction> preds;
  preds.reserve(records.size());
  for (std::size_t k = 0; k < records.size(); ++k) {
    preds.push_back({records[k].item, records[k].annotator, records[k].label, predicted[k]});
  }
  return evaluate_predictions(preds, corpus.num_classes(), corpus.annotators());
}

std::vector<TokenizedExample> examples_of(const std::vector<AnnotationRecord>& records,
                                          const std::vector<std::vector<int>>& tokens) {
  std::vector<TokenizedExample> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    out.push_back({tokens[r.item], static_cast<int>(r.annotator), r.label});
  }
  return out;
}

// Record-level systems share this interface so one loop drives them all.
class PerspectiveModel {
 public:
  virtual ~PerspectiveModel() = default;
  // Mean training loss of one pass over the examples.
  virtual double train_epoch(const std::vector<TokenizedExample>& train, int epoch) = 0;
  virtual std::vector<int> predict(const std::vector<TokenizedExample>& examples) = 0;
  virtual ParamBreakdown trainable() = 0;
  virtual void write(Checkpoint& ckpt) = 0;
  // Parameters that must not change during training.
  virtual std::uint64_t frozen_checksum() = 0;
  virtual int epochs() const = 0;
};

std::vector<std::size_t> shuffled(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng(seed).shuffle(order);
  return order;
}

// Generic minibatch loop over a loss functor that fills gradients.
template <typename LossFn>
double run_epoch(const std::vector<TokenizedExample>& train, int batch_size, std::uint64_t shuffle_seed,
                 const TrainConfig& cfg, const char* phase, int epoch, double lr, std::size_t& step, LossFn&& fn) {
  if (train.empty()) return 0.0;
  const auto order = shuffled(train.size(), shuffle_seed);
  double sum = 0.0;
  std::size_t batch_id = 0;
  std::vector<TokenizedExample> batch;
  for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(batch_size), ++batch_id) {
    const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(batch_size));
    batch.clear();
    for (std::size_t k = start; k < end; ++k) batch.push_back(train[order[k]]);
    const double loss = fn(std::span<const TokenizedExample>(batch), step);
    check_finite(loss, step, batch_id, lr, phase);
    sum += loss * static_cast<double>(batch.size());
    if (step % 10 == 0) log_step(cfg, phase, epoch, step, loss);
    ++step;
  }
  return sum / static_cast<double>(train.size());
}

std::uint64_t body_checksum(EncoderState<F> enc) { return checksum(enc.body_parameters()); }

class HypernetModel final : public PerspectiveModel {
 public:
  HypernetModel(const EncoderState<F>& base, int num_annotators, const TrainConfig& cfg, std::uint64_t seed)
      : cfg_(cfg), seed_(seed), base_(base), head_(base.head), opt_({cfg.learning_rate}) {
    base_.freeze_all();
    auto hc = HypernetConfig::for_encoder(base.config, num_annotators, cfg.rank, cfg.alpha, cfg.dropout_p);
    hc.train_layer_embeddings = cfg.train_layer_embeddings;
    hc.seed = derive_seed(seed, kModelInit);
    hn_ = HypernetState<F>::initialize(hc);
  }

  double train_epoch(const std::vector<TokenizedExample>& train, int epoch) override {
    HypernetState<F> grad = hn_.zeros_like();
    ClassifierHead<F> head_grad = zero_head();
    const std::uint64_t run_seed = derive_seed(seed_, kDropout);
    return run_epoch(train, cfg_.batch_size, derive_seed(seed_, kShuffle, static_cast<std::uint64_t>(epoch)), cfg_,
                     "hypernet", epoch, cfg_.learning_rate, step_, [&](std::span<const TokenizedExample> batch, std::size_t step) {
                       zero_grads(grad.parameters());
                       zero_grads(head_grad.parameters(false));
                       const F loss = hypernet_loss(base_, hn_, head_, batch, Mode::Train, run_seed, step, &grad,
                                                    &head_grad);
                       auto params = hn_.parameters();
                       auto grads = grad.parameters();
                       for (auto& v : head_.parameters(!cfg_.train_head)) params.push_back(v);
                       for (auto& v : head_grad.parameters(!cfg_.train_head)) grads.push_back(v);
                       opt_.step(params, grads);
                       return static_cast<double>(loss);
                     });
  }

  std::vector<int> predict(const std::vector<TokenizedExample>& examples) override {
    std::vector<int> out(examples.size());
    std::map<int, std::vector<std::size_t>> groups;
    for (std::size_t k = 0; k < examples.size(); ++k) groups[examples[k].annotator].push_back(k);
    for (const auto& [annotator, idx] : groups) {
      const auto overlays = assemble_overlays(hn_, annotator, Mode::Eval);
      for (std::size_t k : idx) out[k] = argmax(classify(head_, encode(base_, examples[k].tokens, &overlays)));
    }
    return out;
  }

  ParamBreakdown trainable() override {
    auto params = hn_.parameters();
    for (auto& v : head_.parameters(!cfg_.train_head)) params.push_back(v);
    return count_trainable(params);
  }

  void write(Checkpoint& ckpt) override {
    EncoderState<F> enc = base_;
    enc.head = head_;
    enc.frozen_head = !cfg_.train_head;
    ckpt.add(enc.parameters());
    ckpt.add(hn_.parameters());
    const auto& c = hn_.config;
    ckpt.metadata["hypernet.num_annotators"] = std::to_string(c.num_annotators);
    ckpt.metadata["hypernet.num_targets"] = std::to_string(c.num_targets);
    ckpt.metadata["hypernet.annotator_embed_dim"] = std::to_string(c.annotator_embed_dim);
    ckpt.metadata["hypernet.layer_embed_dim"] = std::to_string(c.layer_embed_dim);
    ckpt.metadata["hypernet.rank"] = std::to_string(c.rank);
    ckpt.metadata["hypernet.alpha"] = std::to_string(c.alpha);
    ckpt.metadata["hypernet.dropout_p"] = std::to_string(c.dropout_p);
  }

  std::uint64_t frozen_checksum() override { return body_checksum(base_); }
  int epochs() const override { return cfg_.epochs; }

  const EncoderState<F>& base() const { return base_; }
  const HypernetState<F>& hypernet() const { return hn_; }
  const ClassifierHead<F>& head() const { return head_; }

 private:
  ClassifierHead<F> zero_head() const {
    return ClassifierHead<F>::zeros(static_cast<int>(head_.dense_w.rows()), static_cast<int>(head_.out_w.rows()));
  }

  TrainConfig cfg_;
  std::uint64_t seed_;
  EncoderState<F> base_;
  ClassifierHead<F> head_;
  HypernetState<F> hn_;
  Adam<F> opt_;
  std::size_t step_ = 0;
};

class SeparateLoraModel final : public PerspectiveModel {
 public:
  SeparateLoraModel(const EncoderState<F>& base, int num_annotators, const TrainConfig& cfg, std::uint64_t seed)
      : cfg_(cfg), seed_(seed), base_(base) {
    base_.freeze_all();
    for (int a = 0; a < num_annotators; ++a) {
      models_.push_back(LoraAdapterModel<F>::initialize(base_, cfg.rank, cfg.alpha,
                                                        derive_seed(seed, kAdapterInit, static_cast<std::uint64_t>(a))));
      opts_.emplace_back(AdamSettings{cfg.learning_rate});
    }
    steps_.assign(static_cast<std::size_t>(num_annotators), 0);
  }

  double train_epoch(const std::vector<TokenizedExample>& train, int epoch) override {
    std::vector<std::vector<TokenizedExample>> per(models_.size());
    for (const auto& ex : train) per[static_cast<std::size_t>(ex.annotator)].push_back(ex);
    double sum = 0.0;
    for (std::size_t a = 0; a < models_.size(); ++a) {
      auto& m = models_[a];
      auto grad = m.zeros_like();
      const double mean = run_epoch(
          per[a], cfg_.batch_size, derive_seed(seed_, kShuffle, static_cast<std::uint64_t>(epoch), a + 1), cfg_,
          "separate_lora", epoch, cfg_.learning_rate, steps_[a], [&](std::span<const TokenizedExample> batch, std::size_t) {
            zero_grads(grad.parameters());
            const F loss = lora_loss(base_, m, batch, &grad);
            opts_[a].step(m.parameters(), grad.parameters());
            return static_cast<double>(loss);
          });
      sum += mean * static_cast<double>(per[a].size());
    }
    return train.empty() ? 0.0 : sum / static_cast<double>(train.size());
  }

  std::vector<int> predict(const std::vector<TokenizedExample>& examples) override {
    std::vector<int> out(examples.size());
    for (std::size_t k = 0; k < examples.size(); ++k) {
      out[k] = argmax(lora_forward(base_, models_[static_cast<std::size_t>(examples[k].annotator)], examples[k].tokens));
    }
    return out;
  }

  ParamBreakdown trainable() override {
    ParamBreakdown out;
    for (auto& m : models_) {
      for (const auto& [name, n] : count_trainable(m.parameters()).items) out.add(name, n);
    }
    return out;
  }

  void write(Checkpoint& ckpt) override {
    ckpt.add(base_.parameters());
    for (std::size_t a = 0; a < models_.size(); ++a) {
      auto params = models_[a].parameters();
      for (auto& p : params) p.name = "annotator." + std::to_string(a) + "." + p.name;
      ckpt.add(params);
    }
  }

  std::uint64_t frozen_checksum() override { return checksum(base_.parameters()); }
  int epochs() const override { return cfg_.separate_lora_epochs; }

 private:
  TrainConfig cfg_;
  std::uint64_t seed_;
  EncoderState<F> base_;
  std::vector<LoraAdapterModel<F>> models_;
  std::vector<Adam<F>> opts_;
  std::vector<std::size_t> steps_;
};

class AartModel final : public PerspectiveModel {
 public:
  AartModel(const EncoderState<F>& base, int num_annotators, const AgreementGraph& graph, const TrainConfig& cfg,
            std::uint64_t seed)
      : cfg_(cfg), seed_(seed), graph_(graph), opt_({cfg.learning_rate}) {
    state_ = AartState<F>::initialize(base, num_annotators, derive_seed(seed, kModelInit), cfg.aart);
  }

  double train_epoch(const std::vector<TokenizedExample>& train, int epoch) override {
    auto grad = state_.zeros_like();
    return run_epoch(train, cfg_.batch_size, derive_seed(seed_, kShuffle, static_cast<std::uint64_t>(epoch)), cfg_,
                     "aart", epoch, cfg_.learning_rate, step_, [&](std::span<const TokenizedExample> batch, std::size_t) {
                       zero_grads(grad.parameters());
                       const F loss = aart_loss(state_, batch, graph_, &grad);
                       opt_.step(state_.parameters(), grad.parameters());
                       return static_cast<double>(loss);
                     });
  }

  std::vector<int> predict(const std::vector<TokenizedExample>& examples) override {
    std::vector<int> out(examples.size());
    for (std::size_t k = 0; k < examples.size(); ++k) {
      out[k] = argmax(aart_forward(state_, examples[k].tokens, examples[k].annotator));
    }
    return out;
  }

  ParamBreakdown trainable() override { return count_trainable(state_.parameters()); }
  void write(Checkpoint& ckpt) override {
    ckpt.add(state_.parameters());
    ckpt.metadata["aart.lambda_reg"] = std::to_string(cfg_.aart.lambda_reg);
    ckpt.metadata["aart.lambda_con"] = std::to_string(cfg_.aart.lambda_con);
    ckpt.metadata["aart.temperature"] = std::to_string(cfg_.aart.temperature);
  }
  std::uint64_t frozen_checksum() override { return 0; }
  int epochs() const override { return cfg_.epochs; }

 private:
  TrainConfig cfg_;
  std::uint64_t seed_;
  AgreementGraph graph_;
  AartState<F> state_;
  Adam<F> opt_;
  std::size_t step_ = 0;
};

class AeModel final : public PerspectiveModel {
 public:
  AeModel(const EncoderState<F>& base, int num_annotators, const TrainConfig& cfg, std::uint64_t seed)
      : cfg_(cfg), seed_(seed), opt_({cfg.learning_rate}) {
    state_ = AeState<F>::initialize(base, num_annotators, derive_seed(seed, kModelInit));
  }

  double train_epoch(const std::vector<TokenizedExample>& train, int epoch) override {
    auto grad = state_.zeros_like();
    return run_epoch(train, cfg_.batch_size, derive_seed(seed_, kShuffle, static_cast<std::uint64_t>(epoch)), cfg_,
                     "ae", epoch, cfg_.learning_rate, step_, [&](std::span<const TokenizedExample> batch, std::size_t) {
                       zero_grads(grad.parameters());
                       const F loss = ae_loss(state_, batch, &grad);
                       opt_.step(state_.parameters(), grad.parameters());
                       return static_cast<double>(loss);
                     });
  }

  std::vector<int> predict(const std::vector<TokenizedExample>& examples) override {
    std::vector<int> out(examples.size());
    for (std::size_t k = 0; k < examples.size(); ++k) {
      out[k] = argmax(ae_forward(state_, examples[k].tokens, examples[k].annotator));
    }
    return out;
  }

  ParamBreakdown trainable() override { return count_trainable(state_.parameters()); }
  void write(Checkpoint& ckpt) override { ckpt.add(state_.parameters()); }
  std::uint64_t frozen_checksum() override { return 0; }
  int epochs() const override { return cfg_.epochs; }

 private:
  TrainConfig cfg_;
  std::uint64_t seed_;
  AeState<F> state_;
  Adam<F> opt_;
  std::size_t step_ = 0;
};

// Item-level majority examples over the records of one split part.
std::vector<TokenizedExample> majority_examples(const PerspectivistCorpus& corpus,
                                                const std::vector<AnnotationRecord>& records,
                                                const std::vector<std::vector<int>>& tokens) {
  std::map<std::size_t, std::vector<int>> votes;
  for (const auto& r : records) votes[r.item].push_back(r.label);
  std::vector<TokenizedExample> out;
  out.reserve(votes.size());
  for (const auto& [item, v] : votes) out.push_back({tokens[item], 0, majority_vote(v, corpus.num_classes())});
  return out;
}

std::vector<int> predict_items(const EncoderState<F>& enc, const std::vector<TokenizedExample>& examples) {
  std::vector<int> out(examples.size());
  for (std::size_t k = 0; k < examples.size(); ++k) out[k] = argmax(forward(enc, examples[k].tokens).logits);
  return out;
}

double micro_of(const std::vector<TokenizedExample>& examples, const std::vector<int>& pred, int num_classes) {
  if (examples.empty()) return 0.0;
  std::vector<int> gold;
  gold.reserve(examples.size());
  for (const auto& ex : examples) gold.push_back(ex.label);
  return micro_f1(gold, pred, num_classes);
}

void stamp(MetricsReport& report, const ParamBreakdown& params) {
  report.trainable_params = params.total();
  report.params_breakdown = params;
}

}  // namespace

std::vector<std::vector<int>> tokenize_corpus(const PerspectivistCorpus& corpus, const EncoderConfig& config) {
  std::vector<std::vector<int>> out;
  out.reserve(corpus.num_items());
  for (const auto& item : corpus.items()) out.push_back(tokenize(item.text, config));
  return out;
}

BaseModel fit_base(const PerspectivistCorpus& corpus, const SplitBundle& split,
                   const std::vector<std::vector<int>>& tokens, const TrainConfig& config, std::uint64_t seed) {
  config.validate();
  EncoderConfig ec = config.encoder;
  ec.num_classes = corpus.num_classes();
  ec.seed = derive_seed(seed, kEncoderInit);
  BaseModel base{EncoderState<F>::initialize(ec), {}, {}};
  auto& enc = base.encoder;

  const auto train = majority_examples(corpus, split.train, tokens);
  const auto dev = examples_of(split.dev, tokens);
  Adam<F> opt({config.base_learning_rate});
  EncoderState<F> grad = enc.zeros_like();
  std::size_t step = 0;
  for (int epoch = 0; epoch < config.base_epochs; ++epoch) {
    const double loss = run_epoch(
        train, config.base_batch_size, derive_seed(seed, kBaseShuffle, static_cast<std::uint64_t>(epoch)), config,
        "base", epoch, config.base_learning_rate, step, [&](std::span<const TokenizedExample> batch, std::size_t) {
          zero_grads(grad.parameters());
          const F inv_n = static_cast<F>(1.0 / static_cast<double>(batch.size()));
          F total = 0;
          for (const auto& ex : batch) {
            EncoderCache<F> cache;
            HeadCache<F> hc;
            const Vector<F> pooled = encode(enc, ex.tokens, nullptr, &cache);
            const Vector<F> logits = classify(enc.head, pooled, &hc);
            Vector<F> dlogits;
            total += cross_entropy(logits, ex.label, &dlogits);
            dlogits *= inv_n;
            const Vector<F> dpooled = classify_backward(enc.head, hc, dlogits, &grad.head);
            encode_backward(enc, ex.tokens, nullptr, cache, dpooled, &grad, nullptr);
          }
          opt.step(enc.parameters(), grad.parameters());
          return static_cast<double>(total * inv_n);
        });
    base.train_loss.push_back(loss);
    base.dev_micro_f1.push_back(micro_of(dev, predict_items(enc, dev), corpus.num_classes()));
  }
  return base;
}

RunResult train(const PerspectivistCorpus& corpus, const SplitBundle& split, const TrainConfig& config,
                std::uint64_t seed, RunArtifacts* artifacts) {
  const auto tokens = tokenize_corpus(corpus, config.encoder);
  const BaseModel base = fit_base(corpus, split, tokens, config, seed);
  return train_from_base(corpus, split, tokens, base, config, seed, artifacts);
}

RunResult train_from_base(const PerspectivistCorpus& corpus, const SplitBundle& split,
                          const std::vector<std::vector<int>>& tokens, const BaseModel& base,
                          const TrainConfig& config, std::uint64_t seed, RunArtifacts* artifacts) {
  config.validate();
  const auto started = std::chrono::steady_clock::now();
  RunResult result;
  result.seed = seed;
  result.system = config.system;
  result.fingerprint = config.fingerprint();
  result.config = config.resolved();
  const int A = static_cast<int>(corpus.num_annotators());
  const auto train_ex = examples_of(split.train, tokens);
  const auto dev_ex = examples_of(split.dev, tokens);
  const auto test_ex = examples_of(split.test, tokens);

  Checkpoint ckpt;
  ckpt.metadata["system"] = to_string(config.system);
  ckpt.metadata["seed"] = std::to_string(seed);
  ckpt.metadata["fingerprint"] = result.fingerprint;
  std::string registry;
  for (const auto& id : corpus.annotators()) registry += (registry.empty() ? "" : "\n") + id;
  ckpt.metadata["annotators"] = registry;

  if (config.system == SystemKind::SingleTask) {
    EncoderState<F> enc = base.encoder;
    result.train_loss = base.train_loss;
    result.dev_micro_f1 = base.dev_micro_f1;
    result.dev = evaluate(corpus, split.dev, predict_items(enc, dev_ex));
    result.test = evaluate(corpus, split.test, predict_items(enc, test_ex));
    const auto params = count_trainable(enc.parameters());
    stamp(result.dev, params);
    stamp(result.test, params);
    if (artifacts) {
      artifacts->base_before = base.encoder;
      artifacts->base_after = enc;
      ckpt.add(enc.parameters());
    }
  } else {
    std::unique_ptr<PerspectiveModel> model;
    HypernetModel* hypernet = nullptr;
    switch (config.system) {
      case SystemKind::Hypernet: {
        auto m = std::make_unique<HypernetModel>(base.encoder, A, config, seed);
        hypernet = m.get();
        model = std::move(m);
        break;
      }
      case SystemKind::SeparateLora:
        model = std::make_unique<SeparateLoraModel>(base.encoder, A, config, seed);
        break;
      case SystemKind::Aart: {
        std::vector<std::vector<std::pair<int, int>>> votes(corpus.num_items());
        for (const auto& r : split.train) votes[r.item].emplace_back(static_cast<int>(r.annotator), r.label);
        model = std::make_unique<AartModel>(base.encoder, A, AgreementGraph(A, votes, config.aart_agreement_threshold),
                                            config, seed);
        break;
      }
      case SystemKind::Ae:
        model = std::make_unique<AeModel>(base.encoder, A, config, seed);
        break;
      case SystemKind::SingleTask:
        break;
    }
    const std::uint64_t frozen_before = model->frozen_checksum();
    for (int epoch = 0; epoch < model->epochs(); ++epoch) {
      result.train_loss.push_back(model->train_epoch(train_ex, epoch));
      result.dev_micro_f1.push_back(micro_of(dev_ex, model->predict(dev_ex), corpus.num_classes()));
    }
    if (model->frozen_checksum() != frozen_before) {
      throw std::logic_error("internal error: frozen parameters changed during training");
    }
    result.dev = evaluate(corpus, split.dev, model->predict(dev_ex));
    result.test = evaluate(corpus, split.test, model->predict(test_ex));
    const auto params = model->trainable();
    stamp(result.dev, params);
    stamp(result.test, params);
    if (artifacts) {
      artifacts->base_before = base.encoder;
      if (hypernet) {
        artifacts->base_after = hypernet->base();
        artifacts->hypernet = hypernet->hypernet();
        artifacts->head = hypernet->head();
      }
      model->write(ckpt);
    }
  }
  if (artifacts) artifacts->checkpoint = std::move(ckpt);
  result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return result;
}

std::size_t select_cell(const std::vector<GridCell>& cells) {
  if (cells.empty()) throw ContractError("select_cell: empty grid");
  std::size_t best = 0;
  for (std::size_t k = 1; k < cells.size(); ++k) {
    const auto& c = cells[k];
    const auto& b = cells[best];
    if (c.dev_micro_f1 != b.dev_micro_f1) {
      if (c.dev_micro_f1 > b.dev_micro_f1) best = k;
    } else if (c.learning_rate != b.learning_rate) {
      if (c.learning_rate < b.learning_rate) best = k;
    } else if (c.dropout_p > b.dropout_p) {
      best = k;
    }
  }
  return best;
}

namespace {

// Runs fn(0..n-1) on up to `jobs` threads. Results must be written by
// index; the first exception in index order is rethrown.
void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn) {
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t k = next++; k < n; k = next++) {
      try {
        fn(k);
      } catch (...) {
        errors[k] = std::current_exception();
      }
    }
  };
  const std::size_t threads = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(jobs, 1)));
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace

GridResult grid_search(const PerspectivistCorpus& corpus, const SplitBundle& split, const TrainConfig& config,
                       std::uint64_t seed, int jobs) {
  config.validate();
  const auto tokens = tokenize_corpus(corpus, config.encoder);
  GridResult grid;
  for (double p : config.grid_dropouts) {
    for (double lr : config.grid_learning_rates) grid.cells.push_back({p, lr, 0.0, {}});
  }
  // The base fit does not depend on the grid except for single_task, whose
  // learning rate is the base learning rate.
  std::optional<BaseModel> shared;
  if (config.system != SystemKind::SingleTask) shared = fit_base(corpus, split, tokens, config, seed);
  parallel_for(grid.cells.size(), jobs, [&](std::size_t k) {
    auto& cell = grid.cells[k];
    TrainConfig c = config;
    c.dropout_p = cell.dropout_p;
    c.learning_rate = cell.learning_rate;
    if (config.system == SystemKind::SingleTask) {
      c.base_learning_rate = cell.learning_rate;
      const BaseModel base = fit_base(corpus, split, tokens, c, seed);
      cell.result = train_from_base(corpus, split, tokens, base, c, seed);
    } else {
      cell.result = train_from_base(corpus, split, tokens, *shared, c, seed);
    }
    cell.dev_micro_f1 = cell.result.dev.micro_f1;
  });
  grid.selected = select_cell(grid.cells);
  return grid;
}

const MetricSummary* Aggregate::find(const std::string& name) const {
  for (const auto& [n, s] : metrics) {
    if (n == name) return &s;
  }
  return nullptr;
}

MetricSummary summarize(const std::vector<double>& values) {
  MetricSummary s;
  s.count = values.size();
  if (values.empty()) return s;
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.std = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  return s;
}

Aggregate aggregate(const std::vector<RunResult>& runs) {
  if (runs.empty()) throw ContractError("aggregate: no runs");
  Aggregate agg;
  agg.system = runs.front().system;
  agg.fingerprint = runs.front().fingerprint;
  agg.trainable_params = runs.front().test.trainable_params;
  agg.params_breakdown = runs.front().test.params_breakdown;
  std::vector<double> ann, glob, acc, micro, corr;
  for (const auto& r : runs) {
    ann.push_back(r.test.annotator_f1);
    glob.push_back(r.test.global_f1);
    acc.push_back(r.test.global_accuracy);
    micro.push_back(r.test.micro_f1);
    if (r.test.disagreement_corr.value) {
      corr.push_back(*r.test.disagreement_corr.value);
    } else {
      agg.absent_reasons.push_back(r.test.disagreement_corr.reason);
    }
  }
  agg.metrics = {{"annotator_f1", summarize(ann)},
                 {"global_f1", summarize(glob)},
                 {"global_accuracy", summarize(acc)},
                 {"micro_f1", summarize(micro)},
                 {"disagreement_corr", summarize(corr)}};
  return agg;
}

std::vector<RunResult> multi_seed(const PerspectivistCorpus& corpus, const TrainConfig& config, int jobs,
                                  std::vector<RunArtifacts>* artifacts) {
  config.validate();
  std::vector<RunResult> out(config.seeds.size());
  if (artifacts) artifacts->assign(config.seeds.size(), {});
  parallel_for(config.seeds.size(), jobs, [&](std::size_t k) {
    const std::uint64_t seed = config.seeds[k];
    const SplitBundle split = stratified_split(corpus, seed);
    out[k] = train(corpus, split, config, seed, artifacts ? &(*artifacts)[k] : nullptr);
  });
  return out;
}

}  // namespace hyperpersona
