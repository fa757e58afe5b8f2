#pragma once

// Comparison systems built on the same encoder scaffolding:
//   AART  — head(e(x) + f(a)), with L2 and contrastive terms on f;
//   AE    — head(e(x) + alpha_n E_n[a] + alpha_a E_a[a]) with scalar gates;
//   separate LoRA — one adapter set and classifier copy per annotator.

#include "hyperpersona/encoder.hpp"
#include "hyperpersona/lora.hpp"
#include "hyperpersona/nn.hpp"
#include "hyperpersona/rng.hpp"

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

namespace hyperpersona {

// One training example with its tokens resolved.
struct TokenizedExample {
  std::span<const int> tokens;
  int annotator = 0;
  int label = 0;
};

// Symmetric annotator-pair relation: true when two annotators agree on more
// than `threshold` of the training items they share.
class AgreementGraph {
 public:
  AgreementGraph() = default;
  AgreementGraph(int num_annotators, const std::vector<std::vector<std::pair<int, int>>>& votes_by_item,
                 double threshold = 0.8);

  bool positive(int a, int b) const {
    return a != b && positives_[static_cast<std::size_t>(a) * n_ + static_cast<std::size_t>(b)];
  }
  int size() const { return static_cast<int>(n_); }

 private:
  std::size_t n_ = 0;
  std::vector<bool> positives_;
};

inline AgreementGraph::AgreementGraph(int num_annotators,
                                      const std::vector<std::vector<std::pair<int, int>>>& votes_by_item,
                                      double threshold)
    : n_(static_cast<std::size_t>(num_annotators)), positives_(n_ * n_, false) {
  std::vector<int> shared(n_ * n_, 0), agree(n_ * n_, 0);
  for (const auto& votes : votes_by_item) {
    for (std::size_t x = 0; x < votes.size(); ++x) {
      for (std::size_t y = x + 1; y < votes.size(); ++y) {
        const auto a = static_cast<std::size_t>(votes[x].first);
        const auto b = static_cast<std::size_t>(votes[y].first);
        const int same = votes[x].second == votes[y].second;
        ++shared[a * n_ + b];
        ++shared[b * n_ + a];
        agree[a * n_ + b] += same;
        agree[b * n_ + a] += same;
      }
    }
  }
  for (std::size_t k = 0; k < n_ * n_; ++k) {
    positives_[k] = shared[k] > 0 && static_cast<double>(agree[k]) / shared[k] > threshold;
  }
}

struct AartSettings {
  double lambda_reg = 0.1;
  double lambda_con = 0.1;
  double temperature = 0.1;
};

template <typename Scalar>
struct AartState {
  EncoderState<Scalar> encoder;
  Matrix<Scalar> annotator_embeddings;  // num_annotators x d
  AartSettings settings;

  static AartState initialize(EncoderState<Scalar> base, int num_annotators, std::uint64_t seed,
                              AartSettings settings = {}) {
    AartState s{std::move(base), Matrix<Scalar>::Zero(num_annotators, 0), settings};
    s.encoder.frozen_embeddings = s.encoder.frozen_body = s.encoder.frozen_head = false;
    const int d = s.encoder.config.hidden_dim;
    s.annotator_embeddings.resize(num_annotators, d);
    Rng rng(derive_seed(seed, 0xaa27));
    for (Index k = 0; k < s.annotator_embeddings.size(); ++k) {
      s.annotator_embeddings.data()[k] = static_cast<Scalar>(0.01 * rng.normal());
    }
    return s;
  }

  AartState zeros_like() const {
    return {encoder.zeros_like(), Matrix<Scalar>::Zero(annotator_embeddings.rows(), annotator_embeddings.cols()),
            settings};
  }

  std::vector<ParamView<Scalar>> parameters() {
    auto out = encoder.parameters();
    out.push_back(view_of("aart.annotator_embeddings", "annotator_embeddings", false, annotator_embeddings));
    return out;
  }
};

template <typename Scalar>
Vector<Scalar> aart_forward(const AartState<Scalar>& s, std::span<const int> tokens, int annotator,
                            EncoderCache<Scalar>* enc_cache = nullptr, HeadCache<Scalar>* head_cache = nullptr) {
  if (annotator < 0 || annotator >= s.annotator_embeddings.rows()) {
    throw ContractError("aart_forward: annotator index out of range");
  }
  const Vector<Scalar> pooled = encode(s.encoder, tokens, nullptr, enc_cache);
  const Vector<Scalar> combined = pooled + s.annotator_embeddings.row(annotator).transpose();
  return classify(s.encoder.head, combined, head_cache);
}

namespace detail {

// Contrastive term over the distinct annotators of a batch, and its
// gradient w.r.t. their embeddings (accumulated into grad when non-null).
template <typename Scalar>
Scalar aart_contrastive(const Matrix<Scalar>& emb, const std::vector<int>& annotators, const AgreementGraph& graph,
                        Scalar temperature, Matrix<Scalar>* grad, Scalar weight) {
  const std::size_t n = annotators.size();
  if (n < 2) return Scalar(0);
  constexpr double kNormEps = 1e-8;
  std::vector<Vector<Scalar>> unit(n);
  std::vector<Scalar> norms(n);
  for (std::size_t k = 0; k < n; ++k) {
    const Vector<Scalar> v = emb.row(annotators[k]).transpose();
    norms[k] = std::max(v.norm(), static_cast<Scalar>(kNormEps));
    unit[k] = v / norms[k];
  }
  Matrix<Scalar> sim(n, n);
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t b = 0; b < n; ++b) sim(a, b) = unit[a].dot(unit[b]);
  }
  Matrix<Scalar> dsim = Matrix<Scalar>::Zero(n, n);
  Scalar total = 0;
  int anchors = 0;
  for (std::size_t a = 0; a < n; ++a) {
    std::vector<std::size_t> pos;
    for (std::size_t b = 0; b < n; ++b) {
      if (graph.positive(annotators[a], annotators[b])) pos.push_back(b);
    }
    if (pos.empty()) continue;
    ++anchors;
    Scalar peak = -std::numeric_limits<Scalar>::infinity();
    for (std::size_t b = 0; b < n; ++b) {
      if (b != a) peak = std::max(peak, sim(a, b) / temperature);
    }
    Scalar denom = 0;
    for (std::size_t b = 0; b < n; ++b) {
      if (b != a) denom += std::exp(sim(a, b) / temperature - peak);
    }
    const Scalar log_denom = peak + std::log(denom);
    Scalar loss = 0;
    for (std::size_t p : pos) loss -= sim(a, p) / temperature - log_denom;
    loss /= static_cast<Scalar>(pos.size());
    total += loss;
    for (std::size_t p : pos) dsim(a, p) -= Scalar(1) / (temperature * static_cast<Scalar>(pos.size()));
    for (std::size_t b = 0; b < n; ++b) {
      if (b != a) dsim(a, b) += std::exp(sim(a, b) / temperature - log_denom) / temperature;
    }
  }
  if (anchors == 0) return Scalar(0);
  total /= static_cast<Scalar>(anchors);
  if (grad) {
    dsim *= weight / static_cast<Scalar>(anchors);
    for (std::size_t a = 0; a < n; ++a) {
      for (std::size_t b = 0; b < n; ++b) {
        const Scalar g = dsim(a, b);
        if (g == Scalar(0)) continue;
        // d cos(u,v) / du = (v_hat - cos * u_hat) / |u|
        grad->row(annotators[a]) += (g * (unit[b] - sim(a, b) * unit[a]) / norms[a]).transpose();
        grad->row(annotators[b]) += (g * (unit[a] - sim(a, b) * unit[b]) / norms[b]).transpose();
      }
    }
  }
  return total;
}

}  // namespace detail

// CE + lambda_reg * mean ||f(a)||^2 + lambda_con * contrastive. The
// regulariser and contrastive terms run over the distinct annotators of the
// batch, so duplicating the batch leaves the loss unchanged.
template <typename Scalar>
Scalar aart_loss(const AartState<Scalar>& s, std::span<const TokenizedExample> batch, const AgreementGraph& graph,
                 AartState<Scalar>* grad = nullptr) {
  if (batch.empty()) throw ContractError("aart_loss: empty batch");
  const Scalar inv_n = static_cast<Scalar>(1.0 / static_cast<double>(batch.size()));
  Scalar ce = 0;
  for (const auto& ex : batch) {
    EncoderCache<Scalar> ec;
    HeadCache<Scalar> hc;
    const Vector<Scalar> logits = aart_forward(s, ex.tokens, ex.annotator, &ec, &hc);
    Vector<Scalar> dlogits;
    ce += cross_entropy(logits, ex.label, grad ? &dlogits : nullptr);
    if (grad) {
      dlogits *= inv_n;
      const Vector<Scalar> dcombined = classify_backward(s.encoder.head, hc, dlogits, &grad->encoder.head);
      grad->annotator_embeddings.row(ex.annotator) += dcombined.transpose();
      encode_backward(s.encoder, ex.tokens, nullptr, ec, dcombined, &grad->encoder, nullptr);
    }
  }
  ce *= inv_n;

  std::vector<int> distinct;
  for (const auto& ex : batch) distinct.push_back(ex.annotator);
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());

  const auto lambda_reg = static_cast<Scalar>(s.settings.lambda_reg);
  const auto lambda_con = static_cast<Scalar>(s.settings.lambda_con);
  Scalar reg = 0;
  const Scalar inv_u = static_cast<Scalar>(1.0 / static_cast<double>(distinct.size()));
  for (int a : distinct) {
    reg += s.annotator_embeddings.row(a).squaredNorm();
    if (grad && lambda_reg != Scalar(0)) {
      grad->annotator_embeddings.row(a) += Scalar(2) * lambda_reg * inv_u * s.annotator_embeddings.row(a);
    }
  }
  reg *= inv_u;

  Scalar con = 0;
  if (lambda_con != Scalar(0)) {
    con = detail::aart_contrastive(s.annotator_embeddings, distinct, graph,
                                   static_cast<Scalar>(s.settings.temperature),
                                   grad ? &grad->annotator_embeddings : nullptr, lambda_con);
  }
  return ce + lambda_reg * reg + lambda_con * con;
}

template <typename Scalar>
struct AeState {
  EncoderState<Scalar> encoder;
  Matrix<Scalar> annotator_embeddings;   // E_a, num_annotators x d
  Matrix<Scalar> annotation_embeddings;  // E_n, num_annotators x d
  Vector<Scalar> gate_a_w;
  Vector<Scalar> gate_a_b;  // length 1
  Vector<Scalar> gate_n_w;
  Vector<Scalar> gate_n_b;  // length 1

  static AeState initialize(EncoderState<Scalar> base, int num_annotators, std::uint64_t seed) {
    AeState s;
    s.encoder = std::move(base);
    s.encoder.frozen_embeddings = s.encoder.frozen_body = s.encoder.frozen_head = false;
    const int d = s.encoder.config.hidden_dim;
    Rng rng(derive_seed(seed, 0xae));
    s.annotator_embeddings.resize(num_annotators, d);
    s.annotation_embeddings.resize(num_annotators, d);
    for (Index k = 0; k < s.annotator_embeddings.size(); ++k) {
      s.annotator_embeddings.data()[k] = static_cast<Scalar>(0.1 * rng.normal());
      s.annotation_embeddings.data()[k] = static_cast<Scalar>(0.1 * rng.normal());
    }
    const double bound = 1.0 / std::sqrt(static_cast<double>(d));
    s.gate_a_w.resize(d);
    s.gate_n_w.resize(d);
    for (Index k = 0; k < d; ++k) {
      s.gate_a_w(k) = static_cast<Scalar>(rng.uniform(-bound, bound));
      s.gate_n_w(k) = static_cast<Scalar>(rng.uniform(-bound, bound));
    }
    s.gate_a_b = s.gate_n_b = Vector<Scalar>::Zero(1);
    return s;
  }

  AeState zeros_like() const {
    AeState g;
    g.encoder = encoder.zeros_like();
    g.annotator_embeddings = Matrix<Scalar>::Zero(annotator_embeddings.rows(), annotator_embeddings.cols());
    g.annotation_embeddings = Matrix<Scalar>::Zero(annotation_embeddings.rows(), annotation_embeddings.cols());
    g.gate_a_w = g.gate_n_w = Vector<Scalar>::Zero(gate_a_w.size());
    g.gate_a_b = g.gate_n_b = Vector<Scalar>::Zero(1);
    return g;
  }

  void zero_gates() {
    gate_a_w.setZero();
    gate_a_b.setZero();
    gate_n_w.setZero();
    gate_n_b.setZero();
  }

  std::vector<ParamView<Scalar>> parameters() {
    auto out = encoder.parameters();
    out.push_back(view_of("ae.annotator_embeddings", "annotator_embeddings", false, annotator_embeddings));
    out.push_back(view_of("ae.annotation_embeddings", "annotation_embeddings", false, annotation_embeddings));
    out.push_back(view_of("ae.gate_annotator.weight", "gates", false, gate_a_w));
    out.push_back(view_of("ae.gate_annotator.bias", "gates", false, gate_a_b));
    out.push_back(view_of("ae.gate_annotation.weight", "gates", false, gate_n_w));
    out.push_back(view_of("ae.gate_annotation.bias", "gates", false, gate_n_b));
    return out;
  }
};

template <typename Scalar>
struct AeCache {
  EncoderCache<Scalar> encoder;
  HeadCache<Scalar> head;
  Vector<Scalar> pooled;
  Scalar alpha_a = 0;
  Scalar alpha_n = 0;
};

template <typename Scalar>
Vector<Scalar> ae_forward(const AeState<Scalar>& s, std::span<const int> tokens, int annotator,
                          AeCache<Scalar>* cache = nullptr) {
  if (annotator < 0 || annotator >= s.annotator_embeddings.rows()) {
    throw ContractError("ae_forward: annotator index out of range");
  }
  AeCache<Scalar> local;
  AeCache<Scalar>& c = cache ? *cache : local;
  c.pooled = encode(s.encoder, tokens, nullptr, &c.encoder);
  const auto ea = s.annotator_embeddings.row(annotator).transpose();
  const auto en = s.annotation_embeddings.row(annotator).transpose();
  c.alpha_a = s.gate_a_w.dot(c.pooled.cwiseProduct(ea)) + s.gate_a_b(0);
  c.alpha_n = s.gate_n_w.dot(c.pooled.cwiseProduct(en)) + s.gate_n_b(0);
  const Vector<Scalar> combined = c.pooled + c.alpha_n * en + c.alpha_a * ea;
  return classify(s.encoder.head, combined, &c.head);
}

template <typename Scalar>
Scalar ae_loss(const AeState<Scalar>& s, std::span<const TokenizedExample> batch, AeState<Scalar>* grad = nullptr) {
  if (batch.empty()) throw ContractError("ae_loss: empty batch");
  const Scalar inv_n = static_cast<Scalar>(1.0 / static_cast<double>(batch.size()));
  Scalar ce = 0;
  for (const auto& ex : batch) {
    AeCache<Scalar> c;
    const Vector<Scalar> logits = ae_forward(s, ex.tokens, ex.annotator, &c);
    Vector<Scalar> dlogits;
    ce += cross_entropy(logits, ex.label, grad ? &dlogits : nullptr);
    if (!grad) continue;
    dlogits *= inv_n;
    const Vector<Scalar> dc = classify_backward(s.encoder.head, c.head, dlogits, &grad->encoder.head);
    const int a = ex.annotator;
    const Vector<Scalar> ea = s.annotator_embeddings.row(a).transpose();
    const Vector<Scalar> en = s.annotation_embeddings.row(a).transpose();
    const Scalar dalpha_a = dc.dot(ea);
    const Scalar dalpha_n = dc.dot(en);
    Vector<Scalar> dpooled = dc + dalpha_a * s.gate_a_w.cwiseProduct(ea) + dalpha_n * s.gate_n_w.cwiseProduct(en);
    grad->annotator_embeddings.row(a) += (c.alpha_a * dc + dalpha_a * s.gate_a_w.cwiseProduct(c.pooled)).transpose();
    grad->annotation_embeddings.row(a) += (c.alpha_n * dc + dalpha_n * s.gate_n_w.cwiseProduct(c.pooled)).transpose();
    grad->gate_a_w += dalpha_a * c.pooled.cwiseProduct(ea);
    grad->gate_a_b(0) += dalpha_a;
    grad->gate_n_w += dalpha_n * c.pooled.cwiseProduct(en);
    grad->gate_n_b(0) += dalpha_n;
    encode_backward(s.encoder, ex.tokens, nullptr, c.encoder, dpooled, &grad->encoder, nullptr);
  }
  return ce * inv_n;
}

// One annotator's private adapter set and classifier copy on top of a frozen
// encoder.
template <typename Scalar>
struct LoraAdapterModel {
  AdapterSet<Scalar> adapters;
  ClassifierHead<Scalar> head;

  // A ~ U(-1/sqrt(d), 1/sqrt(d)), B = 0, classifier copied from the base.
  static LoraAdapterModel initialize(const EncoderState<Scalar>& base, int rank, double alpha, std::uint64_t seed) {
    LoraAdapterModel m;
    const int d = base.config.hidden_dim;
    Rng rng(derive_seed(seed, 0x10ea));
    const double bound = 1.0 / std::sqrt(static_cast<double>(d));
    for (int j = 0; j < base.config.num_targets(); ++j) {
      auto f = LoraFactors<Scalar>::zeros(rank, d, d, alpha);
      for (Index k = 0; k < f.A.size(); ++k) f.A.data()[k] = static_cast<Scalar>(rng.uniform(-bound, bound));
      m.adapters.set(TargetKey::from_index(j), std::move(f));
    }
    m.head = base.head;
    return m;
  }

  LoraAdapterModel zeros_like() const {
    return {adapters.zeros_like(), ClassifierHead<Scalar>::zeros(static_cast<int>(head.dense_w.rows()),
                                                                 static_cast<int>(head.out_w.rows()))};
  }

  std::vector<ParamView<Scalar>> parameters() {
    auto out = adapters.parameters();
    for (auto& v : head.parameters(false)) out.push_back(std::move(v));
    return out;
  }
};

template <typename Scalar>
Vector<Scalar> lora_forward(const EncoderState<Scalar>& base, const LoraAdapterModel<Scalar>& m,
                            std::span<const int> tokens) {
  return classify(m.head, encode(base, tokens, &m.adapters));
}

template <typename Scalar>
Scalar lora_loss(const EncoderState<Scalar>& base, const LoraAdapterModel<Scalar>& m,
                 std::span<const TokenizedExample> batch, LoraAdapterModel<Scalar>* grad = nullptr) {
  if (batch.empty()) throw ContractError("lora_loss: empty batch");
  const Scalar inv_n = static_cast<Scalar>(1.0 / static_cast<double>(batch.size()));
  Scalar ce = 0;
  for (const auto& ex : batch) {
    EncoderCache<Scalar> ec;
    HeadCache<Scalar> hc;
    const Vector<Scalar> pooled = encode(base, ex.tokens, &m.adapters, &ec);
    const Vector<Scalar> logits = classify(m.head, pooled, &hc);
    Vector<Scalar> dlogits;
    ce += cross_entropy(logits, ex.label, grad ? &dlogits : nullptr);
    if (!grad) continue;
    dlogits *= inv_n;
    const Vector<Scalar> dpooled = classify_backward(m.head, hc, dlogits, &grad->head);
    encode_backward(base, ex.tokens, &m.adapters, ec, dpooled, nullptr, &grad->adapters);
  }
  return ce * inv_n;
}

}  // namespace hyperpersona
