#pragma once

// Pre-norm transformer encoder with mean pooling and a dense+tanh
// classification head. The query and value projections of every layer accept
// low-rank overlays; everything else is the plain base model.

#include "hyperpersona/common.hpp"
#include "hyperpersona/encoder_config.hpp"
#include "hyperpersona/lora.hpp"
#include "hyperpersona/nn.hpp"
#include "hyperpersona/rng.hpp"

#include <cmath>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

namespace hyperpersona {

// Parameter groups, each with its own frozen flag.
inline constexpr const char* kEmbeddingsGroup = "embeddings";
inline constexpr const char* kBodyGroup = "encoder_body";
inline constexpr const char* kClassifierGroup = "classifier";

// Fixed sinusoidal position signal, scaled down so that token identity
// dominates the input of the first layer.
inline constexpr double kPositionalScale = 0.1;

template <typename Scalar>
struct TransformerLayer {
  Vector<Scalar> ln1_gain, ln1_bias;
  Matrix<Scalar> wq, wk, wv, wo;
  Vector<Scalar> bq, bk, bv, bo;
  Vector<Scalar> ln2_gain, ln2_bias;
  Matrix<Scalar> w1;
  Vector<Scalar> b1;
  Matrix<Scalar> w2;
  Vector<Scalar> b2;

  static TransformerLayer zeros(int d, int ffn) {
    TransformerLayer l;
    l.ln1_gain = l.ln1_bias = l.ln2_gain = l.ln2_bias = Vector<Scalar>::Zero(d);
    l.wq = l.wk = l.wv = l.wo = Matrix<Scalar>::Zero(d, d);
    l.bq = l.bk = l.bv = l.bo = Vector<Scalar>::Zero(d);
    l.w1 = Matrix<Scalar>::Zero(ffn, d);
    l.b1 = Vector<Scalar>::Zero(ffn);
    l.w2 = Matrix<Scalar>::Zero(d, ffn);
    l.b2 = Vector<Scalar>::Zero(d);
    return l;
  }

  const Matrix<Scalar>& projection(Projection p) const { return p == Projection::Query ? wq : wv; }
};

// Dense d->d with tanh, then d->C.
template <typename Scalar>
struct ClassifierHead {
  Matrix<Scalar> dense_w;
  Vector<Scalar> dense_b;
  Matrix<Scalar> out_w;
  Vector<Scalar> out_b;

  static ClassifierHead zeros(int d, int classes) {
    return {Matrix<Scalar>::Zero(d, d), Vector<Scalar>::Zero(d), Matrix<Scalar>::Zero(classes, d),
            Vector<Scalar>::Zero(classes)};
  }

  std::vector<ParamView<Scalar>> parameters(bool frozen, const std::string& prefix = "classifier") {
    return {view_of(prefix + ".dense.weight", kClassifierGroup, frozen, dense_w),
            view_of(prefix + ".dense.bias", kClassifierGroup, frozen, dense_b),
            view_of(prefix + ".out_proj.weight", kClassifierGroup, frozen, out_w),
            view_of(prefix + ".out_proj.bias", kClassifierGroup, frozen, out_b)};
  }

  template <typename To>
  ClassifierHead<To> cast() const {
    return {dense_w.template cast<To>(), dense_b.template cast<To>(), out_w.template cast<To>(),
            out_b.template cast<To>()};
  }
};

template <typename Scalar>
void xavier_uniform(Matrix<Scalar>& m, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(m.rows() + m.cols()));
  for (Index k = 0; k < m.size(); ++k) m.data()[k] = static_cast<Scalar>(rng.uniform(-bound, bound));
}

template <typename Scalar>
ClassifierHead<Scalar> init_classifier(int d, int classes, Rng& rng) {
  auto head = ClassifierHead<Scalar>::zeros(d, classes);
  xavier_uniform(head.dense_w, rng);
  xavier_uniform(head.out_w, rng);
  return head;
}

template <typename Scalar>
Matrix<Scalar> positional_encoding(Index length, Index d) {
  Matrix<Scalar> pe(length, d);
  for (Index pos = 0; pos < length; ++pos) {
    for (Index i = 0; i < d; ++i) {
      const double freq = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(d));
      const double angle = static_cast<double>(pos) * freq;
      pe(pos, i) = static_cast<Scalar>(kPositionalScale * (i % 2 == 0 ? std::sin(angle) : std::cos(angle)));
    }
  }
  return pe;
}

template <typename Scalar>
class EncoderState {
 public:
  EncoderConfig config;
  Matrix<Scalar> token_embeddings;  // vocab_size x d
  std::vector<TransformerLayer<Scalar>> layers;
  Vector<Scalar> final_gain, final_bias;
  ClassifierHead<Scalar> head;
  Matrix<Scalar> positions;  // max_seq_len x d, fixed
  bool frozen_embeddings = false;
  bool frozen_body = false;
  bool frozen_head = false;

  static EncoderState zeros(const EncoderConfig& config) {
    config.validate();
    EncoderState s;
    s.config = config;
    const int d = config.hidden_dim;
    s.token_embeddings = Matrix<Scalar>::Zero(config.vocab_size, d);
    s.layers.assign(static_cast<std::size_t>(config.num_layers), TransformerLayer<Scalar>::zeros(d, config.ffn_dim));
    s.final_gain = s.final_bias = Vector<Scalar>::Zero(d);
    s.head = ClassifierHead<Scalar>::zeros(d, config.num_classes);
    s.positions = positional_encoding<Scalar>(config.max_seq_len, d);
    return s;
  }

  static EncoderState initialize(const EncoderConfig& config) {
    EncoderState s = zeros(config);
    Rng rng(derive_seed(config.seed, 0xe1c0de));
    for (Index k = 0; k < s.token_embeddings.size(); ++k) {
      s.token_embeddings.data()[k] = static_cast<Scalar>(rng.normal());
    }
    for (auto& l : s.layers) {
      l.ln1_gain.setOnes();
      l.ln2_gain.setOnes();
      for (auto* w : {&l.wq, &l.wk, &l.wv, &l.wo, &l.w1, &l.w2}) xavier_uniform(*w, rng);
    }
    s.final_gain.setOnes();
    s.head = init_classifier<Scalar>(config.hidden_dim, config.num_classes, rng);
    return s;
  }

  EncoderState zeros_like() const {
    EncoderState g = zeros(config);
    g.frozen_embeddings = frozen_embeddings;
    g.frozen_body = frozen_body;
    g.frozen_head = frozen_head;
    return g;
  }

  void freeze_all() { frozen_embeddings = frozen_body = frozen_head = true; }

  std::vector<ParamView<Scalar>> parameters() {
    std::vector<ParamView<Scalar>> out;
    out.push_back(view_of("embeddings.token", kEmbeddingsGroup, frozen_embeddings, token_embeddings));
    for (std::size_t i = 0; i < layers.size(); ++i) {
      auto& l = layers[i];
      const std::string p = "layers." + std::to_string(i) + ".";
      const bool f = frozen_body;
      out.push_back(view_of(p + "ln1.gain", kBodyGroup, f, l.ln1_gain));
      out.push_back(view_of(p + "ln1.bias", kBodyGroup, f, l.ln1_bias));
      out.push_back(view_of(p + "attention.query.weight", kBodyGroup, f, l.wq));
      out.push_back(view_of(p + "attention.query.bias", kBodyGroup, f, l.bq));
      out.push_back(view_of(p + "attention.key.weight", kBodyGroup, f, l.wk));
      out.push_back(view_of(p + "attention.key.bias", kBodyGroup, f, l.bk));
      out.push_back(view_of(p + "attention.value.weight", kBodyGroup, f, l.wv));
      out.push_back(view_of(p + "attention.value.bias", kBodyGroup, f, l.bv));
      out.push_back(view_of(p + "attention.output.weight", kBodyGroup, f, l.wo));
      out.push_back(view_of(p + "attention.output.bias", kBodyGroup, f, l.bo));
      out.push_back(view_of(p + "ln2.gain", kBodyGroup, f, l.ln2_gain));
      out.push_back(view_of(p + "ln2.bias", kBodyGroup, f, l.ln2_bias));
      out.push_back(view_of(p + "ffn.in.weight", kBodyGroup, f, l.w1));
      out.push_back(view_of(p + "ffn.in.bias", kBodyGroup, f, l.b1));
      out.push_back(view_of(p + "ffn.out.weight", kBodyGroup, f, l.w2));
      out.push_back(view_of(p + "ffn.out.bias", kBodyGroup, f, l.b2));
    }
    out.push_back(view_of("final_ln.gain", kBodyGroup, frozen_body, final_gain));
    out.push_back(view_of("final_ln.bias", kBodyGroup, frozen_body, final_bias));
    for (auto& v : head.parameters(frozen_head)) out.push_back(std::move(v));
    return out;
  }

  // Parameters of the encoder body and embeddings only (no classifier).
  std::vector<ParamView<Scalar>> body_parameters() {
    auto all = parameters();
    std::erase_if(all, [](const ParamView<Scalar>& v) { return v.group == kClassifierGroup; });
    return all;
  }

  template <typename To>
  EncoderState<To> cast() const {
    EncoderState<To> out;
    out.config = config;
    out.token_embeddings = token_embeddings.template cast<To>();
    for (const auto& l : layers) {
      TransformerLayer<To> t;
      t.ln1_gain = l.ln1_gain.template cast<To>();
      t.ln1_bias = l.ln1_bias.template cast<To>();
      t.wq = l.wq.template cast<To>();
      t.wk = l.wk.template cast<To>();
      t.wv = l.wv.template cast<To>();
      t.wo = l.wo.template cast<To>();
      t.bq = l.bq.template cast<To>();
      t.bk = l.bk.template cast<To>();
      t.bv = l.bv.template cast<To>();
      t.bo = l.bo.template cast<To>();
      t.ln2_gain = l.ln2_gain.template cast<To>();
      t.ln2_bias = l.ln2_bias.template cast<To>();
      t.w1 = l.w1.template cast<To>();
      t.b1 = l.b1.template cast<To>();
      t.w2 = l.w2.template cast<To>();
      t.b2 = l.b2.template cast<To>();
      out.layers.push_back(std::move(t));
    }
    out.final_gain = final_gain.template cast<To>();
    out.final_bias = final_bias.template cast<To>();
    out.head = head.template cast<To>();
    out.positions = positions.template cast<To>();
    out.frozen_embeddings = frozen_embeddings;
    out.frozen_body = frozen_body;
    out.frozen_head = frozen_head;
    return out;
  }
};

template <typename Scalar>
struct LayerCache {
  Matrix<Scalar> x_in;
  LayerNormCache<Scalar> ln1;
  Matrix<Scalar> h;
  Matrix<Scalar> q, k, v;
  Matrix<Scalar> q_low, v_low;
  std::vector<Matrix<Scalar>> probs;
  Matrix<Scalar> context;
  Matrix<Scalar> x_mid;
  LayerNormCache<Scalar> ln2;
  Matrix<Scalar> h2;
  Matrix<Scalar> ffn_pre;
  Matrix<Scalar> ffn_act;
};

template <typename Scalar>
struct EncoderCache {
  std::vector<LayerCache<Scalar>> layers;
  LayerNormCache<Scalar> final_ln;
  std::vector<Index> pooled_rows;
  Index num_rows = 0;
};

template <typename Scalar>
struct HeadCache {
  Vector<Scalar> input;
  Vector<Scalar> hidden;
};

template <typename Scalar>
struct ForwardOutput {
  Vector<Scalar> logits;
  Vector<Scalar> pooled;
};

template <typename Scalar>
void check_overlays(const EncoderConfig& config, const AdapterSet<Scalar>& overlays) {
  for (const auto& [key, f] : overlays) {
    if (key.layer < 0 || key.layer >= config.num_layers) {
      throw ContractError("overlay targets missing layer " + key.name());
    }
    f.check(config.hidden_dim, config.hidden_dim, key.name());
  }
}

// Mean-pooled final hidden state. With overlays, each targeted projection
// acts as W + (alpha/r) B A.
template <typename Scalar>
Vector<Scalar> encode(const EncoderState<Scalar>& state, std::span<const int> tokens,
                      const std::type_identity_t<AdapterSet<Scalar>>* overlays = nullptr, std::type_identity_t<EncoderCache<Scalar>>* cache = nullptr) {
  const auto& cfg = state.config;
  if (tokens.empty()) throw ContractError("encode: empty token sequence");
  if (overlays) check_overlays(cfg, *overlays);
  const Index T = static_cast<Index>(tokens.size());
  const Index d = cfg.hidden_dim;
  const Index heads = cfg.num_heads;
  const Index dh = cfg.head_dim();
  const Scalar attn_scale = static_cast<Scalar>(1.0 / std::sqrt(static_cast<double>(dh)));

  Matrix<Scalar> x = T <= state.positions.rows() ? Matrix<Scalar>(state.positions.topRows(T))
                                                 : positional_encoding<Scalar>(T, d);
  for (Index t = 0; t < T; ++t) {
    const int tok = tokens[static_cast<std::size_t>(t)];
    if (tok < 0 || tok >= cfg.vocab_size) throw ContractError("encode: token id out of range");
    x.row(t) += state.token_embeddings.row(tok);
  }

  EncoderCache<Scalar> local;
  EncoderCache<Scalar>& c = cache ? *cache : local;
  c.layers.resize(state.layers.size());
  c.num_rows = T;

  for (std::size_t li = 0; li < state.layers.size(); ++li) {
    const auto& L = state.layers[li];
    auto& lc = c.layers[li];
    lc.x_in = x;
    layer_norm_forward(x, L.ln1_gain, L.ln1_bias, lc.h, lc.ln1);
    lc.q = (lc.h * L.wq.transpose()).rowwise() + L.bq.transpose();
    lc.k = (lc.h * L.wk.transpose()).rowwise() + L.bk.transpose();
    lc.v = (lc.h * L.wv.transpose()).rowwise() + L.bv.transpose();
    if (overlays) {
      const int layer = static_cast<int>(li);
      if (const auto* f = overlays->find({layer, Projection::Query})) add_low_rank(lc.h, *f, lc.q, lc.q_low);
      if (const auto* f = overlays->find({layer, Projection::Value})) add_low_rank(lc.h, *f, lc.v, lc.v_low);
    }
    lc.probs.resize(static_cast<std::size_t>(heads));
    lc.context.resize(T, d);
    for (Index hd = 0; hd < heads; ++hd) {
      auto& p = lc.probs[static_cast<std::size_t>(hd)];
      p.noalias() = attn_scale * (lc.q.middleCols(hd * dh, dh) * lc.k.middleCols(hd * dh, dh).transpose());
      softmax_rows(p);
      lc.context.middleCols(hd * dh, dh).noalias() = p * lc.v.middleCols(hd * dh, dh);
    }
    lc.x_mid = x;
    lc.x_mid.noalias() += lc.context * L.wo.transpose();
    lc.x_mid.rowwise() += L.bo.transpose();
    layer_norm_forward(lc.x_mid, L.ln2_gain, L.ln2_bias, lc.h2, lc.ln2);
    lc.ffn_pre = (lc.h2 * L.w1.transpose()).rowwise() + L.b1.transpose();
    lc.ffn_act = gelu(lc.ffn_pre);
    x = lc.x_mid;
    x.noalias() += lc.ffn_act * L.w2.transpose();
    x.rowwise() += L.b2.transpose();
  }

  Matrix<Scalar> z;
  layer_norm_forward(x, state.final_gain, state.final_bias, z, c.final_ln);
  c.pooled_rows.clear();
  for (Index t = 0; t < T; ++t) {
    if (tokens[static_cast<std::size_t>(t)] != kPadToken) c.pooled_rows.push_back(t);
  }
  if (c.pooled_rows.empty()) {
    for (Index t = 0; t < T; ++t) c.pooled_rows.push_back(t);
  }
  Vector<Scalar> pooled = Vector<Scalar>::Zero(d);
  for (Index t : c.pooled_rows) pooled += z.row(t).transpose();
  pooled /= static_cast<Scalar>(c.pooled_rows.size());
  return pooled;
}

template <typename Scalar>
Vector<Scalar> classify(const ClassifierHead<Scalar>& head, const Vector<Scalar>& input,
                        std::type_identity_t<HeadCache<Scalar>>* cache = nullptr) {
  Vector<Scalar> hidden = (head.dense_w * input + head.dense_b).array().tanh().matrix();
  Vector<Scalar> logits = head.out_w * hidden + head.out_b;
  if (cache) {
    cache->input = input;
    cache->hidden = std::move(hidden);
  }
  return logits;
}

// Returns the gradient w.r.t. the head input; accumulates into grad if given.
template <typename Scalar>
Vector<Scalar> classify_backward(const ClassifierHead<Scalar>& head, const HeadCache<Scalar>& cache,
                                 const Vector<Scalar>& dlogits, std::type_identity_t<ClassifierHead<Scalar>>* grad) {
  const Vector<Scalar> dhidden = head.out_w.transpose() * dlogits;
  const Vector<Scalar> dpre = dhidden.cwiseProduct((Scalar(1) - cache.hidden.array().square()).matrix());
  if (grad) {
    grad->out_w.noalias() += dlogits * cache.hidden.transpose();
    grad->out_b += dlogits;
    grad->dense_w.noalias() += dpre * cache.input.transpose();
    grad->dense_b += dpre;
  }
  return head.dense_w.transpose() * dpre;
}

template <typename Scalar>
ForwardOutput<Scalar> forward(const EncoderState<Scalar>& state, std::span<const int> tokens,
                              const std::type_identity_t<AdapterSet<Scalar>>* overlays = nullptr) {
  ForwardOutput<Scalar> out;
  out.pooled = encode(state, tokens, overlays);
  out.logits = classify(state.head, out.pooled);
  return out;
}

// Backward through the encoder body from a pooled-output gradient.
// Parameter gradients are accumulated into `grad` for groups that are not
// frozen in `state`; overlay gradients into `overlay_grad` (same keys as
// `overlays`). Layers below the lowest one that needs a gradient are skipped.
template <typename Scalar>
void encode_backward(const EncoderState<Scalar>& state, std::span<const int> tokens,
                     const std::type_identity_t<AdapterSet<Scalar>>* overlays, const EncoderCache<Scalar>& c,
                     const Vector<Scalar>& dpooled, std::type_identity_t<EncoderState<Scalar>>* grad,
                     std::type_identity_t<AdapterSet<Scalar>>* overlay_grad) {
  const auto& cfg = state.config;
  const Index T = c.num_rows;
  const Index d = cfg.hidden_dim;
  const Index heads = cfg.num_heads;
  const Index dh = cfg.head_dim();
  const Scalar attn_scale = static_cast<Scalar>(1.0 / std::sqrt(static_cast<double>(dh)));
  const bool body_grads = grad && !state.frozen_body;
  const bool embed_grads = grad && !state.frozen_embeddings;
  const bool lora_grads = overlays && overlay_grad;

  int lowest = static_cast<int>(state.layers.size());
  if (body_grads || embed_grads) {
    lowest = 0;
  } else if (lora_grads) {
    for (const auto& [key, f] : *overlays) lowest = std::min(lowest, key.layer);
  }
  if (lowest == static_cast<int>(state.layers.size()) && !body_grads) return;

  Matrix<Scalar> dz = Matrix<Scalar>::Zero(T, d);
  const Scalar inv_n = static_cast<Scalar>(1.0 / static_cast<double>(c.pooled_rows.size()));
  for (Index t : c.pooled_rows) dz.row(t) = inv_n * dpooled.transpose();
  Matrix<Scalar> dx;
  layer_norm_backward(dz, state.final_gain, c.final_ln, dx, body_grads ? &grad->final_gain : nullptr,
                      body_grads ? &grad->final_bias : nullptr);

  for (int li = static_cast<int>(state.layers.size()) - 1; li >= lowest; --li) {
    const auto& L = state.layers[static_cast<std::size_t>(li)];
    const auto& lc = c.layers[static_cast<std::size_t>(li)];
    TransformerLayer<Scalar>* G = body_grads ? &grad->layers[static_cast<std::size_t>(li)] : nullptr;
    const bool need_input_grad = li > lowest || embed_grads;

    // Feed-forward sublayer.
    if (G) {
      G->w2.noalias() += dx.transpose() * lc.ffn_act;
      G->b2 += dx.colwise().sum().transpose();
    }
    Matrix<Scalar> dpre = (dx * L.w2).cwiseProduct(gelu_grad(lc.ffn_pre));
    if (G) {
      G->w1.noalias() += dpre.transpose() * lc.h2;
      G->b1 += dpre.colwise().sum().transpose();
    }
    const Matrix<Scalar> dh2 = dpre * L.w1;
    Matrix<Scalar> dmid;
    layer_norm_backward(dh2, L.ln2_gain, lc.ln2, dmid, G ? &G->ln2_gain : nullptr, G ? &G->ln2_bias : nullptr);
    dmid += dx;

    // Attention sublayer.
    if (G) {
      G->wo.noalias() += dmid.transpose() * lc.context;
      G->bo += dmid.colwise().sum().transpose();
    }
    const Matrix<Scalar> dcontext = dmid * L.wo;
    Matrix<Scalar> dq(T, d), dk(T, d), dv(T, d);
    for (Index hd = 0; hd < heads; ++hd) {
      const auto& p = lc.probs[static_cast<std::size_t>(hd)];
      const auto dctx_h = dcontext.middleCols(hd * dh, dh);
      dv.middleCols(hd * dh, dh).noalias() = p.transpose() * dctx_h;
      const Matrix<Scalar> dp = dctx_h * lc.v.middleCols(hd * dh, dh).transpose();
      const Matrix<Scalar> ds = attn_scale * softmax_rows_backward(p, dp);
      dq.middleCols(hd * dh, dh).noalias() = ds * lc.k.middleCols(hd * dh, dh);
      dk.middleCols(hd * dh, dh).noalias() = ds.transpose() * lc.q.middleCols(hd * dh, dh);
    }

    const bool need_hidden_grad = need_input_grad || G != nullptr;
    Matrix<Scalar> dhid;
    if (need_hidden_grad) dhid = dq * L.wq + dk * L.wk + dv * L.wv;
    if (G) {
      G->wq.noalias() += dq.transpose() * lc.h;
      G->bq += dq.colwise().sum().transpose();
      G->wk.noalias() += dk.transpose() * lc.h;
      G->bk += dk.colwise().sum().transpose();
      G->wv.noalias() += dv.transpose() * lc.h;
      G->bv += dv.colwise().sum().transpose();
    }
    if (overlays) {
      for (const Projection proj : {Projection::Query, Projection::Value}) {
        const TargetKey key{li, proj};
        const auto* f = overlays->find(key);
        if (!f) continue;
        const auto& low = proj == Projection::Query ? lc.q_low : lc.v_low;
        const auto& dout = proj == Projection::Query ? dq : dv;
        if (lora_grads) {
          auto* g = overlay_grad->find(key);
          if (!g) throw ContractError("overlay gradient missing entry " + key.name());
          add_low_rank_backward(lc.h, *f, low, dout, need_hidden_grad ? &dhid : nullptr, *g);
        } else if (need_hidden_grad) {
          dhid.noalias() += f->scale() * ((dout * f->B) * f->A);
        }
      }
    }
    if (!need_hidden_grad) break;
    Matrix<Scalar> dinput;
    layer_norm_backward(dhid, L.ln1_gain, lc.ln1, dinput, G ? &G->ln1_gain : nullptr, G ? &G->ln1_bias : nullptr);
    if (!need_input_grad) break;
    dx = dinput + dmid;
  }

  if (embed_grads && lowest == 0) {
    for (Index t = 0; t < T; ++t) {
      grad->token_embeddings.row(tokens[static_cast<std::size_t>(t)]) += dx.row(t);
    }
  }
}

}  // namespace hyperpersona
