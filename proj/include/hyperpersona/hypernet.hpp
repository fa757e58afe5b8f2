#pragma once

// Hypernetwork that maps an (annotator, target) identifier pair to the
// low-rank factors of that target:
//
//   z = [E_ann[i] ; E_layer[j]]  ->  u = dropout(gelu(z))
//   A_ij = reshape(Lin_A u, r x d_in),  B_ij = reshape(Lin_B u, d_out x r)
//
// Lin_B starts at exactly zero so a fresh hypernetwork leaves the base model
// untouched for every annotator.

#include "hyperpersona/common.hpp"
#include "hyperpersona/encoder_config.hpp"
#include "hyperpersona/lora.hpp"
#include "hyperpersona/nn.hpp"
#include "hyperpersona/rng.hpp"

#include <string>
#include <vector>

namespace hyperpersona {

enum class Mode { Train, Eval };

struct HypernetConfig {
  int num_annotators = 1;
  int num_targets = 4;
  int annotator_embed_dim = 64;
  int layer_embed_dim = 64;
  int d_in = 64;
  int d_out = 64;
  int rank = 2;
  double alpha = 32.0;
  double dropout_p = 0.25;
  double head_init_scale = 1e-3;
  // The target-identifier table is a fixed random code unless enabled.
  bool train_layer_embeddings = false;
  std::uint64_t seed = 0;

  void validate() const {
    if (num_annotators < 0) throw ConfigError("num_annotators must be non-negative");
    if (num_targets < 1) throw ConfigError("num_targets must be positive");
    if (annotator_embed_dim < 1 || layer_embed_dim < 1) throw ConfigError("embedding dims must be positive");
    if (d_in < 1 || d_out < 1) throw ConfigError("target dims must be positive");
    if (rank < 1) throw ConfigError("rank must be at least 1");
    if (!(alpha > 0.0)) throw ConfigError("alpha must be positive");
    if (!(dropout_p >= 0.0 && dropout_p < 1.0)) throw ConfigError("dropout_p must be in [0, 1)");
    if (!(head_init_scale > 0.0)) throw ConfigError("head_init_scale must be positive");
  }

  int input_dim() const { return annotator_embed_dim + layer_embed_dim; }

  // d_a = d_l = hidden size, one target per (layer, query|value).
  static HypernetConfig for_encoder(const EncoderConfig& enc, int num_annotators, int rank = 2, double alpha = 32.0,
                                    double dropout_p = 0.25) {
    HypernetConfig c;
    c.num_annotators = num_annotators;
    c.num_targets = enc.num_targets();
    c.annotator_embed_dim = c.layer_embed_dim = enc.hidden_dim;
    c.d_in = c.d_out = enc.hidden_dim;
    c.rank = rank;
    c.alpha = alpha;
    c.dropout_p = dropout_p;
    return c;
  }
};

inline constexpr const char* kAnnotatorEmbeddingsGroup = "annotator_embeddings";
inline constexpr const char* kLayerEmbeddingsGroup = "layer_embeddings";
inline constexpr const char* kLinAGroup = "lin_a";
inline constexpr const char* kLinBGroup = "lin_b";

template <typename Scalar>
struct GenerateCache {
  Vector<Scalar> z;
  Vector<Scalar> mask;  // already divided by the keep probability
  Vector<Scalar> u;
};

template <typename Scalar>
class HypernetState {
 public:
  HypernetConfig config;
  Matrix<Scalar> annotator_embeddings;  // num_annotators x d_a
  Matrix<Scalar> layer_embeddings;      // num_targets x d_l
  Matrix<Scalar> lin_a_w;               // (r * d_in) x (d_a + d_l)
  Vector<Scalar> lin_a_b;
  Matrix<Scalar> lin_b_w;               // (d_out * r) x (d_a + d_l)
  Vector<Scalar> lin_b_b;

  static HypernetState zeros(const HypernetConfig& config) {
    config.validate();
    HypernetState s;
    s.config = config;
    const int in = config.input_dim();
    s.annotator_embeddings = Matrix<Scalar>::Zero(config.num_annotators, config.annotator_embed_dim);
    s.layer_embeddings = Matrix<Scalar>::Zero(config.num_targets, config.layer_embed_dim);
    s.lin_a_w = Matrix<Scalar>::Zero(config.rank * config.d_in, in);
    s.lin_a_b = Vector<Scalar>::Zero(config.rank * config.d_in);
    s.lin_b_w = Matrix<Scalar>::Zero(config.d_out * config.rank, in);
    s.lin_b_b = Vector<Scalar>::Zero(config.d_out * config.rank);
    return s;
  }

  static HypernetState initialize(const HypernetConfig& config) {
    HypernetState s = zeros(config);
    for (int i = 0; i < config.num_annotators; ++i) s.annotator_embeddings.row(i) = init_annotator_row(config, i);
    Rng layer_rng(derive_seed(config.seed, 0x1a7e5));
    for (Index k = 0; k < s.layer_embeddings.size(); ++k) {
      s.layer_embeddings.data()[k] = static_cast<Scalar>(layer_rng.normal());
    }
    Rng head_rng(derive_seed(config.seed, 0x11a));
    const double eps = config.head_init_scale;
    for (Index k = 0; k < s.lin_a_w.size(); ++k) s.lin_a_w.data()[k] = static_cast<Scalar>(head_rng.uniform(-eps, eps));
    return s;
  }

  // Row i depends only on (seed, i), so rows appended later are initialised
  // exactly like the original ones.
  static RowVector<Scalar> init_annotator_row(const HypernetConfig& config, int i) {
    Rng rng(derive_seed(config.seed, 0xa2207a7e, static_cast<std::uint64_t>(i)));
    RowVector<Scalar> row(config.annotator_embed_dim);
    for (Index k = 0; k < row.size(); ++k) row(k) = static_cast<Scalar>(rng.normal());
    return row;
  }

  HypernetState zeros_like() const { return zeros(config); }

  int num_annotators() const { return config.num_annotators; }

  // Appends one embedding row; every existing tensor is left untouched.
  int add_annotator() {
    const int i = config.num_annotators;
    annotator_embeddings.conservativeResize(i + 1, Eigen::NoChange);
    annotator_embeddings.row(i) = init_annotator_row(config, i);
    config.num_annotators = i + 1;
    return i;
  }

  std::vector<ParamView<Scalar>> parameters() {
    return {view_of("hypernet.annotator_embeddings", kAnnotatorEmbeddingsGroup, false, annotator_embeddings),
            view_of("hypernet.layer_embeddings", kLayerEmbeddingsGroup, !config.train_layer_embeddings,
                    layer_embeddings),
            view_of("hypernet.lin_a.weight", kLinAGroup, false, lin_a_w),
            view_of("hypernet.lin_a.bias", kLinAGroup, false, lin_a_b),
            view_of("hypernet.lin_b.weight", kLinBGroup, false, lin_b_w),
            view_of("hypernet.lin_b.bias", kLinBGroup, false, lin_b_b)};
  }

  // Factors for annotator i on target j. In train mode the dropout mask is
  // drawn from mask_seed; eval mode is deterministic.
  LoraFactors<Scalar> generate(int annotator, int target, Mode mode, std::uint64_t mask_seed = 0,
                               GenerateCache<Scalar>* cache = nullptr) const {
    check_indices(annotator, target);
    const int da = config.annotator_embed_dim;
    const int dl = config.layer_embed_dim;
    Vector<Scalar> z(da + dl);
    z.head(da) = annotator_embeddings.row(annotator).transpose();
    z.tail(dl) = layer_embeddings.row(target).transpose();
    Vector<Scalar> u = gelu(z);
    Vector<Scalar> mask;
    if (mode == Mode::Train && config.dropout_p > 0.0) {
      Rng rng(mask_seed);
      const Scalar keep_scale = static_cast<Scalar>(1.0 / (1.0 - config.dropout_p));
      mask.resize(u.size());
      for (Index k = 0; k < u.size(); ++k) mask(k) = rng.bernoulli(config.dropout_p) ? Scalar(0) : keep_scale;
      u = u.cwiseProduct(mask);
    }
    const Vector<Scalar> a = lin_a_w * u + lin_a_b;
    const Vector<Scalar> b = lin_b_w * u + lin_b_b;
    using RowMajor = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    LoraFactors<Scalar> f;
    f.A = Eigen::Map<const RowMajor>(a.data(), config.rank, config.d_in);
    f.B = Eigen::Map<const RowMajor>(b.data(), config.d_out, config.rank);
    f.alpha = config.alpha;
    if (cache) {
      cache->z = std::move(z);
      cache->mask = std::move(mask);
      cache->u = std::move(u);
    }
    return f;
  }

  // Backward of generate: accumulates d(loss)/d(parameters) into grad given
  // the factor gradients.
  void generate_backward(int annotator, int target, const GenerateCache<Scalar>& cache,
                         const LoraFactors<Scalar>& dfactors, HypernetState& grad) const {
    using RowMajor = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    Vector<Scalar> da(config.rank * config.d_in);
    Vector<Scalar> db(config.d_out * config.rank);
    Eigen::Map<RowMajor>(da.data(), config.rank, config.d_in) = dfactors.A;
    Eigen::Map<RowMajor>(db.data(), config.d_out, config.rank) = dfactors.B;
    grad.lin_a_w.noalias() += da * cache.u.transpose();
    grad.lin_a_b += da;
    grad.lin_b_w.noalias() += db * cache.u.transpose();
    grad.lin_b_b += db;
    Vector<Scalar> du = lin_a_w.transpose() * da;
    du.noalias() += lin_b_w.transpose() * db;
    if (cache.mask.size() > 0) du = du.cwiseProduct(cache.mask);
    const Vector<Scalar> dz = du.cwiseProduct(gelu_grad(cache.z));
    const int dann = config.annotator_embed_dim;
    grad.annotator_embeddings.row(annotator) += dz.head(dann).transpose();
    grad.layer_embeddings.row(target) += dz.tail(config.layer_embed_dim).transpose();
  }

 private:
  void check_indices(int annotator, int target) const {
    if (annotator < 0 || annotator >= config.num_annotators) {
      throw ContractError("hypernet: annotator index " + std::to_string(annotator) + " out of range [0, " +
                          std::to_string(config.num_annotators) + ")");
    }
    if (target < 0 || target >= config.num_targets) {
      throw ContractError("hypernet: target index " + std::to_string(target) + " out of range [0, " +
                          std::to_string(config.num_targets) + ")");
    }
  }
};

// Seed of the dropout mask for (annotator, target) at a given optimiser step.
inline std::uint64_t mask_seed(std::uint64_t run_seed, std::uint64_t step, int annotator, int target) {
  return derive_seed(run_seed, step, static_cast<std::uint64_t>(annotator), static_cast<std::uint64_t>(target));
}

// One adapter per target for a single annotator.
template <typename Scalar>
AdapterSet<Scalar> assemble_overlays(const HypernetState<Scalar>& state, int annotator, Mode mode,
                                     std::uint64_t run_seed = 0, std::uint64_t step = 0,
                                     std::vector<GenerateCache<Scalar>>* caches = nullptr) {
  AdapterSet<Scalar> set;
  if (caches) caches->assign(static_cast<std::size_t>(state.config.num_targets), {});
  for (int j = 0; j < state.config.num_targets; ++j) {
    set.set(TargetKey::from_index(j),
            state.generate(annotator, j, mode, mask_seed(run_seed, step, annotator, j),
                           caches ? &(*caches)[static_cast<std::size_t>(j)] : nullptr));
  }
  return set;
}

}  // namespace hyperpersona
