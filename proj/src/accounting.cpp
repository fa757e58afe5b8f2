#include "hyperpersona/accounting.hpp"
#include "hyperpersona/encoder.hpp"
#include "hyperpersona/hypernet.hpp"

namespace hyperpersona {

SystemKind parse_system(std::string_view name) {
  if (name == "hypernet") return SystemKind::Hypernet;
  if (name == "single_task") return SystemKind::SingleTask;
  if (name == "aart") return SystemKind::Aart;
  if (name == "ae") return SystemKind::Ae;
  if (name == "separate_lora") return SystemKind::SeparateLora;
  throw ConfigError("unknown system '" + std::string(name) +
                    "' (expected hypernet, single_task, aart, ae or separate_lora)");
}

std::string to_string(SystemKind kind) {
  switch (kind) {
    case SystemKind::Hypernet: return "hypernet";
    case SystemKind::SingleTask: return "single_task";
    case SystemKind::Aart: return "aart";
    case SystemKind::Ae: return "ae";
    case SystemKind::SeparateLora: return "separate_lora";
  }
  return "unknown";
}

namespace {

using u64 = std::uint64_t;

u64 linear(u64 in, u64 out) { return in * out + out; }

}  // namespace

std::uint64_t count_classifier(const EncoderConfig& enc) {
  const u64 d = static_cast<u64>(enc.hidden_dim);
  return linear(d, d) + linear(d, static_cast<u64>(enc.num_classes));
}

ParamBreakdown count_encoder(const EncoderConfig& enc) {
  enc.validate();
  const u64 d = static_cast<u64>(enc.hidden_dim);
  const u64 ffn = static_cast<u64>(enc.ffn_dim);
  const u64 per_layer = 4 * linear(d, d) + 2 * (2 * d) + linear(d, ffn) + linear(ffn, d);
  ParamBreakdown out;
  out.add(kEmbeddingsGroup, static_cast<u64>(enc.vocab_size) * d);
  out.add(kBodyGroup, static_cast<u64>(enc.num_layers) * per_layer + 2 * d);
  out.add(kClassifierGroup, count_classifier(enc));
  return out;
}

ParamBreakdown count_lora_adapter(const EncoderConfig& enc, int rank) {
  const u64 d = static_cast<u64>(enc.hidden_dim);
  const u64 r = static_cast<u64>(rank);
  ParamBreakdown out;
  out.add("adapters", static_cast<u64>(enc.num_targets()) * (r * d + d * r));
  out.add(kClassifierGroup, count_classifier(enc));
  return out;
}

ParamBreakdown count_hypernet(const EncoderConfig& enc, int num_annotators, const HypernetCountOptions& options) {
  auto cfg = HypernetConfig::for_encoder(enc, num_annotators, options.rank);
  cfg.train_layer_embeddings = options.train_layer_embeddings;
  cfg.validate();
  const u64 in = static_cast<u64>(cfg.input_dim());
  ParamBreakdown out;
  out.add(kAnnotatorEmbeddingsGroup, static_cast<u64>(cfg.num_annotators) * static_cast<u64>(cfg.annotator_embed_dim));
  if (cfg.train_layer_embeddings) {
    out.add(kLayerEmbeddingsGroup, static_cast<u64>(cfg.num_targets) * static_cast<u64>(cfg.layer_embed_dim));
  }
  out.add(kLinAGroup, linear(in, static_cast<u64>(cfg.rank * cfg.d_in)));
  out.add(kLinBGroup, linear(in, static_cast<u64>(cfg.d_out * cfg.rank)));
  if (options.train_head) out.add(kClassifierGroup, count_classifier(enc));
  return out;
}

ParamBreakdown count_separate_lora(const EncoderConfig& enc, int num_annotators, int rank) {
  ParamBreakdown out;
  for (const auto& [name, n] : count_lora_adapter(enc, rank).items) {
    out.add(name, n * static_cast<u64>(num_annotators));
  }
  return out;
}

ParamBreakdown count_aart(const EncoderConfig& enc, int num_annotators) {
  ParamBreakdown out = count_encoder(enc);
  out.add(kAnnotatorEmbeddingsGroup, static_cast<u64>(num_annotators) * static_cast<u64>(enc.hidden_dim));
  return out;
}

ParamBreakdown count_ae(const EncoderConfig& enc, int num_annotators) {
  const u64 d = static_cast<u64>(enc.hidden_dim);
  ParamBreakdown out = count_encoder(enc);
  out.add(kAnnotatorEmbeddingsGroup, static_cast<u64>(num_annotators) * d);
  out.add("annotation_embeddings", static_cast<u64>(num_annotators) * d);
  out.add("gates", 2 * (d + 1));
  return out;
}

ParamBreakdown count_system(SystemKind kind, const EncoderConfig& enc, int num_annotators,
                            const HypernetCountOptions& options) {
  switch (kind) {
    case SystemKind::Hypernet: return count_hypernet(enc, num_annotators, options);
    case SystemKind::SingleTask: return count_encoder(enc);
    case SystemKind::Aart: return count_aart(enc, num_annotators);
    case SystemKind::Ae: return count_ae(enc, num_annotators);
    case SystemKind::SeparateLora: return count_separate_lora(enc, num_annotators, options.rank);
  }
  throw ContractError("count_system: unknown system");
}

}  // namespace hyperpersona
