#pragma once

// Trainable-parameter accounting. Two routes exist: counting the tensors of
// a live state (count_trainable over parameter views) and counting from the
// geometry alone (the count_* functions below), which is how the RoBERTa-size
// figures are produced without allocating them.

#include "hyperpersona/encoder_config.hpp"
#include "hyperpersona/metrics.hpp"
#include "hyperpersona/nn.hpp"

#include <string>
#include <string_view>
#include <vector>

namespace hyperpersona {

enum class SystemKind { Hypernet, SingleTask, Aart, Ae, SeparateLora };

SystemKind parse_system(std::string_view name);
std::string to_string(SystemKind kind);

// Non-frozen parameters of a live state, grouped by parameter group.
template <typename Scalar>
ParamBreakdown count_trainable(const std::vector<ParamView<Scalar>>& params) {
  ParamBreakdown out;
  for (const auto& p : params) {
    if (!p.frozen) out.add(p.group, static_cast<std::uint64_t>(p.size()));
  }
  return out;
}

// Whole encoder, every group trainable.
ParamBreakdown count_encoder(const EncoderConfig& enc);
std::uint64_t count_classifier(const EncoderConfig& enc);

// One adapter per query/value projection plus a trainable classifier copy.
ParamBreakdown count_lora_adapter(const EncoderConfig& enc, int rank);

struct HypernetCountOptions {
  int rank = 2;
  bool train_head = true;
  bool train_layer_embeddings = false;
};

ParamBreakdown count_hypernet(const EncoderConfig& enc, int num_annotators, const HypernetCountOptions& options = {});
ParamBreakdown count_separate_lora(const EncoderConfig& enc, int num_annotators, int rank);
ParamBreakdown count_aart(const EncoderConfig& enc, int num_annotators);
ParamBreakdown count_ae(const EncoderConfig& enc, int num_annotators);

ParamBreakdown count_system(SystemKind kind, const EncoderConfig& enc, int num_annotators,
                            const HypernetCountOptions& options = {});

}  // namespace hyperpersona
