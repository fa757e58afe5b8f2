#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace hyperpersona {

// Geometry of the frozen base classifier. The desk preset trains in
// minutes on a CPU; the roberta preset only exists for parameter counting.
struct EncoderConfig {
  int vocab_size = 2048;
  int hidden_dim = 64;
  int num_layers = 2;
  int num_heads = 4;
  int ffn_dim = 128;
  int max_seq_len = 100;
  int num_classes = 2;
  std::uint64_t seed = 0;

  void validate() const;
  int head_dim() const { return hidden_dim / num_heads; }
  // Adapter targets: query and value projection of every layer.
  int num_targets() const { return 2 * num_layers; }

  static EncoderConfig desk();
  static EncoderConfig roberta();
};

inline constexpr int kPadToken = 0;

// Whitespace split, FNV-1a hash into [1, vocab_size), truncation to
// max_seq_len. An empty text becomes the single padding token.
std::vector<int> tokenize(std::string_view text, const EncoderConfig& config);

}  // namespace hyperpersona
