#include "hyperpersona/encoder_config.hpp"
#include "hyperpersona/common.hpp"

#include <cctype>

namespace hyperpersona {

void EncoderConfig::validate() const {
  if (vocab_size < 2) throw ConfigError("vocab_size must be at least 2");
  if (hidden_dim < 1) throw ConfigError("hidden_dim must be positive");
  if (num_layers < 1) throw ConfigError("num_layers must be positive");
  if (num_heads < 1 || hidden_dim % num_heads != 0) {
    throw ConfigError("hidden_dim must be divisible by num_heads");
  }
  if (ffn_dim < 1) throw ConfigError("ffn_dim must be positive");
  if (max_seq_len < 1) throw ConfigError("max_seq_len must be at least 1");
  if (num_classes < 2) throw ConfigError("num_classes must be at least 2");
}

EncoderConfig EncoderConfig::desk() { return {}; }

EncoderConfig EncoderConfig::roberta() {
  EncoderConfig c;
  c.vocab_size = 50265;
  c.hidden_dim = 768;
  c.num_layers = 12;
  c.num_heads = 12;
  c.ffn_dim = 3072;
  c.max_seq_len = 100;
  c.num_classes = 2;
  return c;
}

std::vector<int> tokenize(std::string_view text, const EncoderConfig& config) {
  std::vector<int> tokens;
  const auto buckets = static_cast<std::uint64_t>(config.vocab_size - 1);
  std::size_t pos = 0;
  while (pos < text.size() && tokens.size() < static_cast<std::size_t>(config.max_seq_len)) {
    while (pos < text.size() && std::isspace(static_cast<unsigned char>(text[pos]))) ++pos;
    std::size_t end = pos;
    while (end < text.size() && !std::isspace(static_cast<unsigned char>(text[end]))) ++end;
    if (end > pos) {
      tokens.push_back(1 + static_cast<int>(fnv1a64(text.substr(pos, end - pos)) % buckets));
    }
    pos = end;
  }
  if (tokens.empty()) tokens.push_back(kPadToken);
  return tokens;
}

}  // namespace hyperpersona
