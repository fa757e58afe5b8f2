#include "hyperpersona/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <istream>
#include <set>
#include <sstream>

namespace hyperpersona {

namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return {};
  return s.substr(first, s.find_last_not_of(" \t\r\n") - first + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const char* expected) {
  throw ConfigError("config key '" + key + "': cannot parse '" + value + "' as " + expected);
}

long long to_int(const std::string& key, const std::string& value) {
  long long out = 0;
  const auto* end = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end) bad_value(key, value, "an integer");
  return out;
}

int to_int32(const std::string& key, const std::string& value) {
  const long long v = to_int(key, value);
  if (v < -2147483647LL || v > 2147483647LL) bad_value(key, value, "a 32-bit integer");
  return static_cast<int>(v);
}

double to_double(const std::string& key, const std::string& value) {
  double out = 0.0;
  const auto* end = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end) bad_value(key, value, "a number");
  return out;
}

bool to_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "yes") return true;
  if (value == "false" || value == "0" || value == "no") return false;
  bad_value(key, value, "a boolean");
}

std::vector<double> to_doubles(const std::string& key, const std::string& value) {
  std::vector<double> out;
  std::stringstream ss(value);
  std::string part;
  while (std::getline(ss, part, ',')) out.push_back(to_double(key, trim(part)));
  if (out.empty()) bad_value(key, value, "a comma-separated list of numbers");
  return out;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string fmt_list(const std::vector<double>& v) {
  std::string out;
  for (double x : v) out += (out.empty() ? "" : ",") + fmt(x);
  return out;
}

std::string fmt_seeds(const std::vector<std::uint64_t>& v) {
  std::string out;
  for (auto x : v) out += (out.empty() ? "" : ",") + std::to_string(x);
  return out;
}

// Rethrows validation failures with the field named the way the file names it.
template <typename Fn>
void validated(Fn&& fn) {
  try {
    fn();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
}

using Setter = std::function<void(const std::string& key, const std::string& value)>;

void apply(const KeyValues& kv, const std::map<std::string, Setter>& setters, const char* kind) {
  for (const auto& [key, value] : kv) {
    const auto it = setters.find(key);
    if (it == setters.end()) throw ConfigError(std::string("unknown ") + kind + " config key '" + key + "'");
    it->second(key, value);
  }
}

}  // namespace

KeyValues parse_key_values(std::istream& in) {
  KeyValues out;
  std::set<std::string> seen;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(n) + ": expected key = value");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError("config line " + std::to_string(n) + ": empty key");
    if (!seen.insert(key).second) throw ConfigError("config key '" + key + "' is set twice");
    out.emplace_back(std::move(key), std::move(value));
  }
  return out;
}

KeyValues read_key_values(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  return parse_key_values(in);
}

std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
  std::vector<std::uint64_t> out;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, ',')) {
    part = trim(part);
    if (const auto dots = part.find(".."); dots != std::string::npos) {
      const long long lo = to_int("seeds", trim(part.substr(0, dots)));
      const long long hi = to_int("seeds", trim(part.substr(dots + 2)));
      if (lo < 0 || hi < lo) throw ConfigError("config key 'seeds': bad range '" + part + "'");
      for (long long s = lo; s <= hi; ++s) out.push_back(static_cast<std::uint64_t>(s));
    } else {
      const long long s = to_int("seeds", part);
      if (s < 0) throw ConfigError("config key 'seeds': seeds must be non-negative");
      out.push_back(static_cast<std::uint64_t>(s));
    }
  }
  if (out.empty()) throw ConfigError("config key 'seeds': empty seed list");
  return out;
}

SynthConfig synth_config_from(const KeyValues& kv, SynthConfig c) {
  const std::map<std::string, Setter> setters{
      {"num_items", [&](auto& k, auto& v) { c.num_items = to_int32(k, v); }},
      {"num_annotators", [&](auto& k, auto& v) { c.num_annotators = to_int32(k, v); }},
      {"annotators_per_item", [&](auto& k, auto& v) { c.annotators_per_item = to_int32(k, v); }},
      {"num_topics", [&](auto& k, auto& v) { c.num_topics = to_int32(k, v); }},
      {"num_personas", [&](auto& k, auto& v) { c.num_personas = to_int32(k, v); }},
      {"vocab_size", [&](auto& k, auto& v) { c.vocab_size = to_int32(k, v); }},
      {"noise_rate", [&](auto& k, auto& v) { c.noise_rate = to_double(k, v); }},
      {"flip_fraction", [&](auto& k, auto& v) { c.flip_fraction = to_double(k, v); }},
      {"polarity_purity", [&](auto& k, auto& v) { c.polarity_purity = to_double(k, v); }},
      {"min_length", [&](auto& k, auto& v) { c.min_length = to_int32(k, v); }},
      {"max_length", [&](auto& k, auto& v) { c.max_length = to_int32(k, v); }},
      {"balanced_personas", [&](auto& k, auto& v) { c.balanced_personas = to_bool(k, v); }},
      {"seed", [&](auto& k, auto& v) { c.seed = static_cast<std::uint64_t>(to_int(k, v)); }},
  };
  apply(kv, setters, "synth");
  c.validate();
  return c;
}

KeyValues to_key_values(const SynthConfig& c) {
  return {{"num_items", std::to_string(c.num_items)},
          {"num_annotators", std::to_string(c.num_annotators)},
          {"annotators_per_item", std::to_string(c.annotators_per_item)},
          {"num_topics", std::to_string(c.num_topics)},
          {"num_personas", std::to_string(c.num_personas)},
          {"vocab_size", std::to_string(c.vocab_size)},
          {"noise_rate", fmt(c.noise_rate)},
          {"flip_fraction", fmt(c.flip_fraction)},
          {"polarity_purity", fmt(c.polarity_purity)},
          {"min_length", std::to_string(c.min_length)},
          {"max_length", std::to_string(c.max_length)},
          {"balanced_personas", c.balanced_personas ? "true" : "false"},
          {"seed", std::to_string(c.seed)}};
}

TrainConfig train_config_from(const KeyValues& kv, TrainConfig c) {
  auto& e = c.encoder;
  const std::map<std::string, Setter> setters{
      {"system", [&](auto&, auto& v) { c.system = parse_system(v); }},
      {"epochs", [&](auto& k, auto& v) { c.epochs = to_int32(k, v); }},
      {"batch_size", [&](auto& k, auto& v) { c.batch_size = to_int32(k, v); }},
      {"learning_rate", [&](auto& k, auto& v) { c.learning_rate = to_double(k, v); }},
      {"dropout_p", [&](auto& k, auto& v) { c.dropout_p = to_double(k, v); }},
      {"rank", [&](auto& k, auto& v) { c.rank = to_int32(k, v); }},
      {"alpha", [&](auto& k, auto& v) { c.alpha = to_double(k, v); }},
      {"vocab_size", [&](auto& k, auto& v) { e.vocab_size = to_int32(k, v); }},
      {"hidden_dim", [&](auto& k, auto& v) { e.hidden_dim = to_int32(k, v); }},
      {"num_layers", [&](auto& k, auto& v) { e.num_layers = to_int32(k, v); }},
      {"num_heads", [&](auto& k, auto& v) { e.num_heads = to_int32(k, v); }},
      {"ffn_dim", [&](auto& k, auto& v) { e.ffn_dim = to_int32(k, v); }},
      {"max_seq_len", [&](auto& k, auto& v) { e.max_seq_len = to_int32(k, v); }},
      {"num_classes", [&](auto& k, auto& v) { e.num_classes = to_int32(k, v); }},
      {"base_epochs", [&](auto& k, auto& v) { c.base_epochs = to_int32(k, v); }},
      {"base_batch_size", [&](auto& k, auto& v) { c.base_batch_size = to_int32(k, v); }},
      {"base_learning_rate", [&](auto& k, auto& v) { c.base_learning_rate = to_double(k, v); }},
      {"separate_lora_epochs", [&](auto& k, auto& v) { c.separate_lora_epochs = to_int32(k, v); }},
      {"train_head", [&](auto& k, auto& v) { c.train_head = to_bool(k, v); }},
      {"train_layer_embeddings", [&](auto& k, auto& v) { c.train_layer_embeddings = to_bool(k, v); }},
      {"aart_lambda_reg", [&](auto& k, auto& v) { c.aart.lambda_reg = to_double(k, v); }},
      {"aart_lambda_con", [&](auto& k, auto& v) { c.aart.lambda_con = to_double(k, v); }},
      {"aart_temperature", [&](auto& k, auto& v) { c.aart.temperature = to_double(k, v); }},
      {"aart_agreement_threshold", [&](auto& k, auto& v) { c.aart_agreement_threshold = to_double(k, v); }},
      {"seeds", [&](auto&, auto& v) { c.seeds = parse_seed_list(v); }},
      {"grid_dropouts", [&](auto& k, auto& v) { c.grid_dropouts = to_doubles(k, v); }},
      {"grid_learning_rates", [&](auto& k, auto& v) { c.grid_learning_rates = to_doubles(k, v); }},
  };
  apply(kv, setters, "training");
  validated([&] { c.validate(); });
  return c;
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be at least 1");
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (!(learning_rate >= 0.0)) throw ConfigError("learning_rate must be non-negative");
  if (!(dropout_p >= 0.0 && dropout_p < 1.0)) throw ConfigError("dropout_p must be in [0, 1)");
  if (rank < 1) throw ConfigError("rank must be at least 1");
  if (!(alpha > 0.0)) throw ConfigError("alpha must be positive");
  if (base_epochs < 0) throw ConfigError("base_epochs must be non-negative");
  if (base_batch_size < 1) throw ConfigError("base_batch_size must be at least 1");
  if (!(base_learning_rate >= 0.0)) throw ConfigError("base_learning_rate must be non-negative");
  if (separate_lora_epochs < 1) throw ConfigError("separate_lora_epochs must be at least 1");
  if (!(aart.temperature > 0.0)) throw ConfigError("aart_temperature must be positive");
  if (seeds.empty()) throw ConfigError("seeds must not be empty");
  if (grid_dropouts.empty() || grid_learning_rates.empty()) throw ConfigError("grid lists must not be empty");
  for (double p : grid_dropouts) {
    if (!(p >= 0.0 && p < 1.0)) throw ConfigError("grid_dropouts entries must be in [0, 1)");
  }
  for (double lr : grid_learning_rates) {
    if (!(lr >= 0.0)) throw ConfigError("grid_learning_rates entries must be non-negative");
  }
  encoder.validate();
}

std::vector<std::pair<std::string, std::string>> TrainConfig::resolved() const {
  return {{"system", to_string(system)},
          {"epochs", std::to_string(epochs)},
          {"batch_size", std::to_string(batch_size)},
          {"learning_rate", fmt(learning_rate)},
          {"dropout_p", fmt(dropout_p)},
          {"rank", std::to_string(rank)},
          {"alpha", fmt(alpha)},
          {"vocab_size", std::to_string(encoder.vocab_size)},
          {"hidden_dim", std::to_string(encoder.hidden_dim)},
          {"num_layers", std::to_string(encoder.num_layers)},
          {"num_heads", std::to_string(encoder.num_heads)},
          {"ffn_dim", std::to_string(encoder.ffn_dim)},
          {"max_seq_len", std::to_string(encoder.max_seq_len)},
          {"num_classes", std::to_string(encoder.num_classes)},
          {"base_epochs", std::to_string(base_epochs)},
          {"base_batch_size", std::to_string(base_batch_size)},
          {"base_learning_rate", fmt(base_learning_rate)},
          {"separate_lora_epochs", std::to_string(separate_lora_epochs)},
          {"train_head", train_head ? "true" : "false"},
          {"train_layer_embeddings", train_layer_embeddings ? "true" : "false"},
          {"aart_lambda_reg", fmt(aart.lambda_reg)},
          {"aart_lambda_con", fmt(aart.lambda_con)},
          {"aart_temperature", fmt(aart.temperature)},
          {"aart_agreement_threshold", fmt(aart_agreement_threshold)},
          {"seeds", fmt_seeds(seeds)},
          {"grid_dropouts", fmt_list(grid_dropouts)},
          {"grid_learning_rates", fmt_list(grid_learning_rates)}};
}

std::string TrainConfig::fingerprint() const {
  std::string text;
  for (const auto& [k, v] : resolved()) text += k + "=" + v + "\n";
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fnv1a64(text)));
  return buf;
}

}  // namespace hyperpersona
