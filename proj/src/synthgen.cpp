#include "hyperpersona/synthgen.hpp"
#include "hyperpersona/metrics.hpp"
#include "hyperpersona/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <istream>
#include <ostream>
#include <sstream>

namespace hyperpersona {

bool PersonaSpec::flips(int topic) const {
  return std::binary_search(flip_topics.begin(), flip_topics.end(), topic);
}

void SynthConfig::validate() const {
  auto positive = [](int v, const char* name) {
    if (v < 1) throw ConfigError(std::string(name) + " must be a positive integer (got " + std::to_string(v) + ")");
  };
  positive(num_items, "num_items");
  positive(num_annotators, "num_annotators");
  positive(annotators_per_item, "annotators_per_item");
  positive(num_topics, "num_topics");
  positive(num_personas, "num_personas");
  positive(vocab_size, "vocab_size");
  positive(min_length, "min_length");
  if (annotators_per_item > num_annotators) {
    throw ConfigError("annotators_per_item must not exceed num_annotators");
  }
  if (!(noise_rate >= 0.0 && noise_rate < 0.5)) {
    throw ConfigError("noise_rate must be in [0, 0.5) (got " + std::to_string(noise_rate) + ")");
  }
  if (!(flip_fraction >= 0.0 && flip_fraction <= 1.0)) throw ConfigError("flip_fraction must be in [0, 1]");
  if (!(polarity_purity >= 0.5 && polarity_purity <= 1.0)) {
    throw ConfigError("polarity_purity must be in [0.5, 1]");
  }
  if (max_length < min_length) throw ConfigError("max_length must be at least min_length");
  if (vocab_size < 2 * num_topics) {
    throw ConfigError("vocab_size must be at least 2 * num_topics so every (topic, polarity) slice has a word");
  }
}

std::vector<PersonaSpec> make_personas(const SynthConfig& config) {
  config.validate();
  const int block = static_cast<int>(std::lround(config.flip_fraction * config.num_topics));
  std::vector<PersonaSpec> out;
  for (int p = 0; p < config.num_personas; ++p) {
    PersonaSpec s;
    s.persona_id = "persona" + std::to_string(p);
    s.weight_vector.assign(static_cast<std::size_t>(config.num_topics), 1.0);
    if (p > 0) {
      for (int k = 0; k < block; ++k) s.flip_topics.push_back(((p - 1) * block + k) % config.num_topics);
      std::sort(s.flip_topics.begin(), s.flip_topics.end());
      s.flip_topics.erase(std::unique(s.flip_topics.begin(), s.flip_topics.end()), s.flip_topics.end());
    }
    out.push_back(std::move(s));
  }
  return out;
}

std::map<std::string, PersonaSpec> SynthCorpus::persona_map() const {
  std::map<std::string, PersonaSpec> out;
  for (std::size_t a = 0; a < annotator_persona.size(); ++a) {
    out.emplace(corpus.annotator_id(a), personas[static_cast<std::size_t>(annotator_persona[a])]);
  }
  return out;
}

namespace {

std::string padded(const std::string& prefix, int value, int total) {
  const int width = static_cast<int>(std::to_string(std::max(total - 1, 0)).size());
  std::ostringstream os;
  os << prefix << std::setw(width) << std::setfill('0') << value;
  return os.str();
}

std::string word(int topic, bool positive, int k) {
  return "t" + std::to_string(topic) + (positive ? "p" : "n") + std::to_string(k);
}

// Annotators of one item. Balanced draws deal the slots to personas in turn
// from a random starting persona, so the persona counts of an item differ by
// at most one while every persona still has annotators left.
std::vector<std::size_t> pick_annotators(const SynthConfig& config, const std::vector<int>& persona_of, Rng& rng) {
  const auto K = static_cast<std::size_t>(config.annotators_per_item);
  std::vector<std::size_t> pool(persona_of.size());
  std::iota(pool.begin(), pool.end(), std::size_t{0});
  if (!config.balanced_personas) {
    for (std::size_t k = 0; k < K; ++k) std::swap(pool[k], pool[k + rng.below(pool.size() - k)]);
    pool.resize(K);
    return pool;
  }
  const auto P = static_cast<std::size_t>(config.num_personas);
  std::vector<std::vector<std::size_t>> by_persona(P);
  for (std::size_t a : pool) by_persona[static_cast<std::size_t>(persona_of[a])].push_back(a);
  for (auto& members : by_persona) rng.shuffle(members);
  std::vector<std::size_t> out;
  std::size_t p = rng.below(P);
  while (out.size() < K) {
    while (by_persona[p].empty()) p = (p + 1) % P;
    out.push_back(by_persona[p].back());
    by_persona[p].pop_back();
    p = (p + 1) % P;
  }
  return out;
}

}  // namespace

SynthCorpus generate(const SynthConfig& config) {
  config.validate();
  SynthCorpus out{PerspectivistCorpus(2), make_personas(config), {}, config};
  Rng rng(derive_seed(config.seed, 0x5e7));
  for (int a = 0; a < config.num_annotators; ++a) {
    out.corpus.add_annotator(padded("ann", a, config.num_annotators));
    out.annotator_persona.push_back(a % config.num_personas);
  }
  const int T = config.num_topics;
  const int words = config.words_per_slice();

  for (int i = 0; i < config.num_items; ++i) {
    const int primary = static_cast<int>(rng.below(static_cast<std::uint64_t>(T)));
    int secondary = primary;
    if (T > 1) {
      secondary = static_cast<int>(rng.below(static_cast<std::uint64_t>(T - 1)));
      if (secondary >= primary) ++secondary;
    }
    const int n = static_cast<int>(rng.between(config.min_length, config.max_length));
    const int n_secondary = T > 1 ? n / 5 : 0;
    const bool item_positive = rng.bernoulli(0.5);

    std::vector<std::string> tokens;
    tokens.reserve(static_cast<std::size_t>(n));
    for (int k = 0; k < n; ++k) {
      const bool on_primary = k >= n_secondary;
      const int topic = on_primary ? primary : secondary;
      const bool positive = on_primary ? (rng.bernoulli(config.polarity_purity) == item_positive) : rng.bernoulli(0.5);
      tokens.push_back(word(topic, positive, static_cast<int>(rng.below(static_cast<std::uint64_t>(words)))));
    }
    rng.shuffle(tokens);
    std::string text;
    for (const auto& t : tokens) {
      if (!text.empty()) text += ' ';
      text += t;
    }
    const std::size_t item = out.corpus.add_item(padded("item", i, config.num_items), text);
    const LatentFeatures latent = parse_features(text, T);

    for (const std::size_t a : pick_annotators(config, out.annotator_persona, rng)) {
      int label = persona_label(out.personas[static_cast<std::size_t>(out.annotator_persona[a])], latent);
      if (rng.bernoulli(config.noise_rate)) label = 1 - label;
      out.corpus.add_record(item, a, label);
    }
  }
  return out;
}

LatentFeatures parse_features(const std::string& text, int num_topics) {
  LatentFeatures out;
  out.features.assign(static_cast<std::size_t>(num_topics), 0.0);
  std::vector<int> counts(static_cast<std::size_t>(num_topics), 0);
  std::istringstream in(text);
  std::string tok;
  int n = 0;
  while (in >> tok) {
    std::size_t pos = 1;
    int topic = -1;
    if (tok.size() >= 4 && tok[0] == 't') {
      topic = 0;
      while (pos < tok.size() && std::isdigit(static_cast<unsigned char>(tok[pos]))) {
        topic = topic * 10 + (tok[pos] - '0');
        ++pos;
      }
      if (pos == 1) topic = -1;
    }
    const bool polarity_ok = pos < tok.size() && (tok[pos] == 'p' || tok[pos] == 'n');
    const bool index_ok = polarity_ok && pos + 1 < tok.size() &&
                          std::all_of(tok.begin() + static_cast<long>(pos) + 1, tok.end(),
                                      [](char c) { return std::isdigit(static_cast<unsigned char>(c)); });
    if (topic < 0 || topic >= num_topics || !index_ok) {
      throw UnsupportedInputError("token '" + tok + "' is not a synthetic topic token");
    }
    out.features[static_cast<std::size_t>(topic)] += tok[pos] == 'p' ? 1.0 : -1.0;
    ++counts[static_cast<std::size_t>(topic)];
    ++n;
  }
  if (n == 0) throw UnsupportedInputError("empty text is not a synthetic item");
  for (auto& f : out.features) f /= n;
  out.primary_topic = static_cast<int>(std::max_element(counts.begin(), counts.end()) - counts.begin());
  return out;
}

int persona_label(const PersonaSpec& persona, const LatentFeatures& latent) {
  if (persona.weight_vector.size() != latent.features.size()) {
    throw ContractError("persona weight vector does not match the number of topics");
  }
  double score = persona.bias;
  for (std::size_t t = 0; t < latent.features.size(); ++t) score += persona.weight_vector[t] * latent.features[t];
  int label = score > 0.0 ? 1 : 0;
  if (persona.flips(latent.primary_topic)) label = 1 - label;
  return label;
}

CeilingReport oracle_ceiling(const PerspectivistCorpus& corpus, const std::map<std::string, PersonaSpec>& personas,
                             const std::vector<AnnotationRecord>& records) {
  const auto& recs = records.empty() ? corpus.records() : records;
  if (recs.empty()) throw ContractError("oracle_ceiling: no records");
  if (personas.empty()) throw UnsupportedInputError("oracle_ceiling: no persona information");
  const int num_topics = static_cast<int>(personas.begin()->second.weight_vector.size());

  std::map<std::size_t, std::vector<int>> votes;
  for (const auto& r : recs) votes[r.item].push_back(r.label);
  std::map<std::size_t, int> majority;
  for (const auto& [item, v] : votes) majority[item] = majority_vote(v, corpus.num_classes());

  std::map<std::size_t, LatentFeatures> latent;
  std::vector<LabeledPrediction> single, bayes;
  for (const auto& r : recs) {
    auto it = latent.find(r.item);
    if (it == latent.end()) it = latent.emplace(r.item, parse_features(corpus.items()[r.item].text, num_topics)).first;
    const auto persona = personas.find(corpus.annotator_id(r.annotator));
    if (persona == personas.end()) {
      throw UnsupportedInputError("annotator '" + corpus.annotator_id(r.annotator) + "' has no persona");
    }
    single.push_back({r.item, r.annotator, r.label, majority[r.item]});
    bayes.push_back({r.item, r.annotator, r.label, persona_label(persona->second, it->second)});
  }
  return {annotator_level_f1(single, corpus.num_classes()).score, annotator_level_f1(bayes, corpus.num_classes()).score};
}

void write_persona_sidecar(const SynthCorpus& synth, std::ostream& out) {
  for (std::size_t a = 0; a < synth.annotator_persona.size(); ++a) {
    nlohmann::ordered_json line;
    line["annotator_id"] = synth.corpus.annotator_id(a);
    line["persona_id"] = synth.personas[static_cast<std::size_t>(synth.annotator_persona[a])].persona_id;
    out << line.dump() << '\n';
  }
}

std::map<std::string, std::string> read_persona_sidecar(std::istream& in) {
  std::map<std::string, std::string> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(e.what(), n);
    }
    if (!j.contains("annotator_id") || !j.contains("persona_id")) {
      throw SchemaError("line " + std::to_string(n) + ": persona line needs annotator_id and persona_id");
    }
    out[j["annotator_id"].get<std::string>()] = j["persona_id"].get<std::string>();
  }
  return out;
}

}  // namespace hyperpersona
