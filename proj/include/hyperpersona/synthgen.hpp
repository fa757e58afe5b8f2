#pragma once

// Synthetic perspectivist corpora. Every item has a primary and a secondary
// topic; its text is a bag of topic-keyed tokens "t<topic><p|n><k>" whose
// polarity mix carries the signal. Personas share the base rule
// sign(w . f + b) and differ in which primary topics they invert.

#include "hyperpersona/corpus.hpp"

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

namespace hyperpersona {

struct PersonaSpec {
  std::string persona_id;
  std::vector<double> weight_vector;  // one weight per topic
  double bias = 0.0;
  std::vector<int> flip_topics;       // sorted

  bool flips(int topic) const;
};

struct SynthConfig {
  int num_items = 2000;
  int num_annotators = 20;
  int annotators_per_item = 4;
  int num_topics = 4;
  int num_personas = 2;
  // Total number of distinct synthetic words, split evenly over
  // (topic, polarity) slices.
  int vocab_size = 64;
  double noise_rate = 0.05;
  // Share of topics each non-reference persona inverts.
  double flip_fraction = 0.5;
  // Probability that a primary-topic token carries the item's polarity.
  double polarity_purity = 0.85;
  int min_length = 10;
  int max_length = 30;
  // Draw each item's annotators evenly across personas instead of uniformly
  // from the whole pool.
  bool balanced_personas = true;
  std::uint64_t seed = 0;

  void validate() const;
  int words_per_slice() const { return vocab_size / (2 * num_topics); }
};

// Persona 0 inverts nothing; persona p > 0 inverts a contiguous block of
// round(flip_fraction * num_topics) topics starting at (p - 1) * block.
std::vector<PersonaSpec> make_personas(const SynthConfig& config);

struct SynthCorpus {
  PerspectivistCorpus corpus;
  std::vector<PersonaSpec> personas;
  std::vector<int> annotator_persona;  // persona index per corpus annotator
  SynthConfig config;

  std::map<std::string, PersonaSpec> persona_map() const;
};

SynthCorpus generate(const SynthConfig& config);

// Topic features recovered from a synthetic text: per-topic polarity sum
// divided by length, plus the topic holding most tokens (ties go to the
// lower index). Throws UnsupportedInputError on a foreign token.
struct LatentFeatures {
  std::vector<double> features;
  int primary_topic = 0;
};

LatentFeatures parse_features(const std::string& text, int num_topics);

// Noise-free label of a persona on the given features.
int persona_label(const PersonaSpec& persona, const LatentFeatures& latent);

struct CeilingReport {
  double single_task = 0.0;  // per-item majority of the observed labels
  double bayes = 0.0;        // each annotator's own noise-free rule
};

// Annotator-level F1 of the two oracle predictors on the given records
// (all corpus records when empty).
CeilingReport oracle_ceiling(const PerspectivistCorpus& corpus, const std::map<std::string, PersonaSpec>& personas,
                             const std::vector<AnnotationRecord>& records = {});

void write_persona_sidecar(const SynthCorpus& synth, std::ostream& out);
// annotator_id -> persona_id
std::map<std::string, std::string> read_persona_sidecar(std::istream& in);

}  // namespace hyperpersona
