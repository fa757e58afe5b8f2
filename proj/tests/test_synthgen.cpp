#include "hyperpersona/config.hpp"
#include "hyperpersona/corpus.hpp"
#include "hyperpersona/synthgen.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

using namespace hyperpersona;

namespace {

std::string jsonl_of(const SynthCorpus& s) {
  std::ostringstream out;
  write_jsonl(s.corpus, out);
  return out.str();
}

double mean_disagreement(const PerspectivistCorpus& c) {
  double sum = 0;
  for (const auto& v : c.votes_by_item()) sum += disagreement(v);
  return sum / static_cast<double>(c.num_items());
}

// Expected item disagreement when `agree` annotators hold one noise-free
// label and `against` the other, each vote flipped independently with
// probability eps. Enumerates every flip pattern.
double expected_disagreement(int agree, int against, double eps) {
  const int k = agree + against;
  double e = 0;
  for (int mask = 0; mask < (1 << k); ++mask) {
    int ones = 0;
    double p = 1;
    for (int v = 0; v < k; ++v) {
      const bool flipped = mask >> v & 1;
      p *= flipped ? eps : 1 - eps;
      ones += (v < agree) != flipped;
    }
    e += p * (1.0 - std::max(ones, k - ones) / static_cast<double>(k));
  }
  return e;
}

// Two personas of equal size, persona 1 inverting `flip_share` of the
// items. `split` gives the probability of each (persona-0 count) among the K
// annotators of an item.
double closed_form(const std::vector<double>& split, double flip_share, double eps) {
  const int k = static_cast<int>(split.size()) - 1;
  double e = 0;
  for (int m = 0; m <= k; ++m) {
    e += split[static_cast<std::size_t>(m)] *
         ((1 - flip_share) * expected_disagreement(k, 0, eps) + flip_share * expected_disagreement(m, k - m, eps));
  }
  return e;
}

// Hypergeometric: K drawn without replacement from N annotators, half in
// each persona.
std::vector<double> uniform_split(int n, int k) {
  auto choose = [](int a, int b) {
    double r = 1;
    for (int i = 1; i <= b; ++i) r = r * (a - b + i) / i;
    return r;
  };
  std::vector<double> p(static_cast<std::size_t>(k + 1));
  for (int m = 0; m <= k; ++m) p[static_cast<std::size_t>(m)] = choose(n / 2, m) * choose(n / 2, k - m) / choose(n, k);
  return p;
}

}  // namespace

TEST(Synthgen, OnePersonaNoNoiseIsUnanimous) {
  SynthConfig cfg;
  cfg.num_items = 300;
  cfg.num_personas = 1;
  cfg.noise_rate = 0;
  const auto s = generate(cfg);
  EXPECT_DOUBLE_EQ(mean_disagreement(s.corpus), 0.0);
  const auto ceiling = oracle_ceiling(s.corpus, s.persona_map());
  EXPECT_DOUBLE_EQ(ceiling.single_task, 1.0);
  EXPECT_DOUBLE_EQ(ceiling.bayes, 1.0);
}

TEST(Synthgen, RecordCountAndAnnotatorPool) {
  SynthConfig cfg;
  cfg.num_items = 250;
  const auto s = generate(cfg);
  EXPECT_EQ(s.corpus.records().size(), 250u * 4u);
  EXPECT_EQ(s.corpus.num_annotators(), 20u);
  for (const auto& v : s.corpus.votes_by_item()) EXPECT_EQ(v.size(), 4u);
}

TEST(Synthgen, SameSeedIsByteIdentical) {
  SynthConfig cfg;
  cfg.num_items = 200;
  EXPECT_EQ(jsonl_of(generate(cfg)), jsonl_of(generate(cfg)));
  SynthConfig other = cfg;
  other.seed = 1;
  EXPECT_NE(jsonl_of(generate(cfg)), jsonl_of(generate(other)));
}

TEST(Synthgen, BalancedAssignmentDrawsEvenlyFromPersonas) {
  SynthConfig cfg;
  cfg.num_items = 200;
  const auto s = generate(cfg);
  std::vector<std::vector<int>> per_item(s.corpus.num_items());
  for (const auto& r : s.corpus.records()) per_item[r.item].push_back(s.annotator_persona[r.annotator]);
  for (const auto& p : per_item) EXPECT_EQ(std::count(p.begin(), p.end(), 0), 2);
}

class DisagreementClosedForm : public ::testing::TestWithParam<std::tuple<bool, double>> {};

TEST_P(DisagreementClosedForm, MonteCarloMatches) {
  const auto [balanced, eps] = GetParam();
  SynthConfig cfg;
  cfg.num_items = 6000;
  cfg.noise_rate = eps;
  cfg.balanced_personas = balanced;
  cfg.seed = 4;
  const auto s = generate(cfg);
  // Persona 1 inverts 2 of 4 topics and the primary topic is uniform.
  const std::vector<double> split = balanced ? std::vector<double>{0, 0, 1, 0, 0} : uniform_split(20, 4);
  EXPECT_NEAR(mean_disagreement(s.corpus), closed_form(split, 0.5, eps), 0.02);
}

INSTANTIATE_TEST_SUITE_P(Mixes, DisagreementClosedForm,
                         ::testing::Combine(::testing::Bool(), ::testing::Values(0.0, 0.05, 0.2)));

TEST(Synthgen, ClosedFormSanity) {
  // Noise-free 2-2 split is the maximum 0.5; unanimous is 0.
  EXPECT_DOUBLE_EQ(expected_disagreement(2, 2, 0.0), 0.5);
  EXPECT_DOUBLE_EQ(expected_disagreement(4, 0, 0.0), 0.0);
  EXPECT_DOUBLE_EQ(closed_form({0, 0, 1, 0, 0}, 0.5, 0.0), 0.25);
}

TEST(Synthgen, AntagonisticCeilingGap) {
  // Exhaustive over a 200-item noise-free corpus.
  SynthConfig cfg;
  cfg.num_items = 200;
  cfg.noise_rate = 0;
  const auto s = generate(cfg);
  const auto c = oracle_ceiling(s.corpus, s.persona_map());
  EXPECT_DOUBLE_EQ(c.bayes, 1.0);
  EXPECT_LE(c.single_task, c.bayes - 0.15);
}

TEST(Synthgen, BayesCeilingUnderLabelNoise) {
  SynthConfig cfg;
  cfg.num_items = 4000;
  cfg.num_personas = 1;
  cfg.noise_rate = 0.1;
  const auto s = generate(cfg);
  // Class prior of the noise-free rule, then per-class F1 of a predictor
  // that outputs the rule against gold flipped with probability eps.
  const auto persona = s.personas.at(0);
  double pos = 0;
  for (const auto& item : s.corpus.items()) pos += persona_label(persona, parse_features(item.text, cfg.num_topics));
  const double pi = pos / static_cast<double>(s.corpus.num_items());
  const double eps = cfg.noise_rate;
  auto f1 = [&](double prior) {
    const double tp = prior * (1 - eps), fp = prior * eps, fn = (1 - prior) * eps;
    return 2 * tp / (2 * tp + fp + fn);
  };
  const double expected = (f1(pi) + f1(1 - pi)) / 2;
  EXPECT_NEAR(oracle_ceiling(s.corpus, s.persona_map()).bayes, expected, 0.01);
}

TEST(Synthgen, MoreNoiseMoreDisagreement) {
  double last = -1;
  for (double eps : {0.0, 0.1, 0.2, 0.3}) {
    SynthConfig cfg;
    cfg.num_items = 1500;
    cfg.noise_rate = eps;
    const double d = mean_disagreement(generate(cfg).corpus);
    EXPECT_GT(d, last) << eps;
    last = d;
  }
}

TEST(Synthgen, NoiseRateMustBeBelowHalf) {
  SynthConfig cfg;
  cfg.noise_rate = 0.7;
  try {
    generate(cfg);
    FAIL() << "expected a config error";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("noise_rate"), std::string::npos);
  }
}

TEST(Synthgen, FeaturesRecoverThePrimaryTopic) {
  const auto f = parse_features("t2p0 t2p1 t2n0 t0p3", 4);
  EXPECT_EQ(f.primary_topic, 2);
  EXPECT_DOUBLE_EQ(f.features[2], 1.0 / 4.0);
  EXPECT_DOUBLE_EQ(f.features[0], 1.0 / 4.0);
  EXPECT_THROW(parse_features("hello", 4), UnsupportedInputError);
}

TEST(Synthgen, PersonaSidecarRoundTrip) {
  SynthConfig cfg;
  cfg.num_items = 20;
  const auto s = generate(cfg);
  std::stringstream io;
  write_persona_sidecar(s, io);
  const auto back = read_persona_sidecar(io);
  ASSERT_EQ(back.size(), 20u);
  for (std::size_t a = 0; a < s.corpus.num_annotators(); ++a) {
    EXPECT_EQ(back.at(s.corpus.annotator_id(a)), s.personas[static_cast<std::size_t>(s.annotator_persona[a])].persona_id);
  }
}

TEST(Config, UnknownRepeatedAndBadValuesNameTheKey) {
  auto message = [](const std::string& text) {
    std::istringstream in(text);
    try {
      synth_config_from(parse_key_values(in));
    } catch (const ConfigError& e) {
      return std::string(e.what());
    }
    return std::string("<no error>");
  };
  EXPECT_NE(message("bogus = 1\n").find("bogus"), std::string::npos);
  EXPECT_NE(message("num_items = 5\nnum_items = 6\n").find("num_items"), std::string::npos);
  EXPECT_NE(message("num_items = lots\n").find("num_items"), std::string::npos);
  EXPECT_NE(message("noise_rate = 0.7\n").find("noise_rate"), std::string::npos);
}

TEST(Config, CommentsWhitespaceAndRoundTrip) {
  std::istringstream in("# header\n\n  num_items =  120  # trailing\nbalanced_personas = false\n");
  const auto cfg = synth_config_from(parse_key_values(in));
  EXPECT_EQ(cfg.num_items, 120);
  EXPECT_FALSE(cfg.balanced_personas);
  const auto again = synth_config_from(to_key_values(cfg));
  EXPECT_EQ(to_key_values(again), to_key_values(cfg));
}

TEST(Config, SeedLists) {
  EXPECT_EQ(parse_seed_list("1..3,7"), (std::vector<std::uint64_t>{1, 2, 3, 7}));
  EXPECT_EQ(parse_seed_list("4"), (std::vector<std::uint64_t>{4}));
  EXPECT_EQ(parse_seed_list("1..10").size(), 10u);
  EXPECT_THROW(parse_seed_list("3..1"), ConfigError);
  EXPECT_THROW(parse_seed_list("x"), ConfigError);
}

TEST(Config, TrainKeys) {
  std::istringstream in("system = aart\nlearning_rate = 3e-4\nseeds = 0..2\ndropout_p = 0.1\n");
  const auto cfg = train_config_from(parse_key_values(in));
  EXPECT_EQ(cfg.system, SystemKind::Aart);
  EXPECT_DOUBLE_EQ(cfg.learning_rate, 3e-4);
  EXPECT_EQ(cfg.seeds.size(), 3u);
  std::istringstream bad("dropout_p = 1.5\n");
  EXPECT_THROW(train_config_from(parse_key_values(bad)), ConfigError);
}
