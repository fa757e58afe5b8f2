// Analytic gradients against central finite differences, in double
// precision on a d = 8 encoder.

#include "hyperpersona/baselines.hpp"
#include "hyperpersona/encoder.hpp"
#include "hyperpersona/hypernet.hpp"
#include "hyperpersona/training.hpp"

#include "support.hpp"

#include <gtest/gtest.h>

using namespace hyperpersona;
using hptest::finite_difference_check;

namespace {

constexpr double kTolerance = 1e-4;
// The attention key bias adds q.b to every logit of a query row, which the
// softmax ignores, so its true gradient is zero and the central difference
// returns pure roundoff. It is asserted to be zero directly and left out of
// the difference checks; the other encoder entries use a denominator floor
// above the roundoff level.
constexpr double kEncoderFloor = 1e-6;

// Drops the key-bias entries, whose zero gradient expect_key_bias_zero
// checks exactly, from a (params, grads) pair.
void without_key_bias(std::vector<ParamView<double>>& params, std::vector<ParamView<double>>& grads) {
  std::vector<ParamView<double>> p, g;
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].name.find("key.bias") != std::string::npos) continue;
    p.push_back(params[i]);
    g.push_back(grads[i]);
  }
  params = std::move(p);
  grads = std::move(g);
}

void expect_key_bias_zero(EncoderState<double>& grad) {
  for (const auto& g : grad.parameters()) {
    if (g.name.find("key.bias") == std::string::npos) continue;
    for (Index k = 0; k < g.size(); ++k) EXPECT_NEAR(g.data[k], 0.0, 1e-12) << g.name;
  }
}

struct Fixture {
  EncoderState<double> base;
  std::vector<std::vector<int>> tokens;
  std::vector<TokenizedExample> batch;

  explicit Fixture(int layers = 1, int annotators = 3) {
    auto cfg = hptest::micro_config(layers);
    cfg.seed = 7;
    base = EncoderState<double>::initialize(cfg);
    Rng rng(42);
    hptest::jitter(base.parameters(), rng, 0.05);
    for (int k = 0; k < 2 * annotators; ++k) tokens.push_back(hptest::random_tokens(rng, cfg.vocab_size, 3, 7));
    for (int k = 0; k < 2 * annotators; ++k) {
      batch.push_back({tokens[static_cast<std::size_t>(k)], k % annotators, static_cast<int>(rng.below(2))});
    }
  }
};

double encoder_loss(const EncoderState<double>& s, std::span<const TokenizedExample> batch,
                    const AdapterSet<double>* overlays, EncoderState<double>* grad, AdapterSet<double>* overlay_grad) {
  double total = 0;
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  for (const auto& ex : batch) {
    EncoderCache<double> ec;
    HeadCache<double> hc;
    const Vector<double> pooled = encode(s, ex.tokens, overlays, &ec);
    const Vector<double> logits = classify(s.head, pooled, &hc);
    Vector<double> dlogits;
    total += cross_entropy(logits, ex.label, &dlogits);
    if (!grad && !overlay_grad) continue;
    dlogits *= inv_n;
    const Vector<double> dpooled = classify_backward(s.head, hc, dlogits, grad ? &grad->head : nullptr);
    encode_backward(s, ex.tokens, overlays, ec, dpooled, grad, overlay_grad);
  }
  return total * inv_n;
}

}  // namespace

TEST(Gradients, EncoderBodyEmbeddingsAndHead) {
  Fixture f(2);
  auto grad = f.base.zeros_like();
  encoder_loss(f.base, f.batch, nullptr, &grad, nullptr);
  auto params = f.base.parameters();
  auto grads = grad.parameters();
  without_key_bias(params, grads);
  const auto r = finite_difference_check(params, grads,
                                         [&] { return encoder_loss(f.base, f.batch, nullptr, nullptr, nullptr); },
                                         1e-6, kEncoderFloor);
  expect_key_bias_zero(grad);
  EXPECT_LT(r.max_rel_error, kTolerance) << r.worst;
  EXPECT_GT(r.checked, 1000u);
}

TEST(Gradients, AdapterFactorsThroughFrozenEncoder) {
  Fixture f(2);
  f.base.freeze_all();
  AdapterSet<double> overlays;
  Rng rng(3);
  for (int j = 0; j < f.base.config.num_targets(); ++j) {
    auto fac = LoraFactors<double>::zeros(2, 8, 8, 32.0);
    for (Index k = 0; k < fac.A.size(); ++k) fac.A.data()[k] = 0.1 * rng.normal();
    for (Index k = 0; k < fac.B.size(); ++k) fac.B.data()[k] = 0.01 * rng.normal();
    overlays.set(TargetKey::from_index(j), std::move(fac));
  }
  auto overlay_grad = overlays.zeros_like();
  encoder_loss(f.base, f.batch, &overlays, nullptr, &overlay_grad);
  const auto r = finite_difference_check(overlays.parameters(), overlay_grad.parameters(), [&] {
    return encoder_loss(f.base, f.batch, &overlays, nullptr, nullptr);
  });
  EXPECT_LT(r.max_rel_error, kTolerance) << r.worst;
}

class HypernetGradients : public ::testing::TestWithParam<Mode> {};

TEST_P(HypernetGradients, EveryHypernetAndHeadParameter) {
  Fixture f(1, 3);
  f.base.freeze_all();
  auto hc = HypernetConfig::for_encoder(f.base.config, 3, /*rank=*/1, 32.0, 0.25);
  hc.train_layer_embeddings = true;
  hc.seed = 5;
  auto hn = HypernetState<double>::initialize(hc);
  Rng rng(8);
  hptest::jitter(hn.parameters(), rng, 0.05);
  ClassifierHead<double> head = f.base.head;

  auto grad = hn.zeros_like();
  auto head_grad = ClassifierHead<double>::zeros(8, 2);
  const Mode mode = GetParam();
  hypernet_loss(f.base, hn, head, std::span<const TokenizedExample>(f.batch), mode, 11, 4, &grad, &head_grad);

  auto params = hn.parameters();
  auto grads = grad.parameters();
  for (auto& v : head.parameters(false)) params.push_back(v);
  for (auto& v : head_grad.parameters(false)) grads.push_back(v);
  const auto r = finite_difference_check(params, grads, [&] {
    return hypernet_loss(f.base, hn, head, std::span<const TokenizedExample>(f.batch), mode, 11, 4);
  });
  EXPECT_LT(r.max_rel_error, kTolerance) << r.worst;
}

INSTANTIATE_TEST_SUITE_P(Modes, HypernetGradients, ::testing::Values(Mode::Eval, Mode::Train));

TEST(Gradients, Aart) {
  Fixture f(1, 3);
  auto s = AartState<double>::initialize(f.base, 3, 2, {0.1, 0.1, 0.5});
  Rng rng(4);
  hptest::jitter(s.parameters(), rng, 0.05);
  // Annotators 0 and 1 always agree, 2 always disagrees with both.
  const std::vector<std::vector<std::pair<int, int>>> votes{{{0, 1}, {1, 1}, {2, 0}}, {{0, 0}, {1, 0}, {2, 1}}};
  const AgreementGraph graph(3, votes, 0.8);
  ASSERT_TRUE(graph.positive(0, 1));
  ASSERT_FALSE(graph.positive(0, 2));
  auto grad = s.zeros_like();
  aart_loss(s, std::span<const TokenizedExample>(f.batch), graph, &grad);
  const auto r = finite_difference_check(s.parameters(), grad.parameters(), [&] {
    return aart_loss(s, std::span<const TokenizedExample>(f.batch), graph);
  }, 1e-6, kEncoderFloor);
  expect_key_bias_zero(grad.encoder);
  EXPECT_LT(r.max_rel_error, kTolerance) << r.worst;
}

TEST(Gradients, Ae) {
  Fixture f(1, 3);
  auto s = AeState<double>::initialize(f.base, 3, 2);
  Rng rng(6);
  hptest::jitter(s.parameters(), rng, 0.05);
  auto grad = s.zeros_like();
  ae_loss(s, std::span<const TokenizedExample>(f.batch), &grad);
  const auto r = finite_difference_check(s.parameters(), grad.parameters(), [&] {
    return ae_loss(s, std::span<const TokenizedExample>(f.batch));
  }, 1e-6, kEncoderFloor);
  expect_key_bias_zero(grad.encoder);
  EXPECT_LT(r.max_rel_error, kTolerance) << r.worst;
}

TEST(Gradients, SeparateLoraModel) {
  Fixture f(1, 1);
  f.base.freeze_all();
  auto m = LoraAdapterModel<double>::initialize(f.base, 2, 32.0, 9);
  Rng rng(12);
  hptest::jitter(m.parameters(), rng, 0.02);
  auto grad = m.zeros_like();
  lora_loss(f.base, m, std::span<const TokenizedExample>(f.batch), &grad);
  const auto r = finite_difference_check(m.parameters(), grad.parameters(), [&] {
    return lora_loss(f.base, m, std::span<const TokenizedExample>(f.batch));
  });
  EXPECT_LT(r.max_rel_error, kTolerance) << r.worst;
}
