#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "hrrformer/encoder.hpp"
#include "hrrformer/optim.hpp"
#include "hrrformer/tasks.hpp"
#include "test_support.hpp"

namespace hrrformer {
namespace {

using Td = Tensor<double>;

EncoderConfig small_config(std::size_t vocab, std::size_t len, std::size_t width, std::size_t classes) {
  EncoderConfig c;
  c.vocab_size = vocab;
  c.max_len = len;
  c.embed_dim = width;
  c.mlp_dim = width;
  c.heads = 2;
  c.layers = 1;
  c.classes = classes;
  c.dropout_rate = 0.0;
  return c;
}

double batch_loss(const ModelParams<double>& p, const EncoderConfig& c, const tasks::TaskBatch& b) {
  autograd::NoGradGuard no_grad;
  const TokenBatchView view{b.tokens, b.mask, b.batch, b.len};
  return cross_entropy_with_logits(encoder_forward(view, p, c).logits, std::span<const int>(b.labels)).item();
}

TEST(FixedPositional, ClosedFormEntries) {
  const Td pe = fixed_positional_encoding<double>(4, 6);
  const auto v = pe.to_vector();
  for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(v[i], i % 2 == 0 ? 0.0 : 1.0);
  EXPECT_NEAR(v[6], 0.8414709848078965, 1e-15);
  EXPECT_NEAR(v[7], 0.5403023058681398, 1e-15);
  for (double e : fixed_positional_encoding<double>(64, 16).to_vector()) {
    EXPECT_GE(e, -1.0);
    EXPECT_LE(e, 1.0);
  }
  EXPECT_THROW(fixed_positional_encoding<double>(4, 5), ConfigError);
}

TEST(EncoderConfig, RejectsHeadWidthThatIsNotAPowerOfTwo) {
  EncoderConfig c = small_config(10, 8, 12, 2);
  c.heads = 2;  // 6 per head
  EXPECT_THROW(c.validate(), ConfigError);
  c.heads = 5;
  EXPECT_THROW(c.validate(), ConfigError);
  c.heads = 3;  // 4 per head
  EXPECT_NO_THROW(c.validate());
}

TEST(Encoder, LogitShapeDeterminismAndTokenRange) {
  for (Positional pos : {Positional::kLearned, Positional::kFixed}) {
    EncoderConfig c = small_config(9, 8, 8, 3);
    c.positional = pos;
    c.layers = 2;
    Rng rng(1);
    const auto p = ModelParams<double>::init(c, rng);
    const std::vector<int> tokens{1, 2, 3, 4, 5, 6, 7, 8, 8, 7, 6, 5, 4, 3, 0, 0};
    const std::vector<int> mask{1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 0, 0};
    const TokenBatchView view{tokens, mask, 2, 8};
    const auto a = encoder_forward(view, p, c).logits;
    EXPECT_EQ(a.shape(), (Shape{2, 3}));
    EXPECT_EQ(a.to_vector(), encoder_forward(view, p, c).logits.to_vector());

    std::vector<int> bad = tokens;
    bad[3] = 9;
    EXPECT_THROW(encoder_forward(TokenBatchView{bad, mask, 2, 8}, p, c), IndexError);
    bad[3] = -1;
    EXPECT_THROW(encoder_forward(TokenBatchView{bad, mask, 2, 8}, p, c), IndexError);
  }
}

TEST(Encoder, AppendedPaddingLeavesLogitsUnchanged) {
  const EncoderConfig c = small_config(12, 32, 16, 4);
  Rng rng(2);
  const auto p = ModelParams<double>::init(c, rng);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t used = 1 + rng.below(16), extra = 1 + rng.below(16);
    std::vector<int> tokens(used), mask(used, 1);
    for (int& t : tokens) t = 1 + static_cast<int>(rng.below(11));
    const auto base = encoder_forward(TokenBatchView{tokens, mask, 1, used}, p, c).logits.to_vector();
    tokens.resize(used + extra, 0);
    mask.resize(used + extra, 0);
    // Pad ids need not be 0; the mask alone decides.
    for (std::size_t i = used; i < used + extra; ++i) tokens[i] = 1 + static_cast<int>(rng.below(11));
    const auto padded = encoder_forward(TokenBatchView{tokens, mask, 1, used + extra}, p, c).logits.to_vector();
    for (std::size_t i = 0; i < base.size(); ++i) EXPECT_NEAR(base[i], padded[i], 1e-5);
  }
}

TEST(Encoder, UntrainedLossIsNearMaximumEntropy) {
  EncoderConfig c = small_config(11, 32, 32, 10);
  c.heads = 4;
  double total = 0;
  for (std::uint64_t s = 0; s < 100; ++s) {
    Rng rng(100 + s);
    const auto p = ModelParams<double>::init(c, rng);
    const auto data = tasks::gen_majority(16, 32, 10, s);
    const std::vector<std::size_t> rows{0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15};
    total += batch_loss(p, c, tasks::gather(data, rows));
  }
  EXPECT_NEAR(total / 100, std::log(10.0), 0.3);
}

TEST(Encoder, LossGradientMatchesFiniteDifferencesOnParameterSubset) {
  // B=2, T=8, H=8, one layer; 32 randomly chosen scalar parameters.
  const EncoderConfig c = small_config(10, 8, 8, 3);
  Rng rng(3);
  auto p = ModelParams<double>::init(c, rng);
  const std::vector<int> tokens{1, 4, 2, 9, 3, 3, 7, 0, 5, 5, 6, 1, 8, 2, 0, 0};
  const std::vector<int> mask{1, 1, 1, 1, 1, 1, 1, 0, 1, 1, 1, 1, 1, 1, 0, 0};
  const std::vector<int> labels{2, 0};
  const TokenBatchView view{tokens, mask, 2, 8};
  auto loss = [&](const ModelParams<double>& q) {
    ForwardOptions opt;
    opt.inverse = hrr::InverseMode::kStrict;
    return cross_entropy_with_logits(encoder_forward(view, q, c, opt).logits, std::span<const int>(labels));
  };
  const Gradients<double> g = grad(loss(p));
  auto named = p.named();

  std::vector<double> analytic, numeric;
  for (int k = 0; k < 32; ++k) {
    const std::size_t which = rng.below(named.size());
    Td& slot = *named[which].second;
    const std::size_t e = rng.below(slot.size());
    analytic.push_back(g[slot][e]);
    const Td saved = slot;
    auto probe = [&](double delta) {
      std::vector<double> v = saved.to_vector();
      v[e] += delta;
      slot = Td(saved.shape(), std::span<const double>(v));
      autograd::NoGradGuard no_grad;
      return loss(p).item();
    };
    const double step = 1e-6;
    numeric.push_back((probe(step) - probe(-step)) / (2 * step));
    slot = saved;
  }
  EXPECT_LT(testing::relative_error(analytic, numeric), 1e-4);
}

TEST(Dropout, RateZeroIsIdentityAndRateMatchesFraction) {
  Rng rng(4);
  const Td x = testing::uniform_tensor({100000}, rng, 1.0, 2.0);
  EXPECT_EQ(dropout(x, 0.0, rng).to_vector(), x.to_vector());
  for (double rate : {0.1, 0.3, 0.5}) {
    const auto y = dropout(x, rate, rng).to_vector();
    const auto xv = x.to_vector();
    std::size_t zeros = 0;
    for (std::size_t i = 0; i < y.size(); ++i) {
      if (y[i] == 0.0) {
        ++zeros;
      } else {
        EXPECT_NEAR(y[i], xv[i] / (1 - rate), 1e-12);
      }
    }
    EXPECT_NEAR(static_cast<double>(zeros) / 100000.0, rate, 0.02);
  }
  EXPECT_THROW(dropout(x, 1.0, rng), ConfigError);
}

TEST(LrSchedule, ExponentialDecayWithFloor) {
  EXPECT_DOUBLE_EQ(exponential_lr(0), 1e-3);
  EXPECT_DOUBLE_EQ(exponential_lr(1), 0.95e-3);
  EXPECT_DOUBLE_EQ(exponential_lr(10), 1e-3 * std::pow(0.95, 10));
  EXPECT_DOUBLE_EQ(exponential_lr(1000), 1e-5);
  for (std::size_t e = 0; e < 200; ++e) EXPECT_LE(exponential_lr(e + 1), exponential_lr(e));
}

TEST(TrainStep, ZeroLearningRateLeavesParametersUnchanged) {
  const EncoderConfig c = small_config(10, 8, 8, 3);
  Rng rng(5), drop(6);
  auto p = ModelParams<double>::init(c, rng);
  std::vector<std::vector<double>> before;
  for (const auto& [name, t] : p.named()) before.push_back(t->to_vector());
  Adam<double> opt(p);
  const auto data = tasks::gen_majority(8, 8, 3, 7);
  const auto batch = tasks::gather(data, std::vector<std::size_t>{0, 1, 2, 3});
  train_step(p, batch, c, opt, 0.0, drop, 0);
  std::size_t i = 0;
  for (const auto& [name, t] : p.named()) EXPECT_EQ(t->to_vector(), before[i++]) << name;
}

TEST(TrainStep, OneStepOnSeparableToyBatchDecreasesLoss) {
  const EncoderConfig c = small_config(4, 4, 8, 2);
  Rng rng(8), drop(9);
  auto p = ModelParams<double>::init(c, rng);
  Adam<double> opt(p);
  tasks::TaskBatch b;
  b.batch = 2;
  b.len = 4;
  b.tokens = {1, 1, 1, 1, 2, 2, 2, 2};
  b.mask.assign(8, 1);
  b.labels = {0, 1};
  const double before = batch_loss(p, c, b);
  const StepResult r = train_step(p, b, c, opt, 1e-2, drop, 0);
  EXPECT_NEAR(r.loss, before, 1e-12);
  EXPECT_LT(batch_loss(p, c, b), before);
}

TEST(TrainStep, FiftyStepsOnRecallMicroTaskHalveTheLoss) {
  EncoderConfig c = small_config(8, 8, 16, 4);
  const auto data = tasks::gen_keyvalue_recall(32, 8, 2, 8, 10);
  Rng rng(11), drop(12);
  auto p = ModelParams<double>::init(c, rng);
  Adam<double> opt(p);
  std::vector<std::size_t> rows(32);
  for (std::size_t i = 0; i < 32; ++i) rows[i] = i;
  const auto batch = tasks::gather(data, rows);
  const double first = batch_loss(p, c, batch);
  for (std::size_t s = 0; s < 50; ++s) train_step(p, batch, c, opt, 1e-2, drop, s);
  EXPECT_LE(batch_loss(p, c, batch), 0.5 * first);
}

TEST(TrainStep, NonFiniteLossIsDivergenceWithStepIndex) {
  const EncoderConfig c = small_config(4, 4, 8, 2);
  Rng rng(13), drop(14);
  auto p = ModelParams<double>::init(c, rng);
  Adam<double> opt(p);
  std::vector<double> huge(p.head_b2.size(), 0.0);
  huge[0] = std::numeric_limits<double>::infinity();
  p.head_b2 = Td::parameter(Td(p.head_b2.shape(), std::span<const double>(huge)));
  tasks::TaskBatch b;
  b.batch = 1;
  b.len = 4;
  b.tokens = {1, 2, 3, 1};
  b.mask.assign(4, 1);
  b.labels = {1};
  try {
    train_step(p, b, c, opt, 1e-3, drop, 17);
    FAIL() << "expected DivergenceError";
  } catch (const DivergenceError& e) {
    EXPECT_EQ(e.step(), 17u);
  }
}

}  // namespace
}  // namespace hrrformer
