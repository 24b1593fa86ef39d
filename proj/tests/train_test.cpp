// Copyright 2026 The c2f-lab Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>

#include "c2f/datagen.hpp"
#include "c2f/reward.hpp"
#include "c2f/sampling.hpp"
#include "c2f/sft.hpp"

namespace c2f {
namespace {

using synthetic::kEos;
using synthetic::kPad;
using synthetic::kSep;

TEST(SftExample, MasksPromptAndKeepsEos) {
  const ModelConfig c = desk_config();
  const TokenSequence seq{8, 30, kSep, 40, 41, kEos};
  const LMExample ex = sft_example(seq, c, 32);
  EXPECT_EQ(ex.ids, (TokenSequence{8, 30, kSep, 40, 41}));
  EXPECT_EQ(ex.targets, (std::vector<int>{-1, -1, 40, 41, kEos}));
}

TEST(SftExample, RejectsMalformed) {
  const ModelConfig c = desk_config();
  EXPECT_THROW(sft_example({8, kSep, 40}, c, 32), Error);
  EXPECT_THROW(sft_example({8, 40, kEos}, c, 32), Error);
  EXPECT_THROW(sft_example({8, kSep, 40, 41, 42, kEos}, c, 3), Error);
  try {
    sft_example({8, kSep, 40}, c, 32);
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kData);
  }
}

TEST(Sft, ZeroEpochsReturnsInit) {
  const ModelConfig c = desk_config();
  const ParameterSet init = init_params(c, 5);
  SFTConfig cfg;
  cfg.epochs = 0;
  const auto r = train_sft(init, c, gen_corpus({}, 8, 1), cfg);
  EXPECT_TRUE(bit_equal(r.params, init));
  EXPECT_EQ(r.steps, 0);
}

TEST(Sft, DeterministicInSeed) {
  const ModelConfig c = desk_config();
  const auto corpus = gen_corpus({}, 24, 3);
  SFTConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 8;
  cfg.seed = 11;
  const auto a = train_sft(init_params(c, 1), c, corpus, cfg);
  const auto b = train_sft(init_params(c, 1), c, corpus, cfg);
  EXPECT_TRUE(bit_equal(a.params, b.params));
  cfg.seed = 12;
  const auto d = train_sft(init_params(c, 1), c, corpus, cfg);
  EXPECT_FALSE(bit_equal(a.params, d.params));
}

TEST(Sft, MemorisesOneSequence) {
  const ModelConfig c = desk_config();
  const TokenSequence seq{9, 33, kSep, 35, 17, 36, 37, 20, 38, kEos};
  SFTConfig cfg;
  cfg.lr = 3e-3;
  cfg.batch_size = 1;
  cfg.epochs = 1;
  const std::vector<TokenSequence> corpus(200, seq);  // 200 optimizer steps
  const auto r = train_sft(init_params(c, 2), c, corpus, cfg);
  EXPECT_EQ(r.steps, 200);
  // Per-token loss of the final parameters on the sequence.
  const LMExample ex = sft_example(seq, c, 32);
  Tape tape;
  BoundParams p(tape, r.params, false);
  const double loss = tape.scalar(softmax_cross_entropy(forward(p, c, ex.ids).logits, ex.targets));
  EXPECT_LT(loss, 0.1);
  Rng rng(0);
  const auto g = generate(r.params, c, TokenSequence{9, 33, kSep}, {32, 0.0, false}, rng);
  EXPECT_EQ(g.tokens, (TokenSequence{35, 17, 36, 37, 20, 38, kEos}));
}

TEST(Sft, GreedyDecodingTerminates) {
  const ModelConfig c = desk_config();
  const auto corpus = gen_corpus({}, 600, 4);
  SFTConfig cfg;
  cfg.lr = 1e-3;
  cfg.epochs = 4;
  cfg.seed = 1;
  const auto r = train_sft(init_params(c, 3), c, corpus, cfg);
  ASSERT_EQ(r.epoch_losses.size(), 4u);
  EXPECT_LT(r.epoch_losses.back(), r.epoch_losses.front());
  int terminated = 0;
  const int n = 100;
  for (int i = 0; i < n; ++i) {
    const auto& seq = corpus[i];
    const auto sep = std::find(seq.begin(), seq.end(), kSep);
    const TokenSequence ctx(seq.begin(), sep + 1);
    Rng rng(0);
    terminated += generate(r.params, c, ctx, {cfg.max_response_len, 0.0, false}, rng).terminated;
  }
  EXPECT_GE(terminated, 90);
}

TEST(Pretrain, DocumentsArePackedInOrder) {
  const ModelConfig c = desk_config();
  const auto corpus = gen_corpus({}, 50, 6);
  const auto docs = pretrain_documents(corpus, c, 4);
  TokenSequence joined, flat;
  for (const auto& d : docs) {
    EXPECT_LE(d.size(), static_cast<std::size_t>(c.max_context));
    EXPECT_EQ(d.back(), kEos);
    joined.insert(joined.end(), d.begin(), d.end());
  }
  for (const auto& s : corpus) flat.insert(flat.end(), s.begin(), s.end());
  EXPECT_EQ(joined, flat);
  EXPECT_THROW(pretrain_documents(corpus, c, 0), Error);
}

TEST(Pretrain, ReducesLoss) {
  const ModelConfig c = desk_config();
  PretrainConfig cfg;
  cfg.epochs = 3;
  const auto r = pretrain_base(init_params(c, 4), c, gen_corpus({}, 240, 7), cfg);
  ASSERT_EQ(r.epoch_losses.size(), 3u);
  EXPECT_LT(r.epoch_losses.back(), r.epoch_losses.front());
  EXPECT_LT(r.epoch_losses.back(), std::log(64.0));
}

// Pairwise loss and scoring.

TEST(PairwiseLoss, KnownValues) {
  EXPECT_DOUBLE_EQ(pairwise_loss(0.3, 0.3), std::log(2.0));
  EXPECT_NEAR(pairwise_loss(1.0, 0.0), 0.31326168751822286, 1e-15);
  EXPECT_NEAR(pairwise_loss(1.0, 0.0), std::log1p(std::exp(-1.0)), 1e-15);
  EXPECT_LT(pairwise_loss(60.0, 0.0), 1e-25);
  EXPECT_GE(pairwise_loss(60.0, 0.0), 0.0);
  EXPECT_NEAR(pairwise_loss(0.0, 60.0), 60.0, 1e-12);
  EXPECT_TRUE(std::isfinite(pairwise_loss(0.0, 1e6)));
}

TEST(RewardModel, ZeroHeadScoresZero) {
  const ModelConfig c = desk_config();
  const RewardModel rm = init_reward_model(init_params(c, 1), c);
  for (const auto& p : gen_preference_pairs({}, 10, 2)) {
    EXPECT_EQ(rm.score(p.prompt, p.chosen), 0.0);
    EXPECT_EQ(rm.score(p.prompt, p.rejected), 0.0);
  }
}

RewardModel random_rm(std::uint64_t seed) {
  const ModelConfig c = desk_config();
  RewardModel rm = init_reward_model(init_params(c, seed), c);
  Rng rng(seed);
  for (double& w : rm.head.at("head.w").data) w = uniform01(rng) - 0.5;
  rm.head.at("head.b").data[0] = 0.25;
  return rm;
}

TEST(RewardModel, PadAppendInvariance) {
  const RewardModel rm = random_rm(3);
  const TokenSequence prompt{9, 30};
  const TokenSequence resp{40, 17, 41};
  const double s = rm.score(prompt, resp);
  EXPECT_EQ(rm.score(prompt, {40, 17, 41, kPad}), s);
  EXPECT_EQ(rm.score(prompt, {40, 17, 41, kPad, kPad, kPad}), s);
  EXPECT_NE(rm.score(prompt, {40, 17}), s);
}

TEST(RewardModel, ShiftInvariantLoss) {
  RewardModel rm = random_rm(4);
  const auto pairs = gen_preference_pairs({}, 5, 9);
  std::vector<double> before;
  for (const auto& p : pairs) before.push_back(pairwise_loss(rm.score(p.prompt, p.chosen), rm.score(p.prompt, p.rejected)));
  rm.head.at("head.b").data[0] += 3.0;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto& p = pairs[i];
    EXPECT_NEAR(pairwise_loss(rm.score(p.prompt, p.chosen), rm.score(p.prompt, p.rejected)), before[i], 1e-12);
  }
}

TEST(RewardModel, TapeScoreMatchesInference) {
  const RewardModel rm = random_rm(5);
  const TokenSequence seq = rm.scoring_input({9, 30}, {40, 17, 41, kEos});
  Tape tape;
  BoundParams b(tape, rm.backbone, false);
  BoundParams h(tape, rm.head, false);
  const double v = tape.value(reward_score_var(b, h, rm.config, seq))[0];
  EXPECT_NEAR(v, rm.score({9, 30}, {40, 17, 41, kEos}), 1e-12);
}

TEST(RewardModel, CombinedRoundTrip) {
  const RewardModel rm = random_rm(6);
  const RewardModel back = RewardModel::from_combined(rm.config, rm.combined());
  EXPECT_TRUE(bit_equal(back.backbone, rm.backbone));
  EXPECT_TRUE(bit_equal(back.head, rm.head));
  EXPECT_THROW(RewardModel::from_combined(rm.config, rm.backbone), Error);
}

TEST(RewardTraining, LearnsPlantedPreference) {
  const ModelConfig c = desk_config();
  RewardConfig cfg;
  cfg.seed = 3;
  cfg.heldout_fraction = 0.25;
  const auto r = train_reward(init_params(c, 8), c, gen_preference_pairs({}, 400, 10), cfg);
  EXPECT_EQ(r.n_train, 300u);
  EXPECT_EQ(r.n_heldout, 100u);
  EXPECT_GE(r.heldout_accuracy, 0.9);
  EXPECT_GE(r.heldout_accuracy_eos, 0.9);
  EXPECT_GT(r.heldout_margin, 0.0);
  ASSERT_EQ(r.epoch_losses.size(), 2u);
  EXPECT_LT(r.epoch_losses.back(), std::log(2.0));
}

TEST(RewardTraining, RejectsBadConfig) {
  const ModelConfig c = desk_config();
  RewardConfig cfg;
  cfg.heldout_fraction = 1.0;
  EXPECT_THROW(train_reward(init_params(c, 1), c, gen_preference_pairs({}, 4, 1), cfg), Error);
  EXPECT_THROW(train_reward(init_params(c, 1), c, {}, RewardConfig{}), Error);
}

}  // namespace
}  // namespace c2f
