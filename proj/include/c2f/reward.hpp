// Copyright 2026 The c2f-lab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Scalar reward model: transformer backbone plus a linear head read at the
// final non-PAD position of `prompt SEP response`, trained with the pairwise
// logistic loss -log sigmoid(s_chosen - s_rejected).

#ifndef C2F_REWARD_HPP_
#define C2F_REWARD_HPP_

#include <cmath>
#include <string>
#include <vector>

#include "c2f/datagen.hpp"
#include "c2f/model.hpp"
#include "c2f/optim.hpp"
#include "c2f/sft.hpp"

namespace c2f {

// softplus(-(s_c - s_r)).
inline double pairwise_loss(double score_chosen, double score_rejected) {
  return softplus(score_rejected - score_chosen);
}

struct RewardModel {
  ModelConfig config;
  ParameterSet backbone;
  ParameterSet head;  // "head.w" [d x 1], "head.b" [1]

  // prompt SEP response with trailing PAD removed.
  TokenSequence scoring_input(const TokenSequence& prompt, const TokenSequence& response) const {
    TokenSequence seq = join_prompt_response(prompt, config.sep_token_id, response);
    while (!seq.empty() && seq.back() == config.pad_token_id) seq.pop_back();
    check_sequence(config, seq);
    return seq;
  }

  double score(const TokenSequence& prompt, const TokenSequence& response) const {
    const TokenSequence seq = scoring_input(prompt, response);
    InferenceSession s(backbone, config);
    for (TokenId t : seq) s.step(t);
    const auto h = s.hidden();
    const auto& w = head.at("head.w").data;
    double v = head.at("head.b").data[0];
    for (std::size_t j = 0; j < h.size(); ++j) v += h[j] * w[j];
    return v;
  }

  // Backbone tensors followed by the head, the on-disk layout.
  ParameterSet combined() const {
    ParameterSet all = backbone;
    all.append(head);
    return all;
  }

  static RewardModel from_combined(const ModelConfig& config, const ParameterSet& all) {
    RewardModel rm{config, {}, {}};
    for (const auto& e : all) {
      if (e.name.rfind("head.", 0) == 0)
        rm.head.add(e.name, e.tensor);
      else
        rm.backbone.add(e.name, e.tensor);
    }
    if (rm.backbone.manifest() != init_params(config, 0).manifest() || !rm.head.find("head.w") ||
        !rm.head.find("head.b"))
      throw data_error("reward model: parameter layout does not match config");
    return rm;
  }
};

inline RewardModel init_reward_model(const ParameterSet& backbone, const ModelConfig& config) {
  return RewardModel{config, backbone, init_scalar_head(config)};
}

// Score of the final position, recorded on `tape`.
inline Var reward_score_var(const BoundParams& backbone, const BoundParams& head,
                            const ModelConfig& config, const TokenSequence& seq) {
  Var hidden = forward(backbone, config, seq, false).hidden;
  const std::size_t last = seq.size() - 1;
  return apply_scalar_head(head, select_rows(hidden, std::span<const std::size_t>(&last, 1)));
}

struct RewardConfig {
  double lr = 3e-4;
  std::size_t batch_size = 16;
  int epochs = 2;
  double heldout_fraction = 0.2;
  double weight_decay = 0.0;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(lr > 0.0)) throw config_error("reward: lr must be > 0");
    if (batch_size == 0) throw config_error("reward: batch_size must be > 0");
    if (epochs < 0) throw config_error("reward: epochs must be >= 0");
    if (!(heldout_fraction >= 0.0 && heldout_fraction < 1.0))
      throw config_error("reward: heldout_fraction must be in [0, 1)");
  }
};

struct RewardTrainResult {
  RewardModel model;
  double heldout_accuracy = 0.0;      // on EOS-stripped held-out pairs
  double heldout_accuracy_eos = 0.0;  // on the original held-out pairs
  double heldout_margin = 0.0;        // mean(s_chosen - s_rejected), stripped
  std::vector<double> epoch_losses;
  std::size_t n_train = 0;
  std::size_t n_heldout = 0;
};

struct PairwiseEval {
  double accuracy = 0.0;
  double mean_margin = 0.0;
  double mean_loss = 0.0;
};

inline PairwiseEval evaluate_pairs(const RewardModel& rm, const std::vector<PreferencePair>& pairs) {
  PairwiseEval e;
  if (pairs.empty()) return e;
  for (const auto& p : pairs) {
    const double m = rm.score(p.prompt, p.chosen) - rm.score(p.prompt, p.rejected);
    e.accuracy += m > 0.0;
    e.mean_margin += m;
    e.mean_loss += softplus(-m);
  }
  const double n = static_cast<double>(pairs.size());
  e.accuracy /= n;
  e.mean_margin /= n;
  e.mean_loss /= n;
  return e;
}

// Trains on both the EOS-terminated and the EOS-stripped form of every pair
// (a seeded coin picks the form per pair per epoch). The last
// heldout_fraction of `pairs` is held out.
inline RewardTrainResult train_reward(const ParameterSet& init_backbone, const ModelConfig& config,
                                      const std::vector<PreferencePair>& pairs,
                                      const RewardConfig& cfg) {
  cfg.validate();
  if (pairs.empty()) throw data_error("reward: no preference pairs");
  const std::size_t n_held =
      static_cast<std::size_t>(std::floor(cfg.heldout_fraction * static_cast<double>(pairs.size())));
  const std::size_t n_train = pairs.size() - n_held;
  if (n_train == 0) throw data_error("reward: no training pairs after the held-out split");
  const std::vector<PreferencePair> train(pairs.begin(), pairs.begin() + n_train);
  const std::vector<PreferencePair> held(pairs.begin() + n_train, pairs.end());
  const auto train_stripped = strip_stop_tokens(train, config.eos_token_id);

  RewardTrainResult out;
  out.model = init_reward_model(init_backbone, config);
  out.n_train = n_train;
  out.n_heldout = n_held;
  ParameterSet all = out.model.combined();
  const std::size_t n_backbone = out.model.backbone.size();
  AdamW opt({.lr = cfg.lr, .weight_decay = cfg.weight_decay});
  Rng rng(cfg.seed);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto order = detail::shuffled_indices(n_train, rng);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < n_train; start += cfg.batch_size) {
      const std::size_t end = std::min(n_train, start + cfg.batch_size);
      const double w = 1.0 / static_cast<double>(end - start);
      ParameterSet grads = all.zeros_like();
      for (std::size_t k = start; k < end; ++k) {
        const bool stripped = (rng() & 1u) != 0;
        const PreferencePair& p = stripped ? train_stripped[order[k]] : train[order[k]];
        const auto chosen = out.model.scoring_input(p.prompt, p.chosen);
        const auto rejected = out.model.scoring_input(p.prompt, p.rejected);
        Tape tape;
        BoundParams b(tape, all, true);
        Var sc = reward_score_var(b, b.tail(n_backbone), config, chosen);
        Var sr = reward_score_var(b, b.tail(n_backbone), config, rejected);
        Var loss = softplus(sub(sr, sc));
        const double lv = tape.scalar(loss);
        if (!std::isfinite(lv))
          throw numeric_error("reward: non-finite loss at epoch " + std::to_string(epoch));
        loss_sum += lv;
        tape.backward(loss);
        b.accumulate_grads(tape, grads, w);
      }
      opt.step(all, grads);
    }
    out.epoch_losses.push_back(loss_sum / static_cast<double>(n_train));
  }
  out.model = RewardModel::from_combined(config, all);
  if (!held.empty()) {
    const auto e = evaluate_pairs(out.model, strip_stop_tokens(held, config.eos_token_id));
    out.heldout_accuracy = e.accuracy;
    out.heldout_margin = e.mean_margin;
    out.heldout_accuracy_eos = evaluate_pairs(out.model, held).accuracy;
  }
  return out;
}

}  // namespace c2f

#endif  // C2F_REWARD_HPP_
