// Copyright 2026 The c2f-lab Authors
// SPDX-License-Identifier: Apache-2.0
//
// PPO actor-critic: rollouts with KL-to-reference shaping, GAE, the clipped
// surrogate and the squared-error value loss.
//
// Reward placement: every response token t gets -kl_coef * (logp_t - ref_logp_t);
// the final token additionally gets the reward-model score.
//
// The critic is a linear value head over the policy's final hidden states,
// computed with the policy snapshot taken at rollout time and cached on the
// trajectory. Only the head is trained by the value loss.

#ifndef C2F_PPO_HPP_
#define C2F_PPO_HPP_

#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "c2f/model.hpp"
#include "c2f/optim.hpp"
#include "c2f/sampling.hpp"
#include "c2f/sft.hpp"

namespace c2f {

struct RLHFConfig {
  double lr_actor = 1e-3;
  double lr_critic = 1e-5;
  double clip_epsilon = 0.2;
  double discount_factor = 0.95;
  double gae_lambda = 0.95;
  double kl_coef = 0.05;
  std::size_t rollout_batch = 16;
  int ppo_epochs = 2;
  std::size_t minibatch_size = 0;  // 0: the whole rollout batch
  bool normalize_advantages = true;
  double temperature = 1.0;
  std::uint64_t seed = 0;

  // Absolute learning rates of the 7B-scale recipe.
  static RLHFConfig large_model_preset() {
    RLHFConfig c;
    c.lr_actor = 5e-6;
    c.lr_critic = 5e-7;
    return c;
  }

  void validate() const {
    if (!(lr_actor > 0.0) || !(lr_critic > 0.0)) throw config_error("rlhf: learning rates must be > 0");
    if (!(clip_epsilon > 0.0 && clip_epsilon < 1.0)) throw config_error("rlhf: clip_epsilon must be in (0, 1)");
    if (!(discount_factor > 0.0 && discount_factor <= 1.0))
      throw config_error("rlhf: discount_factor must be in (0, 1]");
    if (!(gae_lambda >= 0.0 && gae_lambda <= 1.0)) throw config_error("rlhf: gae_lambda must be in [0, 1]");
    if (!(kl_coef >= 0.0)) throw config_error("rlhf: kl_coef must be >= 0");
    if (rollout_batch == 0) throw config_error("rlhf: rollout_batch must be > 0");
    if (ppo_epochs < 1) throw config_error("rlhf: ppo_epochs must be >= 1");
    if (!(temperature > 0.0)) throw config_error("rlhf: temperature must be > 0");
  }
};

struct Trajectory {
  TokenSequence prompt;    // as supplied, without system prefix or separator
  TokenSequence context;   // what the policy was conditioned on
  TokenSequence response;  // a_1..a_T
  std::vector<double> old_logp;
  std::vector<double> ref_logp;
  std::vector<double> values;
  std::vector<double> rewards;
  std::vector<double> advantages;
  std::vector<double> returns;
  Tensor features;  // [T x d] hidden states feeding the critic
  double score = 0.0;
  double kl = 0.0;  // sum_t (logp_t - ref_logp_t)

  std::size_t length() const { return response.size(); }
  double total_reward() const {
    double s = 0.0;
    for (double r : rewards) s += r;
    return s;
  }
};

struct GaeResult {
  std::vector<double> advantages;
  std::vector<double> returns;
};

// delta_t = r_t + discount * V_{t+1} - V_t with V_T = 0;
// A_t = delta_t + discount * lambda * A_{t+1}; returns = A + V.
inline GaeResult compute_gae(std::span<const double> rewards, std::span<const double> values,
                             double discount_factor, double gae_lambda) {
  if (rewards.size() != values.size()) throw config_error("gae: rewards and values differ in length");
  const std::size_t n = rewards.size();
  GaeResult g{std::vector<double>(n), std::vector<double>(n)};
  double next_adv = 0.0;
  for (std::size_t k = n; k-- > 0;) {
    const double next_v = k + 1 < n ? values[k + 1] : 0.0;
    const double delta = rewards[k] + discount_factor * next_v - values[k];
    next_adv = delta + discount_factor * gae_lambda * next_adv;
    g.advantages[k] = next_adv;
    g.returns[k] = next_adv + values[k];
  }
  return g;
}

// 0.5 * mean((R - V)^2).
inline double value_loss(std::span<const double> values, std::span<const double> returns) {
  if (values.size() != returns.size() || values.empty()) throw config_error("value_loss: misaligned arrays");
  double s = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) s += (returns[i] - values[i]) * (returns[i] - values[i]);
  return 0.5 * s / static_cast<double>(values.size());
}

// [system prefix] prompt SEP.
inline TokenSequence policy_context(const ModelConfig& config, const TokenSequence& prompt,
                                    bool system_prompt) {
  TokenSequence ctx;
  if (system_prompt) ctx = config.system_prefix_ids;
  ctx.insert(ctx.end(), prompt.begin(), prompt.end());
  ctx.push_back(config.sep_token_id);
  return ctx;
}

struct ResponseVars {
  Var logp;    // [T]
  Var hidden;  // [T x d]
};

// Log-probabilities of `response` after `context` and the hidden states that
// predicted each response token.
inline ResponseVars response_vars(const BoundParams& p, const ModelConfig& config,
                                  const TokenSequence& context, const TokenSequence& response,
                                  const std::optional<TokenId>& banned) {
  const TokenSequence seq = concat(context, response);
  ForwardVars f = forward(p, config, seq);
  std::vector<std::size_t> rows(response.size());
  for (std::size_t t = 0; t < rows.size(); ++t) rows[t] = context.size() - 1 + t;
  return {log_softmax_gather(select_rows(f.logits, rows), response, banned),
          select_rows(f.hidden, rows)};
}

inline std::vector<double> response_logprobs(const ParameterSet& params, const ModelConfig& config,
                                             const TokenSequence& context,
                                             const TokenSequence& response,
                                             const std::optional<TokenId>& banned) {
  Tape tape;
  BoundParams p(tape, params, false);
  auto v = tape.value(response_vars(p, config, context, response, banned).logp);
  return {v.begin(), v.end()};
}

using RewardFn = std::function<double(const TokenSequence& prompt, const TokenSequence& response)>;

struct RolloutOptions {
  std::size_t max_new_tokens = 16;
  double temperature = 1.0;
  bool suppress_eos = false;
  bool system_prompt = false;
};

// Samples one response per prompt and fills everything but advantages and
// returns. The reward function sees the raw prompt and the response with any
// EOS removed.
inline std::vector<Trajectory> rollout(const ParameterSet& policy, const ParameterSet& ref_policy,
                                       const ParameterSet& critic_head, const ModelConfig& config,
                                       const RewardFn& reward_fn,
                                       const std::vector<TokenSequence>& prompts,
                                       const RolloutOptions& opts, double kl_coef, Rng& rng) {
  const std::optional<TokenId> banned =
      opts.suppress_eos ? std::optional<TokenId>(config.eos_token_id) : std::nullopt;
  std::vector<Trajectory> out;
  out.reserve(prompts.size());
  for (const auto& prompt : prompts) {
    Trajectory tr;
    tr.prompt = prompt;
    tr.context = policy_context(config, prompt, opts.system_prompt);
    Generation g = generate(policy, config, tr.context,
                            {opts.max_new_tokens, opts.temperature, opts.suppress_eos}, rng);
    tr.response = std::move(g.tokens);
    {
      Tape tape;
      BoundParams p(tape, policy, false);
      BoundParams h(tape, critic_head, false);
      ResponseVars rv = response_vars(p, config, tr.context, tr.response, banned);
      auto lp = tape.value(rv.logp);
      tr.old_logp.assign(lp.begin(), lp.end());
      tr.features = tape.tensor(rv.hidden);
      auto vals = tape.value(apply_scalar_head(h, rv.hidden));
      tr.values.assign(vals.begin(), vals.end());
    }
    tr.ref_logp = response_logprobs(ref_policy, config, tr.context, tr.response, banned);
    tr.score = reward_fn(prompt, strip_token(tr.response, config.eos_token_id));
    if (!std::isfinite(tr.score)) throw numeric_error("rollout: non-finite reward score");
    tr.rewards.assign(tr.length(), 0.0);
    for (std::size_t t = 0; t < tr.length(); ++t) {
      const double d = tr.old_logp[t] - tr.ref_logp[t];
      tr.kl += d;
      tr.rewards[t] = -kl_coef * d;
    }
    tr.rewards.back() += tr.score;
    out.push_back(std::move(tr));
  }
  return out;
}

// Fills advantages and returns; optionally normalises advantages over every
// token of the batch (a standard-deviation below 1e-12 only centres them).
inline void assign_advantages(std::vector<Trajectory>& trajs, const RLHFConfig& cfg) {
  double sum = 0.0, sum_sq = 0.0;
  std::size_t n = 0;
  for (auto& tr : trajs) {
    auto g = compute_gae(tr.rewards, tr.values, cfg.discount_factor, cfg.gae_lambda);
    tr.advantages = std::move(g.advantages);
    tr.returns = std::move(g.returns);
    for (double a : tr.advantages) {
      sum += a;
      sum_sq += a * a;
      ++n;
    }
  }
  if (!cfg.normalize_advantages || n == 0) return;
  const double mean = sum / static_cast<double>(n);
  const double var = std::max(0.0, sum_sq / static_cast<double>(n) - mean * mean);
  const double sd = std::sqrt(var);
  for (auto& tr : trajs)
    for (double& a : tr.advantages) a = sd > 1e-12 ? (a - mean) / sd : a - mean;
}

struct PPOStats {
  double mean_ratio = 0.0;
  double clip_fraction = 0.0;
  double first_pass_max_ratio_dev = 0.0;  // max |r - 1| on the first minibatch pass
  double first_pass_clip_fraction = 0.0;
  double kl = 0.0;           // mean sum_t (logp - ref_logp) per trajectory
  double reward_mean = 0.0;  // mean reward-model score
  double critic_loss = 0.0;  // value loss of the rollout values against the returns
  double policy_loss = 0.0;  // mean over minibatch passes
  double mean_len = 0.0;
};

struct PPOOptimizers {
  explicit PPOOptimizers(const RLHFConfig& cfg)
      : actor({.lr = cfg.lr_actor}), critic({.lr = cfg.lr_critic}) {}
  AdamW actor;
  AdamW critic;
};

// ppo_epochs passes of minibatch AdamW over `trajs` (advantages assigned
// here). A non-finite loss or gradient restores the parameters held at the
// start of the failing epoch and throws.
inline PPOStats ppo_update(ParameterSet& policy, ParameterSet& critic_head, const ModelConfig& config,
                           std::vector<Trajectory>& trajs, const RLHFConfig& cfg,
                           PPOOptimizers& opt, const std::optional<TokenId>& banned, Rng& rng) {
  cfg.validate();
  if (trajs.empty()) throw config_error("ppo_update: no trajectories");
  assign_advantages(trajs, cfg);
  PPOStats st;
  std::size_t total_tokens = 0;
  double critic_sum = 0.0;
  for (const auto& tr : trajs) {
    if (tr.old_logp.size() != tr.length() || tr.length() == 0)
      throw config_error("ppo_update: trajectory without frozen log-probs");
    st.kl += tr.kl;
    st.reward_mean += tr.score;
    st.mean_len += static_cast<double>(tr.length());
    critic_sum += value_loss(tr.values, tr.returns) * static_cast<double>(tr.length());
    total_tokens += tr.length();
  }
  const double n_traj = static_cast<double>(trajs.size());
  st.kl /= n_traj;
  st.reward_mean /= n_traj;
  st.mean_len /= n_traj;
  st.critic_loss = critic_sum / static_cast<double>(total_tokens);

  const std::size_t mb = cfg.minibatch_size == 0 ? trajs.size() : cfg.minibatch_size;
  std::size_t ratio_count = 0, clipped = 0, passes = 0;
  double ratio_sum = 0.0;
  bool first_pass = true;
  for (int epoch = 0; epoch < cfg.ppo_epochs; ++epoch) {
    const ParameterSet policy_backup = policy;
    const ParameterSet critic_backup = critic_head;
    try {
      const auto order = detail::shuffled_indices(trajs.size(), rng);
      for (std::size_t start = 0; start < order.size(); start += mb) {
        const std::size_t end = std::min(order.size(), start + mb);
        std::size_t mb_tokens = 0;
        for (std::size_t k = start; k < end; ++k) mb_tokens += trajs[order[k]].length();
        ParameterSet pg = policy.zeros_like();
        ParameterSet cg = critic_head.zeros_like();
        double mb_loss = 0.0;
        std::size_t mb_clipped = 0;
        for (std::size_t k = start; k < end; ++k) {
          const Trajectory& tr = trajs[order[k]];
          const double w = static_cast<double>(tr.length()) / static_cast<double>(mb_tokens);
          {
            Tape tape;
            BoundParams p(tape, policy, true);
            Var new_logp = response_vars(p, config, tr.context, tr.response, banned).logp;
            Var loss = clipped_policy_loss(new_logp, tr.old_logp, tr.advantages, cfg.clip_epsilon);
            const double lv = tape.scalar(loss);
            if (!std::isfinite(lv)) throw numeric_error("ppo: non-finite policy loss");
            auto nl = tape.value(new_logp);
            for (std::size_t t = 0; t < nl.size(); ++t) {
              const double r = std::exp(nl[t] - tr.old_logp[t]);
              ratio_sum += r;
              ++ratio_count;
              const bool c = r < 1.0 - cfg.clip_epsilon || r > 1.0 + cfg.clip_epsilon;
              clipped += c;
              mb_clipped += c;
              if (first_pass)
                st.first_pass_max_ratio_dev = std::max(st.first_pass_max_ratio_dev, std::abs(r - 1.0));
            }
            mb_loss += w * lv;
            tape.backward(loss);
            p.accumulate_grads(tape, pg, w);
          }
          {
            Tape tape;
            BoundParams h(tape, critic_head, true);
            Var loss = half_mse(apply_scalar_head(h, tape.constant(tr.features)), tr.returns);
            if (!std::isfinite(tape.scalar(loss))) throw numeric_error("ppo: non-finite value loss");
            tape.backward(loss);
            h.accumulate_grads(tape, cg, w);
          }
        }
        if (first_pass) st.first_pass_clip_fraction = static_cast<double>(mb_clipped) / mb_tokens;
        first_pass = false;
        opt.actor.step(policy, pg);
        opt.critic.step(critic_head, cg);
        st.policy_loss += mb_loss;
        ++passes;
      }
    } catch (const Error& e) {
      policy = policy_backup;
      critic_head = critic_backup;
      if (e.kind() == ErrorKind::kNumeric)
        throw numeric_error(std::string(e.what()) + " (epoch " + std::to_string(epoch) +
                            " aborted, parameters restored)");
      throw;
    }
  }
  st.mean_ratio = ratio_sum / static_cast<double>(std::max<std::size_t>(ratio_count, 1));
  st.clip_fraction = static_cast<double>(clipped) / static_cast<double>(std::max<std::size_t>(ratio_count, 1));
  st.policy_loss /= static_cast<double>(std::max<std::size_t>(passes, 1));
  return st;
}

}  // namespace c2f

#endif  // C2F_PPO_HPP_
