// Copyright 2026 The c2f-lab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Coarse actor: PPO on the base model with EOS-suppressed sampling, the
// system-prompt prefix and a Continuous-Maximization length scheduler.
//
// Scheduler. After every rollout batch the batch reward mean and critic loss
// enter windows of the last W values. Once both windows are full the gate is
//   hard:     std(rewards) <= tau_R  and  std(critic) <= tau_V
//   logistic: sigmoid(k (tau_R - std_R)) * sigmoid(k (tau_V - std_V)) > 0.5
// and an open gate raises the limit by delta_l, clamped at l_max. The limit
// never decreases. Standard deviations are population (divide by W).

#ifndef C2F_COARSE_HPP_
#define C2F_COARSE_HPP_

#include <cmath>
#include <deque>
#include <limits>
#include <string>
#include <vector>

#include "c2f/datagen.hpp"
#include "c2f/model.hpp"
#include "c2f/ppo.hpp"
#include "c2f/sampling.hpp"

namespace c2f {

enum class GateMode { kHard, kLogistic };

inline std::string gate_mode_name(GateMode m) { return m == GateMode::kHard ? "hard" : "logistic"; }

inline GateMode parse_gate_mode(const std::string& s) {
  if (s == "hard") return GateMode::kHard;
  if (s == "logistic") return GateMode::kLogistic;
  throw config_error("cm: unknown gate_mode \"" + s + "\" (expected hard or logistic)");
}

// Context reserved for [system prefix] prompt SEP when l_max is derived.
inline constexpr int kPromptBudget = 16;

struct CMConfig {
  int l_init = 16;
  int l_max = 0;  // 0: max_context - kPromptBudget
  int delta_l = 16;
  std::size_t window = 5;
  double reward_std_threshold = 0.25;
  double critic_fluct_threshold = 0.25;
  GateMode gate_mode = GateMode::kHard;
  double logistic_slope = 10.0;

  int resolved_l_max(const ModelConfig& config) const {
    return l_max > 0 ? l_max : config.max_context - kPromptBudget;
  }

  // Thresholds may be 0 (never open, barring exactly constant metrics) or
  // +infinity (always open).
  void validate(const ModelConfig& config) const {
    const int lm = resolved_l_max(config);
    if (!(l_init > 0 && l_init <= lm)) throw config_error("cm: need 0 < l_init <= l_max");
    if (lm > config.max_context) throw config_error("cm: l_max exceeds max_context");
    if (delta_l <= 0) throw config_error("cm: delta_l must be > 0");
    if (window < 2) throw config_error("cm: window must be >= 2");
    if (!(reward_std_threshold >= 0.0) || !(critic_fluct_threshold >= 0.0))
      throw config_error("cm: thresholds must be >= 0");
    if (!(logistic_slope > 0.0)) throw config_error("cm: logistic_slope must be > 0");
  }
};

struct CMState {
  int limit = 0;
  std::deque<double> rewards;
  std::deque<double> critic_losses;
  long t = 0;
  std::size_t discarded = 0;
  // Diagnostics of the most recent step.
  double reward_std = std::numeric_limits<double>::quiet_NaN();
  double critic_std = std::numeric_limits<double>::quiet_NaN();
  bool stable = false;
};

inline CMState cm_init(const CMConfig& cfg) {
  CMState s;
  s.limit = cfg.l_init;
  return s;
}

inline double population_std(const std::deque<double>& xs) {
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  double var = 0.0;
  for (double x : xs) var += (x - mean) * (x - mean);
  return std::sqrt(var / static_cast<double>(xs.size()));
}

inline CMState cm_step(CMState state, double reward_mean, double critic_loss, const CMConfig& cfg,
                       int l_max) {
  ++state.t;
  state.stable = false;
  if (!std::isfinite(reward_mean) || !std::isfinite(critic_loss)) {
    ++state.discarded;
    return state;
  }
  state.rewards.push_back(reward_mean);
  state.critic_losses.push_back(critic_loss);
  while (state.rewards.size() > cfg.window) state.rewards.pop_front();
  while (state.critic_losses.size() > cfg.window) state.critic_losses.pop_front();
  if (state.rewards.size() < cfg.window) {
    state.reward_std = std::numeric_limits<double>::quiet_NaN();
    state.critic_std = std::numeric_limits<double>::quiet_NaN();
    return state;
  }
  state.reward_std = population_std(state.rewards);
  state.critic_std = population_std(state.critic_losses);
  if (cfg.gate_mode == GateMode::kHard) {
    state.stable = state.reward_std <= cfg.reward_std_threshold &&
                   state.critic_std <= cfg.critic_fluct_threshold;
  } else {
    const double k = cfg.logistic_slope;
    state.stable = sigmoid(k * (cfg.reward_std_threshold - state.reward_std)) *
                       sigmoid(k * (cfg.critic_fluct_threshold - state.critic_std)) >
                   0.5;
  }
  if (state.stable) state.limit = std::min(state.limit + cfg.delta_l, l_max);
  return state;
}

inline CMState cm_step(const CMState& state, double reward_mean, double critic_loss,
                       const CMConfig& cfg, const ModelConfig& config) {
  return cm_step(state, reward_mean, critic_loss, cfg, cfg.resolved_l_max(config));
}

inline bool has_system_prefix(const TokenSequence& seq, const ModelConfig& config) {
  const auto& pre = config.system_prefix_ids;
  return !pre.empty() && seq.size() >= pre.size() && std::equal(pre.begin(), pre.end(), seq.begin());
}

// Prepends the system prompt. `response_budget` tokens (normally l_init) must
// still fit in the context afterwards.
inline TokenSequence apply_system_prompt(const TokenSequence& prompt, const ModelConfig& config,
                                         int response_budget) {
  if (has_system_prefix(prompt, config))
    throw config_error("system prompt: prefix already applied");
  TokenSequence out = config.system_prefix_ids;
  out.insert(out.end(), prompt.begin(), prompt.end());
  if (static_cast<long>(out.size()) > static_cast<long>(config.max_context) - response_budget) {
    throw config_error("system prompt: " + std::to_string(out.size()) +
                       " prompt tokens leave no room for " + std::to_string(response_budget) +
                       " response tokens");
  }
  return out;
}

// Samples exactly `length_limit` tokens after `prompt`, which must already
// carry the system prefix. EOS has probability 0 at every step.
inline TokenSequence suppressed_sample(const ParameterSet& policy, const ModelConfig& config,
                                       const TokenSequence& prompt, std::size_t length_limit,
                                       double temperature, std::uint64_t seed) {
  if (!has_system_prefix(prompt, config))
    throw config_error("suppressed_sample: prompt lacks the system prefix");
  if (length_limit == 0) throw config_error("suppressed_sample: length_limit must be >= 1");
  Rng rng(seed);
  return generate(policy, config, prompt, {length_limit, temperature, true}, rng).tokens;
}

struct CMTraceRow {
  long t = 0;
  int limit = 0;  // limit used for batch t
  double reward_mean = 0.0;
  double reward_std_w = 0.0;
  double critic_loss = 0.0;
  double critic_std_w = 0.0;
  bool stable = false;
  double mean_len = 0.0;
  std::size_t eos_count = 0;
};

struct PPOStepRow {
  long step = 0;
  PPOStats stats;
};

struct CoarseResult {
  ParameterSet params;
  ParameterSet critic_head;
  std::vector<CMTraceRow> trace;
  std::vector<PPOStepRow> ppo_log;
  int final_limit = 0;
};

struct CoarseOptions {
  int steps = 80;
  bool suppress_eos = true;
  bool system_prompt = true;
};

// PPO from `base` against `reward_fn`. Batch t samples with limit l(t-1) and
// then feeds its reward mean and critic loss to the scheduler. Prompts come
// from the EOS-stripped preference pairs, cycled in seeded shuffles.
inline CoarseResult train_coarse(const ParameterSet& base, const ModelConfig& config,
                                 const RewardFn& reward_fn,
                                 const std::vector<PreferencePair>& pairs_stripped,
                                 const RLHFConfig& rlhf, const CMConfig& cm,
                                 const CoarseOptions& opts = {}) {
  rlhf.validate();
  cm.validate(config);
  if (opts.steps < 0) throw config_error("coarse: steps must be >= 0");
  if (pairs_stripped.empty()) throw data_error("coarse: no prompts");
  for (const auto& p : pairs_stripped)
    for (const auto* s : {&p.prompt, &p.chosen, &p.rejected})
      if (std::find(s->begin(), s->end(), config.eos_token_id) != s->end())
        throw data_error("coarse: training pairs still contain EOS; strip stop tokens first");
  const int l_max = cm.resolved_l_max(config);
  for (const auto& p : pairs_stripped) {
    const std::size_t ctx = (opts.system_prompt ? config.system_prefix_ids.size() : 0) + p.prompt.size() + 1;
    if (ctx + static_cast<std::size_t>(l_max) > static_cast<std::size_t>(config.max_context))
      throw config_error("coarse: prompt of " + std::to_string(p.prompt.size()) +
                         " tokens does not leave room for l_max");
  }

  CoarseResult out;
  out.params = base;
  out.critic_head = init_scalar_head(config);
  PPOOptimizers opt(rlhf);
  Rng rng(rlhf.seed);
  CMState state = cm_init(cm);
  const std::optional<TokenId> banned =
      opts.suppress_eos ? std::optional<TokenId>(config.eos_token_id) : std::nullopt;
  std::vector<std::size_t> order;
  std::size_t cursor = 0;
  for (long step = 1; step <= opts.steps; ++step) {
    std::vector<TokenSequence> prompts;
    while (prompts.size() < rlhf.rollout_batch) {
      if (cursor == order.size()) {
        order = detail::shuffled_indices(pairs_stripped.size(), rng);
        cursor = 0;
      }
      prompts.push_back(pairs_stripped[order[cursor++]].prompt);
    }
    const int limit = state.limit;
    RolloutOptions ro{static_cast<std::size_t>(limit), rlhf.temperature, opts.suppress_eos,
                      opts.system_prompt};
    auto trajs = rollout(out.params, base, out.critic_head, config, reward_fn, prompts, ro,
                         rlhf.kl_coef, rng);
    CMTraceRow row;
    row.t = step;
    row.limit = limit;
    for (const auto& tr : trajs)
      row.eos_count += static_cast<std::size_t>(
          std::count(tr.response.begin(), tr.response.end(), config.eos_token_id));
    PPOStats st = ppo_update(out.params, out.critic_head, config, trajs, rlhf, opt, banned, rng);
    state = cm_step(state, st.reward_mean, st.critic_loss, cm, l_max);
    row.reward_mean = st.reward_mean;
    row.critic_loss = st.critic_loss;
    row.reward_std_w = state.reward_std;
    row.critic_std_w = state.critic_std;
    row.stable = state.stable;
    row.mean_len = st.mean_len;
    out.trace.push_back(row);
    out.ppo_log.push_back({step, st});
  }
  out.final_limit = state.limit;
  return out;
}

}  // namespace c2f

#endif  // C2F_COARSE_HPP_
