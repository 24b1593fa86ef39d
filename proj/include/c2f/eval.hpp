// Copyright 2026 The c2f-lab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Evaluation: n-gram redundancy, response length, reward-model score, paired
// win rate and held-out perplexity.
//
// The judge is the trained reward model, a stand-in for an external LLM judge.
// Generated responses are scored with any EOS removed.

#ifndef C2F_EVAL_HPP_
#define C2F_EVAL_HPP_

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "c2f/merge.hpp"
#include "c2f/ppo.hpp"
#include "c2f/reward.hpp"
#include "c2f/sampling.hpp"

namespace c2f {

inline constexpr const char* kJudgeNote =
    "judge: trained reward model used in place of an external LLM judge";

// 1 - distinct/total over the n-grams of `seq`.
inline double redundancy_ngram(std::span<const TokenId> seq, std::size_t n = 4) {
  if (n == 0) throw config_error("redundancy: n must be >= 1");
  if (seq.size() < n) throw config_error("redundancy: sequence shorter than n");
  std::set<std::vector<TokenId>> distinct;
  const std::size_t total = seq.size() - n + 1;
  for (std::size_t i = 0; i < total; ++i) distinct.emplace(seq.begin() + i, seq.begin() + i + n);
  return 1.0 - static_cast<double>(distinct.size()) / static_cast<double>(total);
}

// exp(mean next-token NLL) over every predicted position of every sequence.
inline double heldout_perplexity(const ParameterSet& params, const ModelConfig& config,
                                 const std::vector<TokenSequence>& corpus) {
  if (corpus.empty()) throw config_error("perplexity: empty corpus");
  double nll = 0.0;
  std::size_t count = 0;
  for (const auto& seq : corpus) {
    check_sequence(config, seq);
    InferenceSession s(params, config);
    for (std::size_t i = 0; i + 1 < seq.size(); ++i) {
      auto logits = s.step(seq[i]);
      double mx = -std::numeric_limits<double>::infinity();
      for (double l : logits) mx = std::max(mx, l);
      double z = 0.0;
      for (double l : logits) z += std::exp(l - mx);
      nll += mx + std::log(z) - logits[static_cast<std::size_t>(seq[i + 1])];
      ++count;
    }
  }
  if (count == 0) throw config_error("perplexity: corpus has no predicted tokens");
  return std::exp(nll / static_cast<double>(count));
}

struct DecodeOptions {
  std::size_t max_new_tokens = 48;
  double temperature = 0.0;  // 0: greedy
  bool suppress_eos = false;
  bool system_prompt = false;
};

inline void to_json(nlohmann::json& j, const DecodeOptions& d) {
  j = nlohmann::json{{"max_new_tokens", d.max_new_tokens},
                     {"temperature", d.temperature},
                     {"suppress_eos", d.suppress_eos},
                     {"system_prompt", d.system_prompt}};
}

inline void from_json(const nlohmann::json& j, DecodeOptions& d) {
  d.max_new_tokens = j.value("max_new_tokens", d.max_new_tokens);
  d.temperature = j.value("temperature", d.temperature);
  d.suppress_eos = j.value("suppress_eos", d.suppress_eos);
  d.system_prompt = j.value("system_prompt", d.system_prompt);
}

// Per-prompt sampling seeds so two models see the same random stream.
inline std::uint64_t prompt_seed(std::uint64_t seed, std::size_t index) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// One response per prompt. The returned responses include a terminating EOS
// when one was produced.
inline std::vector<TokenSequence> decode_all(const ParameterSet& params, const ModelConfig& config,
                                             const std::vector<TokenSequence>& prompts,
                                             const DecodeOptions& opts, std::uint64_t seed) {
  std::vector<TokenSequence> out;
  out.reserve(prompts.size());
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    Rng rng(prompt_seed(seed, i));
    const TokenSequence ctx = policy_context(config, prompts[i], opts.system_prompt);
    out.push_back(generate(params, config, ctx, {opts.max_new_tokens, opts.temperature, opts.suppress_eos}, rng).tokens);
  }
  return out;
}

struct WinRate {
  double a_wins = 0.0;
  double b_wins = 0.0;
  double ties = 0.0;
  std::size_t n = 0;
};

// Both models answer every prompt with the same per-prompt seed; the higher
// reward-model score wins and exact ties form their own bucket.
inline WinRate win_rate_from_scores(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.empty()) throw config_error("win_rate: need paired, nonempty scores");
  std::size_t aw = 0, bw = 0, t = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] > b[i]) ++aw;
    else if (b[i] > a[i]) ++bw;
    else ++t;
  }
  const double n = static_cast<double>(a.size());
  return {static_cast<double>(aw) / n, static_cast<double>(bw) / n, static_cast<double>(t) / n, a.size()};
}

inline std::vector<double> judge_scores(const RewardModel& rm, const std::vector<TokenSequence>& prompts,
                                        const std::vector<TokenSequence>& responses) {
  std::vector<double> s(prompts.size());
  for (std::size_t i = 0; i < prompts.size(); ++i)
    s[i] = rm.score(prompts[i], strip_token(responses[i], rm.config.eos_token_id));
  return s;
}

inline WinRate win_rate(const ParameterSet& model_a, const ParameterSet& model_b, const ModelConfig& config,
                        const RewardModel& rm, const std::vector<TokenSequence>& prompts,
                        const DecodeOptions& opts, std::uint64_t seed) {
  if (prompts.empty()) throw config_error("win_rate: no prompts");
  const auto ra = decode_all(model_a, config, prompts, opts, seed);
  const auto rb = decode_all(model_b, config, prompts, opts, seed);
  return win_rate_from_scores(judge_scores(rm, prompts, ra), judge_scores(rm, prompts, rb));
}

struct EvalSuite {
  std::vector<TokenSequence> prompts;
  std::vector<TokenSequence> heldout;  // EOS-terminated sequences for perplexity
  DecodeOptions decode;
  std::size_t ngram = 4;
  std::uint64_t seed = 0;
};

struct EvalReport {
  std::string model_id;
  double redundancy_4gram = 0.0;
  double mean_response_len = 0.0;
  double mean_reward = 0.0;
  double heldout_ppl = 0.0;
  double eos_rate = 0.0;  // fraction of responses that ended on EOS
  std::size_t n_prompts = 0;
  std::uint64_t seed = 0;
  DecodeOptions decode;
  std::vector<double> scores;  // per-prompt judge scores, not serialised
};

// Redundancy is the per-response value averaged over prompts; a response with
// fewer than n tokens has no repeated n-gram and counts as 0. Lengths exclude
// the terminating EOS.
inline EvalReport full_report(const std::string& model_id, const ParameterSet& params,
                              const ModelConfig& config, const RewardModel& rm, const EvalSuite& suite) {
  if (suite.prompts.empty()) throw config_error("eval: suite has no prompts");
  EvalReport r;
  r.model_id = model_id;
  r.n_prompts = suite.prompts.size();
  r.seed = suite.seed;
  r.decode = suite.decode;
  const auto responses = decode_all(params, config, suite.prompts, suite.decode, suite.seed);
  r.scores = judge_scores(rm, suite.prompts, responses);
  for (std::size_t i = 0; i < responses.size(); ++i) {
    const TokenSequence body = strip_token(responses[i], config.eos_token_id);
    r.eos_rate += body.size() != responses[i].size();
    r.mean_response_len += static_cast<double>(body.size());
    if (body.size() >= suite.ngram) r.redundancy_4gram += redundancy_ngram(body, suite.ngram);
    r.mean_reward += r.scores[i];
  }
  const double n = static_cast<double>(responses.size());
  r.eos_rate /= n;
  r.mean_response_len /= n;
  r.redundancy_4gram /= n;
  r.mean_reward /= n;
  r.heldout_ppl = heldout_perplexity(params, config, suite.heldout);
  for (double v : {r.redundancy_4gram, r.mean_response_len, r.mean_reward, r.heldout_ppl})
    if (!std::isfinite(v)) throw numeric_error("eval: non-finite metric for " + model_id);
  return r;
}

inline nlohmann::ordered_json report_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["note"] = kJudgeNote;
  j["model_id"] = r.model_id;
  j["redundancy_4gram"] = r.redundancy_4gram;
  j["mean_response_len"] = r.mean_response_len;
  j["mean_reward"] = r.mean_reward;
  j["heldout_ppl"] = r.heldout_ppl;
  j["eos_rate"] = r.eos_rate;
  j["n_prompts"] = r.n_prompts;
  j["seed"] = r.seed;
  j["decode"] = nlohmann::json(r.decode);
  return j;
}

struct SweepRow {
  double gamma = 0.0;
  EvalReport report;
  double winrate_vs_sft = 0.0;
};

// One merged model per grid point, each evaluated from scratch; rows sorted
// by gamma. Win rates compare against the SFT model under the same suite.
inline std::vector<SweepRow> sweep_gamma(const ParameterSet& coarse, const ParameterSet& sft,
                                         const ModelConfig& config, std::vector<double> grid,
                                         const RewardModel& rm, const EvalSuite& suite) {
  if (grid.empty()) throw config_error("sweep: empty gamma grid");
  for (double g : grid)
    if (!(g >= 0.0 && g <= 1.0)) throw config_error("sweep: gamma outside [0, 1]");
  std::sort(grid.begin(), grid.end());
  const auto sft_responses = decode_all(sft, config, suite.prompts, suite.decode, suite.seed);
  const auto sft_scores = judge_scores(rm, suite.prompts, sft_responses);
  std::vector<SweepRow> rows;
  for (double g : grid) {
    SweepRow row;
    row.gamma = g;
    std::ostringstream id;
    id << "merge_gamma_" << g;
    row.report = full_report(id.str(), merge_params(coarse, sft, g), config, rm, suite);
    row.winrate_vs_sft = win_rate_from_scores(row.report.scores, sft_scores).a_wins;
    rows.push_back(std::move(row));
  }
  return rows;
}

inline std::vector<double> table_gamma_grid() {
  return {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
}

inline std::string format_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

inline std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::string s = "gamma,redundancy_4gram,mean_len,mean_reward,winrate_vs_sft,heldout_ppl\n";
  for (const auto& r : rows) {
    s += format_double(r.gamma) + "," + format_double(r.report.redundancy_4gram) + "," +
         format_double(r.report.mean_response_len) + "," + format_double(r.report.mean_reward) + "," +
         format_double(r.winrate_vs_sft) + "," + format_double(r.report.heldout_ppl) + "\n";
  }
  return s;
}

}  // namespace c2f

#endif  // C2F_EVAL_HPP_
