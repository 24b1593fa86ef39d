// Copyright 2026 The c2f-lab Authors
// SPDX-License-Identifier: Apache-2.0
//
// End-to-end run: data -> base pretraining -> SFT -> reward model -> coarse
// PPO -> merge -> evaluation, plus the run configuration and its JSON form.

#ifndef C2F_PIPELINE_HPP_
#define C2F_PIPELINE_HPP_

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "c2f/checkpoint.hpp"
#include "c2f/coarse.hpp"
#include "c2f/datagen.hpp"
#include "c2f/eval.hpp"
#include "c2f/merge.hpp"
#include "c2f/ppo.hpp"
#include "c2f/reward.hpp"
#include "c2f/sft.hpp"

namespace c2f {

// hash(global_seed, stage_name): FNV-1a over the name, mixed with the seed.
inline std::uint64_t stage_seed(std::uint64_t global_seed, const std::string& stage) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : stage) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return prompt_seed(global_seed ^ h, 0);
}

struct DataSizes {
  std::size_t pretrain = 3000;
  std::size_t sft = 2000;
  std::size_t pairs = 2500;
  std::size_t eval_prompts = 200;
  std::size_t heldout = 200;
};

struct RunConfig {
  std::uint64_t seed = 1;
  std::string output_dir;
  ModelConfig model = desk_config();
  SyntheticTaskSpec task;
  DataSizes data;
  PretrainConfig pretrain;
  SFTConfig sft;
  RewardConfig reward;
  RLHFConfig rlhf;
  CMConfig cm;
  CoarseOptions coarse;
  double gamma = kDefaultGamma;
  std::vector<double> gamma_grid = table_gamma_grid();
  DecodeOptions fine_decode{48, 1.0, false, false};
  DecodeOptions coarse_decode{48, 0.0, true, true};
  bool control_fine = false;

  void validate() const {
    model.validate();
    task.validate();
    sft.validate();
    reward.validate();
    rlhf.validate();
    cm.validate(model);
    if (!(gamma >= 0.0 && gamma <= 1.0)) throw config_error("run: gamma must be in [0, 1]");
    if (gamma_grid.empty()) throw config_error("run: gamma_grid must be nonempty");
    for (double g : gamma_grid)
      if (!(g >= 0.0 && g <= 1.0)) throw config_error("run: gamma_grid values must be in [0, 1]");
    if (data.pretrain == 0 || data.sft == 0 || data.pairs == 0 || data.eval_prompts == 0 || data.heldout == 0)
      throw config_error("run: data sizes must be > 0");
    if (sft.max_response_len >= static_cast<std::size_t>(cm.resolved_l_max(model)))
      throw config_error("run: sft.max_response_len must be below the coarse l_max");
    if (coarse.steps < 0) throw config_error("run: coarse.steps must be >= 0");
  }
};

// ---------------------------------------------------------------------------
// JSON. Missing keys keep their defaults; unknown keys are rejected.

namespace detail {

template <typename T>
void read_key(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) j.at(key).get_to(out);
}

inline void reject_unknown(const nlohmann::json& j, const std::vector<std::string>& known,
                           const std::string& where) {
  if (!j.is_object()) throw config_error("config: " + where + " must be an object");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (std::find(known.begin(), known.end(), it.key()) == known.end())
      throw config_error("config: unknown key \"" + it.key() + "\" in " + where);
}

}  // namespace detail

inline nlohmann::ordered_json run_config_json(const RunConfig& c) {
  nlohmann::ordered_json j;
  j["seed"] = c.seed;
  j["output_dir"] = c.output_dir;
  j["model"] = nlohmann::json(c.model);
  const auto& t = c.task;
  j["task"] = {{"grammar_seed", t.grammar_seed},
               {"prompt_words_max", t.prompt_words_max},
               {"response_len_min", t.response_len_min},
               {"response_len_max", t.response_len_max},
               {"marker_prob", t.marker_prob},
               {"chosen_len_min", t.chosen_len_min},
               {"chosen_len_max", t.chosen_len_max},
               {"chosen_marker_prob", t.chosen_marker_prob},
               {"rejected_len_min", t.rejected_len_min},
               {"rejected_len_max", t.rejected_len_max},
               {"rejected_marker_prob", t.rejected_marker_prob},
               {"rejected_noise_prob", t.rejected_noise_prob},
               {"rejected_repeat_prob", t.rejected_repeat_prob},
               {"marker_weight", t.marker_weight},
               {"repeat_penalty", t.repeat_penalty},
               {"margin_min", t.margin_min},
               {"margin_max", t.margin_max}};
  j["data"] = {{"pretrain", c.data.pretrain},
               {"sft", c.data.sft},
               {"pairs", c.data.pairs},
               {"eval_prompts", c.data.eval_prompts},
               {"heldout", c.data.heldout}};
  j["pretrain"] = {{"lr", c.pretrain.lr},
                   {"batch_size", c.pretrain.batch_size},
                   {"epochs", c.pretrain.epochs},
                   {"segments_per_document", c.pretrain.segments_per_document}};
  j["sft"] = {{"lr", c.sft.lr},
              {"batch_size", c.sft.batch_size},
              {"epochs", c.sft.epochs},
              {"max_response_len", c.sft.max_response_len},
              {"weight_decay", c.sft.weight_decay}};
  j["reward"] = {{"lr", c.reward.lr},
                 {"batch_size", c.reward.batch_size},
                 {"epochs", c.reward.epochs},
                 {"heldout_fraction", c.reward.heldout_fraction},
                 {"weight_decay", c.reward.weight_decay}};
  const auto& r = c.rlhf;
  j["rlhf"] = {{"lr_actor", r.lr_actor},
               {"lr_critic", r.lr_critic},
               {"clip_epsilon", r.clip_epsilon},
               {"discount_factor", r.discount_factor},
               {"gae_lambda", r.gae_lambda},
               {"kl_coef", r.kl_coef},
               {"rollout_batch", r.rollout_batch},
               {"ppo_epochs", r.ppo_epochs},
               {"minibatch_size", r.minibatch_size},
               {"normalize_advantages", r.normalize_advantages},
               {"temperature", r.temperature}};
  const auto& m = c.cm;
  j["cm"] = {{"l_init", m.l_init},
             {"l_max", m.l_max},
             {"delta_l", m.delta_l},
             {"window", m.window},
             {"reward_std_threshold", m.reward_std_threshold},
             {"critic_fluct_threshold", m.critic_fluct_threshold},
             {"gate_mode", gate_mode_name(m.gate_mode)},
             {"logistic_slope", m.logistic_slope}};
  j["coarse"] = {{"steps", c.coarse.steps},
                 {"suppress_eos", c.coarse.suppress_eos},
                 {"system_prompt", c.coarse.system_prompt}};
  j["gamma"] = c.gamma;
  j["gamma_grid"] = c.gamma_grid;
  j["fine_decode"] = nlohmann::json(c.fine_decode);
  j["coarse_decode"] = nlohmann::json(c.coarse_decode);
  j["control_fine"] = c.control_fine;
  return j;
}

inline RunConfig run_config_from_json(const nlohmann::json& j, RunConfig c = {}) {
  using detail::read_key;
  using detail::reject_unknown;
  try {
    reject_unknown(j,
                   {"seed", "output_dir", "model", "task", "data", "pretrain", "sft", "reward", "rlhf", "cm",
                    "coarse", "gamma", "gamma_grid", "fine_decode", "coarse_decode", "control_fine"},
                   "run config");
    read_key(j, "seed", c.seed);
    read_key(j, "output_dir", c.output_dir);
    if (j.contains("model")) {
      nlohmann::json merged = nlohmann::json(c.model);
      reject_unknown(j["model"],
                     {"vocab_size", "d_model", "n_layers", "n_heads", "d_ff", "max_context", "eos_token_id",
                      "pad_token_id", "sep_token_id", "system_prefix_ids"},
                     "model");
      merged.update(j["model"]);
      c.model = merged.get<ModelConfig>();
    }
    if (j.contains("task")) {
      const auto& t = j["task"];
      reject_unknown(t,
                     {"grammar_seed", "prompt_words_max", "response_len_min", "response_len_max", "marker_prob",
                      "chosen_len_min", "chosen_len_max", "chosen_marker_prob", "rejected_len_min",
                      "rejected_len_max", "rejected_marker_prob", "rejected_noise_prob", "rejected_repeat_prob",
                      "marker_weight", "repeat_penalty", "margin_min", "margin_max"},
                     "task");
      auto& s = c.task;
      read_key(t, "grammar_seed", s.grammar_seed);
      read_key(t, "prompt_words_max", s.prompt_words_max);
      read_key(t, "response_len_min", s.response_len_min);
      read_key(t, "response_len_max", s.response_len_max);
      read_key(t, "marker_prob", s.marker_prob);
      read_key(t, "chosen_len_min", s.chosen_len_min);
      read_key(t, "chosen_len_max", s.chosen_len_max);
      read_key(t, "chosen_marker_prob", s.chosen_marker_prob);
      read_key(t, "rejected_len_min", s.rejected_len_min);
      read_key(t, "rejected_len_max", s.rejected_len_max);
      read_key(t, "rejected_marker_prob", s.rejected_marker_prob);
      read_key(t, "rejected_noise_prob", s.rejected_noise_prob);
      read_key(t, "rejected_repeat_prob", s.rejected_repeat_prob);
      read_key(t, "marker_weight", s.marker_weight);
      read_key(t, "repeat_penalty", s.repeat_penalty);
      read_key(t, "margin_min", s.margin_min);
      read_key(t, "margin_max", s.margin_max);
    }
    if (j.contains("data")) {
      const auto& d = j["data"];
      reject_unknown(d, {"pretrain", "sft", "pairs", "eval_prompts", "heldout"}, "data");
      read_key(d, "pretrain", c.data.pretrain);
      read_key(d, "sft", c.data.sft);
      read_key(d, "pairs", c.data.pairs);
      read_key(d, "eval_prompts", c.data.eval_prompts);
      read_key(d, "heldout", c.data.heldout);
    }
    if (j.contains("pretrain")) {
      const auto& p = j["pretrain"];
      reject_unknown(p, {"lr", "batch_size", "epochs", "segments_per_document"}, "pretrain");
      read_key(p, "lr", c.pretrain.lr);
      read_key(p, "batch_size", c.pretrain.batch_size);
      read_key(p, "epochs", c.pretrain.epochs);
      read_key(p, "segments_per_document", c.pretrain.segments_per_document);
    }
    if (j.contains("sft")) {
      const auto& p = j["sft"];
      reject_unknown(p, {"lr", "batch_size", "epochs", "max_response_len", "weight_decay"}, "sft");
      read_key(p, "lr", c.sft.lr);
      read_key(p, "batch_size", c.sft.batch_size);
      read_key(p, "epochs", c.sft.epochs);
      read_key(p, "max_response_len", c.sft.max_response_len);
      read_key(p, "weight_decay", c.sft.weight_decay);
    }
    if (j.contains("reward")) {
      const auto& p = j["reward"];
      reject_unknown(p, {"lr", "batch_size", "epochs", "heldout_fraction", "weight_decay"}, "reward");
      read_key(p, "lr", c.reward.lr);
      read_key(p, "batch_size", c.reward.batch_size);
      read_key(p, "epochs", c.reward.epochs);
      read_key(p, "heldout_fraction", c.reward.heldout_fraction);
      read_key(p, "weight_decay", c.reward.weight_decay);
    }
    if (j.contains("rlhf")) {
      const auto& p = j["rlhf"];
      if (p.is_string()) {
        if (p.get<std::string>() != "large") throw config_error("config: unknown rlhf preset");
        c.rlhf = RLHFConfig::large_model_preset();
      } else {
        reject_unknown(p,
                       {"preset", "lr_actor", "lr_critic", "clip_epsilon", "discount_factor", "gae_lambda",
                        "kl_coef", "rollout_batch", "ppo_epochs", "minibatch_size", "normalize_advantages",
                        "temperature"},
                       "rlhf");
        if (p.contains("preset")) {
          if (p["preset"] != "large") throw config_error("config: unknown rlhf preset");
          c.rlhf = RLHFConfig::large_model_preset();
        }
        auto& r = c.rlhf;
        read_key(p, "lr_actor", r.lr_actor);
        read_key(p, "lr_critic", r.lr_critic);
        read_key(p, "clip_epsilon", r.clip_epsilon);
        read_key(p, "discount_factor", r.discount_factor);
        read_key(p, "gae_lambda", r.gae_lambda);
        read_key(p, "kl_coef", r.kl_coef);
        read_key(p, "rollout_batch", r.rollout_batch);
        read_key(p, "ppo_epochs", r.ppo_epochs);
        read_key(p, "minibatch_size", r.minibatch_size);
        read_key(p, "normalize_advantages", r.normalize_advantages);
        read_key(p, "temperature", r.temperature);
      }
    }
    if (j.contains("cm")) {
      const auto& p = j["cm"];
      reject_unknown(p,
                     {"l_init", "l_max", "delta_l", "window", "reward_std_threshold", "critic_fluct_threshold",
                      "gate_mode", "logistic_slope"},
                     "cm");
      auto& m = c.cm;
      read_key(p, "l_init", m.l_init);
      read_key(p, "l_max", m.l_max);
      read_key(p, "delta_l", m.delta_l);
      read_key(p, "window", m.window);
      auto threshold = [&](const char* key, double& out) {
        if (!p.contains(key)) return;
        if (p[key].is_string() && (p[key] == "inf" || p[key] == "infinity"))
          out = std::numeric_limits<double>::infinity();
        else
          p[key].get_to(out);
      };
      threshold("reward_std_threshold", m.reward_std_threshold);
      threshold("critic_fluct_threshold", m.critic_fluct_threshold);
      if (p.contains("gate_mode")) m.gate_mode = parse_gate_mode(p["gate_mode"].get<std::string>());
      read_key(p, "logistic_slope", m.logistic_slope);
    }
    if (j.contains("coarse")) {
      const auto& p = j["coarse"];
      reject_unknown(p, {"steps", "suppress_eos", "system_prompt"}, "coarse");
      read_key(p, "steps", c.coarse.steps);
      read_key(p, "suppress_eos", c.coarse.suppress_eos);
      read_key(p, "system_prompt", c.coarse.system_prompt);
    }
    read_key(j, "gamma", c.gamma);
    read_key(j, "gamma_grid", c.gamma_grid);
    if (j.contains("fine_decode")) {
      reject_unknown(j["fine_decode"], {"max_new_tokens", "temperature", "suppress_eos", "system_prompt"}, "fine_decode");
      from_json(j["fine_decode"], c.fine_decode);
    }
    if (j.contains("coarse_decode")) {
      reject_unknown(j["coarse_decode"], {"max_new_tokens", "temperature", "suppress_eos", "system_prompt"},
                     "coarse_decode");
      from_json(j["coarse_decode"], c.coarse_decode);
    }
    read_key(j, "control_fine", c.control_fine);
  } catch (const nlohmann::json::exception& e) {
    throw config_error(std::string("config: ") + e.what());
  }
  return c;
}

// ---------------------------------------------------------------------------
// CSV writers.

inline std::string cm_trace_csv(const std::vector<CMTraceRow>& rows) {
  std::string s = "t,limit,reward_mean,reward_std_W,critic_loss,critic_std_W,stable\n";
  for (const auto& r : rows) {
    s += std::to_string(r.t) + "," + std::to_string(r.limit) + "," + format_double(r.reward_mean) + "," +
         format_double(r.reward_std_w) + "," + format_double(r.critic_loss) + "," +
         format_double(r.critic_std_w) + "," + (r.stable ? "1" : "0") + "\n";
  }
  return s;
}

inline std::string ppo_stats_csv(const std::vector<PPOStepRow>& rows) {
  std::string s = "step,reward_mean,critic_loss,kl,clip_frac,mean_len\n";
  for (const auto& r : rows) {
    s += std::to_string(r.step) + "," + format_double(r.stats.reward_mean) + "," +
         format_double(r.stats.critic_loss) + "," + format_double(r.stats.kl) + "," +
         format_double(r.stats.clip_fraction) + "," + format_double(r.stats.mean_len) + "\n";
  }
  return s;
}

// ---------------------------------------------------------------------------

struct PipelineResult {
  EvalReport sft_report;
  EvalReport coarse_report;
  EvalReport fine_report;
  std::optional<EvalReport> control_report;
  WinRate fine_vs_sft;
  std::vector<SweepRow> sweep;
  std::vector<CMTraceRow> cm_trace;
  double reward_accuracy = 0.0;
  std::vector<std::string> warnings;
  std::vector<std::string> artifacts;  // file names written into output_dir
};

// Every file run_pipeline writes, in write order.
inline std::vector<std::string> declared_artifacts(const RunConfig& cfg) {
  std::vector<std::string> a{"config.json",   "preferences.jsonl", "base.ckpt",      "sft.ckpt",
                             "reward.ckpt",   "coarse.ckpt",       "ppo_stats.csv",  "cm_trace.csv",
                             "fine.ckpt",     "eval_sft.json",     "eval_coarse.json", "eval_fine.json",
                             "winrate.json",  "sweep.csv"};
  if (cfg.control_fine) {
    a.push_back("control_plus.ckpt");
    a.push_back("control_fine.ckpt");
    a.push_back("eval_control_fine.json");
  }
  return a;
}

// The evaluation prompts, held-out corpus and sampling seed of a run.
inline EvalSuite make_eval_suite(const RunConfig& cfg, const DecodeOptions& decode) {
  return EvalSuite{gen_prompts(cfg.task, cfg.data.eval_prompts, stage_seed(cfg.seed, "data.eval")),
                   gen_corpus(cfg.task, cfg.data.heldout, stage_seed(cfg.seed, "data.heldout")), decode, 4,
                   stage_seed(cfg.seed, "eval")};
}

using LogFn = std::function<void(const std::string&)>;

namespace detail {

template <typename F>
auto run_stage(const std::string& stage, const LogFn& log, F&& f) {
  if (log) log("[" + stage + "] start");
  try {
    return f();
  } catch (const Error& e) {
    throw Error(e.kind(), "[" + stage + "] " + e.what());
  } catch (const std::exception& e) {
    throw Error(ErrorKind::kIo, "[" + stage + "] " + e.what());
  }
}

inline nlohmann::json policy_meta(const std::string& stage, std::uint64_t seed) {
  return {{"kind", "policy"}, {"stage", stage}, {"seed", seed}};
}

}  // namespace detail

inline PipelineResult run_pipeline(const RunConfig& cfg, const LogFn& log = nullptr) {
  using detail::run_stage;
  cfg.validate();
  const ModelConfig& mc = cfg.model;
  if (mc.vocab_size != synthetic::kVocabSize || mc.eos_token_id != synthetic::kEos ||
      mc.sep_token_id != synthetic::kSep || mc.pad_token_id != synthetic::kPad)
    throw config_error("run: the pipeline's synthetic task needs the synthetic vocabulary");
  const bool write = !cfg.output_dir.empty();
  namespace fs = std::filesystem;
  PipelineResult res;
  auto out_path = [&](const std::string& name) {
    res.artifacts.push_back(name);
    return (fs::path(cfg.output_dir) / name).string();
  };
  if (write) {
    std::error_code ec;
    fs::create_directories(cfg.output_dir, ec);
    if (ec) throw io_error("cannot create " + cfg.output_dir + ": " + ec.message());
    write_file(out_path("config.json"), run_config_json(cfg).dump(2) + "\n");
  }
  auto seed = [&](const char* stage) { return stage_seed(cfg.seed, stage); };

  struct Data {
    std::vector<TokenSequence> pretrain, sft;
    std::vector<PreferencePair> pairs;
  };
  const Data data = run_stage("datagen", log, [&] {
    Data d;
    d.pretrain = gen_corpus(cfg.task, cfg.data.pretrain, seed("data.pretrain"));
    d.sft = gen_corpus(cfg.task, cfg.data.sft, seed("data.sft"));
    d.pairs = gen_preference_pairs(cfg.task, cfg.data.pairs, seed("data.pairs"));
    if (write) export_jsonl(d.pairs, out_path("preferences.jsonl"), Tokenizer(VocabMode::kSynthetic));
    return d;
  });

  const ParameterSet base = run_stage("pretrain", log, [&] {
    PretrainConfig pc = cfg.pretrain;
    pc.seed = seed("pretrain");
    auto r = pretrain_base(init_params(mc, seed("init")), mc, data.pretrain, pc);
    res.warnings.insert(res.warnings.end(), r.warnings.begin(), r.warnings.end());
    if (write) save_checkpoint(r.params, mc, out_path("base.ckpt"), detail::policy_meta("base", cfg.seed));
    return r.params;
  });

  const ParameterSet sft = run_stage("sft", log, [&] {
    SFTConfig sc = cfg.sft;
    sc.seed = seed("sft");
    auto r = train_sft(base, mc, data.sft, sc);
    res.warnings.insert(res.warnings.end(), r.warnings.begin(), r.warnings.end());
    if (write) save_checkpoint(r.params, mc, out_path("sft.ckpt"), detail::policy_meta("sft", cfg.seed));
    return r.params;
  });

  const RewardModel rm = run_stage("reward", log, [&] {
    RewardConfig rc = cfg.reward;
    rc.seed = seed("reward");
    auto r = train_reward(base, mc, data.pairs, rc);
    res.reward_accuracy = r.heldout_accuracy;
    if (write) {
      save_checkpoint(r.model.combined(), mc, out_path("reward.ckpt"),
                      {{"kind", "reward_model"}, {"stage", "reward"}, {"seed", cfg.seed},
                       {"heldout_accuracy", r.heldout_accuracy}});
    }
    return r.model;
  });
  const RewardFn reward_fn = [&rm](const TokenSequence& p, const TokenSequence& r) { return rm.score(p, r); };
  const auto pairs_stripped = strip_stop_tokens(data.pairs, mc.eos_token_id);

  const ParameterSet coarse = run_stage("coarse", log, [&] {
    RLHFConfig rc = cfg.rlhf;
    rc.seed = seed("coarse");
    auto r = train_coarse(base, mc, reward_fn, pairs_stripped, rc, cfg.cm, cfg.coarse);
    res.cm_trace = r.trace;
    if (write) {
      save_checkpoint(r.params, mc, out_path("coarse.ckpt"), detail::policy_meta("coarse", cfg.seed));
      write_file(out_path("ppo_stats.csv"), ppo_stats_csv(r.ppo_log));
      write_file(out_path("cm_trace.csv"), cm_trace_csv(r.trace));
    }
    return r.params;
  });

  const ParameterSet fine = run_stage("merge", log, [&] {
    Checkpoint merged = merge(Checkpoint{mc, coarse, {}}, Checkpoint{mc, sft, {}}, cfg.gamma);
    merged.metadata["seed"] = cfg.seed;
    if (write) save_checkpoint(merged, out_path("fine.ckpt"));
    return merged.params;
  });

  run_stage("eval", log, [&] {
    const EvalSuite fine_suite = make_eval_suite(cfg, cfg.fine_decode);
    EvalSuite coarse_suite = fine_suite;
    coarse_suite.decode = cfg.coarse_decode;
    res.sft_report = full_report("sft", sft, mc, rm, fine_suite);
    res.coarse_report = full_report("coarse", coarse, mc, rm, coarse_suite);
    res.fine_report = full_report("fine", fine, mc, rm, fine_suite);
    res.fine_vs_sft = win_rate_from_scores(res.fine_report.scores, res.sft_report.scores);
    if (write) {
      write_file(out_path("eval_sft.json"), report_json(res.sft_report).dump(2) + "\n");
      write_file(out_path("eval_coarse.json"), report_json(res.coarse_report).dump(2) + "\n");
      write_file(out_path("eval_fine.json"), report_json(res.fine_report).dump(2) + "\n");
      nlohmann::ordered_json w;
      w["note"] = kJudgeNote;
      w["a"] = "fine";
      w["b"] = "sft";
      w["a_wins"] = res.fine_vs_sft.a_wins;
      w["b_wins"] = res.fine_vs_sft.b_wins;
      w["ties"] = res.fine_vs_sft.ties;
      w["n_prompts"] = res.fine_vs_sft.n;
      write_file(out_path("winrate.json"), w.dump(2) + "\n");
    }
    res.sweep = sweep_gamma(coarse, sft, mc, cfg.gamma_grid, rm, fine_suite);
    if (write) write_file(out_path("sweep.csv"), sweep_csv(res.sweep));
    return 0;
  });

  if (cfg.control_fine) {
    run_stage("control", log, [&] {
      // PPO on top of the SFT model with ordinary stopping, then the same merge.
      RLHFConfig rc = cfg.rlhf;
      rc.seed = seed("control");
      CoarseOptions co = cfg.coarse;
      co.suppress_eos = false;
      co.system_prompt = false;
      auto plus = train_coarse(sft, mc, reward_fn, pairs_stripped, rc, cfg.cm, co);
      const ParameterSet control = merge_params(plus.params, sft, cfg.gamma);
      const EvalSuite suite = make_eval_suite(cfg, cfg.fine_decode);
      res.control_report = full_report("control_fine", control, mc, rm, suite);
      if (write) {
        save_checkpoint(plus.params, mc, out_path("control_plus.ckpt"), detail::policy_meta("control_plus", cfg.seed));
        save_checkpoint(control, mc, out_path("control_fine.ckpt"),
                        {{"kind", "policy"}, {"stage", "control_fine"}, {"gamma", cfg.gamma}, {"seed", cfg.seed}});
        write_file(out_path("eval_control_fine.json"), report_json(*res.control_report).dump(2) + "\n");
      }
      return 0;
    });
  }
  return res;
}

}  // namespace c2f

#endif  // C2F_PIPELINE_HPP_
