// Copyright 2026 The c2f-lab Authors
// SPDX-License-Identifier: Apache-2.0

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "c2f/c2f.hpp"

namespace {

using c2f::RunConfig;
using nlohmann::json;

// One string flag per leaf of the configuration, named by its dotted path.
class ConfigFlags {
 public:
  void attach(CLI::App* app) {
    std::vector<std::string> paths;
    collect(json(c2f::run_config_json(RunConfig{})), "", paths);
    for (const auto& p : paths) {
      auto* opt = app->add_option("--" + p, values_[p], "override of " + p)->group("Config overrides");
      opts_[p] = opt;
    }
    app->add_option("--config", config_path_, "JSON run configuration")->check(CLI::ExistingFile);
  }

  // Config file first, then every flag given on the command line.
  RunConfig resolve() const {
    json j = json::object();
    if (!config_path_.empty()) {
      j = json::parse(c2f::read_file(config_path_), nullptr, false);
      if (j.is_discarded() || !j.is_object()) throw c2f::config_error(config_path_ + ": not a JSON object");
    }
    for (const auto& [path, opt] : opts_) {
      if (opt->count() == 0) continue;
      json* node = &j;
      std::size_t start = 0;
      for (std::size_t dot; (dot = path.find('.', start)) != std::string::npos; start = dot + 1) {
        json& next = (*node)[path.substr(start, dot - start)];
        if (!next.is_object()) next = json::object();
        node = &next;
      }
      (*node)[path.substr(start)] = parse_value(values_.at(path));
    }
    RunConfig cfg = c2f::run_config_from_json(j);
    cfg.validate();
    return cfg;
  }

 private:
  static void collect(const json& j, const std::string& prefix, std::vector<std::string>& out) {
    for (auto it = j.begin(); it != j.end(); ++it) {
      const std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
      if (it->is_object())
        collect(*it, key, out);
      else
        out.push_back(key);
    }
  }

  // JSON literal if it parses, "a,b,c" as a list, otherwise a plain string.
  static json parse_value(const std::string& s) {
    json v = json::parse(s, nullptr, false);
    if (!v.is_discarded()) return v;
    if (s.find(',') != std::string::npos) {
      v = json::parse("[" + s + "]", nullptr, false);
      if (!v.is_discarded()) return v;
    }
    return s;
  }

  std::string config_path_;
  std::map<std::string, std::string> values_;
  std::map<std::string, CLI::Option*> opts_;
};

c2f::Tokenizer tokenizer_for(const c2f::ModelConfig& mc) {
  return c2f::Tokenizer(mc.vocab_size == c2f::text::kVocabSize ? c2f::VocabMode::kText : c2f::VocabMode::kSynthetic);
}

std::vector<c2f::PreferencePair> load_pairs(const RunConfig& cfg, const std::string& path) {
  if (path.empty()) return c2f::gen_preference_pairs(cfg.task, cfg.data.pairs, c2f::stage_seed(cfg.seed, "data.pairs"));
  auto ing = c2f::ingest_jsonl(path, tokenizer_for(cfg.model));
  for (const auto& m : ing.messages) std::cerr << "warning: " << m << "\n";
  return ing.pairs;
}

c2f::ParameterSet load_policy(const RunConfig& cfg, const std::string& path) {
  auto ck = c2f::load_checkpoint(path, cfg.model);
  if (ck.metadata.value("kind", "") == "reward_model") throw c2f::config_error(path + " is a reward model, not a policy");
  return std::move(ck.params);
}

c2f::RewardModel load_reward(const RunConfig& cfg, const std::string& path) {
  const auto ck = c2f::load_checkpoint(path, cfg.model);
  if (ck.metadata.value("kind", "") != "reward_model") throw c2f::config_error(path + " is not a reward model checkpoint");
  return c2f::RewardModel::from_combined(cfg.model, ck.params);
}

// Pretrained base: loaded when given, otherwise trained exactly as the pipeline does.
c2f::ParameterSet base_or_pretrain(const RunConfig& cfg, const std::string& path) {
  if (!path.empty()) return load_policy(cfg, path);
  c2f::PretrainConfig pc = cfg.pretrain;
  pc.seed = c2f::stage_seed(cfg.seed, "pretrain");
  const auto corpus = c2f::gen_corpus(cfg.task, cfg.data.pretrain, c2f::stage_seed(cfg.seed, "data.pretrain"));
  return c2f::pretrain_base(c2f::init_params(cfg.model, c2f::stage_seed(cfg.seed, "init")), cfg.model, corpus, pc)
      .params;
}

nlohmann::json meta(const char* stage, const RunConfig& cfg) {
  return {{"kind", "policy"}, {"stage", stage}, {"seed", cfg.seed}};
}

void require_synthetic(const RunConfig& cfg, const char* what) {
  if (cfg.model.vocab_size != c2f::synthetic::kVocabSize)
    throw c2f::config_error(std::string(what) + " without an input file needs the synthetic vocabulary");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"c2f: two-step coarse-to-fine RLHF on a desk-scale transformer"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "c2f 1.0.0");

  struct Sub {
    CLI::App* app;
    ConfigFlags flags;
  };
  std::map<std::string, Sub> subs;
  auto add = [&](const std::string& name, const std::string& desc) -> CLI::App* {
    CLI::App* s = app.add_subcommand(name, desc);
    subs[name].app = s;
    subs[name].flags.attach(s);
    return s;
  };

  std::string out, base_path, sft_path, coarse_path, reward_path, model_path, pairs_path, prompt, trace_path,
      stats_path, model_id = "model", protocol = "fine";
  bool show_system_prompt = false;

  auto* datagen = add("datagen", "write the synthetic preference pairs as JSONL");
  datagen->add_option("--out", out, "output JSONL path")->required();

  auto* train_sft = add("train-sft", "supervised fine-tuning of a base checkpoint");
  train_sft->add_option("--base", base_path, "base checkpoint (pretrained from scratch when omitted)")->check(CLI::ExistingFile);
  train_sft->add_option("--out", out, "output checkpoint")->required();

  auto* train_reward = add("train-reward", "train the pairwise reward model");
  train_reward->add_option("--base", base_path, "backbone checkpoint (pretrained from scratch when omitted)")->check(CLI::ExistingFile);
  train_reward->add_option("--pairs", pairs_path, "preference JSONL (synthetic pairs when omitted)")->check(CLI::ExistingFile);
  train_reward->add_option("--out", out, "output checkpoint")->required();

  auto* train_coarse = add("train-coarse", "PPO with the length scheduler and EOS suppression");
  train_coarse->add_option("--base", base_path, "starting policy checkpoint")->required()->check(CLI::ExistingFile);
  train_coarse->add_option("--reward", reward_path, "reward model checkpoint")->required()->check(CLI::ExistingFile);
  train_coarse->add_option("--pairs", pairs_path, "preference JSONL supplying prompts")->check(CLI::ExistingFile);
  train_coarse->add_option("--out", out, "output checkpoint")->required();
  train_coarse->add_option("--trace", trace_path, "scheduler trace CSV");
  train_coarse->add_option("--stats", stats_path, "PPO statistics CSV");

  auto* merge = add("merge", "interpolate the coarse and SFT checkpoints");
  merge->add_option("--coarse", coarse_path, "coarse checkpoint")->required()->check(CLI::ExistingFile);
  merge->add_option("--sft", sft_path, "SFT checkpoint")->required()->check(CLI::ExistingFile);
  merge->add_option("--out", out, "output checkpoint")->required();

  auto* sweep = add("sweep-gamma", "evaluate merges over the gamma grid");
  sweep->add_option("--coarse", coarse_path, "coarse checkpoint")->required()->check(CLI::ExistingFile);
  sweep->add_option("--sft", sft_path, "SFT checkpoint")->required()->check(CLI::ExistingFile);
  sweep->add_option("--reward", reward_path, "reward model checkpoint")->required()->check(CLI::ExistingFile);
  sweep->add_option("--out", out, "output CSV (stdout when omitted)");

  auto* evaluate = add("evaluate", "evaluation report for one policy checkpoint");
  evaluate->add_option("--model", model_path, "policy checkpoint")->required()->check(CLI::ExistingFile);
  evaluate->add_option("--reward", reward_path, "reward model checkpoint")->required()->check(CLI::ExistingFile);
  evaluate->add_option("--id", model_id, "model id recorded in the report");
  evaluate->add_option("--protocol", protocol, "decode protocol")->check(CLI::IsMember({"fine", "coarse"}));
  evaluate->add_option("--out", out, "output JSON (stdout when omitted)");

  auto* generate = add("generate", "decode one prompt");
  generate->add_option("--model", model_path, "policy checkpoint")->check(CLI::ExistingFile);
  generate->add_option("--prompt", prompt, "prompt text");
  generate->add_option("--protocol", protocol, "decode protocol")->check(CLI::IsMember({"fine", "coarse"}));
  generate->add_flag("--show-system-prompt", show_system_prompt, "print the system prompt and exit");

  add("run-pipeline", "every stage end to end");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : static_cast<int>(c2f::ErrorKind::kConfig);
  }

  try {
    if (generate->parsed() && show_system_prompt) {
      std::cout << c2f::kSystemPrompt << "\n";
      return 0;
    }
    std::string name;
    for (auto& [n, s] : subs)
      if (s.app->parsed()) name = n;
    const RunConfig cfg = subs.at(name).flags.resolve();
    const auto& mc = cfg.model;
    auto seed = [&](const char* stage) { return c2f::stage_seed(cfg.seed, stage); };

    if (name == "datagen") {
      require_synthetic(cfg, "datagen");
      c2f::export_jsonl(c2f::gen_preference_pairs(cfg.task, cfg.data.pairs, seed("data.pairs")), out,
                        tokenizer_for(mc));
      std::cout << "wrote " << cfg.data.pairs << " pairs to " << out << "\n";
    } else if (name == "train-sft") {
      require_synthetic(cfg, "train-sft");
      const auto base = base_or_pretrain(cfg, base_path);
      c2f::SFTConfig sc = cfg.sft;
      sc.seed = seed("sft");
      const auto r = c2f::train_sft(base, mc, c2f::gen_corpus(cfg.task, cfg.data.sft, seed("data.sft")), sc);
      for (const auto& w : r.warnings) std::cerr << "warning: " << w << "\n";
      c2f::save_checkpoint(r.params, mc, out, meta("sft", cfg));
      std::cout << "sft: " << r.steps << " steps, final epoch loss "
                << (r.epoch_losses.empty() ? 0.0 : r.epoch_losses.back()) << "\n";
    } else if (name == "train-reward") {
      if (pairs_path.empty()) require_synthetic(cfg, "train-reward");
      const auto pairs = load_pairs(cfg, pairs_path);
      const auto base = base_or_pretrain(cfg, base_path);
      c2f::RewardConfig rc = cfg.reward;
      rc.seed = seed("reward");
      const auto r = c2f::train_reward(base, mc, pairs, rc);
      c2f::save_checkpoint(r.model.combined(), mc, out,
                           {{"kind", "reward_model"}, {"stage", "reward"}, {"seed", cfg.seed},
                            {"heldout_accuracy", r.heldout_accuracy}});
      std::cout << "reward: held-out accuracy " << r.heldout_accuracy << " on " << r.n_heldout << " pairs\n";
    } else if (name == "train-coarse") {
      if (pairs_path.empty()) require_synthetic(cfg, "train-coarse");
      const auto base = load_policy(cfg, base_path);
      const auto rm = load_reward(cfg, reward_path);
      const c2f::RewardFn fn = [&rm](const c2f::TokenSequence& p, const c2f::TokenSequence& r) {
        return rm.score(p, r);
      };
      c2f::RLHFConfig rc = cfg.rlhf;
      rc.seed = seed("coarse");
      const auto r = c2f::train_coarse(base, mc, fn, c2f::strip_stop_tokens(load_pairs(cfg, pairs_path), mc.eos_token_id),
                                       rc, cfg.cm, cfg.coarse);
      c2f::save_checkpoint(r.params, mc, out, meta("coarse", cfg));
      if (!trace_path.empty()) c2f::write_file(trace_path, c2f::cm_trace_csv(r.trace));
      if (!stats_path.empty()) c2f::write_file(stats_path, c2f::ppo_stats_csv(r.ppo_log));
      std::cout << "coarse: " << r.trace.size() << " steps, final limit " << r.final_limit << "\n";
    } else if (name == "merge") {
      auto merged = c2f::merge(c2f::load_checkpoint(coarse_path), c2f::load_checkpoint(sft_path), cfg.gamma);
      merged.metadata["seed"] = cfg.seed;
      c2f::save_checkpoint(merged, out);
      std::cout << "merged with gamma " << cfg.gamma << " into " << out << "\n";
    } else if (name == "sweep-gamma") {
      require_synthetic(cfg, "sweep-gamma");
      const auto rows = c2f::sweep_gamma(load_policy(cfg, coarse_path), load_policy(cfg, sft_path), mc, cfg.gamma_grid,
                                         load_reward(cfg, reward_path), c2f::make_eval_suite(cfg, cfg.fine_decode));
      const std::string csv = c2f::sweep_csv(rows);
      if (out.empty())
        std::cout << csv;
      else
        c2f::write_file(out, csv);
    } else if (name == "evaluate") {
      require_synthetic(cfg, "evaluate");
      const auto& decode = protocol == "coarse" ? cfg.coarse_decode : cfg.fine_decode;
      const auto report = c2f::full_report(model_id, load_policy(cfg, model_path), mc, load_reward(cfg, reward_path),
                                           c2f::make_eval_suite(cfg, decode));
      const std::string text = c2f::report_json(report).dump(2) + "\n";
      if (out.empty())
        std::cout << text;
      else
        c2f::write_file(out, text);
    } else if (name == "generate") {
      if (model_path.empty()) throw c2f::config_error("generate: --model is required");
      const auto ck = c2f::load_checkpoint(model_path);
      const auto tok = tokenizer_for(ck.config);
      const auto& d = protocol == "coarse" ? cfg.coarse_decode : cfg.fine_decode;
      const auto ctx = c2f::policy_context(ck.config, tok.encode(prompt), d.system_prompt);
      c2f::Rng rng(seed("generate"));
      const auto g = c2f::generate(ck.params, ck.config, ctx, {d.max_new_tokens, d.temperature, d.suppress_eos}, rng);
      std::cout << tok.decode(c2f::strip_token(g.tokens, ck.config.eos_token_id)) << "\n";
    } else if (name == "run-pipeline") {
      if (cfg.output_dir.empty()) throw c2f::config_error("run-pipeline: --output_dir is required");
      const auto r = c2f::run_pipeline(cfg, [](const std::string& m) { std::cerr << m << "\n"; });
      for (const auto& w : r.warnings) std::cerr << "warning: " << w << "\n";
      std::cout << "reward accuracy " << r.reward_accuracy << "\n";
      for (const auto* rep : {&r.sft_report, &r.coarse_report, &r.fine_report})
        std::cout << rep->model_id << ": redundancy " << rep->redundancy_4gram << ", length " << rep->mean_response_len
                  << ", reward " << rep->mean_reward << ", ppl " << rep->heldout_ppl << "\n";
      std::cout << "fine vs sft: wins " << r.fine_vs_sft.a_wins << ", losses " << r.fine_vs_sft.b_wins << ", ties "
                << r.fine_vs_sft.ties << "\n";
      std::cout << "artifacts in " << cfg.output_dir << "\n";
    }
  } catch (const c2f::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.exit_code();
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(c2f::ErrorKind::kConfig);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(c2f::ErrorKind::kIo);
  }
  return 0;
}
