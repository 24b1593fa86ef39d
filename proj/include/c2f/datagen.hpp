// Copyright 2026 The c2f-lab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Procedural corpora and preference pairs over the synthetic vocabulary, and
// JSONL import/export of {"prompt","chosen","rejected"} records.
//
// Grammar (all choices uniform unless stated):
//   prompt   = topic T, then k ~ U{0..prompt_words_max} words of T
//   response = r ~ U{response_len_min..response_len_max} tokens, each a marker
//              with probability marker_prob, otherwise a word of T
//   sequence = prompt SEP response EOS
// Every topic owns words_per_topic words; the assignment is a permutation of
// the word ids drawn from grammar_seed.
//
// Preference pairs share the prompt grammar. Chosen responses are long and
// marker-rich without immediate repeats; rejected responses are short, noisy
// and repetitive. The planted score is
//   marker_weight * #markers - repeat_penalty * #(t_i == t_{i-1})
// and every pair satisfies score(chosen) - score(rejected) >= margin with
// margin ~ U(margin_min, margin_max).

#ifndef C2F_DATAGEN_HPP_
#define C2F_DATAGEN_HPP_

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>  // nlohmann/json, vendored

#include "c2f/error.hpp"
#include "c2f/sampling.hpp"
#include "c2f/vocab.hpp"

namespace c2f {

struct PreferencePair {
  TokenSequence prompt;
  TokenSequence chosen;
  TokenSequence rejected;

  bool operator==(const PreferencePair&) const = default;
};

struct SyntheticTaskSpec {
  std::uint64_t grammar_seed = 0;
  int prompt_words_max = 2;
  int response_len_min = 4;
  int response_len_max = 10;
  double marker_prob = 0.15;

  int chosen_len_min = 12;
  int chosen_len_max = 24;
  double chosen_marker_prob = 0.4;
  int rejected_len_min = 3;
  int rejected_len_max = 8;
  double rejected_marker_prob = 0.05;
  double rejected_noise_prob = 0.5;
  double rejected_repeat_prob = 0.3;

  double marker_weight = 1.0;
  double repeat_penalty = 1.0;
  double margin_min = 1.0;
  double margin_max = 3.0;

  void validate() const {
    auto prob = [](double p, const char* n) {
      if (!(p >= 0.0 && p <= 1.0)) throw config_error(std::string("task spec: ") + n + " not in [0,1]");
    };
    prob(marker_prob, "marker_prob");
    prob(chosen_marker_prob, "chosen_marker_prob");
    prob(rejected_marker_prob, "rejected_marker_prob");
    prob(rejected_noise_prob, "rejected_noise_prob");
    prob(rejected_repeat_prob, "rejected_repeat_prob");
    if (prompt_words_max < 0 || response_len_min < 1 || response_len_max < response_len_min ||
        chosen_len_min < 1 || chosen_len_max < chosen_len_min || rejected_len_min < 1 ||
        rejected_len_max < rejected_len_min)
      throw config_error("task spec: invalid length range");
    if (!(margin_min > 0.0) || margin_max < margin_min)
      throw config_error("task spec: margins must satisfy 0 < margin_min <= margin_max");
  }
};

// word_of[topic][j]: the j-th word token of each topic.
inline std::vector<std::vector<TokenId>> topic_words(const SyntheticTaskSpec& spec) {
  std::vector<TokenId> words(synthetic::kNumWords);
  std::iota(words.begin(), words.end(), synthetic::kWordFirst);
  Rng rng(spec.grammar_seed ^ 0x9e3779b97f4a7c15ULL);
  for (std::size_t i = words.size() - 1; i > 0; --i)
    std::swap(words[i], words[rng() % (i + 1)]);
  std::vector<std::vector<TokenId>> out(synthetic::kNumTopics);
  for (int t = 0; t < synthetic::kNumTopics; ++t)
    for (int j = 0; j < synthetic::kWordsPerTopic; ++j)
      out[t].push_back(words[t * synthetic::kWordsPerTopic + j]);
  return out;
}

inline double planted_score(const SyntheticTaskSpec& spec, const TokenSequence& response) {
  double markers = 0.0, repeats = 0.0;
  for (std::size_t i = 0; i < response.size(); ++i) {
    if (synthetic::is_marker(response[i])) markers += 1.0;
    if (i > 0 && response[i] == response[i - 1]) repeats += 1.0;
  }
  return spec.marker_weight * markers - spec.repeat_penalty * repeats;
}

namespace detail {

inline int uniform_int(Rng& rng, int lo, int hi) {
  return lo + static_cast<int>(rng() % static_cast<std::uint64_t>(hi - lo + 1));
}

inline TokenId random_marker(Rng& rng) {
  return synthetic::kMarkerFirst + static_cast<TokenId>(rng() % synthetic::kNumMarkers);
}

struct Grammar {
  explicit Grammar(const SyntheticTaskSpec& s) : spec(s), words(topic_words(s)) {
    spec.validate();
  }

  TokenId topic_word(int topic, Rng& rng) const {
    return words[topic][rng() % words[topic].size()];
  }

  // Returns the topic index alongside the prompt.
  std::pair<int, TokenSequence> prompt(Rng& rng) const {
    const int topic = static_cast<int>(rng() % synthetic::kNumTopics);
    TokenSequence p{synthetic::kTopicFirst + topic};
    const int k = uniform_int(rng, 0, spec.prompt_words_max);
    for (int i = 0; i < k; ++i) p.push_back(topic_word(topic, rng));
    return {topic, p};
  }

  TokenSequence response(int topic, Rng& rng) const {
    TokenSequence r;
    const int len = uniform_int(rng, spec.response_len_min, spec.response_len_max);
    for (int i = 0; i < len; ++i)
      r.push_back(uniform01(rng) < spec.marker_prob ? random_marker(rng) : topic_word(topic, rng));
    return r;
  }

  TokenSequence chosen(int topic, Rng& rng) const {
    TokenSequence r;
    const int len = uniform_int(rng, spec.chosen_len_min, spec.chosen_len_max);
    while (static_cast<int>(r.size()) < len) {
      const TokenId t = uniform01(rng) < spec.chosen_marker_prob ? random_marker(rng)
                                                                 : topic_word(topic, rng);
      if (!r.empty() && r.back() == t) continue;
      r.push_back(t);
    }
    return r;
  }

  TokenSequence rejected(int topic, Rng& rng) const {
    TokenSequence r;
    const int len = uniform_int(rng, spec.rejected_len_min, spec.rejected_len_max);
    for (int i = 0; i < len; ++i) {
      if (!r.empty() && uniform01(rng) < spec.rejected_repeat_prob) {
        r.push_back(r.back());
      } else if (uniform01(rng) < spec.rejected_marker_prob) {
        r.push_back(random_marker(rng));
      } else if (uniform01(rng) < spec.rejected_noise_prob) {
        r.push_back(synthetic::kWordFirst +
                    static_cast<TokenId>(rng() % synthetic::kNumWords));
      } else {
        r.push_back(topic_word(topic, rng));
      }
    }
    return r;
  }

  SyntheticTaskSpec spec;
  std::vector<std::vector<TokenId>> words;
};

}  // namespace detail

inline TokenSequence concat(const TokenSequence& a, const TokenSequence& b) {
  TokenSequence out = a;
  out.insert(out.end(), b.begin(), b.end());
  return out;
}

// prompt SEP response, the layout used for both LM training and scoring.
inline TokenSequence join_prompt_response(const TokenSequence& prompt, TokenId sep,
                                          const TokenSequence& response) {
  TokenSequence out = prompt;
  out.push_back(sep);
  out.insert(out.end(), response.begin(), response.end());
  return out;
}

// Pretraining/SFT-style sequences: prompt SEP response EOS.
inline std::vector<TokenSequence> gen_corpus(const SyntheticTaskSpec& spec, std::size_t n,
                                             std::uint64_t seed) {
  if (n == 0) throw config_error("gen_corpus: n must be > 0");
  detail::Grammar g(spec);
  Rng rng(seed);
  std::vector<TokenSequence> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto [topic, prompt] = g.prompt(rng);
    TokenSequence resp = g.response(topic, rng);
    resp.push_back(synthetic::kEos);
    out.push_back(join_prompt_response(prompt, synthetic::kSep, resp));
  }
  return out;
}

inline std::vector<TokenSequence> gen_prompts(const SyntheticTaskSpec& spec, std::size_t n,
                                              std::uint64_t seed) {
  if (n == 0) throw config_error("gen_prompts: n must be > 0");
  detail::Grammar g(spec);
  Rng rng(seed);
  std::vector<TokenSequence> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(g.prompt(rng).second);
  return out;
}

// Responses carry a trailing EOS, as natural preference data does.
inline std::vector<PreferencePair> gen_preference_pairs(const SyntheticTaskSpec& spec,
                                                        std::size_t n, std::uint64_t seed) {
  if (n == 0) throw config_error("gen_preference_pairs: n must be > 0");
  detail::Grammar g(spec);
  Rng rng(seed);
  std::vector<PreferencePair> out;
  out.reserve(n);
  while (out.size() < n) {
    auto [topic, prompt] = g.prompt(rng);
    const double margin =
        spec.margin_min + (spec.margin_max - spec.margin_min) * uniform01(rng);
    TokenSequence chosen = g.chosen(topic, rng);
    const double sc = planted_score(spec, chosen);
    bool found = false;
    for (int attempt = 0; attempt < 64 && !found; ++attempt) {
      TokenSequence rejected = g.rejected(topic, rng);
      if (sc - planted_score(spec, rejected) >= margin) {
        chosen.push_back(synthetic::kEos);
        rejected.push_back(synthetic::kEos);
        out.push_back({prompt, chosen, rejected});
        found = true;
      }
    }
  }
  return out;
}

inline TokenSequence strip_token(const TokenSequence& s, TokenId token) {
  TokenSequence out;
  for (TokenId t : s)
    if (t != token) out.push_back(t);
  return out;
}

// Removes every EOS from prompts and responses.
inline std::vector<PreferencePair> strip_stop_tokens(const std::vector<PreferencePair>& pairs,
                                                     TokenId eos) {
  std::vector<PreferencePair> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs)
    out.push_back({strip_token(p.prompt, eos), strip_token(p.chosen, eos),
                   strip_token(p.rejected, eos)});
  return out;
}

// ---------------------------------------------------------------------------
// JSONL.

struct IngestResult {
  std::vector<PreferencePair> pairs;
  std::size_t warnings = 0;
  std::vector<std::string> messages;
};

// Reads {"prompt","chosen","rejected"} string records, one per line, and
// tokenizes them. Malformed lines are skipped and counted.
inline IngestResult ingest_jsonl(const std::string& path,
                                 const Tokenizer& tok = Tokenizer(VocabMode::kText)) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot read " + path);
  IngestResult r;
  std::string line;
  std::size_t lineno = 0;
  auto warn = [&](const std::string& why) {
    ++r.warnings;
    r.messages.push_back(path + ":" + std::to_string(lineno) + ": " + why);
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object()) {
      warn("not a JSON object");
      continue;
    }
    bool ok = true;
    for (const char* key : {"prompt", "chosen", "rejected"}) {
      if (!j.contains(key) || !j[key].is_string()) {
        warn(std::string("missing or non-string field \"") + key + "\"");
        ok = false;
        break;
      }
    }
    if (!ok) continue;
    try {
      PreferencePair p{tok.encode(j["prompt"].get<std::string>()),
                       tok.encode(j["chosen"].get<std::string>()),
                       tok.encode(j["rejected"].get<std::string>())};
      if (p.chosen == p.rejected) {
        warn("chosen equals rejected");
        continue;
      }
      r.pairs.push_back(std::move(p));
    } catch (const Error& e) {
      warn(e.what());
    }
  }
  if (in.bad()) throw io_error("read failure on " + path);
  if (r.pairs.empty()) throw data_error("no valid preference records in " + path);
  return r;
}

inline void export_jsonl(const std::vector<PreferencePair>& pairs, const std::string& path,
                         const Tokenizer& tok = Tokenizer(VocabMode::kText)) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw io_error("cannot write " + path);
  for (const auto& p : pairs) {
    nlohmann::json j;
    j["prompt"] = tok.decode(p.prompt);
    j["chosen"] = tok.decode(p.chosen);
    j["rejected"] = tok.decode(p.rejected);
    out << j.dump() << '\n';
  }
  if (!out) throw io_error("write failure on " + path);
}

}  // namespace c2f

#endif  // C2F_DATAGEN_HPP_
