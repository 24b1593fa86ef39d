// Copyright 2026 The c2f-lab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Token vocabularies. Two are provided:
//
//   synthetic  64 ids: reserved specials, topic tokens, analysis markers and
//              content words used by the procedural task generator.
//   text       byte-level: ids 0..255 are raw bytes, followed by PAD/EOS/SEP.
//
// The system prompt is a reserved id prefix in synthetic mode and the byte
// encoding of kSystemPrompt in text mode.

#ifndef C2F_VOCAB_HPP_
#define C2F_VOCAB_HPP_

#include <string>
#include <string_view>
#include <vector>

#include "c2f/error.hpp"

namespace c2f {

using TokenId = int;
using TokenSequence = std::vector<TokenId>;

inline constexpr std::string_view kSystemPrompt =
    "Below is an instruction that describes a task. Write a detailed analytical "
    "and reasoning response that appropriately completes the request, and don't "
    "generate any end of sentence tokens.";

enum class VocabMode { kSynthetic, kText };

namespace synthetic {

inline constexpr TokenId kPad = 0;
inline constexpr TokenId kEos = 1;
inline constexpr TokenId kSep = 2;
inline constexpr TokenId kSystemFirst = 3;  // 3..6
inline constexpr int kNumSystem = 4;
inline constexpr TokenId kUnk = 7;
inline constexpr TokenId kTopicFirst = 8;
inline constexpr int kNumTopics = 8;
inline constexpr TokenId kMarkerFirst = 16;
inline constexpr int kNumMarkers = 8;
inline constexpr TokenId kWordFirst = 24;
inline constexpr int kNumWords = 40;
inline constexpr int kVocabSize = 64;
inline constexpr int kWordsPerTopic = 5;

inline bool is_marker(TokenId t) {
  return t >= kMarkerFirst && t < kMarkerFirst + kNumMarkers;
}
inline bool is_topic(TokenId t) { return t >= kTopicFirst && t < kTopicFirst + kNumTopics; }
inline bool is_word(TokenId t) { return t >= kWordFirst && t < kWordFirst + kNumWords; }

// Word ids associated with topic index `topic` (0-based).
inline TokenId topic_word(int topic, int j) {
  return kWordFirst + topic * kWordsPerTopic + j;
}

inline TokenSequence system_prefix() {
  TokenSequence s;
  for (int i = 0; i < kNumSystem; ++i) s.push_back(kSystemFirst + i);
  return s;
}

inline std::string token_name(TokenId t) {
  switch (t) {
    case kPad: return "<pad>";
    case kEos: return "<eos>";
    case kSep: return "<sep>";
    case kUnk: return "<unk>";
    default: break;
  }
  if (t >= kSystemFirst && t < kSystemFirst + kNumSystem)
    return "<sys" + std::to_string(t - kSystemFirst) + ">";
  if (is_topic(t)) return "T" + std::to_string(t - kTopicFirst);
  if (is_marker(t)) return "M" + std::to_string(t - kMarkerFirst);
  if (is_word(t)) return "w" + std::to_string(t - kWordFirst);
  throw data_error("synthetic token id out of range: " + std::to_string(t));
}

inline TokenId token_from_name(std::string_view name) {
  for (TokenId t = 0; t < kVocabSize; ++t)
    if (token_name(t) == name) return t;
  throw data_error("unknown synthetic token: " + std::string(name));
}

}  // namespace synthetic

namespace text {

inline constexpr TokenId kPad = 256;
inline constexpr TokenId kEos = 257;
inline constexpr TokenId kSep = 258;
inline constexpr int kVocabSize = 259;

}  // namespace text

// Converts between strings and token ids for one vocabulary.
class Tokenizer {
 public:
  explicit Tokenizer(VocabMode mode) : mode_(mode) {}

  VocabMode mode() const { return mode_; }

  TokenSequence encode(std::string_view s) const {
    TokenSequence out;
    if (mode_ == VocabMode::kText) {
      for (unsigned char c : s) out.push_back(static_cast<TokenId>(c));
      return out;
    }
    std::size_t i = 0;
    while (i < s.size()) {
      while (i < s.size() && s[i] == ' ') ++i;
      std::size_t j = i;
      while (j < s.size() && s[j] != ' ') ++j;
      if (j > i) out.push_back(synthetic::token_from_name(s.substr(i, j - i)));
      i = j;
    }
    return out;
  }

  std::string decode(const TokenSequence& ids) const {
    std::string out;
    if (mode_ == VocabMode::kText) {
      for (TokenId t : ids) {
        if (t < 0 || t > 255) throw data_error("non-byte token in text decode");
        out.push_back(static_cast<char>(t));
      }
      return out;
    }
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (i) out.push_back(' ');
      out += synthetic::token_name(ids[i]);
    }
    return out;
  }

 private:
  VocabMode mode_;
};

}  // namespace c2f

#endif  // C2F_VOCAB_HPP_
