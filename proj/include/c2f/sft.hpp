// Copyright 2026 The c2f-lab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Language-model training loops: base pretraining on packed documents and
// supervised fine-tuning on EOS-terminated prompt/response sequences.

#ifndef C2F_SFT_HPP_
#define C2F_SFT_HPP_

#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "c2f/datagen.hpp"
#include "c2f/model.hpp"
#include "c2f/optim.hpp"
#include "c2f/sampling.hpp"

namespace c2f {

// One training sequence; targets[i] is the id predicted at position i, or -1
// when position i is excluded from the loss.
struct LMExample {
  TokenSequence ids;
  std::vector<int> targets;
};

struct LMTrainResult {
  ParameterSet params;
  std::vector<double> epoch_losses;  // mean per-token loss of each epoch
  std::vector<std::string> warnings;
  long steps = 0;
};

namespace detail {

inline std::vector<std::size_t> shuffled_indices(std::size_t n, Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[rng() % i]);
  return idx;
}

// Minibatch AdamW on token-mean cross-entropy. Epoch order is a seeded shuffle.
inline LMTrainResult train_lm(const ParameterSet& init, const ModelConfig& config,
                              const std::vector<LMExample>& examples, double lr,
                              std::size_t batch_size, int epochs, std::uint64_t seed,
                              double weight_decay, const std::string& stage) {
  if (!(lr > 0.0)) throw config_error(stage + ": lr must be > 0");
  if (batch_size == 0) throw config_error(stage + ": batch_size must be > 0");
  if (epochs < 0) throw config_error(stage + ": epochs must be >= 0");
  LMTrainResult out;
  out.params = init;
  if (epochs == 0) return out;
  if (examples.empty()) throw data_error(stage + ": empty training set");

  std::vector<std::size_t> counts(examples.size(), 0);
  for (std::size_t i = 0; i < examples.size(); ++i) {
    check_sequence(config, examples[i].ids);
    for (int t : examples[i].targets) counts[i] += t >= 0;
  }
  AdamW opt({.lr = lr, .weight_decay = weight_decay});
  Rng rng(seed);
  for (int epoch = 0; epoch < epochs; ++epoch) {
    const auto order = shuffled_indices(examples.size(), rng);
    double loss_sum = 0.0;
    std::size_t token_sum = 0;
    for (std::size_t start = 0; start < order.size(); start += batch_size) {
      const std::size_t end = std::min(order.size(), start + batch_size);
      std::size_t batch_tokens = 0;
      for (std::size_t k = start; k < end; ++k) batch_tokens += counts[order[k]];
      if (batch_tokens == 0) continue;
      ParameterSet grads = out.params.zeros_like();
      double batch_loss = 0.0;
      for (std::size_t k = start; k < end; ++k) {
        const auto& ex = examples[order[k]];
        if (counts[order[k]] == 0) continue;
        const double w = static_cast<double>(counts[order[k]]) / batch_tokens;
        Tape tape;
        BoundParams b(tape, out.params, true);
        Var loss = softmax_cross_entropy(forward(b, config, ex.ids).logits, ex.targets);
        const double lv = tape.scalar(loss);
        if (!std::isfinite(lv)) {
          throw numeric_error(stage + ": non-finite loss at epoch " + std::to_string(epoch) +
                              ", step " + std::to_string(out.steps));
        }
        batch_loss += w * lv;
        tape.backward(loss);
        b.accumulate_grads(tape, grads, w);
      }
      opt.step(out.params, grads);
      ++out.steps;
      loss_sum += batch_loss * batch_tokens;
      token_sum += batch_tokens;
    }
    const double epoch_loss = loss_sum / static_cast<double>(std::max<std::size_t>(token_sum, 1));
    if (!out.epoch_losses.empty() && epoch_loss > out.epoch_losses.back() * 1.05) {
      out.warnings.push_back(stage + ": epoch " + std::to_string(epoch) + " loss " +
                             std::to_string(epoch_loss) + " rose more than 5% over " +
                             std::to_string(out.epoch_losses.back()));
    }
    out.epoch_losses.push_back(epoch_loss);
  }
  return out;
}

}  // namespace detail

struct SFTConfig {
  double lr = 3e-4;
  std::size_t batch_size = 16;
  int epochs = 3;
  std::size_t max_response_len = 32;
  std::uint64_t seed = 0;
  double weight_decay = 0.0;

  void validate() const {
    if (!(lr > 0.0)) throw config_error("sft: lr must be > 0");
    if (batch_size == 0) throw config_error("sft: batch_size must be > 0");
    if (epochs < 0) throw config_error("sft: epochs must be >= 0");
    if (max_response_len == 0) throw config_error("sft: max_response_len must be > 0");
  }
};

// Builds the masked example for `prompt SEP response EOS`: only the response
// tokens (including the EOS) are predicted.
inline LMExample sft_example(const TokenSequence& seq, const ModelConfig& config,
                             std::size_t max_response_len) {
  if (seq.empty() || seq.back() != config.eos_token_id)
    throw data_error("sft: target sequence is not EOS-terminated");
  const auto sep = std::find(seq.begin(), seq.end(), config.sep_token_id);
  if (sep == seq.end()) throw data_error("sft: sequence has no separator");
  const std::size_t sep_pos = static_cast<std::size_t>(sep - seq.begin());
  const std::size_t response_len = seq.size() - sep_pos - 1;
  if (response_len > max_response_len) {
    throw data_error("sft: response of " + std::to_string(response_len) +
                     " tokens exceeds max_response_len " + std::to_string(max_response_len));
  }
  LMExample ex;
  ex.ids.assign(seq.begin(), seq.end() - 1);
  ex.targets.assign(ex.ids.size(), -1);
  for (std::size_t i = sep_pos; i < ex.ids.size(); ++i) ex.targets[i] = seq[i + 1];
  return ex;
}

// Fine-tunes `init` on EOS-terminated `prompt SEP response EOS` sequences.
inline LMTrainResult train_sft(const ParameterSet& init, const ModelConfig& config,
                               const std::vector<TokenSequence>& corpus,
                               const SFTConfig& cfg) {
  cfg.validate();
  if (cfg.epochs == 0) return LMTrainResult{init, {}, {}, 0};
  std::vector<LMExample> examples;
  examples.reserve(corpus.size());
  for (const auto& seq : corpus) examples.push_back(sft_example(seq, config, cfg.max_response_len));
  return detail::train_lm(init, config, examples, cfg.lr, cfg.batch_size, cfg.epochs, cfg.seed,
                          cfg.weight_decay, "sft");
}

struct PretrainConfig {
  double lr = 1e-3;
  std::size_t batch_size = 16;
  int epochs = 2;
  std::size_t segments_per_document = 6;
  std::uint64_t seed = 0;
};

// Base-model pretraining. Documents are several EOS-terminated segments run
// together, packed up to max_context; every position is predicted.
inline std::vector<TokenSequence> pretrain_documents(const std::vector<TokenSequence>& corpus,
                                                     const ModelConfig& config,
                                                     std::size_t segments_per_document) {
  if (segments_per_document == 0) throw config_error("pretrain: segments_per_document must be > 0");
  std::vector<TokenSequence> docs;
  TokenSequence cur;
  std::size_t segs = 0;
  for (const auto& s : corpus) {
    if (cur.size() + s.size() > static_cast<std::size_t>(config.max_context) && !cur.empty()) {
      docs.push_back(std::move(cur));
      cur.clear();
      segs = 0;
    }
    cur.insert(cur.end(), s.begin(), s.end());
    if (++segs == segments_per_document) {
      docs.push_back(std::move(cur));
      cur.clear();
      segs = 0;
    }
  }
  if (cur.size() >= 2) docs.push_back(std::move(cur));
  return docs;
}

inline LMTrainResult pretrain_base(const ParameterSet& init, const ModelConfig& config,
                                   const std::vector<TokenSequence>& corpus,
                                   const PretrainConfig& cfg) {
  if (cfg.epochs == 0) return LMTrainResult{init, {}, {}, 0};
  std::vector<LMExample> examples;
  for (auto& doc : pretrain_documents(corpus, config, cfg.segments_per_document)) {
    if (doc.size() < 2) continue;
    LMExample ex;
    ex.targets.assign(doc.begin() + 1, doc.end());
    doc.pop_back();
    ex.ids = std::move(doc);
    examples.push_back(std::move(ex));
  }
  return detail::train_lm(init, config, examples, cfg.lr, cfg.batch_size, cfg.epochs, cfg.seed,
                          0.0, "pretrain");
}

}  // namespace c2f

#endif  // C2F_SFT_HPP_
