// Copyright 2026 The c2f-lab Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>
#include <set>

#include "c2f/checkpoint.hpp"
#include "c2f/eval.hpp"
#include "c2f/merge.hpp"
#include "test_util.hpp"

namespace c2f {
namespace {

using synthetic::kEos;
using synthetic::kSep;

ModelConfig small_config() {
  ModelConfig c;
  c.d_model = 8;
  c.n_heads = 2;
  c.n_layers = 1;
  c.d_ff = 8;
  return c;
}

ParameterSet random_params(const ModelConfig& c, std::uint64_t seed, double scale = 1.0) {
  ParameterSet p = init_params(c, seed);
  std::mt19937_64 rng(seed * 7 + 1);
  std::normal_distribution<double> n(0.0, scale);
  for (auto& e : p)
    for (double& x : e.tensor.data) x = n(rng);
  return p;
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("c2f_test_" + name)).string();
}

// Merging.

TEST(Merge, ReferenceArithmetic) {
  ParameterSet a, b;
  a.add("w", Tensor({2}, {1.0, 2.0}));
  b.add("w", Tensor({2}, {3.0, 4.0}));
  const auto m = merge_params(a, b, 0.7);
  EXPECT_NEAR(m[0].tensor.data[0], 1.6, 1e-15);
  EXPECT_NEAR(m[0].tensor.data[1], 2.6, 1e-15);
  EXPECT_EQ(m[0].tensor.data[0], 0.7 * 1.0 + (1.0 - 0.7) * 3.0);
  EXPECT_EQ(kDefaultGamma, 0.7);
}

TEST(Merge, EndpointsAreBitExact) {
  const ModelConfig c = small_config();
  const auto a = random_params(c, 1), b = random_params(c, 2);
  EXPECT_TRUE(bit_equal(merge_params(a, b, 1.0), a));
  EXPECT_TRUE(bit_equal(merge_params(a, b, 0.0), b));
}

// A gamma whose complement 1 - gamma is exactly representable.
double exact_complement_gamma(double u) { return u >= 0.5 ? u : 1.0 - (1.0 - u); }

TEST(Merge, WeightsAreGammaAndComplement) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 10000; ++i) {
    const double g = u(rng);
    const auto [wa, wb] = merge_weights(g);
    EXPECT_EQ(wa, g);
    EXPECT_EQ(wb, 1.0 - g);
    const double e = exact_complement_gamma(g);
    const auto [sa, sb] = merge_weights(1.0 - e);
    EXPECT_EQ(sa, merge_weights(e).second);
    EXPECT_EQ(sb, e);
  }
  EXPECT_THROW(merge_weights(-0.1), Error);
  EXPECT_THROW(merge_weights(1.5), Error);
  EXPECT_THROW(merge_weights(std::nan("")), Error);
}

TEST(Merge, PropertiesOnRandomPairs) {
  const ModelConfig c = small_config();
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    const auto a = random_params(c, 100 + trial), b = random_params(c, 300 + trial);
    const double g = trial % 2 ? u(rng) : exact_complement_gamma(u(rng));
    const auto m = merge_params(a, b, g);
    if (1.0 - (1.0 - g) == g) {
      EXPECT_TRUE(bit_equal(m, merge_params(b, a, 1.0 - g))) << "gamma " << g;
    }
    const auto fa = a.flatten(), fb = b.flatten(), fm = m.flatten();
    for (std::size_t i = 0; i < fm.size(); ++i) {
      ASSERT_EQ(fm[i], g * fa[i] + (1.0 - g) * fb[i]);
      ASSERT_GE(fm[i], std::min(fa[i], fb[i]));
      ASSERT_LE(fm[i], std::max(fa[i], fb[i]));
    }
    EXPECT_EQ(m.manifest(), a.manifest());
  }
}

TEST(Merge, NonFiniteResultThrows) {
  ParameterSet a, b;
  a.add("w", Tensor({2}, {1.0, 1e308}));
  b.add("w", Tensor({2}, {3.0, std::numeric_limits<double>::infinity()}));
  EXPECT_THROW(merge_params(a, b, 0.5), Error);
}

TEST(Compatibility, ReportsDifferences) {
  const ModelConfig c = small_config();
  const Checkpoint a{c, random_params(c, 1), {}};
  EXPECT_TRUE(check_compatibility(a, a).ok);

  ModelConfig wide = c;
  wide.d_model = 16;
  const Checkpoint w{wide, random_params(wide, 1), {}};
  const auto r = check_compatibility(a, w);
  EXPECT_FALSE(r.ok);
  ASSERT_FALSE(r.mismatches.empty());
  EXPECT_NE(r.mismatches[0].find("d_model"), std::string::npos);

  ParameterSet renamed;
  for (const auto& e : a.params) renamed.add(e.name == "final_norm" ? "final_norm_renamed" : e.name, e.tensor);
  const auto r2 = check_compatibility(a, Checkpoint{c, renamed, {}});
  ASSERT_EQ(r2.mismatches.size(), 1u);
  EXPECT_NE(r2.mismatches[0].find("final_norm_renamed"), std::string::npos);
  EXPECT_THROW(merge(a, w, 0.5), Error);
}

TEST(Merge, CheckpointMetadata) {
  const ModelConfig c = small_config();
  const Checkpoint a{c, random_params(c, 1), {}}, b{c, random_params(c, 2), {}};
  const Checkpoint m = merge(a, b, 0.7);
  EXPECT_EQ(m.metadata["gamma"], 0.7);
  EXPECT_EQ(m.metadata["stage"], "fine");
  EXPECT_TRUE(bit_equal(m.params, merge_params(a.params, b.params, 0.7)));
}

// Checkpoints.

TEST(Checkpoint, RoundTripIsBitExact) {
  const ModelConfig c = desk_config();
  const ParameterSet p = init_params(c, 5);
  const std::string path = temp_path("roundtrip.ckpt");
  save_checkpoint(p, c, path, {{"stage", "test"}});
  const Checkpoint back = load_checkpoint(path);
  EXPECT_TRUE(bit_equal(back.params, p));
  EXPECT_EQ(back.config, c);
  EXPECT_EQ(back.metadata["stage"], "test");
  EXPECT_EQ(serialize_checkpoint(back), read_file(path));
  std::filesystem::remove(path);
}

TEST(Checkpoint, SpecialValuesSurvive) {
  const ModelConfig c = small_config();
  ParameterSet p = random_params(c, 2);
  p[0].tensor.data[0] = -0.0;
  p[0].tensor.data[1] = std::numeric_limits<double>::denorm_min();
  p[0].tensor.data[2] = 0.1;
  const Checkpoint back = deserialize_checkpoint(serialize_checkpoint({c, p, {}}));
  EXPECT_TRUE(bit_equal(back.params, p));
  EXPECT_TRUE(std::signbit(back.params[0].tensor.data[0]));
}

TEST(Checkpoint, LayoutIsLittleEndianF64) {
  const ModelConfig c = small_config();
  ParameterSet p = random_params(c, 2);
  p[0].tensor.data[0] = 1.0;  // 0x3FF0000000000000
  const std::string bytes = serialize_checkpoint({c, p, {}});
  EXPECT_EQ(bytes.substr(0, 8), std::string("C2FCKPT\0", 8));
  EXPECT_EQ(bytes[8], 1);
  const std::uint32_t hlen = static_cast<unsigned char>(bytes[12]) | static_cast<unsigned char>(bytes[13]) << 8 |
                             static_cast<unsigned char>(bytes[14]) << 16 | static_cast<unsigned char>(bytes[15]) << 24;
  const std::string payload = bytes.substr(16 + hlen, 8);
  EXPECT_EQ(payload, std::string("\0\0\0\0\0\0\xf0\x3f", 8));
  EXPECT_EQ(bytes.size(), 16 + hlen + p.numel() * 8);
  const auto header = nlohmann::json::parse(bytes.substr(16, hlen));
  EXPECT_EQ(header["payload_sha256"], sha256_hex(reinterpret_cast<const unsigned char*>(bytes.data()) + 16 + hlen,
                                                 p.numel() * 8));
}

TEST(Checkpoint, Sha256KnownAnswer) {
  const std::string abc = "abc";
  EXPECT_EQ(sha256_hex(reinterpret_cast<const unsigned char*>(abc.data()), abc.size()),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(Checkpoint, FlippedPayloadByteFailsChecksum) {
  const ModelConfig c = small_config();
  std::string bytes = serialize_checkpoint({c, random_params(c, 3), {}});
  bytes[bytes.size() - 5] ^= 0x01;
  try {
    deserialize_checkpoint(bytes);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kData);
    EXPECT_NE(std::string(e.what()).find("checksum"), std::string::npos);
  }
}

TEST(Checkpoint, RejectsBadFiles) {
  const ModelConfig c = small_config();
  const std::string good = serialize_checkpoint({c, random_params(c, 3), {}});
  std::string magic = good;
  magic[0] = 'X';
  EXPECT_THROW(deserialize_checkpoint(magic), Error);
  std::string version = good;
  version[8] = 2;
  EXPECT_THROW(deserialize_checkpoint(version), Error);
  EXPECT_THROW(deserialize_checkpoint(good.substr(0, good.size() - 8)), Error);
  EXPECT_THROW(deserialize_checkpoint(good.substr(0, 10)), Error);
  try {
    load_checkpoint(temp_path("does_not_exist.ckpt"));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kIo);
  }
}

TEST(Checkpoint, ConfigMismatchIsExplicit) {
  const ModelConfig c = small_config();
  const std::string path = temp_path("mismatch.ckpt");
  save_checkpoint(random_params(c, 4), c, path);
  ModelConfig other = c;
  other.n_layers = 2;
  try {
    load_checkpoint(path, other);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kConfig);
    EXPECT_NE(std::string(e.what()).find("n_layers"), std::string::npos);
  }
  EXPECT_NO_THROW(load_checkpoint(path, c));
  std::filesystem::remove(path);
}

// Evaluation metrics.

// Brute force: count distinct n-grams by pairwise comparison.
double redundancy_bruteforce(const TokenSequence& s, std::size_t n) {
  const std::size_t total = s.size() - n + 1;
  std::size_t distinct = 0;
  for (std::size_t i = 0; i < total; ++i) {
    bool seen = false;
    for (std::size_t j = 0; j < i && !seen; ++j) seen = std::equal(s.begin() + i, s.begin() + i + n, s.begin() + j);
    distinct += !seen;
  }
  return 1.0 - static_cast<double>(distinct) / static_cast<double>(total);
}

TEST(Redundancy, KnownValues) {
  EXPECT_EQ(redundancy_ngram(TokenSequence{1, 2, 3, 4, 5, 6, 7, 8}), 0.0);
  EXPECT_DOUBLE_EQ(redundancy_ngram(TokenSequence{1, 2, 1, 2, 1, 2}), 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(redundancy_ngram(TokenSequence(10, 5)), 6.0 / 7.0);
  EXPECT_THROW(redundancy_ngram(TokenSequence{1, 2, 3}), Error);
  EXPECT_THROW(redundancy_ngram(TokenSequence{1, 2, 3}, 0), Error);
}

TEST(Redundancy, MatchesBruteForce) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t len = 4 + rng() % 61;
    const int alphabet = 1 + static_cast<int>(rng() % 4);
    TokenSequence s(len);
    for (auto& t : s) t = static_cast<TokenId>(rng() % alphabet);
    const double r = redundancy_ngram(s);
    EXPECT_EQ(r, redundancy_bruteforce(s, 4));
    EXPECT_GE(r, 0.0);
    EXPECT_LE(r, 1.0);
  }
}

TEST(Perplexity, UniformLogitsGiveVocabSize) {
  const ModelConfig c = desk_config();
  ParameterSet p = init_params(c, 1);
  for (double& x : p[ParamIndex::lm_head(c)].tensor.data) x = 0.0;
  EXPECT_NEAR(heldout_perplexity(p, c, gen_corpus({}, 5, 1)), 64.0, 1e-9);
  EXPECT_THROW(heldout_perplexity(p, c, {}), Error);
}

TEST(Perplexity, MatchesScalarPass) {
  const ModelConfig c = desk_config();
  const ParameterSet p = random_params(c, 6, 0.1);
  const auto corpus = gen_corpus({}, 4, 2);
  double nll = 0.0;
  std::size_t count = 0;
  for (const auto& seq : corpus) {
    const Tensor l = forward_logits(p, c, seq);
    const std::size_t V = l.shape[1];
    for (std::size_t i = 0; i + 1 < seq.size(); ++i) {
      double z = 0.0;
      for (std::size_t j = 0; j < V; ++j) z += std::exp(l.data[i * V + j]);
      nll += std::log(z) - l.data[i * V + seq[i + 1]];
      ++count;
    }
  }
  EXPECT_NEAR(heldout_perplexity(p, c, corpus), std::exp(nll / count), 1e-9);
}

struct EvalFixture {
  ModelConfig c = desk_config();
  RewardModel rm{c, init_params(c, 1), init_scalar_head(c)};
  ParameterSet a = random_params(c, 7, 0.1);
  ParameterSet b = random_params(c, 8, 0.1);
  std::vector<TokenSequence> prompts = gen_prompts({}, 12, 3);
  EvalFixture() {
    Rng rng(2);
    for (double& w : rm.head.at("head.w").data) w = uniform01(rng) - 0.5;
  }
};

TEST(WinRate, SelfIsAllTies) {
  EvalFixture f;
  const auto w = win_rate(f.a, f.a, f.c, f.rm, f.prompts, {12, 0.0, false, false}, 1);
  EXPECT_EQ(w.ties, 1.0);
  EXPECT_EQ(w.a_wins, 0.0);
  EXPECT_EQ(w.n, f.prompts.size());
}

TEST(WinRate, SwappingSwapsFractions) {
  EvalFixture f;
  const DecodeOptions d{12, 1.0, false, false};
  const auto ab = win_rate(f.a, f.b, f.c, f.rm, f.prompts, d, 4);
  const auto ba = win_rate(f.b, f.a, f.c, f.rm, f.prompts, d, 4);
  EXPECT_EQ(ab.a_wins, ba.b_wins);
  EXPECT_EQ(ab.b_wins, ba.a_wins);
  EXPECT_EQ(ab.ties, ba.ties);
  EXPECT_EQ(ab.a_wins + ab.b_wins + ab.ties, 1.0);
  EXPECT_GT(ab.a_wins + ab.b_wins, 0.0);
}

TEST(WinRate, FromScores) {
  const auto w = win_rate_from_scores({1.0, 2.0, 3.0, 4.0}, {0.0, 2.0, 5.0, 1.0});
  EXPECT_EQ(w.a_wins, 0.5);
  EXPECT_EQ(w.b_wins, 0.25);
  EXPECT_EQ(w.ties, 0.25);
  EXPECT_THROW(win_rate_from_scores({1.0}, {}), Error);
}

TEST(FullReport, DeterministicAndFinite) {
  EvalFixture f;
  const EvalSuite suite{f.prompts, gen_corpus({}, 6, 9), {16, 1.0, false, false}, 4, 11};
  const auto r1 = full_report("a", f.a, f.c, f.rm, suite);
  const auto r2 = full_report("a", f.a, f.c, f.rm, suite);
  EXPECT_EQ(report_json(r1).dump(), report_json(r2).dump());
  EXPECT_EQ(r1.n_prompts, 12u);
  EXPECT_GE(r1.redundancy_4gram, 0.0);
  EXPECT_LE(r1.redundancy_4gram, 1.0);
  EXPECT_GT(r1.mean_response_len, 0.0);
  EXPECT_TRUE(std::isfinite(r1.mean_reward));
  EXPECT_GT(r1.heldout_ppl, 1.0);
  const auto j = report_json(r1);
  EXPECT_EQ(j["note"], kJudgeNote);
  EXPECT_EQ(j.begin().key(), "note");
}

TEST(FullReport, SuppressedDecodingFillsLength) {
  EvalFixture f;
  const EvalSuite suite{f.prompts, gen_corpus({}, 3, 9), {20, 0.0, true, true}, 4, 1};
  const auto r = full_report("coarse", f.a, f.c, f.rm, suite);
  EXPECT_EQ(r.mean_response_len, 20.0);
  EXPECT_EQ(r.eos_rate, 0.0);
}

TEST(Sweep, EndpointsAndRerunEquality) {
  EvalFixture f;
  const EvalSuite suite{f.prompts, gen_corpus({}, 4, 9), {16, 1.0, false, false}, 4, 3};
  const auto rows = sweep_gamma(f.a, f.b, f.c, {1.0, 0.5, 0.0}, f.rm, suite);
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[0].gamma, 0.0);
  EXPECT_EQ(rows[2].gamma, 1.0);
  auto same = [](const EvalReport& x, const EvalReport& y) {
    return x.redundancy_4gram == y.redundancy_4gram && x.mean_response_len == y.mean_response_len &&
           x.mean_reward == y.mean_reward && x.heldout_ppl == y.heldout_ppl && x.scores == y.scores;
  };
  EXPECT_TRUE(same(rows[0].report, full_report("b", f.b, f.c, f.rm, suite)));
  EXPECT_TRUE(same(rows[2].report, full_report("a", f.a, f.c, f.rm, suite)));
  EXPECT_TRUE(same(rows[1].report, full_report("m", merge_params(f.a, f.b, 0.5), f.c, f.rm, suite)));
  EXPECT_EQ(rows[0].winrate_vs_sft, 0.0);  // all ties against itself
  const std::string csv = sweep_csv(rows);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "gamma,redundancy_4gram,mean_len,mean_reward,winrate_vs_sft,heldout_ppl");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 4);
  EXPECT_THROW(sweep_gamma(f.a, f.b, f.c, {1.2}, f.rm, suite), Error);
  EXPECT_EQ(table_gamma_grid().size(), 9u);
}

}  // namespace
}  // namespace c2f
