// Copyright 2026 The c2f-lab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Checkpoint file layout (all integers little-endian):
//
//   bytes 0..7    magic "C2FCKPT\0"
//   bytes 8..11   u32 format version
//   bytes 12..15  u32 header length H
//   H bytes       UTF-8 JSON header
//   payload       IEEE-754 binary64 values, little-endian, manifest order
//
// Header fields: "format_version", "config" (ModelConfig), "tensors" (list of
// {name, shape, offset, count}; offset in bytes from the payload start),
// "payload_bytes", "payload_sha256" (hex) and "metadata" (free-form object).

#ifndef C2F_CHECKPOINT_HPP_
#define C2F_CHECKPOINT_HPP_

#include <openssl/evp.h>

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "c2f/model.hpp"
#include "c2f/params.hpp"

namespace c2f {

inline constexpr std::array<char, 8> kCheckpointMagic = {'C', '2', 'F', 'C', 'K', 'P', 'T', '\0'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"vocab_size", c.vocab_size},     {"d_model", c.d_model},
                     {"n_layers", c.n_layers},         {"n_heads", c.n_heads},
                     {"d_ff", c.d_ff},                 {"max_context", c.max_context},
                     {"eos_token_id", c.eos_token_id}, {"pad_token_id", c.pad_token_id},
                     {"sep_token_id", c.sep_token_id}, {"system_prefix_ids", c.system_prefix_ids}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  j.at("vocab_size").get_to(c.vocab_size);
  j.at("d_model").get_to(c.d_model);
  j.at("n_layers").get_to(c.n_layers);
  j.at("n_heads").get_to(c.n_heads);
  j.at("d_ff").get_to(c.d_ff);
  j.at("max_context").get_to(c.max_context);
  j.at("eos_token_id").get_to(c.eos_token_id);
  j.at("pad_token_id").get_to(c.pad_token_id);
  j.at("sep_token_id").get_to(c.sep_token_id);
  j.at("system_prefix_ids").get_to(c.system_prefix_ids);
}

// Lists every ModelConfig field whose value differs, as "field: a vs b".
inline std::vector<std::string> config_differences(const ModelConfig& a, const ModelConfig& b) {
  std::vector<std::string> out;
  const nlohmann::json ja = a, jb = b;
  for (auto it = ja.begin(); it != ja.end(); ++it) {
    if (jb.at(it.key()) != it.value())
      out.push_back(it.key() + ": " + it.value().dump() + " vs " + jb.at(it.key()).dump());
  }
  return out;
}

inline std::string sha256_hex(const unsigned char* data, std::size_t n) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data, n, md, &len, EVP_sha256(), nullptr) != 1)
    throw io_error("sha256: digest failed");
  static constexpr char kHex[] = "0123456789abcdef";
  std::string s;
  for (unsigned int i = 0; i < len; ++i) {
    s.push_back(kHex[md[i] >> 4]);
    s.push_back(kHex[md[i] & 15]);
  }
  return s;
}

struct Checkpoint {
  ModelConfig config;
  ParameterSet params;
  nlohmann::json metadata = nlohmann::json::object();
};

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline std::uint32_t get_u32(const std::string& in, std::size_t pos) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  return v;
}

inline std::string encode_payload(const ParameterSet& params) {
  std::string out;
  out.reserve(params.numel() * 8);
  for (const auto& e : params) {
    for (double x : e.tensor.data) {
      const auto bits = std::bit_cast<std::uint64_t>(x);
      for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
    }
  }
  return out;
}

inline double decode_f64(const char* p) {
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(p[i])) << (8 * i);
  return std::bit_cast<double>(bits);
}

}  // namespace detail

// The complete file image; identical inputs give identical bytes.
inline std::string serialize_checkpoint(const Checkpoint& ck) {
  const std::string payload = detail::encode_payload(ck.params);
  nlohmann::json tensors = nlohmann::json::array();
  std::size_t offset = 0;
  for (const auto& e : ck.params) {
    tensors.push_back({{"name", e.name},
                       {"shape", e.tensor.shape},
                       {"offset", offset},
                       {"count", e.tensor.numel()}});
    offset += e.tensor.numel() * 8;
  }
  nlohmann::json header{{"format_version", kCheckpointVersion},
                        {"config", ck.config},
                        {"tensors", tensors},
                        {"payload_bytes", payload.size()},
                        {"payload_sha256",
                         sha256_hex(reinterpret_cast<const unsigned char*>(payload.data()), payload.size())},
                        {"metadata", ck.metadata}};
  const std::string h = header.dump();
  std::string out(kCheckpointMagic.begin(), kCheckpointMagic.end());
  detail::put_u32(out, kCheckpointVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(h.size()));
  out += h;
  out += payload;
  return out;
}

inline Checkpoint deserialize_checkpoint(const std::string& bytes, const std::string& origin = "checkpoint") {
  if (bytes.size() < 16 || !std::equal(kCheckpointMagic.begin(), kCheckpointMagic.end(), bytes.begin()))
    throw data_error(origin + ": not a checkpoint file");
  const std::uint32_t version = detail::get_u32(bytes, 8);
  if (version != kCheckpointVersion) {
    throw data_error(origin + ": format version " + std::to_string(version) + ", expected " +
                     std::to_string(kCheckpointVersion));
  }
  const std::size_t hlen = detail::get_u32(bytes, 12);
  if (16 + hlen > bytes.size()) throw data_error(origin + ": truncated header");
  const nlohmann::json header = nlohmann::json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(hlen), nullptr, false);
  if (header.is_discarded() || !header.is_object()) throw data_error(origin + ": malformed header");
  Checkpoint ck;
  try {
    if (header.at("format_version").get<std::uint32_t>() != version)
      throw data_error(origin + ": header version disagrees with preamble");
    ck.config = header.at("config").get<ModelConfig>();
    ck.metadata = header.value("metadata", nlohmann::json::object());
    const std::string payload = bytes.substr(16 + hlen);
    if (payload.size() != header.at("payload_bytes").get<std::size_t>())
      throw data_error(origin + ": payload length mismatch");
    const std::string digest =
        sha256_hex(reinterpret_cast<const unsigned char*>(payload.data()), payload.size());
    if (digest != header.at("payload_sha256").get<std::string>())
      throw data_error(origin + ": payload checksum mismatch");
    std::size_t expected_offset = 0;
    for (const auto& t : header.at("tensors")) {
      const auto offset = t.at("offset").get<std::size_t>();
      const auto count = t.at("count").get<std::size_t>();
      Shape shape = t.at("shape").get<Shape>();
      if (offset != expected_offset || shape_numel(shape) != count || offset + count * 8 > payload.size())
        throw data_error(origin + ": tensor table is not contiguous");
      Tensor tensor(shape);
      for (std::size_t i = 0; i < count; ++i) tensor.data[i] = detail::decode_f64(payload.data() + offset + 8 * i);
      ck.params.add(t.at("name").get<std::string>(), std::move(tensor));
      expected_offset = offset + count * 8;
    }
    if (expected_offset != payload.size()) throw data_error(origin + ": payload has trailing bytes");
  } catch (const nlohmann::json::exception& e) {
    throw data_error(origin + ": malformed header (" + e.what() + ")");
  }
  ck.config.validate();
  return ck;
}

inline void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw io_error("cannot write " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw io_error("write failure on " + path);
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot read " + path);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw io_error("read failure on " + path);
  return bytes;
}

inline void save_checkpoint(const Checkpoint& ck, const std::string& path) {
  write_file(path, serialize_checkpoint(ck));
}

inline void save_checkpoint(const ParameterSet& params, const ModelConfig& config, const std::string& path,
                            const nlohmann::json& metadata = nlohmann::json::object()) {
  save_checkpoint(Checkpoint{config, params, metadata}, path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  return deserialize_checkpoint(read_file(path), path);
}

// Loads and insists on `expected` as the stored configuration.
inline Checkpoint load_checkpoint(const std::string& path, const ModelConfig& expected) {
  Checkpoint ck = load_checkpoint(path);
  const auto diffs = config_differences(ck.config, expected);
  if (!diffs.empty()) {
    std::string msg = path + ": model config mismatch";
    for (const auto& d : diffs) msg += "; " + d;
    throw config_error(msg);
  }
  return ck;
}

}  // namespace c2f

#endif  // C2F_CHECKPOINT_HPP_
