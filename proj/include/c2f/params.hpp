// Copyright 2026 The c2f-lab Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef C2F_PARAMS_HPP_
#define C2F_PARAMS_HPP_

#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "c2f/error.hpp"
#include "c2f/tensor.hpp"

namespace c2f {

struct ManifestEntry {
  std::string name;
  Shape shape;

  bool operator==(const ManifestEntry&) const = default;
};

using Manifest = std::vector<ManifestEntry>;

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

// Named tensors in a fixed, construction-defined order. The flat view is the
// concatenation of every tensor's row-major data in that order.
class ParameterSet {
 public:
  ParameterSet() = default;

  void add(std::string name, Tensor tensor) {
    if (find(name)) throw config_error("duplicate parameter name: " + name);
    entries_.push_back({std::move(name), std::move(tensor)});
  }

  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }

  NamedTensor& operator[](std::size_t i) { return entries_[i]; }
  const NamedTensor& operator[](std::size_t i) const { return entries_[i]; }

  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  std::optional<std::size_t> find(const std::string& name) const {
    for (std::size_t i = 0; i < entries_.size(); ++i)
      if (entries_[i].name == name) return i;
    return std::nullopt;
  }

  const Tensor& at(const std::string& name) const {
    auto i = find(name);
    if (!i) throw config_error("no parameter named " + name);
    return entries_[*i].tensor;
  }

  Tensor& at(const std::string& name) {
    auto i = find(name);
    if (!i) throw config_error("no parameter named " + name);
    return entries_[*i].tensor;
  }

  std::size_t numel() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.tensor.numel();
    return n;
  }

  Manifest manifest() const {
    Manifest m;
    m.reserve(entries_.size());
    for (const auto& e : entries_) m.push_back({e.name, e.tensor.shape});
    return m;
  }

  std::vector<double> flatten() const {
    std::vector<double> flat;
    flat.reserve(numel());
    for (const auto& e : entries_)
      flat.insert(flat.end(), e.tensor.data.begin(), e.tensor.data.end());
    return flat;
  }

  void unflatten(std::span<const double> flat) {
    if (flat.size() != numel()) {
      throw config_error("unflatten: expected " + std::to_string(numel()) +
                         " values, got " + std::to_string(flat.size()));
    }
    std::size_t off = 0;
    for (auto& e : entries_) {
      std::copy_n(flat.data() + off, e.tensor.numel(), e.tensor.data.begin());
      off += e.tensor.numel();
    }
  }

  static ParameterSet from_flat(const Manifest& manifest, std::span<const double> flat) {
    ParameterSet p;
    for (const auto& m : manifest) p.add(m.name, Tensor(m.shape));
    p.unflatten(flat);
    return p;
  }

  ParameterSet zeros_like() const {
    ParameterSet z;
    for (const auto& e : entries_) z.add(e.name, Tensor(e.tensor.shape));
    return z;
  }

  // Appends every entry of `other` (names must stay unique).
  void append(const ParameterSet& other) {
    for (const auto& e : other) add(e.name, e.tensor);
  }

  bool all_finite() const {
    for (const auto& e : entries_)
      for (double x : e.tensor.data)
        if (!std::isfinite(x)) return false;
    return true;
  }

 private:
  std::vector<NamedTensor> entries_;
};

inline bool bit_equal(const ParameterSet& a, const ParameterSet& b) {
  if (a.manifest() != b.manifest()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (!bit_equal(a[i].tensor, b[i].tensor)) return false;
  return true;
}

// grads += other, entry by entry.
inline void accumulate(ParameterSet& grads, const ParameterSet& other) {
  for (std::size_t i = 0; i < grads.size(); ++i) {
    auto& dst = grads[i].tensor.data;
    const auto& src = other[i].tensor.data;
    for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
  }
}

// Tape leaves bound to every tensor of a ParameterSet, in manifest order.
class BoundParams {
 public:
  BoundParams(Tape& tape, const ParameterSet& params, bool requires_grad) {
    vars_.reserve(params.size());
    for (const auto& e : params) vars_.push_back(tape.view(e.tensor, requires_grad));
  }

  Var operator[](std::size_t i) const { return vars_[i]; }
  std::size_t size() const { return vars_.size(); }

  // The bindings from index `first` on, e.g. a head appended to a backbone.
  BoundParams tail(std::size_t first) const {
    BoundParams b;
    b.vars_.assign(vars_.begin() + static_cast<std::ptrdiff_t>(first), vars_.end());
    return b;
  }

  // Adds the tape gradients of every bound leaf into `grads` (same manifest).
  void accumulate_grads(const Tape& tape, ParameterSet& grads, double weight = 1.0) const {
    for (std::size_t i = 0; i < vars_.size(); ++i) {
      auto g = tape.grad_or_empty(vars_[i].id);
      if (g.empty()) continue;
      auto& dst = grads[i].tensor.data;
      for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += weight * g[j];
    }
  }

 private:
  BoundParams() = default;

  std::vector<Var> vars_;
};

}  // namespace c2f

#endif  // C2F_PARAMS_HPP_
