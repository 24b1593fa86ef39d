// Copyright 2026 The c2f-lab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Weighted parameter merging: theta = gamma * coarse + (1 - gamma) * sft over
// the canonical flat view, elementwise, one expression per element.
//
// Weights. For gamma >= 0.5 the pair is (gamma, 1 - gamma); below 0.5 it is
// (1 - w, w) with w = 1 - gamma rounded. The subtraction on the large side is
// exact, so the two weights sum to exactly 1 and merge(g, a, b) is bit-equal
// to merge(1 - g, b, a).

#ifndef C2F_MERGE_HPP_
#define C2F_MERGE_HPP_

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "c2f/checkpoint.hpp"
#include "c2f/params.hpp"

namespace c2f {

inline constexpr double kDefaultGamma = 0.7;

struct CompatReport {
  bool ok = true;
  std::vector<std::string> mismatches;
};

inline CompatReport check_compatibility(const ModelConfig& ca, const ParameterSet& pa,
                                        const ModelConfig& cb, const ParameterSet& pb) {
  CompatReport r;
  for (const auto& d : config_differences(ca, cb)) r.mismatches.push_back("config " + d);
  const Manifest ma = pa.manifest(), mb = pb.manifest();
  const std::size_t n = std::max(ma.size(), mb.size());
  for (std::size_t i = 0; i < n; ++i) {
    if (i >= ma.size()) {
      r.mismatches.push_back("tensor #" + std::to_string(i) + ": missing in first (" + mb[i].name + ")");
    } else if (i >= mb.size()) {
      r.mismatches.push_back("tensor #" + std::to_string(i) + ": missing in second (" + ma[i].name + ")");
    } else if (ma[i].name != mb[i].name) {
      r.mismatches.push_back("tensor #" + std::to_string(i) + ": name " + ma[i].name + " vs " + mb[i].name);
    } else if (ma[i].shape != mb[i].shape) {
      r.mismatches.push_back("tensor " + ma[i].name + ": shape " + shape_string(ma[i].shape) + " vs " +
                             shape_string(mb[i].shape));
    }
  }
  r.ok = r.mismatches.empty();
  return r;
}

inline CompatReport check_compatibility(const Checkpoint& a, const Checkpoint& b) {
  return check_compatibility(a.config, a.params, b.config, b.params);
}

// (weight of the first operand, weight of the second).
inline std::pair<double, double> merge_weights(double gamma) {
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw config_error("merge: gamma must be in [0, 1]");
  return {gamma, 1.0 - gamma};
}

inline ParameterSet merge_params(const ParameterSet& coarse, const ParameterSet& sft, double gamma) {
  const auto [wa, wb] = merge_weights(gamma);
  if (coarse.manifest() != sft.manifest()) throw config_error("merge: parameter manifests differ");
  if (gamma == 1.0) return coarse;
  if (gamma == 0.0) return sft;
  ParameterSet out = sft;
  for (std::size_t k = 0; k < out.size(); ++k) {
    const auto& a = coarse[k].tensor.data;
    const auto& b = sft[k].tensor.data;
    auto& o = out[k].tensor.data;
    for (std::size_t i = 0; i < o.size(); ++i) {
      o[i] = wa * a[i] + wb * b[i];
      if (!std::isfinite(o[i]))
        throw numeric_error("merge: non-finite result in " + out[k].name + "[" + std::to_string(i) + "]");
    }
  }
  return out;
}

// Checks compatibility first; the merged checkpoint keeps the coarse config.
inline Checkpoint merge(const Checkpoint& coarse, const Checkpoint& sft, double gamma) {
  const CompatReport r = check_compatibility(coarse, sft);
  if (!r.ok) {
    std::string msg = "merge: checkpoints are incompatible";
    for (const auto& m : r.mismatches) msg += "; " + m;
    throw config_error(msg);
  }
  Checkpoint out{coarse.config, merge_params(coarse.params, sft.params, gamma), nlohmann::json::object()};
  out.metadata["kind"] = "policy";
  out.metadata["stage"] = "fine";
  out.metadata["gamma"] = gamma;
  return out;
}

}  // namespace c2f

#endif  // C2F_MERGE_HPP_
