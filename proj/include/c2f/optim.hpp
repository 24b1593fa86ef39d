// Copyright 2026 The c2f-lab Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef C2F_OPTIM_HPP_
#define C2F_OPTIM_HPP_

#include <cmath>
#include <cstddef>
#include <vector>

#include "c2f/error.hpp"
#include "c2f/params.hpp"

namespace c2f {

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

// AdamW with decoupled weight decay and bias-corrected moments.
class AdamW {
 public:
  AdamW() = default;
  explicit AdamW(AdamWConfig cfg) : cfg_(cfg) {}

  const AdamWConfig& config() const { return cfg_; }
  void set_lr(double lr) { cfg_.lr = lr; }
  long steps() const { return t_; }

  // Applies one update. A non-finite gradient aborts the step before any
  // parameter or moment is touched.
  void step(ParameterSet& params, const ParameterSet& grads) {
    if (params.size() != grads.size()) throw config_error("adamw: grads not aligned");
    for (std::size_t i = 0; i < grads.size(); ++i) {
      if (grads[i].tensor.numel() != params[i].tensor.numel())
        throw config_error("adamw: grads not aligned with " + params[i].name);
      for (double g : grads[i].tensor.data) {
        if (!std::isfinite(g))
          throw numeric_error("adamw: non-finite gradient in " + grads[i].name);
      }
    }
    if (m_.empty()) {
      for (const auto& e : params) {
        m_.emplace_back(e.tensor.numel(), 0.0);
        v_.emplace_back(e.tensor.numel(), 0.0);
      }
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    const double decay = 1.0 - cfg_.lr * cfg_.weight_decay;
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& p = params[i].tensor.data;
      const auto& g = grads[i].tensor.data;
      auto& m = m_[i];
      auto& v = v_[i];
      for (std::size_t j = 0; j < p.size(); ++j) {
        m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g[j];
        v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g[j] * g[j];
        const double mhat = m[j] / bc1;
        const double vhat = v[j] / bc2;
        if (cfg_.weight_decay != 0.0) p[j] *= decay;
        p[j] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
      }
    }
  }

 private:
  AdamWConfig cfg_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  long t_ = 0;
};

}  // namespace c2f

#endif  // C2F_OPTIM_HPP_
