#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "lossforge/errors.hpp"
#include "lossforge/tensor.hpp"

namespace lossforge {

/// A trainable tensor; `decay` selects whether l2 regularization applies.
struct Parameter {
  Tensor tensor;
  bool decay = true;
};

enum class OptimizerKind { Sgd, Adam };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::Sgd;
  double lr = 0.01;
  double l2 = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  static OptimizerConfig sgd(double lr, double l2 = 1e-5) { return {OptimizerKind::Sgd, lr, l2}; }
  static OptimizerConfig adam(double lr, double l2 = 1e-5) { return {OptimizerKind::Adam, lr, l2}; }
};

/// SGD:  p <- p - lr * (g + l2 * p)
/// Adam: coupled l2 (g <- g + l2 * p), bias-corrected moments.
/// Gradients are cleared after every step.
class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig cfg = {}) : cfg_(cfg) {}

  const OptimizerConfig& config() const noexcept { return cfg_; }
  long steps() const noexcept { return steps_; }

  void step(std::span<Parameter> params) {
    for (const auto& p : params) {
      if (!p.tensor.has_grad()) throw ContractError("optimizer step: parameter has no gradient");
    }
    if (cfg_.kind == OptimizerKind::Adam) {
      if (first_.empty()) {
        for (const auto& p : params) {
          first_.emplace_back(p.tensor.size(), 0.0);
          second_.emplace_back(p.tensor.size(), 0.0);
        }
      }
      if (first_.size() != params.size()) throw ContractError("optimizer step: parameter list changed");
      for (std::size_t k = 0; k < params.size(); ++k) {
        if (first_[k].size() != params[k].tensor.size()) {
          throw ContractError("optimizer step: Adam buffer shape does not match parameter");
        }
      }
    }
    ++steps_;
    for (std::size_t k = 0; k < params.size(); ++k) {
      Tensor& t = params[k].tensor;
      const double l2 = params[k].decay ? cfg_.l2 : 0.0;
      auto v = t.values();
      auto g = t.grad();
      if (cfg_.kind == OptimizerKind::Sgd) {
        for (std::size_t i = 0; i < v.size(); ++i) v[i] -= cfg_.lr * (g[i] + l2 * v[i]);
      } else {
        auto& m1 = first_[k];
        auto& m2 = second_[k];
        const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(steps_));
        const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(steps_));
        for (std::size_t i = 0; i < v.size(); ++i) {
          const double gi = g[i] + l2 * v[i];
          m1[i] = cfg_.beta1 * m1[i] + (1 - cfg_.beta1) * gi;
          m2[i] = cfg_.beta2 * m2[i] + (1 - cfg_.beta2) * gi * gi;
          v[i] -= cfg_.lr * (m1[i] / c1) / (std::sqrt(m2[i] / c2) + cfg_.eps);
        }
      }
      t.clear_grad();
    }
  }

  /// Drops moment buffers and the step counter.
  void reset() {
    first_.clear();
    second_.clear();
    steps_ = 0;
  }

 private:
  OptimizerConfig cfg_;
  std::vector<std::vector<double>> first_;
  std::vector<std::vector<double>> second_;
  long steps_ = 0;
};

inline void clear_grads(std::span<Parameter> params) {
  for (auto& p : params) p.tensor.clear_grad();
}

}  // namespace lossforge
