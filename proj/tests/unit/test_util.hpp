#pragma once

#include <random>
#include <vector>

#include "lossforge/expr.hpp"

namespace lossforge::testing {

/// Uniformly random expression with `nodes` nodes; binary operands distinct.
template <class Rng>
LossExpr random_expr(Rng& rng, std::size_t nodes) {
  LossExpr e;
  std::uniform_int_distribution<std::size_t> pick_op(0, kOperatorCount - 1);
  for (std::size_t k = 0; k < nodes; ++k) {
    const auto op = static_cast<Operator>(pick_op(rng));
    const std::size_t existing = kInitialSlots + k;
    std::uniform_int_distribution<std::size_t> pick_slot(0, existing - 1);
    const std::size_t a = pick_slot(rng);
    std::size_t b = pick_slot(rng);
    while (arity(op) == 2 && b == a) b = pick_slot(rng);
    e.append(op, a, b);
  }
  return e;
}

/// Which branch every piecewise node takes at (yhat, y): clamp state, Max/Min
/// side and the sign of Log/Reciprocal arguments.
inline std::vector<int> branch_signature(const LossExpr& e, double yhat, double y, const SafeMathConfig& cfg) {
  detail::Workspace w;
  detail::forward(e, yhat, y, cfg, w);
  std::vector<int> sig;
  for (std::size_t k = 0; k < e.size(); ++k) {
    const Node& n = e.nodes()[k];
    const double a = w.value[n.args[0]];
    sig.push_back(w.passes[k + kInitialSlots] ? 1 : 0);
    switch (n.op) {
      case Operator::Max: sig.push_back(a >= w.value[n.args[1]] ? 1 : 0); break;
      case Operator::Min: sig.push_back(a <= w.value[n.args[1]] ? 1 : 0); break;
      case Operator::Log:
      case Operator::Reciprocal: sig.push_back(a < 0 ? -1 : 1); break;
      default: break;
    }
  }
  return sig;
}

/// True when no node changes branch within `margin` of yhat.
inline bool smooth_at(const LossExpr& e, double yhat, double y, const SafeMathConfig& cfg, double margin = 1e-3) {
  const auto mid = branch_signature(e, yhat, y, cfg);
  for (double t : {-1.0, -0.5, 0.5, 1.0}) {
    if (branch_signature(e, yhat + t * margin, y, cfg) != mid) return false;
  }
  return true;
}

template <class F>
double central_difference(F f, double x, double h = 1e-5) {
  return (f(x + h) - f(x - h)) / (2 * h);
}

}  // namespace lossforge::testing
