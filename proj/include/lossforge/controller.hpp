#pragma once

// Recurrent controller that writes loss expressions token by token: each round
// picks an operator, then one or two operand slots from the variables created
// so far. Trained with REINFORCE against a moving-average baseline.

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "lossforge/checkpoint.hpp"
#include "lossforge/errors.hpp"
#include "lossforge/expr.hpp"
#include "lossforge/optim.hpp"
#include "lossforge/tensor.hpp"

namespace lossforge {

struct PolicyConfig {
  std::size_t rounds = kDefaultRounds;
  std::size_t hidden = 32;
  std::size_t layers = 2;
  double init_range = 0.1;
  double tanh_constant = 1.5;
};

enum class Head : std::uint8_t { Operator, Operand };

struct Decision {
  Head head = Head::Operator;
  std::vector<bool> allowed;
  std::size_t choice = 0;
};

struct Episode {
  std::vector<Decision> decisions;
  double log_prob = 0.0;
  double entropy = 0.0;
  LossExpr expr;
};

/// Controller weights: token embedding, stacked LSTM cells and two output heads.
///
/// Token ids: 0 = start, 1..9 = operators, 10.. = variable slots.
class Policy {
 public:
  explicit Policy(PolicyConfig cfg = {}, std::uint64_t seed = 0) : cfg_(cfg) {
    if (cfg.rounds == 0) throw ContractError("policy needs at least one round");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> dist(-cfg.init_range, cfg.init_range);
    auto make = [&](std::size_t r, std::size_t c) {
      Tensor t(r, c, true);
      for (auto& v : t.values()) v = dist(rng);
      return t;
    };
    const std::size_t h = cfg.hidden;
    embedding_ = make(token_count(), h);
    for (std::size_t l = 0; l < cfg.layers; ++l) cells_.push_back({make(h, 4 * h), make(h, 4 * h), make(1, 4 * h)});
    op_w_ = make(h, kOperatorCount);
    op_b_ = make(1, kOperatorCount);
    slot_w_ = make(h, slot_vocab());
    slot_b_ = make(1, slot_vocab());
  }

  const PolicyConfig& config() const noexcept { return cfg_; }
  std::size_t slot_vocab() const noexcept { return kInitialSlots + cfg_.rounds; }
  std::size_t token_count() const noexcept { return 1 + kOperatorCount + slot_vocab(); }

  static constexpr std::size_t kStartToken = 0;
  static std::size_t operator_token(std::size_t op) noexcept { return 1 + op; }
  static std::size_t slot_token(std::size_t slot) noexcept { return 1 + kOperatorCount + slot; }

  std::vector<Parameter> parameters() {
    std::vector<Parameter> p{{embedding_, true}};
    for (auto& c : cells_) {
      p.push_back({c.wx, true});
      p.push_back({c.wh, true});
      p.push_back({c.b, true});
    }
    p.push_back({op_w_, true});
    p.push_back({op_b_, true});
    p.push_back({slot_w_, true});
    p.push_back({slot_b_, true});
    return p;
  }

  Policy clone() const {
    Policy p(*this);
    p.embedding_ = embedding_.deep_copy();
    for (auto& c : p.cells_) {
      c.wx = c.wx.deep_copy();
      c.wh = c.wh.deep_copy();
      c.b = c.b.deep_copy();
    }
    p.op_w_ = op_w_.deep_copy();
    p.op_b_ = op_b_.deep_copy();
    p.slot_w_ = slot_w_.deep_copy();
    p.slot_b_ = slot_b_.deep_copy();
    return p;
  }

  Blob to_blob() const {
    Blob b{BlobKind::Policy, {embedding_}};
    for (const auto& c : cells_) {
      b.arrays.push_back(c.wx);
      b.arrays.push_back(c.wh);
      b.arrays.push_back(c.b);
    }
    b.arrays.insert(b.arrays.end(), {op_w_, op_b_, slot_w_, slot_b_});
    return b;
  }

  static Policy from_blob(const Blob& blob, double tanh_constant = 1.5) {
    if (blob.kind != BlobKind::Policy || blob.arrays.size() < 8 || (blob.arrays.size() - 5) % 3 != 0) {
      throw DataError("not a policy checkpoint");
    }
    PolicyConfig cfg;
    cfg.hidden = blob.arrays[0].cols();
    cfg.layers = (blob.arrays.size() - 5) / 3;
    const std::size_t slots = blob.arrays[blob.arrays.size() - 1].cols();
    if (slots <= kInitialSlots) throw DataError("policy checkpoint has no rounds");
    cfg.rounds = slots - kInitialSlots;
    cfg.tanh_constant = tanh_constant;
    Policy p(cfg, 0);
    auto params = p.parameters();
    if (params.size() != blob.arrays.size()) throw DataError("policy checkpoint layout mismatch");
    for (std::size_t k = 0; k < params.size(); ++k) {
      if (params[k].tensor.shape() != blob.arrays[k].shape()) throw DataError("policy checkpoint shape mismatch");
      std::copy(blob.arrays[k].values().begin(), blob.arrays[k].values().end(), params[k].tensor.values().begin());
    }
    return p;
  }

  /// Recurrent state between decisions.
  struct State {
    std::vector<Tensor> h, c;
  };

  State initial_state() const {
    State s;
    for (std::size_t l = 0; l < cfg_.layers; ++l) {
      s.h.emplace_back(1, cfg_.hidden);
      s.c.emplace_back(1, cfg_.hidden);
    }
    return s;
  }

  /// Feeds `token` through the stack; returns the top hidden output.
  Tensor step(Tape* tape, State& s, std::size_t token) const {
    const std::uint32_t id[1] = {static_cast<std::uint32_t>(token)};
    Tensor x = ops::embedding_lookup(tape, embedding_, id);
    const std::size_t h = cfg_.hidden;
    for (std::size_t l = 0; l < cells_.size(); ++l) {
      const Cell& cell = cells_[l];
      Tensor gates = ops::add(tape, ops::add(tape, ops::matmul(tape, x, cell.wx), ops::matmul(tape, s.h[l], cell.wh)),
                              cell.b);
      Tensor in = ops::sigmoid(tape, ops::slice_cols(tape, gates, 0, h));
      Tensor forget = ops::sigmoid(tape, ops::slice_cols(tape, gates, h, h));
      Tensor cand = ops::tanh(tape, ops::slice_cols(tape, gates, 2 * h, h));
      Tensor out = ops::sigmoid(tape, ops::slice_cols(tape, gates, 3 * h, h));
      s.c[l] = ops::add(tape, ops::mul(tape, forget, s.c[l]), ops::mul(tape, in, cand));
      s.h[l] = ops::mul(tape, out, ops::tanh(tape, s.c[l]));
      x = s.h[l];
    }
    return x;
  }

  /// tanh-squashed logits of a head: c * tanh(W h + b), bounded in (-c, c).
  Tensor logits(Tape* tape, const Tensor& hidden, Head head) const {
    const Tensor& w = head == Head::Operator ? op_w_ : slot_w_;
    const Tensor& b = head == Head::Operator ? op_b_ : slot_b_;
    Tensor raw = ops::add(tape, ops::matmul(tape, hidden, w), b);
    return ops::scale(tape, ops::tanh(tape, raw), cfg_.tanh_constant);
  }

  std::size_t head_size(Head head) const noexcept { return head == Head::Operator ? kOperatorCount : slot_vocab(); }

  std::size_t token_for(Head head, std::size_t choice) const noexcept {
    return head == Head::Operator ? operator_token(choice) : slot_token(choice);
  }

 private:
  struct Cell {
    Tensor wx, wh, b;
  };

  PolicyConfig cfg_;
  Tensor embedding_;
  std::vector<Cell> cells_;
  Tensor op_w_, op_b_, slot_w_, slot_b_;
};

/// Forward-only stepping through a policy, recording each decision.
class Rollout {
 public:
  explicit Rollout(const Policy& policy) : policy_(policy), state_(policy.initial_state()) {}

  /// Probabilities of the next decision on `head` (zero where not allowed).
  std::vector<double> probabilities(Head head, const std::vector<bool>& allowed) {
    ensure_hidden();
    Tensor z = policy_.logits(nullptr, hidden_, head);
    return softmax(z.values(), allowed);
  }

  template <class Rng>
  std::size_t choose(Head head, const std::vector<bool>& allowed, Rng& rng) {
    const auto p = probabilities(head, allowed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const double r = u(rng);
    std::size_t choice = p.size();
    double acc = 0.0;
    for (std::size_t j = 0; j < p.size(); ++j) {
      if (!allowed[j]) continue;
      acc += p[j];
      choice = j;
      if (r < acc) break;
    }
    record(head, allowed, choice, p);
    return choice;
  }

  /// Takes a predetermined choice (used to score a fixed trajectory).
  double force(Head head, const std::vector<bool>& allowed, std::size_t choice) {
    const auto p = probabilities(head, allowed);
    if (choice >= p.size() || !allowed[choice]) throw ContractError("forced choice is not allowed");
    record(head, allowed, choice, p);
    return p[choice];
  }

  Episode finish(LossExpr expr = {}) {
    episode_.expr = std::move(expr);
    return std::move(episode_);
  }

  static std::vector<double> softmax(std::span<const Real> z, const std::vector<bool>& allowed) {
    if (allowed.size() != z.size()) throw DimensionError("mask does not match head size");
    double mx = -INFINITY;
    for (std::size_t j = 0; j < z.size(); ++j)
      if (allowed[j]) mx = std::max(mx, z[j]);
    if (mx == -INFINITY) throw ContractError("every choice is masked out");
    std::vector<double> p(z.size(), 0.0);
    double total = 0.0;
    for (std::size_t j = 0; j < z.size(); ++j)
      if (allowed[j]) total += (p[j] = std::exp(z[j] - mx));
    for (auto& v : p) v /= total;
    return p;
  }

 private:
  void ensure_hidden() {
    if (!hidden_.defined()) hidden_ = policy_.step(nullptr, state_, next_token_);
  }

  void record(Head head, const std::vector<bool>& allowed, std::size_t choice, const std::vector<double>& p) {
    episode_.log_prob += std::log(p[choice]);
    for (std::size_t j = 0; j < p.size(); ++j)
      if (p[j] > 0) episode_.entropy -= p[j] * std::log(p[j]);
    episode_.decisions.push_back({head, allowed, choice});
    next_token_ = policy_.token_for(head, choice);
    hidden_ = Tensor();
  }

  const Policy& policy_;
  Policy::State state_;
  Tensor hidden_;
  std::size_t next_token_ = Policy::kStartToken;
  Episode episode_;
};

inline std::vector<bool> slot_mask(std::size_t vocab, std::size_t existing, std::size_t excluded = SIZE_MAX) {
  std::vector<bool> m(vocab, false);
  for (std::size_t j = 0; j < existing && j < vocab; ++j) m[j] = j != excluded;
  return m;
}

/// Samples one expression of exactly `rounds` nodes (policy's configured
/// rounds when zero). The root is the last node.
template <class Rng>
Episode sample(const Policy& policy, Rng& rng, std::size_t rounds = 0) {
  if (rounds == 0) rounds = policy.config().rounds;
  if (rounds > policy.config().rounds) throw ContractError("more rounds than the policy has slots for");
  Rollout ro(policy);
  LossExpr expr;
  const std::vector<bool> all_ops(kOperatorCount, true);
  for (std::size_t r = 0; r < rounds; ++r) {
    const auto op = static_cast<Operator>(ro.choose(Head::Operator, all_ops, rng));
    const std::size_t existing = kInitialSlots + r;
    const std::size_t a = ro.choose(Head::Operand, slot_mask(policy.slot_vocab(), existing), rng);
    std::size_t b = 0;
    if (arity(op) == 2) b = ro.choose(Head::Operand, slot_mask(policy.slot_vocab(), existing, a), rng);
    expr.append(op, a, b);
  }
  return ro.finish(std::move(expr));
}

/// Probability the policy assigns to writing `expr` node by node.
inline double trajectory_probability(const Policy& policy, const LossExpr& expr) {
  if (expr.size() > policy.config().rounds) throw ContractError("expression longer than the policy's rounds");
  Rollout ro(policy);
  const std::vector<bool> all_ops(kOperatorCount, true);
  double p = 1.0;
  for (std::size_t r = 0; r < expr.size(); ++r) {
    const Node& n = expr.nodes()[r];
    const std::size_t existing = kInitialSlots + r;
    p *= ro.force(Head::Operator, all_ops, static_cast<std::size_t>(n.op));
    p *= ro.force(Head::Operand, slot_mask(policy.slot_vocab(), existing), n.args[0]);
    if (arity(n.op) == 2) {
      p *= ro.force(Head::Operand, slot_mask(policy.slot_vocab(), existing, n.args[0]), n.args[1]);
    }
  }
  return p;
}

/// Replays an episode on a tape; returns a 1x2 tensor {sum log p, sum entropy}.
inline Tensor replay(Tape* tape, const Policy& policy, const Episode& ep) {
  auto state = policy.initial_state();
  std::size_t token = Policy::kStartToken;
  Tensor total = Tensor(1, 2);
  for (const Decision& d : ep.decisions) {
    Tensor hidden = policy.step(tape, state, token);
    Tensor z = policy.logits(tape, hidden, d.head);
    total = ops::add(tape, total, ops::categorical(tape, z, d.allowed, d.choice));
    token = policy.token_for(d.head, d.choice);
  }
  return total;
}

/// Exponential moving average of the mean batch reward.
struct Baseline {
  double value = 0.0;
  double decay = 0.95;
  bool initialized = false;
};

struct ReinforceConfig {
  double entropy_weight = 1e-4;
  OptimizerConfig optimizer = OptimizerConfig::adam(1e-3, 1e-5);
};

/// One policy-gradient step: ascend mean_i (r_i + w * H_i - b) * log p_i.
/// The baseline used is the one before this batch; it is updated afterwards.
inline void reinforce_update(Policy& policy, Optimizer& opt, std::span<const Episode> episodes,
                             std::span<const double> rewards, Baseline& baseline, const ReinforceConfig& cfg = {}) {
  if (episodes.size() != rewards.size()) throw ContractError("episodes and rewards differ in length");
  if (episodes.empty()) throw ContractError("reinforce_update needs at least one episode");
  double mean_reward = 0.0;
  for (double r : rewards) mean_reward += r;
  mean_reward /= static_cast<double>(rewards.size());
  if (!baseline.initialized) {
    baseline.value = mean_reward;
    baseline.initialized = true;
  }
  auto params = policy.parameters();
  for (auto& p : params) p.tensor.grad_buffer();  // every parameter gets a (possibly zero) gradient
  const double n = static_cast<double>(episodes.size());
  for (std::size_t k = 0; k < episodes.size(); ++k) {
    const double advantage = rewards[k] + cfg.entropy_weight * episodes[k].entropy - baseline.value;
    if (advantage == 0.0) continue;
    Tape tape;
    Tensor stats = replay(&tape, policy, episodes[k]);
    Tensor objective = ops::scale(&tape, ops::slice_cols(&tape, stats, 0, 1), -advantage / n);
    tape.backward(objective);
  }
  opt.step(params);
  baseline.value = baseline.decay * baseline.value + (1.0 - baseline.decay) * mean_reward;
}

}  // namespace lossforge
