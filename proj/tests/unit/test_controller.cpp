#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "lossforge/controller.hpp"
#include "lossforge/zoo.hpp"

using namespace lossforge;

namespace {

// One decision on the operator head, restricted to {Add, Multi}.
template <class Rng>
Episode bandit_episode(const Policy& policy, Rng& rng) {
  Rollout ro(policy);
  std::vector<bool> allowed(kOperatorCount, false);
  allowed[static_cast<std::size_t>(Operator::Add)] = true;
  allowed[static_cast<std::size_t>(Operator::Multi)] = true;
  ro.choose(Head::Operator, allowed, rng);
  return ro.finish();
}

double bandit_probability(const Policy& policy) {
  Rollout ro(policy);
  std::vector<bool> allowed(kOperatorCount, false);
  allowed[static_cast<std::size_t>(Operator::Add)] = true;
  allowed[static_cast<std::size_t>(Operator::Multi)] = true;
  return ro.probabilities(Head::Operator, allowed)[static_cast<std::size_t>(Operator::Add)];
}

double replay_log_prob(const Policy& policy, const Episode& ep) { return replay(nullptr, policy, ep).values()[0]; }

}  // namespace

TEST(Policy, OperandMaskHasZeroMass) {
  Policy policy;
  Rollout ro(policy);
  const auto p = ro.probabilities(Head::Operand, slot_mask(policy.slot_vocab(), 4));
  ASSERT_EQ(p.size(), 13u);
  double total = 0;
  for (std::size_t j = 0; j < p.size(); ++j) {
    if (j >= 4) EXPECT_EQ(p[j], 0.0);
    total += p[j];
  }
  EXPECT_NEAR(total, 1.0, 1e-12);
}

TEST(Policy, SecondOperandExcludesFirst) {
  const auto m = slot_mask(13, 5, 2);
  EXPECT_EQ(std::count(m.begin(), m.end(), true), 4);
  EXPECT_FALSE(m[2]);
  EXPECT_THROW(Rollout::softmax(std::vector<Real>(3, 0.0), std::vector<bool>(3, false)), ContractError);
}

TEST(Policy, LogitsBoundedByTanhConstant) {
  Policy policy({10, 32, 2, 5.0, 1.5}, 3);
  auto state = policy.initial_state();
  Tensor h = policy.step(nullptr, state, Policy::kStartToken);
  const Tensor z = policy.logits(nullptr, h, Head::Operand);
  for (double v : z.values()) EXPECT_LT(std::fabs(v), 1.5);
}

TEST(Sample, TwoRoundsGiveTwoNodes) {
  Policy policy({2}, 1);
  std::mt19937_64 rng(4);
  for (int k = 0; k < 200; ++k) {
    const Episode ep = sample(policy, rng);
    ASSERT_EQ(ep.expr.size(), 2u);
    EXPECT_NO_THROW(ep.expr.validate());
    for (const Node& n : ep.expr.nodes()) {
      EXPECT_LT(n.args[0], 5u);
      if (arity(n.op) == 2) {
        EXPECT_LT(n.args[1], 5u);
        EXPECT_NE(n.args[0], n.args[1]);
      }
    }
  }
}

TEST(Sample, EpisodeBookkeepingConsistent) {
  Policy policy({}, 2);
  std::mt19937_64 rng(5);
  for (int k = 0; k < 20; ++k) {
    const Episode ep = sample(policy, rng);
    EXPECT_EQ(ep.expr.size(), 10u);
    EXPECT_NEAR(ep.log_prob, std::log(trajectory_probability(policy, ep.expr)), 1e-9);
    EXPECT_NEAR(ep.log_prob, replay_log_prob(policy, ep), 1e-9);
    EXPECT_GT(ep.entropy, 0.0);
    // serialization keeps only the live part, which must parse back
    EXPECT_NO_THROW(parse(serialize(ep.expr)));
  }
}

TEST(Sample, DeterministicUnderSeed) {
  Policy a({}, 9), b({}, 9);
  std::mt19937_64 ra(1), rb(1);
  for (int k = 0; k < 10; ++k) EXPECT_EQ(serialize(sample(a, ra).expr), serialize(sample(b, rb).expr));
}

TEST(Sample, MseTrajectoryHasPositiveProbability) {
  LossExpr mse;
  mse.append(Operator::Neg, kYhat);
  mse.append(Operator::Add, 3, kLabel);
  mse.append(Operator::Square, 4);
  Policy policy;
  const double p = trajectory_probability(policy, mse);
  EXPECT_GT(p, 0.0);
  // no decision can fall below the floor set by the tanh bound
  const double floor_op = 1.0 / (1.0 + 8.0 * std::exp(3.0));
  EXPECT_GT(p, std::pow(floor_op, 3) * std::pow(1.0 / (1.0 + 4.0 * std::exp(3.0)), 3));
}

TEST(Reinforce, BanditConverges) {
  Policy policy({1}, 0);
  ReinforceConfig rc;
  rc.optimizer = OptimizerConfig::adam(0.01, 1e-5);
  Optimizer opt(rc.optimizer);
  Baseline baseline;
  std::mt19937_64 rng(1);
  for (int update = 0; update < 200; ++update) {
    std::vector<Episode> eps;
    std::vector<double> rewards;
    for (int k = 0; k < 10; ++k) {
      eps.push_back(bandit_episode(policy, rng));
      rewards.push_back(eps.back().decisions[0].choice == static_cast<std::size_t>(Operator::Add) ? 1.0 : -1.0);
    }
    reinforce_update(policy, opt, eps, rewards, baseline, rc);
  }
  EXPECT_GT(bandit_probability(policy), 0.9);
}

TEST(Reinforce, ZeroAdvantageIsPureDecay) {
  Policy policy({3}, 1);
  auto before = policy.clone();
  ReinforceConfig rc;
  rc.entropy_weight = 0.0;
  rc.optimizer = OptimizerConfig::sgd(0.1, 0.01);
  Optimizer opt(rc.optimizer);
  Baseline baseline{0.25, 0.95, true};
  std::mt19937_64 rng(2);
  std::vector<Episode> eps{sample(policy, rng), sample(policy, rng)};
  reinforce_update(policy, opt, eps, std::vector{0.25, 0.25}, baseline, rc);
  auto pa = policy.parameters();
  auto pb = before.parameters();
  for (std::size_t k = 0; k < pa.size(); ++k)
    for (std::size_t i = 0; i < pa[k].tensor.size(); ++i)
      EXPECT_DOUBLE_EQ(pa[k].tensor.values()[i], pb[k].tensor.values()[i] * (1 - 0.1 * 0.01));
  EXPECT_DOUBLE_EQ(baseline.value, 0.25);
}

TEST(Reinforce, BaselineTracksMeanReward) {
  Policy policy({2}, 1);
  Optimizer opt(OptimizerConfig::adam(1e-3));
  Baseline baseline;
  std::mt19937_64 rng(3);
  std::vector<Episode> eps{sample(policy, rng), sample(policy, rng)};
  reinforce_update(policy, opt, eps, std::vector{1.0, 0.0}, baseline);
  EXPECT_DOUBLE_EQ(baseline.value, 0.5);
  reinforce_update(policy, opt, eps, std::vector{2.0, 2.0}, baseline);
  EXPECT_DOUBLE_EQ(baseline.value, 0.95 * 0.5 + 0.05 * 2.0);
  EXPECT_THROW(reinforce_update(policy, opt, eps, std::vector{1.0}, baseline), ContractError);
}

TEST(Reinforce, LogProbGradientMatchesFiniteDifferences) {
  Policy policy({2, 8, 2, 0.3, 1.5}, 5);
  std::mt19937_64 rng(6);
  // Add, then two operands: a three-decision episode
  Rollout ro(policy);
  ro.force(Head::Operator, std::vector<bool>(kOperatorCount, true), static_cast<std::size_t>(Operator::Add));
  ro.force(Head::Operand, slot_mask(policy.slot_vocab(), 3), kYhat);
  ro.force(Head::Operand, slot_mask(policy.slot_vocab(), 3, kYhat), kLabel);
  const Episode ep = ro.finish();
  ASSERT_EQ(ep.decisions.size(), 3u);

  Tape tape;
  Tensor stats = replay(&tape, policy, ep);
  tape.backward(ops::slice_cols(&tape, stats, 0, 1));
  auto params = policy.parameters();
  double worst = 0;
  int checked = 0;
  for (auto& p : params) {
    for (int n = 0; n < 5; ++n) {
      const std::size_t k = std::uniform_int_distribution<std::size_t>(0, p.tensor.size() - 1)(rng);
      const double analytic = p.tensor.has_grad() ? p.tensor.grad()[k] : 0.0;
      const double x = p.tensor.values()[k];
      const double h = 1e-5;
      p.tensor.values()[k] = x + h;
      const double up = replay_log_prob(policy, ep);
      p.tensor.values()[k] = x - h;
      const double down = replay_log_prob(policy, ep);
      p.tensor.values()[k] = x;
      const double fd = (up - down) / (2 * h);
      worst = std::max(worst, std::fabs(analytic - fd) / std::max(1e-3, std::fabs(fd)));
      ++checked;
    }
  }
  EXPECT_LT(worst, 1e-3);
  EXPECT_EQ(checked, static_cast<int>(params.size()) * 5);
}

TEST(Policy, CheckpointRoundTrip) {
  Policy policy({4, 16, 3, 0.1, 1.5}, 8);
  std::stringstream buf;
  write_blob(buf, policy.to_blob());
  Policy back = Policy::from_blob(read_blob(buf));
  EXPECT_EQ(back.config().rounds, 4u);
  EXPECT_EQ(back.config().hidden, 16u);
  EXPECT_EQ(back.config().layers, 3u);
  std::mt19937_64 ra(1), rb(1);
  for (int k = 0; k < 5; ++k) EXPECT_EQ(serialize(sample(policy, ra).expr), serialize(sample(back, rb).expr));
}

TEST(Policy, CloneIsIndependent) {
  Policy policy({2}, 1);
  Policy copy = policy.clone();
  copy.parameters()[0].tensor.values()[0] += 1.0;
  EXPECT_NE(copy.parameters()[0].tensor.values()[0], policy.parameters()[0].tensor.values()[0]);
}
