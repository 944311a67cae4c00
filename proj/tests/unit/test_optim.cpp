#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "lossforge/optim.hpp"

using namespace lossforge;

namespace {

Parameter scalar_param(double value, double grad, bool decay = true) {
  Parameter p{Tensor::scalar(value, true), decay};
  p.tensor.grad_buffer()[0] = grad;
  return p;
}

}  // namespace

TEST(Sgd, PlainStep) {
  std::vector<Parameter> ps{scalar_param(1.0, 1.0)};
  Optimizer opt(OptimizerConfig::sgd(0.01, 0.0));
  opt.step(ps);
  EXPECT_DOUBLE_EQ(ps[0].tensor.item(), 0.99);
}

TEST(Sgd, DecayOnly) {
  std::vector<Parameter> ps{scalar_param(1.0, 0.0)};
  Optimizer opt(OptimizerConfig::sgd(0.01, 0.1));
  opt.step(ps);
  EXPECT_DOUBLE_EQ(ps[0].tensor.item(), 0.999);
}

TEST(Sgd, BiasExcludedFromDecay) {
  std::vector<Parameter> ps{scalar_param(1.0, 0.0, false)};
  Optimizer opt(OptimizerConfig::sgd(0.01, 0.1));
  opt.step(ps);
  EXPECT_DOUBLE_EQ(ps[0].tensor.item(), 1.0);
}

TEST(Sgd, GradientsClearedAfterStep) {
  std::vector<Parameter> ps{scalar_param(1.0, 1.0)};
  Optimizer opt(OptimizerConfig::sgd(0.01));
  opt.step(ps);
  EXPECT_FALSE(ps[0].tensor.has_grad());
  EXPECT_THROW(opt.step(ps), ContractError);
}

TEST(Sgd, MissingGradientRejected) {
  std::vector<Parameter> ps{{Tensor::scalar(1.0, true), true}};
  Optimizer opt;
  EXPECT_THROW(opt.step(ps), ContractError);
  EXPECT_EQ(ps[0].tensor.item(), 1.0);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  for (double g : {1e-4, 0.3, 50.0, -7.0}) {
    std::vector<Parameter> ps{scalar_param(0.5, g, false)};
    Optimizer opt(OptimizerConfig::adam(0.001, 0.0));
    opt.step(ps);
    EXPECT_NEAR(std::fabs(ps[0].tensor.item() - 0.5), 0.001, 1e-6) << "grad " << g;
    EXPECT_LT((ps[0].tensor.item() - 0.5) * g, 0.0);
  }
}

TEST(Adam, MatchesHandComputedSecondStep) {
  std::vector<Parameter> ps{scalar_param(1.0, 0.5, false)};
  Optimizer opt(OptimizerConfig::adam(0.1, 0.0));
  opt.step(ps);
  ps[0].tensor.grad_buffer()[0] = -0.25;
  opt.step(ps);
  const double m1 = 0.1 * 0.5, v1 = 0.001 * 0.25;
  const double m2 = 0.9 * m1 + 0.1 * -0.25, v2 = 0.999 * v1 + 0.001 * 0.0625;
  const double p1 = 1.0 - 0.1 * (m1 / 0.1) / (std::sqrt(v1 / 0.001) + 1e-8);
  const double p2 = p1 - 0.1 * (m2 / (1 - 0.81)) / (std::sqrt(v2 / (1 - 0.999 * 0.999)) + 1e-8);
  EXPECT_NEAR(ps[0].tensor.item(), p2, 1e-12);
  EXPECT_EQ(opt.steps(), 2);
}

TEST(Adam, BufferShapeChecked) {
  std::vector<Parameter> ps{scalar_param(1.0, 1.0)};
  Optimizer opt(OptimizerConfig::adam(0.001));
  opt.step(ps);
  std::vector<Parameter> other{{Tensor(2, 2, true), true}};
  other[0].tensor.grad_buffer();
  EXPECT_THROW(opt.step(other), ContractError);
  opt.reset();
  EXPECT_NO_THROW(opt.step(other));
}

TEST(Adam, CoupledDecay) {
  std::vector<Parameter> ps{scalar_param(2.0, 0.0)};
  Optimizer opt(OptimizerConfig::adam(0.01, 0.5));
  opt.step(ps);
  // the decay term 0.5 * 2 acts as the gradient, so the first step is -lr
  EXPECT_NEAR(ps[0].tensor.item(), 1.99, 1e-9);
}
