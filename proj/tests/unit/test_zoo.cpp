#include <gtest/gtest.h>

#include <cmath>

#include "lossforge/zoo.hpp"

using namespace lossforge;

TEST(Zoo, EveryEntryParsesAndRoundTrips) {
  for (const auto& [name, text] : zoo_entries()) {
    const LossExpr e = zoo(name);
    EXPECT_NO_THROW(e.validate()) << name;
    EXPECT_EQ(serialize(parse(serialize(e))), serialize(e)) << name;
  }
}

// Exact zeros such as (neg y) at y = 0 clamp to +xi, so values carry O(xi) offsets.
TEST(Zoo, Values) {
  EXPECT_NEAR(evaluate(zoo("mse"), 0.8, 1.0).value, 0.04, 1e-12);
  EXPECT_NEAR(evaluate(zoo("bce"), 0.8, 1.0).value, -std::log(0.8 + 1e-6), 1e-5);
  EXPECT_NEAR(evaluate(zoo("bce"), 0.8, 0.0).value, -std::log(0.2 + 1e-6), 1e-5);
  EXPECT_NEAR(evaluate(zoo("hinge"), 0.8, 1.0).value, 0.4, 1e-5);
  EXPECT_NEAR(evaluate(zoo("hinge"), 0.1, 0.0).value, 0.2, 1e-5);
  EXPECT_NEAR(evaluate(zoo("hinge"), 0.9, 0.0).value, 1.8, 1e-5);
  // focal with gamma 2: -(1 - p_t)^2 log p_t
  EXPECT_NEAR(evaluate(zoo("focal"), 0.7, 1.0).value, -0.09 * std::log(0.7 + 1e-6), 1e-5);
  EXPECT_NEAR(evaluate(zoo("maxr"), 0.5, 1.0).value, 2.0, 1e-5);
}

TEST(Zoo, GradientSigns) {
  for (const char* name : {"mse", "bce", "hinge", "focal", "maxr", "sumr", "logmin"}) {
    EXPECT_LT(grad_yhat(zoo(name), 0.3, 1.0), 0.0) << name;
    EXPECT_GT(grad_yhat(zoo(name), 0.3, 0.0), 0.0) << name;
  }
}

TEST(Zoo, UnknownNameListsValidOnes) {
  try {
    zoo("l1");
    FAIL();
  } catch (const std::invalid_argument& e) {
    const std::string msg = e.what();
    for (const auto& [name, text] : zoo_entries()) EXPECT_NE(msg.find(name), std::string::npos) << name;
  }
  EXPECT_FALSE(is_zoo_name("l1"));
  EXPECT_TRUE(is_zoo_name("maxr"));
}

TEST(Zoo, ResolveLoss) {
  EXPECT_EQ(serialize(resolve_loss("mse")), serialize(resolve_loss("(sq (add yhat (neg y)))")));
  EXPECT_THROW(resolve_loss("yhat"), std::invalid_argument);
  EXPECT_THROW(resolve_loss(""), std::invalid_argument);
  EXPECT_THROW(resolve_loss("(sq"), ParseError);
}
