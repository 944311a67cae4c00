#include <gtest/gtest.h>

#include <sstream>

#include "lossforge/run_config.hpp"

using namespace lossforge;

TEST(Config, DefaultsAreValid) {
  RunConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  EXPECT_FALSE(cfg.fixed_epsilon().has_value());
  EXPECT_EQ(cfg.effectiveness_config().epsilons.size(), 7u);
  EXPECT_EQ(cfg.search_config().max_samples, 3000u);
}

TEST(Config, EchoRoundTrips) {
  RunConfig cfg;
  cfg.set("eta", "inf");
  cfg.set("epsilon", "0.001");
  cfg.set("seed", "17");
  cfg.set("dataset", "synthetic");
  cfg.set("lr", "0.05");
  std::istringstream in(cfg.to_text());
  RunConfig back;
  read_config(in, back);
  EXPECT_EQ(back.to_text(), cfg.to_text());
  EXPECT_TRUE(std::isinf(back.eta));
  EXPECT_EQ(back.fixed_epsilon(), std::optional<double>(0.001));
  EXPECT_EQ(back.effectiveness_config().epsilons, std::vector<double>{0.001});
}

TEST(Config, CommentsAndWhitespace) {
  std::istringstream in("# comment\n\n  task = regression \r\nmodel=mlp\n");
  RunConfig cfg;
  read_config(in, cfg);
  EXPECT_EQ(cfg.task, "regression");
  EXPECT_EQ(cfg.model, "mlp");
}

TEST(Config, ErrorsNameTheField) {
  RunConfig cfg;
  try {
    cfg.set("rounds", "ten");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.field(), "rounds");
  }
  EXPECT_THROW(cfg.set("colour", "red"), ConfigError);
  std::istringstream bad("task\n");
  EXPECT_THROW(read_config(bad, cfg), ConfigError);

  auto field_of = [](auto mutate) {
    RunConfig c;
    mutate(c);
    try {
      c.validate();
    } catch (const ConfigError& e) {
      return e.field();
    }
    return std::string();
  };
  EXPECT_EQ(field_of([](RunConfig& c) { c.model = "svd"; }), "model");
  EXPECT_EQ(field_of([](RunConfig& c) { c.task = "ranking"; }), "task");
  EXPECT_EQ(field_of([](RunConfig& c) { c.epsilon = "2"; }), "epsilon");
  EXPECT_EQ(field_of([](RunConfig& c) { c.epsilon = "1e-9"; }), "epsilon");
  EXPECT_EQ(field_of([](RunConfig& c) { c.probe_batch = 30; }), "probe-batch");
  EXPECT_EQ(field_of([](RunConfig& c) { c.jobs = 0; }), "jobs");
  EXPECT_EQ(field_of([](RunConfig& c) { c.threshold = 1.5; }), "threshold");
}

TEST(Config, DatasetResolution) {
  RunConfig cfg;
  try {
    load_dataset(cfg);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.field(), "dataset");
  }
  cfg.dataset = "/nonexistent/ratings.tsv";
  EXPECT_THROW(load_dataset(cfg), ConfigError);
  cfg.dataset = "synthetic";
  cfg.synth_users = 20;
  cfg.synth_items = 10;
  const SplitDataset d = load_dataset(cfg);
  EXPECT_EQ(d.n_users, 20u);
  EXPECT_EQ(d.train.size() + d.validation.size() + d.test.size(), 200u);
}

TEST(Config, FormatDouble) {
  EXPECT_EQ(format_double(0.1), "0.1");
  EXPECT_EQ(format_double(1e-6), "1e-06");
  EXPECT_EQ(format_double(INFINITY), "inf");
}
