#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>
#include <sstream>

#include "lossforge/search.hpp"
#include "lossforge/zoo.hpp"

using namespace lossforge;

namespace {

const SplitDataset& small_data() {
  static const SynthData d = synth_dataset(60, 40, 2, 0.05, 3);
  return d.split;
}

std::unique_ptr<Recommender> fresh_model(std::uint64_t seed = 0) {
  const auto& d = small_data();
  return init_model(ModelKind::Mf, {d.n_users, d.n_items, 16}, seed);
}

const SplitDataset& fit_data() {
  static const SynthData d = synth_dataset(200, 100, 2, 0.05, 3);
  return d.split;
}

// fitted with MSE so that ascending it lowers validation AUC
std::unique_ptr<Recommender> fitted_model() {
  const auto& d = fit_data();
  auto m = init_model(ModelKind::Mf, {d.n_users, d.n_items, 16}, 0);
  Optimizer opt(OptimizerConfig::sgd(2.0));
  std::mt19937_64 rng(9);
  for (int epoch = 0; epoch < 30; ++epoch) train_epoch(*m, d.train, zoo("mse"), {}, opt, rng);
  return m;
}

std::vector<Example> probe(std::uint64_t seed = 1) {
  std::mt19937_64 rng(seed);
  return draw_probe_batch(small_data().train, 5, rng);
}

const LossExpr& neg_mse() {
  static const LossExpr e = parse("(neg (sq (add yhat (neg y))))");
  return e;
}

}  // namespace

TEST(Proxy, ConstantLossIsZeroGrad) {
  auto m = fresh_model();
  FingerprintStore store;
  const auto r = proxy_test(parse("(add y one)"), *m, probe(), store, 1e-4);
  EXPECT_EQ(r.outcome, ProxyOutcome::ZeroGrad);
  EXPECT_EQ(r.norm, 0.0);
  EXPECT_TRUE(store.empty());
}

TEST(Proxy, FirstLossPasses) {
  auto m = fresh_model();
  FingerprintStore store;
  const auto r = proxy_test(zoo("mse"), *m, probe(), store, 1e-4);
  EXPECT_EQ(r.outcome, ProxyOutcome::Pass);
  EXPECT_EQ(store.size(), 1u);
}

TEST(Proxy, LabelShiftedMseIsDuplicate) {
  auto m = fresh_model();
  FingerprintStore store;
  const auto p = probe();
  proxy_test(zoo("mse"), *m, p, store, 1e-4);
  const auto r = proxy_test(parse("(add (sq (add yhat (neg y))) y)"), *m, p, store, 1e-4);
  EXPECT_EQ(r.outcome, ProxyOutcome::Duplicate);
  EXPECT_EQ(r.entry, 0u);
  // different gradient fields pass
  EXPECT_EQ(proxy_test(neg_mse(), *m, p, store, 1e-4).outcome, ProxyOutcome::Pass);
  EXPECT_EQ(proxy_test(zoo("bce"), *m, p, store, 1e-4).outcome, ProxyOutcome::Pass);
  EXPECT_EQ(store.size(), 3u);
}

TEST(Proxy, FingerprintLeavesModelUntouched) {
  auto m = fresh_model();
  auto before = m->clone();
  gradient_fingerprint(*m, probe(), zoo("mse"));
  EXPECT_TRUE(same_parameters(*m, *before));
  for (auto& p : m->parameters()) EXPECT_FALSE(p.tensor.has_grad());
}

TEST(Proxy, RejectsNonPositiveDelta) {
  auto m = fresh_model();
  FingerprintStore store;
  EXPECT_THROW(proxy_test(zoo("mse"), *m, probe(), store, 0.0), ContractError);
}

TEST(Phase1, InfiniteEtaPromotesEveryTrainedLoss) {
  SearchConfig cfg;
  cfg.eta = std::numeric_limits<double>::infinity();
  cfg.max_samples = 12;
  ScriptedSource src({zoo("mse"), neg_mse(), zoo("bce")});
  const auto res = search_phase(cfg, small_data(), fresh_model(), src, 1);
  EXPECT_GT(res.stats.trainings, 0u);
  EXPECT_EQ(res.stats.promotions, res.stats.trainings);
  EXPECT_EQ(res.candidates.size(), res.stats.promotions);
}

TEST(Phase1, HarmfulLossIsNotPromoted) {
  SearchConfig cfg;
  cfg.eta = 0.0;
  cfg.max_samples = 1;
  cfg.model_optimizer = OptimizerConfig::sgd(20.0);
  ScriptedSource src({neg_mse()});
  auto model = fitted_model();
  auto initial = model->clone();
  std::vector<SampleEvent> events;
  const auto res = search_phase(cfg, fit_data(), std::move(model), src, 1,
                                [&](const SampleEvent& e) { events.push_back(e); });
  ASSERT_EQ(events.size(), 1u);
  EXPECT_LT(events[0].reward, -cfg.eta);
  EXPECT_FALSE(events[0].promoted);
  EXPECT_TRUE(res.candidates.empty());
  EXPECT_TRUE(same_parameters(*res.model, *initial));
}

TEST(Phase1, RewardsForRejectedSamples) {
  SearchConfig cfg;
  cfg.eta = std::numeric_limits<double>::infinity();
  cfg.max_samples = 30;
  // mse is trained, its label-shifted twin is a duplicate, the constant is zero-grad
  ScriptedSource src({zoo("mse"), parse("(add (sq (add yhat (neg y))) y)"), parse("(add y one)")});
  std::vector<SampleEvent> events;
  const auto res = search_phase(cfg, small_data(), fresh_model(), src, 2,
                                [&](const SampleEvent& e) { events.push_back(e); });
  ASSERT_EQ(src.rewards.size(), 30u);
  EXPECT_EQ(src.updates, 3u);
  EXPECT_EQ(res.stats.controller_updates, 3u);
  EXPECT_EQ(res.stats.samples, 30u);
  // within one update window the duplicate reuses the reward of the loss it copies
  EXPECT_EQ(src.rewards[1], src.rewards[0]);
  EXPECT_EQ(src.rewards[2], cfg.default_negative_reward);
  EXPECT_EQ(res.stats.zero_grad, 10u);
  EXPECT_EQ(events.size(), 30u);
}

TEST(Phase1, StallBudgetStopsSearch) {
  SearchConfig cfg;
  cfg.eta = 0.0;
  cfg.stall_budget = 3;
  cfg.model_optimizer = OptimizerConfig::sgd(20.0);
  ScriptedSource src({neg_mse()});
  const auto res = search_phase(cfg, fit_data(), fitted_model(), src, 1);
  EXPECT_TRUE(res.stats.stalled);
  EXPECT_EQ(res.stats.trainings, 3u);
}

TEST(Phase1, DeterministicWithController) {
  SearchConfig cfg;
  cfg.max_samples = 60;
  auto run = [&] {
    Policy policy({cfg.rounds}, 4);
    ControllerSource src(policy, 5);
    return search_phase(cfg, small_data(), fresh_model(), src, 6);
  };
  const auto a = run();
  const auto b = run();
  EXPECT_EQ(a.stats.trainings, b.stats.trainings);
  EXPECT_EQ(a.stats.zero_grad, b.stats.zero_grad);
  ASSERT_EQ(a.candidates.size(), b.candidates.size());
  for (std::size_t k = 0; k < a.candidates.size(); ++k) {
    EXPECT_EQ(serialize(a.candidates[k].expr), serialize(b.candidates[k].expr));
    EXPECT_EQ(a.candidates[k].reward, b.candidates[k].reward);
  }
  EXPECT_TRUE(same_parameters(*a.model, *b.model));
}

TEST(Phase1, ConfigValidation) {
  SearchConfig cfg;
  cfg.probe_batch = 4;
  EXPECT_THROW(cfg.validate(), ContractError);
  cfg = {};
  cfg.delta = 0;
  EXPECT_THROW(cfg.validate(), ContractError);
  cfg = {};
  cfg.eta = -1;
  EXPECT_THROW(cfg.validate(), ContractError);
}

TEST(Phase2, SignExamples) {
  std::mt19937_64 rng(0);
  // a squared error below xi hits the clamp floor and passes no gradient
  for (double yhat = 0.0015; yhat < 1.0; yhat += 0.001) {
    EXPECT_GT(grad_yhat(zoo("mse"), yhat, 0.0, {}), 0.0) << yhat;
    EXPECT_LT(grad_yhat(zoo("mse"), 1.0 - yhat, 1.0, {}), 0.0) << yhat;
  }
  EXPECT_EQ(grad_yhat(zoo("mse"), 5e-4, 0.0, {}), 0.0);
  EXPECT_GE(validation_check(zoo("mse"), 2000, rng), 0.995);
  EXPECT_DOUBLE_EQ(validation_check(neg_mse(), 2000, rng), 0.0);
  EXPECT_DOUBLE_EQ(validation_check(parse("(add y one)"), 2000, rng), 0.0);
}

TEST(Phase2, ZooLossesPass) {
  for (const char* name : {"mse", "bce", "maxr", "sumr", "logmin"}) {
    std::mt19937_64 rng(1);
    EXPECT_GE(validation_check(zoo(name), kValidationPairs, rng), 0.99) << name;
  }
}

TEST(Phase2, MatchesAnalyticRate) {
  // y = 0: gradient 2 yhat > 0 always. y = 1: 2 yhat - 1/yhat^2 < 0 iff yhat < 2^(-1/3).
  const double expected = 0.5 + 0.5 * std::pow(2.0, -1.0 / 3.0);
  std::mt19937_64 rng(2);
  EXPECT_NEAR(validation_check(parse("(add (sq yhat) (rec (min y yhat)))"), 200000, rng), expected, 0.005);
}

TEST(Phase2, SurvivorSelection) {
  const LossExpr sq = parse("(add (sq yhat) (rec (min y yhat)))");
  std::mt19937_64 probe_rng(7);
  const double rate = validation_check(sq, 500, probe_rng);

  std::vector<CandidateRecord> promoted{{sq, 0.1, 0, {}, {}, {}, {}, {}}};
  std::mt19937_64 rng(7);
  EXPECT_EQ(select_survivors(promoted, 10, rng, 500, rate).size(), 1u) << "threshold is inclusive";
  rng.seed(7);
  EXPECT_TRUE(select_survivors(promoted, 10, rng, 500, rate + 1e-9).empty());

  std::vector<CandidateRecord> many;
  for (int k = 0; k < 5; ++k) many.push_back({zoo("mse"), 0.01 * k, 0, {}, {}, {}, {}, {}});
  many.push_back({zoo("bce"), 0.02, 0, {}, {}, {}, {}, {}});
  many.push_back({zoo("maxr"), 0.5, 0, {}, {}, {}, {}, {}});
  many.push_back({neg_mse(), 1.0, 0, {}, {}, {}, {}, {}});
  rng.seed(1);
  const auto s = select_survivors(many, 2, rng);
  ASSERT_EQ(s.size(), 2u);
  EXPECT_EQ(serialize(s[0].expr), serialize(zoo("maxr")));
  EXPECT_EQ(serialize(s[1].expr), serialize(zoo("mse")));
  EXPECT_DOUBLE_EQ(s[1].reward, 0.04);
  EXPECT_DOUBLE_EQ(many.back().positive_rate.value(), 0.0);
}

TEST(Phase3, EpsilonGrid) {
  EXPECT_EQ(epsilon_grid().size(), 7u);
  EXPECT_EQ(epsilon_grid().front(), 1.0);
  EXPECT_EQ(epsilon_grid().back(), 1e-6);
  EffectivenessConfig cfg;
  EXPECT_EQ(epsilons_for(zoo("mse"), cfg).size(), 1u);
  EXPECT_EQ(epsilons_for(zoo("maxr"), cfg).size(), 7u);
}

TEST(Phase3, EmptyCandidateList) {
  std::vector<CandidateRecord> none;
  EXPECT_FALSE(effectiveness_test(none, small_data(), {}).has_value());
}

TEST(Phase3, SingleCandidateSelected) {
  std::vector<CandidateRecord> c{{zoo("mse"), 0, 0, {}, {}, {}, {}, {}}};
  EffectivenessConfig cfg;
  cfg.task = Task::Regression;
  cfg.dim = 16;
  cfg.max_epochs = 5;
  EXPECT_EQ(effectiveness_test(c, small_data(), cfg), std::optional<std::size_t>(0));
  ASSERT_EQ(c[0].trials.size(), 1u);
  EXPECT_TRUE(c[0].validation.has_value());
  EXPECT_DOUBLE_EQ(*c[0].validation, c[0].trials[0].validation.rmse);
}

TEST(Phase3, GeneratedLossBeatsConstant) {
  const SynthData d = synth_dataset(100, 50, 2, 0.05, 11);
  std::vector<CandidateRecord> c{{parse("(add y one)"), 0, 0, {}, {}, {}, {}, {}},
                                 {zoo("maxr"), 0, 0, {}, {}, {}, {}, {}}};
  EffectivenessConfig cfg;
  cfg.dim = 16;
  cfg.max_epochs = 40;
  cfg.epsilons = {0.1, 0.01};
  cfg.optimizer = OptimizerConfig::sgd(0.05);
  EXPECT_EQ(effectiveness_test(c, d.split, cfg), std::optional<std::size_t>(1));
  EXPECT_NEAR(c[0].validation.value(), 0.5, 0.1);
  EXPECT_GT(c[1].validation.value(), c[0].validation.value());
  ASSERT_EQ(c[1].trials.size(), 2u);
  EXPECT_GT(c[1].trials[0].epsilon, c[1].trials[1].epsilon);
}

TEST(Phase3, ParallelMatchesSerial) {
  auto run = [](std::size_t jobs) {
    std::vector<CandidateRecord> c{{zoo("mse"), 0, 0, {}, {}, {}, {}, {}},
                                   {zoo("maxr"), 0, 0, {}, {}, {}, {}, {}}};
    EffectivenessConfig cfg;
    cfg.dim = 8;
    cfg.max_epochs = 4;
    cfg.epsilons = {1.0, 0.1, 0.01};
    cfg.jobs = jobs;
    effectiveness_test(c, small_data(), cfg);
    return c;
  };
  const auto a = run(1);
  const auto b = run(3);
  for (std::size_t k = 0; k < a.size(); ++k) {
    ASSERT_EQ(a[k].trials.size(), b[k].trials.size());
    for (std::size_t t = 0; t < a[k].trials.size(); ++t) {
      EXPECT_EQ(a[k].trials[t].epsilon, b[k].trials[t].epsilon);
      EXPECT_EQ(a[k].trials[t].validation.auc, b[k].trials[t].validation.auc);
    }
  }
}

TEST(Phase3, ResumeSkipsFinishedTrials) {
  std::vector<CandidateRecord> c{{zoo("maxr"), 0, 0, {}, {}, {}, {}, {}}};
  EffectivenessConfig cfg;
  cfg.dim = 8;
  cfg.max_epochs = 3;
  cfg.epsilons = {0.1, 0.01};
  TrialResult done;
  done.epsilon = 0.1;
  done.best_epoch = 1;
  done.epochs = 1;
  done.validation.auc = 0.99;
  c[0].trials.push_back(done);
  std::size_t trained = 0;
  effectiveness_test(c, small_data(), cfg, [&] { ++trained; });
  EXPECT_EQ(trained, 1u);
  EXPECT_EQ(c[0].best_epsilon, std::optional<double>(0.1));
}

TEST(Phase3, ConvergenceBookkeeping) {
  EffectivenessConfig cfg;
  cfg.dim = 8;
  cfg.max_epochs = 15;
  std::size_t calls = 0;
  const TrialResult t = train_to_convergence(small_data(), zoo("mse"), {}, cfg,
                                             [&](std::size_t, const MetricReport&) { ++calls; });
  EXPECT_FALSE(t.failed);
  EXPECT_EQ(calls, t.epochs);
  EXPECT_LE(t.epochs, 15u);
  EXPECT_GE(t.best_epoch, 1u);
  EXPECT_LE(t.best_epoch, t.epochs);
  EXPECT_FALSE(std::isnan(t.test.auc));
}

TEST(Ledger, RoundTrip) {
  Ledger l;
  l.phase1_complete = true;
  l.stats.samples = 42;
  l.stats.stalled = true;
  l.final_metric = 0.75;
  l.promoted.push_back({zoo("mse"), 0.01, 3, {}, {}, {}, {}, {}});
  CandidateRecord s{zoo("maxr"), 0.02, 5, 0.999, {}, 0.1, 0.8, 0.81};
  TrialResult t;
  t.epsilon = 0.1;
  t.best_epoch = 7;
  t.epochs = 20;
  t.validation.auc = 0.8;
  s.trials.push_back(t);
  l.survivors.push_back(s);
  l.winner = 0;

  std::stringstream buf;
  write_ledger(buf, l);
  const std::string first = buf.str();
  const Ledger back = read_ledger(buf);
  std::stringstream again;
  write_ledger(again, back);
  EXPECT_EQ(first, again.str());
  EXPECT_EQ(back.stats.samples, 42u);
  EXPECT_TRUE(std::isnan(back.survivors[0].trials[0].validation.f1));
  EXPECT_EQ(back.winner, std::optional<std::size_t>(0));
}

TEST(Ledger, ErrorsNameTheLine) {
  std::stringstream bad("{\"type\":\"header\",\"version\":1}\n");
  try {
    read_ledger(bad);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("line 1"), std::string::npos);
  }
  std::stringstream empty("");
  EXPECT_THROW(read_ledger(empty), DataError);
}
