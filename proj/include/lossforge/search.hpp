#pragma once

// The search pipeline:
//   phase I    alternating loss sampling / one-epoch model updates, with the
//              gradient proxy test and the reward filter
//   phase II   gradient-direction validation check on synthetic pairs
//   phase III  from-scratch training with a smoothing-coefficient grid

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "lossforge/controller.hpp"
#include "lossforge/data.hpp"
#include "lossforge/errors.hpp"
#include "lossforge/expr.hpp"
#include "lossforge/metrics.hpp"
#include "lossforge/models.hpp"
#include "lossforge/optim.hpp"

namespace lossforge {

enum class Task { Classification, Regression };

inline Task parse_task(std::string_view name) {
  if (name == "classification") return Task::Classification;
  if (name == "regression") return Task::Regression;
  throw std::invalid_argument("unknown task '" + std::string(name) + "' (expected classification or regression)");
}

inline std::string_view task_name(Task t) { return t == Task::Classification ? "classification" : "regression"; }

// ---------------------------------------------------------------------------
// Evaluation

struct MetricReport {
  double auc = NAN;
  double f1 = NAN;
  double accuracy = NAN;
  double rmse = NAN;
  double mae = NAN;
};

/// All five metrics; AUC is NaN when the labels hold a single class.
inline MetricReport evaluate_metrics(Recommender& model, std::span<const Example> examples) {
  if (examples.empty()) throw MetricError("evaluation over an empty split");
  const auto scores = predict(model, examples);
  for (double s : scores)
    if (!std::isfinite(s)) throw TrainingError("non-finite prediction");
  std::vector<double> labels(examples.size());
  for (std::size_t k = 0; k < examples.size(); ++k) labels[k] = examples[k].label;
  MetricReport r;
  try {
    r.auc = metrics::auc(labels, scores);
  } catch (const MetricError&) {
  }
  r.f1 = metrics::f1(labels, scores);
  r.accuracy = metrics::accuracy(labels, scores);
  r.rmse = metrics::rmse(labels, scores);
  r.mae = metrics::mae(labels, scores);
  return r;
}

/// The task's selection metric oriented so that higher is better.
inline double score_of(const MetricReport& r, Task task) { return task == Task::Classification ? r.auc : -r.rmse; }

/// The task's selection metric as reported (AUC or RMSE).
inline double primary_metric(const MetricReport& r, Task task) {
  return task == Task::Classification ? r.auc : r.rmse;
}

// ---------------------------------------------------------------------------
// Proxy test

/// Flattened parameter gradient of the summed loss over a probe batch,
/// taken in eval mode.
inline std::vector<double> gradient_fingerprint(Recommender& model, std::span<const Example> probe,
                                                const LossExpr& loss, const SafeMathConfig& cfg = {}) {
  auto params = model.parameters();
  clear_grads(params);
  std::vector<std::size_t> ids(probe.size());
  std::iota(ids.begin(), ids.end(), std::size_t{0});
  Tape tape;
  Tensor l = batch_loss(&tape, model, probe, ids, loss, cfg, Reduction::Sum, false);
  tape.backward(l);
  std::vector<double> g;
  for (auto& p : params) {
    if (p.tensor.has_grad()) {
      auto gv = p.tensor.grad();
      g.insert(g.end(), gv.begin(), gv.end());
    } else {
      g.insert(g.end(), p.tensor.size(), 0.0);
    }
  }
  clear_grads(params);
  return g;
}

inline double l2_norm(std::span<const double> v) {
  double s = 0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

inline double l2_distance(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DimensionError("fingerprints differ in length");
  double s = 0;
  for (std::size_t k = 0; k < a.size(); ++k) s += (a[k] - b[k]) * (a[k] - b[k]);
  return std::sqrt(s);
}

enum class ProxyOutcome { ZeroGrad, Duplicate, Pass };

inline std::string_view proxy_outcome_name(ProxyOutcome o) {
  switch (o) {
    case ProxyOutcome::ZeroGrad: return "zero_grad";
    case ProxyOutcome::Duplicate: return "duplicate";
    case ProxyOutcome::Pass: return "pass";
  }
  return "?";
}

/// Fingerprints of losses that passed the proxy test in the current RL loop.
class FingerprintStore {
 public:
  struct Entry {
    LossExpr loss;
    std::vector<double> fingerprint;
    std::optional<double> reward;
  };

  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }
  void clear() noexcept { entries_.clear(); }
  const Entry& operator[](std::size_t k) const { return entries_.at(k); }
  Entry& operator[](std::size_t k) { return entries_.at(k); }

  std::size_t insert(LossExpr loss, std::vector<double> fp) {
    entries_.push_back({std::move(loss), std::move(fp), std::nullopt});
    return entries_.size() - 1;
  }

  /// First stored entry closer than `delta`.
  std::optional<std::size_t> find_within(std::span<const double> g, double delta) const {
    for (std::size_t k = 0; k < entries_.size(); ++k)
      if (l2_distance(g, entries_[k].fingerprint) < delta) return k;
    return std::nullopt;
  }

 private:
  std::vector<Entry> entries_;
};

struct ProxyResult {
  ProxyOutcome outcome = ProxyOutcome::Pass;
  std::size_t entry = 0;  // duplicate's match, or the inserted entry on Pass
  double norm = 0.0;
};

/// ZeroGrad if ||g|| < delta; DuplicateOf(f') if some stored ||g - g'|| < delta;
/// otherwise Pass, and g is stored under f.
inline ProxyResult proxy_test(const LossExpr& f, Recommender& frozen, std::span<const Example> probe,
                              FingerprintStore& store, double delta, const SafeMathConfig& cfg = {}) {
  if (!(delta > 0)) throw ContractError("proxy threshold must be positive");
  auto g = gradient_fingerprint(frozen, probe, f, cfg);
  ProxyResult r;
  r.norm = l2_norm(g);
  if (r.norm < delta) {
    r.outcome = ProxyOutcome::ZeroGrad;
    return r;
  }
  if (auto hit = store.find_within(g, delta)) {
    r.outcome = ProxyOutcome::Duplicate;
    r.entry = *hit;
    return r;
  }
  r.entry = store.insert(f, std::move(g));
  return r;
}

// ---------------------------------------------------------------------------
// Phase I

struct SearchConfig {
  double delta = 1e-4;
  double eta = 0.01;
  std::size_t probe_batch = 5;
  std::size_t rounds = kDefaultRounds;
  Task task = Task::Classification;
  double default_negative_reward = -0.05;
  std::size_t stall_budget = 500;
  std::size_t max_iterations = 100000;
  std::size_t max_samples = 3000;
  std::size_t rewards_per_update = 10;
  bool proxy = true;
  SafeMathConfig math{};
  OptimizerConfig model_optimizer = OptimizerConfig::sgd(0.01);
  TrainConfig train{};

  void validate() const {
    if (!(delta > 0)) throw ContractError("delta must be positive");
    if (!(eta >= 0)) throw ContractError("eta must be non-negative");
    if (probe_batch < 5 || probe_batch > 20) throw ContractError("probe batch size must lie in [5, 20]");
    if (rounds == 0 || rounds > kMaxNodes) throw ContractError("rounds must lie in [1, 256]");
    if (rewards_per_update == 0) throw ContractError("rewards per update must be positive");
    math.validate();
  }
};

/// Where phase I gets its losses. Rewards arrive in sampling order; update()
/// closes an RL loop.
class LossSource {
 public:
  virtual ~LossSource() = default;
  virtual LossExpr next() = 0;
  virtual void reward(double r) = 0;
  virtual void update() {}
};

/// Samples from the controller; one REINFORCE step per update().
class ControllerSource final : public LossSource {
 public:
  ControllerSource(Policy& policy, std::uint64_t seed, ReinforceConfig rc = {})
      : policy_(policy), rng_(seed), rc_(rc), opt_(rc.optimizer) {}

  LossExpr next() override {
    episodes_.push_back(sample(policy_, rng_));
    return episodes_.back().expr;
  }

  void reward(double r) override { rewards_.push_back(r); }

  void update() override {
    if (episodes_.empty()) return;
    if (episodes_.size() != rewards_.size()) throw ContractError("controller source: unrewarded episode");
    reinforce_update(policy_, opt_, episodes_, rewards_, baseline_, rc_);
    episodes_.clear();
    rewards_.clear();
    ++updates_;
  }

  std::size_t updates() const noexcept { return updates_; }
  const Baseline& baseline() const noexcept { return baseline_; }

 private:
  Policy& policy_;
  std::mt19937_64 rng_;
  ReinforceConfig rc_;
  Optimizer opt_;
  Baseline baseline_;
  std::vector<Episode> episodes_;
  std::vector<double> rewards_;
  std::size_t updates_ = 0;
};

/// Replays a fixed list of losses cyclically.
class ScriptedSource final : public LossSource {
 public:
  explicit ScriptedSource(std::vector<LossExpr> script) : script_(std::move(script)) {
    if (script_.empty()) throw ContractError("scripted source needs at least one loss");
  }
  LossExpr next() override { return script_[pos_++ % script_.size()]; }
  void reward(double r) override { rewards.push_back(r); }
  void update() override { ++updates; }

  std::vector<double> rewards;
  std::size_t updates = 0;

 private:
  std::vector<LossExpr> script_;
  std::size_t pos_ = 0;
};

struct TrialResult {
  double epsilon = 0.0;
  bool failed = false;
  std::size_t best_epoch = 0;
  std::size_t epochs = 0;
  MetricReport validation;
  MetricReport test;
};

struct CandidateRecord {
  LossExpr expr;
  double reward = 0.0;
  std::size_t iteration = 0;  // phase-I iteration that promoted it
  std::optional<double> positive_rate;
  std::vector<TrialResult> trials;
  std::optional<double> best_epsilon;
  std::optional<double> validation;  // selection metric at the best epsilon
  std::optional<double> test;
};

struct SampleEvent {
  std::size_t sample = 0;
  std::size_t iteration = 0;
  std::string expr;
  ProxyOutcome outcome = ProxyOutcome::Pass;
  double reward = 0.0;
  double init_metric = NAN;
  double updated_metric = NAN;
  bool trained = false;
  bool promoted = false;
};

struct SearchStats {
  std::size_t samples = 0;
  std::size_t iterations = 0;
  std::size_t zero_grad = 0;
  std::size_t duplicates = 0;
  std::size_t trainings = 0;
  std::size_t promotions = 0;
  std::size_t controller_updates = 0;
  bool stalled = false;
};

struct SearchResult {
  std::vector<CandidateRecord> candidates;
  SearchStats stats;
  std::unique_ptr<Recommender> model;
  double final_metric = NAN;  // current model's validation metric at the end
};

/// Fixed probe batch drawn from the training split.
template <class Rng>
std::vector<Example> draw_probe_batch(std::span<const Example> train, std::size_t n, Rng& rng) {
  if (train.empty()) throw DataError("empty training split");
  std::vector<Example> out;
  std::uniform_int_distribution<std::size_t> pick(0, train.size() - 1);
  for (std::size_t k = 0; k < n; ++k) out.push_back(train[pick(rng)]);
  return out;
}

/// Phase I. Each iteration samples losses until one passes the proxy test,
/// trains a copy of the current model for one epoch under it and promotes the
/// copy when reward >= -eta. Every sampled loss is rewarded; after each
/// `rewards_per_update` rewards the source updates and the fingerprint store
/// is reset against a fresh snapshot of the current model.
inline SearchResult search_phase(const SearchConfig& cfg, const SplitDataset& data,
                                 std::unique_ptr<Recommender> model, LossSource& source, std::uint64_t seed,
                                 const std::function<void(const SampleEvent&)>& on_sample = {}) {
  cfg.validate();
  if (data.train.empty() || data.validation.empty()) throw DataError("search needs train and validation splits");
  std::mt19937_64 probe_rng(seed ^ 0x5eedULL);
  const auto probe = draw_probe_batch(data.train, cfg.probe_batch, probe_rng);
  std::mt19937_64 train_rng(seed);

  SearchResult res;
  auto measure = [&](Recommender& m) { return score_of(evaluate_metrics(m, data.validation), cfg.task); };
  double current = measure(*model);

  FingerprintStore store;
  std::unique_ptr<Recommender> frozen = model->clone();
  std::size_t pending_rewards = 0;
  std::size_t since_promotion = 0;

  auto give_reward = [&](double r) {
    source.reward(r);
    if (++pending_rewards == cfg.rewards_per_update) {
      source.update();
      ++res.stats.controller_updates;
      pending_rewards = 0;
      store.clear();
      frozen = model->clone();
    }
  };

  while (res.stats.samples < cfg.max_samples && res.stats.iterations < cfg.max_iterations) {
    // Sample until something passes the proxy test (or the budget runs out).
    std::optional<LossExpr> chosen;
    std::size_t entry = 0;
    while (res.stats.samples < cfg.max_samples) {
      LossExpr f = source.next();
      SampleEvent ev;
      ev.sample = res.stats.samples++;
      ev.iteration = res.stats.iterations;
      ev.init_metric = current;
      if (on_sample) ev.expr = serialize(f);
      if (!cfg.proxy) {
        chosen = std::move(f);
        break;
      }
      ProxyResult pr = proxy_test(f, *frozen, probe, store, cfg.delta, cfg.math);
      ev.outcome = pr.outcome;
      if (pr.outcome == ProxyOutcome::Pass) {
        chosen = std::move(f);
        entry = pr.entry;
        break;
      }
      if (pr.outcome == ProxyOutcome::ZeroGrad) {
        ++res.stats.zero_grad;
        ev.reward = cfg.default_negative_reward;
      } else {
        ++res.stats.duplicates;
        ev.reward = store[pr.entry].reward.value_or(cfg.default_negative_reward);
      }
      if (on_sample) on_sample(ev);
      give_reward(ev.reward);
    }
    if (!chosen) break;

    SampleEvent ev;
    ev.sample = res.stats.samples - 1;
    ev.iteration = res.stats.iterations++;
    ev.init_metric = current;
    ev.trained = true;
    if (on_sample) ev.expr = serialize(*chosen);

    auto copy = model->clone();
    Optimizer opt(cfg.model_optimizer);
    double updated = -std::numeric_limits<double>::infinity();
    ++res.stats.trainings;
    try {
      train_epoch(*copy, data.train, *chosen, cfg.math, opt, train_rng, cfg.train);
      updated = measure(*copy);
      if (std::isnan(updated)) updated = -std::numeric_limits<double>::infinity();
    } catch (const TrainingError&) {
    }
    const double reward =
        std::isfinite(updated) ? updated - current : cfg.default_negative_reward;
    ev.reward = reward;
    ev.updated_metric = updated;
    if (cfg.proxy) store[entry].reward = reward;

    if (std::isfinite(updated) && reward >= -cfg.eta) {
      model = std::move(copy);
      current = updated;
      ev.promoted = true;
      ++res.stats.promotions;
      since_promotion = 0;
      res.candidates.push_back({*chosen, reward, ev.iteration, std::nullopt, {}, std::nullopt, std::nullopt,
                                std::nullopt});
    } else if (++since_promotion >= cfg.stall_budget) {
      res.stats.stalled = true;
    }
    if (on_sample) on_sample(ev);
    give_reward(reward);
    if (res.stats.stalled) break;
  }
  res.final_metric = cfg.task == Task::Classification ? current : -current;
  res.model = std::move(model);
  return res;
}

// ---------------------------------------------------------------------------
// Phase II

inline constexpr std::size_t kValidationPairs = 2000;
inline constexpr double kValidationThreshold = 0.9;

/// Fraction of random (yhat ~ U[0,1], y ~ U{0,1}) pairs where the gradient
/// over yhat points toward the label: strictly positive for y = 0, strictly
/// negative for y = 1.
template <class Rng>
double validation_check(const LossExpr& f, std::size_t n_pairs, Rng& rng, const SafeMathConfig& cfg = {}) {
  if (n_pairs == 0) throw ContractError("validation check needs at least one pair");
  std::uniform_real_distribution<double> uy(0.0, 1.0);
  std::bernoulli_distribution label(0.5);
  std::size_t positive = 0;
  for (std::size_t k = 0; k < n_pairs; ++k) {
    const double yhat = uy(rng);
    const double y = label(rng) ? 1.0 : 0.0;
    const double g = grad_yhat(f, yhat, y, cfg);
    if ((y == 0.0 && g > 0.0) || (y == 1.0 && g < 0.0)) ++positive;
  }
  return static_cast<double>(positive) / static_cast<double>(n_pairs);
}

// ---------------------------------------------------------------------------
// Phase III

inline const std::vector<double>& epsilon_grid() {
  static const std::vector<double> grid = {1.0, 1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6};
  return grid;
}

struct EffectivenessConfig {
  ModelKind model = ModelKind::Mf;
  std::size_t dim = 64;
  Task task = Task::Classification;
  std::vector<double> epsilons = epsilon_grid();
  std::size_t decrease_patience = 10;  // stop after this many consecutive decreases
  std::size_t stale_limit = 50;        // stop when the best epoch is older than this
  std::size_t max_epochs = 1000;
  std::size_t jobs = 1;
  std::size_t top_k = 10;
  std::uint64_t seed = 0;
  OptimizerConfig optimizer = OptimizerConfig::sgd(0.01);
  TrainConfig train{};
};

/// Trains a fresh seeded model under `loss` until an early-stop rule fires.
/// Metrics are taken at the epoch with the best validation score.
inline TrialResult train_to_convergence(const SplitDataset& data, const LossExpr& loss, const SafeMathConfig& math,
                                        const EffectivenessConfig& cfg,
                                        const std::function<void(std::size_t, const MetricReport&)>& on_epoch = {}) {
  TrialResult t;
  t.epsilon = math.epsilon;
  auto model = init_model(cfg.model, {data.n_users, data.n_items, cfg.dim}, cfg.seed);
  Optimizer opt(cfg.optimizer);
  std::mt19937_64 rng(cfg.seed);
  double best = -std::numeric_limits<double>::infinity();
  double previous = best;
  std::size_t decreases = 0;
  try {
    for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
      train_epoch(*model, data.train, loss, math, opt, rng, cfg.train);
      t.epochs = epoch;
      const MetricReport val = evaluate_metrics(*model, data.validation);
      if (on_epoch) on_epoch(epoch, val);
      const double s = score_of(val, cfg.task);
      if (std::isnan(s)) throw TrainingError("undefined validation metric");
      if (s > best || t.best_epoch == 0) {
        best = s;
        t.best_epoch = epoch;
        t.validation = val;
        if (!data.test.empty()) t.test = evaluate_metrics(*model, data.test);
      }
      decreases = s < previous ? decreases + 1 : 0;
      previous = s;
      if (decreases >= cfg.decrease_patience) break;
      if (epoch - t.best_epoch > cfg.stale_limit) break;
    }
  } catch (const TrainingError&) {
    if (t.best_epoch == 0) t.failed = true;
  }
  return t;
}

/// Epsilon values a loss is trained at: the grid when it has smoothing sites,
/// otherwise a single run.
inline std::vector<double> epsilons_for(const LossExpr& loss, const EffectivenessConfig& cfg) {
  if (smoothing_sites(loss) == 0) return {SafeMathConfig{}.epsilon};
  return cfg.epsilons;
}

/// Runs `fn(k)` for k in [0, n) on up to `jobs` threads.
template <class Fn>
void parallel_for(std::size_t n, std::size_t jobs, Fn fn) {
  jobs = std::max<std::size_t>(1, std::min(jobs, n));
  if (jobs == 1) {
    for (std::size_t k = 0; k < n; ++k) fn(k);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(jobs);
  std::vector<std::thread> pool;
  for (std::size_t j = 0; j < jobs; ++j) {
    pool.emplace_back([&, j] {
      try {
        for (std::size_t k; (k = next.fetch_add(1)) < n;) fn(k);
      } catch (...) {
        errors[j] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

/// Best trial of a candidate under the task's selection metric.
inline std::optional<std::size_t> best_trial(const std::vector<TrialResult>& trials, Task task) {
  std::optional<std::size_t> best;
  for (std::size_t k = 0; k < trials.size(); ++k) {
    if (trials[k].failed) continue;
    if (!best || score_of(trials[k].validation, task) > score_of(trials[best.value()].validation, task)) best = k;
  }
  return best;
}

/// Fills in the trials of each candidate (skipping epsilon values already
/// present, so a partially completed run resumes) and returns the index of
/// the candidate with the best validation metric, or nothing if the list is
/// empty or every run failed. `on_trial` fires after each new trial.
inline std::optional<std::size_t> effectiveness_test(std::vector<CandidateRecord>& candidates,
                                                     const SplitDataset& data, const EffectivenessConfig& cfg,
                                                     const std::function<void()>& on_trial = {}) {
  struct Job {
    std::size_t candidate;
    double epsilon;
  };
  std::vector<Job> jobs;
  for (std::size_t c = 0; c < candidates.size(); ++c) {
    for (double eps : epsilons_for(candidates[c].expr, cfg)) {
      const bool done = std::any_of(candidates[c].trials.begin(), candidates[c].trials.end(),
                                    [&](const TrialResult& t) { return t.epsilon == eps; });
      if (!done) jobs.push_back({c, eps});
    }
  }
  std::mutex merge;
  parallel_for(jobs.size(), cfg.jobs, [&](std::size_t k) {
    const LossExpr& loss = candidates[jobs[k].candidate].expr;
    TrialResult r = train_to_convergence(data, loss, SafeMathConfig::with_epsilon(jobs[k].epsilon), cfg);
    std::lock_guard lock(merge);
    candidates[jobs[k].candidate].trials.push_back(r);
    if (on_trial) on_trial();
  });

  std::optional<std::size_t> winner;
  double winner_score = -std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < candidates.size(); ++c) {
    auto& cand = candidates[c];
    std::sort(cand.trials.begin(), cand.trials.end(),
              [](const TrialResult& a, const TrialResult& b) { return a.epsilon > b.epsilon; });
    const auto b = best_trial(cand.trials, cfg.task);
    if (!b) continue;
    const TrialResult& t = cand.trials[*b];
    cand.best_epsilon = t.epsilon;
    cand.validation = primary_metric(t.validation, cfg.task);
    cand.test = primary_metric(t.test, cfg.task);
    const double s = score_of(t.validation, cfg.task);
    if (!winner || s > winner_score) {
      winner = c;
      winner_score = s;
    }
  }
  return winner;
}

/// Phase-II survivors of a phase-I list, deduplicated by serialization, best
/// reward first, at most `top_k`.
template <class Rng>
std::vector<CandidateRecord> select_survivors(std::vector<CandidateRecord>& promoted, std::size_t top_k, Rng& rng,
                                              std::size_t n_pairs = kValidationPairs,
                                              double threshold = kValidationThreshold) {
  std::map<std::string, std::size_t> seen;
  std::vector<CandidateRecord> survivors;
  for (auto& c : promoted) {
    c.positive_rate = validation_check(c.expr, n_pairs, rng);
    if (*c.positive_rate < threshold) continue;
    const std::string key = serialize(c.expr);
    auto it = seen.find(key);
    if (it != seen.end()) {
      if (c.reward > survivors[it->second].reward) survivors[it->second] = c;
      continue;
    }
    seen.emplace(key, survivors.size());
    survivors.push_back(c);
  }
  std::stable_sort(survivors.begin(), survivors.end(),
                   [](const CandidateRecord& a, const CandidateRecord& b) { return a.reward > b.reward; });
  if (survivors.size() > top_k) survivors.resize(top_k);
  return survivors;
}

// ---------------------------------------------------------------------------
// Candidate ledger: one JSON object per line. The first line is a header.

struct Ledger {
  bool phase1_complete = false;
  bool phase2_complete = false;
  SearchStats stats;
  double final_metric = NAN;
  std::vector<CandidateRecord> promoted;   // phase-I list
  std::vector<CandidateRecord> survivors;  // phase-II survivors, phase-III fields
  std::optional<std::size_t> winner;       // index into survivors
};

namespace detail {

inline nlohmann::json metrics_json(const MetricReport& r) {
  auto num = [](double v) { return std::isnan(v) ? nlohmann::json(nullptr) : nlohmann::json(v); };
  return {{"auc", num(r.auc)}, {"f1", num(r.f1)}, {"accuracy", num(r.accuracy)}, {"rmse", num(r.rmse)},
          {"mae", num(r.mae)}};
}

inline MetricReport metrics_from_json(const nlohmann::json& j) {
  auto num = [&](const char* k) { return j.at(k).is_null() ? NAN : j.at(k).get<double>(); };
  return {num("auc"), num("f1"), num("accuracy"), num("rmse"), num("mae")};
}

inline nlohmann::json candidate_json(const CandidateRecord& c, std::string_view phase) {
  nlohmann::json j = {{"type", "candidate"}, {"phase", phase}, {"expr", serialize(c.expr)},
                      {"reward", c.reward}, {"iteration", c.iteration}};
  if (c.positive_rate) j["positive_rate"] = *c.positive_rate;
  if (!c.trials.empty()) {
    auto& arr = j["trials"] = nlohmann::json::array();
    for (const auto& t : c.trials) {
      arr.push_back({{"epsilon", t.epsilon},
                     {"failed", t.failed},
                     {"best_epoch", t.best_epoch},
                     {"epochs", t.epochs},
                     {"validation", metrics_json(t.validation)},
                     {"test", metrics_json(t.test)}});
    }
  }
  if (c.best_epsilon) j["best_epsilon"] = *c.best_epsilon;
  if (c.validation) j["validation"] = *c.validation;
  if (c.test) j["test"] = *c.test;
  return j;
}

inline CandidateRecord candidate_from_json(const nlohmann::json& j) {
  CandidateRecord c;
  c.expr = parse(j.at("expr").get<std::string>());
  c.reward = j.at("reward").get<double>();
  c.iteration = j.at("iteration").get<std::size_t>();
  if (j.contains("positive_rate")) c.positive_rate = j["positive_rate"].get<double>();
  if (j.contains("trials")) {
    for (const auto& t : j["trials"]) {
      TrialResult r;
      r.epsilon = t.at("epsilon").get<double>();
      r.failed = t.at("failed").get<bool>();
      r.best_epoch = t.at("best_epoch").get<std::size_t>();
      r.epochs = t.at("epochs").get<std::size_t>();
      r.validation = metrics_from_json(t.at("validation"));
      r.test = metrics_from_json(t.at("test"));
      c.trials.push_back(r);
    }
  }
  if (j.contains("best_epsilon")) c.best_epsilon = j["best_epsilon"].get<double>();
  if (j.contains("validation")) c.validation = j["validation"].get<double>();
  if (j.contains("test")) c.test = j["test"].get<double>();
  return c;
}

}  // namespace detail

inline void write_ledger(std::ostream& out, const Ledger& l) {
  nlohmann::json header = {{"type", "header"},
                           {"version", 1},
                           {"phase1_complete", l.phase1_complete},
                           {"phase2_complete", l.phase2_complete},
                           {"samples", l.stats.samples},
                           {"iterations", l.stats.iterations},
                           {"zero_grad", l.stats.zero_grad},
                           {"duplicates", l.stats.duplicates},
                           {"trainings", l.stats.trainings},
                           {"promotions", l.stats.promotions},
                           {"controller_updates", l.stats.controller_updates},
                           {"stalled", l.stats.stalled},
                           {"final_metric", std::isnan(l.final_metric) ? nlohmann::json(nullptr)
                                                                       : nlohmann::json(l.final_metric)}};
  if (l.winner) header["winner"] = *l.winner;
  out << header.dump() << '\n';
  for (const auto& c : l.promoted) out << detail::candidate_json(c, "search").dump() << '\n';
  for (const auto& c : l.survivors) out << detail::candidate_json(c, "survivor").dump() << '\n';
}

inline Ledger read_ledger(std::istream& in) {
  Ledger l;
  std::string line;
  std::size_t lineno = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      const auto type = j.at("type").get<std::string>();
      if (type == "header") {
        if (j.at("version").get<int>() != 1) throw DataError("unsupported ledger version");
        l.phase1_complete = j.at("phase1_complete").get<bool>();
        l.phase2_complete = j.at("phase2_complete").get<bool>();
        l.stats.samples = j.at("samples").get<std::size_t>();
        l.stats.iterations = j.at("iterations").get<std::size_t>();
        l.stats.zero_grad = j.at("zero_grad").get<std::size_t>();
        l.stats.duplicates = j.at("duplicates").get<std::size_t>();
        l.stats.trainings = j.at("trainings").get<std::size_t>();
        l.stats.promotions = j.at("promotions").get<std::size_t>();
        l.stats.controller_updates = j.at("controller_updates").get<std::size_t>();
        l.stats.stalled = j.at("stalled").get<bool>();
        l.final_metric = j.at("final_metric").is_null() ? NAN : j.at("final_metric").get<double>();
        if (j.contains("winner")) l.winner = j["winner"].get<std::size_t>();
        have_header = true;
      } else if (type == "candidate") {
        auto c = detail::candidate_from_json(j);
        (j.at("phase").get<std::string>() == "survivor" ? l.survivors : l.promoted).push_back(std::move(c));
      } else {
        throw DataError("unknown record type '" + type + "'");
      }
    } catch (const nlohmann::json::exception& e) {
      throw DataError("ledger line " + std::to_string(lineno) + ": " + e.what());
    } catch (const ParseError& e) {
      throw DataError("ledger line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (!have_header) throw DataError("ledger has no header line");
  return l;
}

/// Writes via a temporary file and rename, so a crash leaves the old ledger.
inline void save_ledger(const std::string& path, const Ledger& l) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw DataError("cannot write '" + tmp + "'");
    write_ledger(out, l);
    if (!out) throw DataError("failed writing '" + tmp + "'");
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) throw DataError("cannot replace '" + path + "'");
}

inline Ledger load_ledger(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open ledger '" + path + "'");
  return read_ledger(in);
}

}  // namespace lossforge
