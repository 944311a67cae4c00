// lossforge: search, check and train entry point.
//
// Exit status: 0 success, 1 runtime failure, 2 usage or configuration error,
// 3 search finished without a candidate surviving the validation check.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "lossforge/lossforge.hpp"

namespace fs = std::filesystem;
using namespace lossforge;

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;
constexpr int kExitNoCandidate = 3;

/// Collects key=value report lines and mirrors them to stdout.
class Report {
 public:
  template <class T>
  void put(const std::string& key, const T& value) {
    std::ostringstream line;
    line << key << '=';
    if constexpr (std::is_floating_point_v<T>) line << format_double(value);
    else line << value;
    text_ += line.str() + "\n";
    std::cout << line.str() << '\n';
  }

  void metrics(const std::string& prefix, const MetricReport& r, Task task) {
    if (task == Task::Classification) {
      put(prefix + ".auc", r.auc);
      put(prefix + ".f1", r.f1);
      put(prefix + ".accuracy", r.accuracy);
    } else {
      put(prefix + ".rmse", r.rmse);
      put(prefix + ".mae", r.mae);
    }
  }

  const std::string& text() const noexcept { return text_; }

 private:
  std::string text_;
};

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  out << text;
}

fs::path prepare_out_dir(RunConfig& cfg) {
  if (cfg.out.empty()) cfg.out = (fs::path(default_output_root()) / cfg.command).string();
  fs::create_directories(cfg.out);
  write_file(fs::path(cfg.out) / "config.txt", cfg.to_text());
  return cfg.out;
}

int cmd_check(RunConfig& cfg) {
  if (cfg.loss.empty()) throw ConfigError("loss", "no loss file given");
  std::vector<LossExpr> losses;
  if (is_zoo_name(cfg.loss) || cfg.loss.front() == '(') {
    losses.push_back(resolve_loss(cfg.loss));
  } else {
    std::ifstream in(cfg.loss);
    if (!in) throw ConfigError("loss", "cannot open '" + cfg.loss + "'");
    losses = read_loss_list(in);
  }
  const SafeMathConfig math = SafeMathConfig::with_epsilon(cfg.fixed_epsilon().value_or(SafeMathConfig{}.epsilon));
  Report report;
  report.put("losses", losses.size());
  std::size_t passed = 0;
  for (std::size_t k = 0; k < losses.size(); ++k) {
    std::mt19937_64 rng(cfg.seed);
    const double rate = validation_check(losses[k], cfg.pairs, rng, math);
    const bool pass = rate >= cfg.threshold;
    passed += pass;
    const std::string p = "loss." + std::to_string(k);
    report.put(p + ".expr", serialize(losses[k]));
    report.put(p + ".positive_rate", rate);
    report.put(p + ".result", pass ? "pass" : "fail");
  }
  report.put("passed", passed);
  if (!cfg.out.empty()) {
    prepare_out_dir(cfg);
    write_file(fs::path(cfg.out) / "report.txt", report.text());
  }
  return 0;
}

int cmd_train(RunConfig& cfg) {
  const fs::path out = prepare_out_dir(cfg);
  const LossExpr loss = resolve_loss(cfg.loss);
  const SplitDataset data = load_dataset(cfg);
  const EffectivenessConfig ec = cfg.effectiveness_config();
  std::vector<CandidateRecord> one{{loss, 0.0, 0, std::nullopt, {}, std::nullopt, std::nullopt, std::nullopt}};
  const auto winner = effectiveness_test(one, data, ec);

  Report report;
  report.put("loss", serialize(loss));
  report.put("model", cfg.model);
  report.put("task", cfg.task);
  report.put("train_examples", data.train.size());
  report.put("validation_examples", data.validation.size());
  report.put("test_examples", data.test.size());
  for (const auto& t : one[0].trials) {
    const std::string p = "trial." + format_double(t.epsilon);
    report.put(p + ".failed", t.failed ? 1 : 0);
    report.put(p + ".best_epoch", t.best_epoch);
    report.metrics(p + ".validation", t.validation, ec.task);
  }
  if (!winner) {
    report.put("status", "failed");
    write_file(out / "report.txt", report.text());
    return kExitRuntime;
  }
  const auto best = *best_trial(one[0].trials, ec.task);
  const TrialResult& t = one[0].trials[best];
  report.put("status", "ok");
  report.put("best_epsilon", t.epsilon);
  report.put("best_epoch", t.best_epoch);
  report.put("epochs", t.epochs);
  report.metrics("validation", t.validation, ec.task);
  report.metrics("test", t.test, ec.task);
  write_file(out / "report.txt", report.text());
  return 0;
}

int cmd_search(RunConfig& cfg) {
  const fs::path out = prepare_out_dir(cfg);
  const SplitDataset data = load_dataset(cfg);
  const SearchConfig sc = cfg.search_config();
  sc.validate();
  const EffectivenessConfig ec = cfg.effectiveness_config();
  const fs::path ledger_path = out / "ledger.jsonl";

  Ledger ledger;
  if (fs::exists(ledger_path)) ledger = load_ledger(ledger_path.string());

  if (!ledger.phase1_complete) {
    PolicyConfig pc;
    pc.rounds = sc.rounds;
    Policy policy(pc, cfg.seed);
    ControllerSource source(policy, cfg.seed + 1);
    auto model = init_model(ec.model, {data.n_users, data.n_items, ec.dim}, cfg.seed);
    std::ofstream log(out / "run_log.txt");
    auto on_sample = [&](const SampleEvent& ev) {
      log << "sample=" << ev.sample << " iteration=" << ev.iteration << " outcome=" << proxy_outcome_name(ev.outcome)
          << " trained=" << ev.trained << " promoted=" << ev.promoted << " reward=" << format_double(ev.reward)
          << " validation=" << format_double(ev.trained ? ev.updated_metric : ev.init_metric)
          << " expr=" << ev.expr << '\n';
    };
    SearchResult res = search_phase(sc, data, std::move(model), source, cfg.seed, on_sample);
    save_blob((out / "policy.ckpt").string(), policy.to_blob());
    save_blob((out / "model.ckpt").string(), res.model->to_blob());
    ledger = Ledger{};
    ledger.phase1_complete = true;
    ledger.stats = res.stats;
    ledger.final_metric = res.final_metric;
    ledger.promoted = std::move(res.candidates);
    save_ledger(ledger_path.string(), ledger);
  }

  if (!ledger.phase2_complete) {
    std::mt19937_64 rng(cfg.seed);
    ledger.survivors = select_survivors(ledger.promoted, ec.top_k, rng, cfg.pairs, cfg.threshold);
    ledger.phase2_complete = true;
    save_ledger(ledger_path.string(), ledger);
  }

  Report report;
  report.put("samples", ledger.stats.samples);
  report.put("iterations", ledger.stats.iterations);
  report.put("trainings", ledger.stats.trainings);
  report.put("zero_grad", ledger.stats.zero_grad);
  report.put("duplicates", ledger.stats.duplicates);
  report.put("promotions", ledger.stats.promotions);
  report.put("stalled", ledger.stats.stalled ? 1 : 0);
  report.put("phase1_validation", ledger.final_metric);
  report.put("survivors", ledger.survivors.size());
  if (ledger.survivors.empty()) {
    report.put("status", "no_candidate");
    write_file(out / "report.txt", report.text());
    return kExitNoCandidate;
  }

  ledger.winner = effectiveness_test(ledger.survivors, data, ec, [&] { save_ledger(ledger_path.string(), ledger); });
  save_ledger(ledger_path.string(), ledger);
  if (!ledger.winner) {
    report.put("status", "no_candidate");
    write_file(out / "report.txt", report.text());
    return kExitNoCandidate;
  }
  const CandidateRecord& best = ledger.survivors[*ledger.winner];
  write_file(out / "selected_loss.txt", serialize(best.expr) + "\n");
  report.put("status", "ok");
  report.put("selected", serialize(best.expr));
  report.put("best_epsilon", best.best_epsilon.value_or(NAN));
  report.put(cfg.task == "classification" ? "validation.auc" : "validation.rmse", best.validation.value_or(NAN));
  report.put(cfg.task == "classification" ? "test.auc" : "test.rmse", best.test.value_or(NAN));
  write_file(out / "report.txt", report.text());
  return 0;
}

const std::map<std::string, std::string>& flag_help() {
  static const std::map<std::string, std::string> h = {
      {"model", "mf or mlp"},
      {"dataset", "ratings file path, 'ml100k' or 'synthetic'"},
      {"format", "ml100k (tab separated) or csv"},
      {"task", "classification or regression"},
      {"epsilon", "smoothing epsilon, or 'grid'"},
      {"seed", "master seed"},
      {"jobs", "parallel effectiveness-test trials"},
      {"out", "output directory"},
      {"max-epochs", "epoch cap per effectiveness-test trial"},
      {"lr", "recommender SGD learning rate"},
      {"dim", "embedding size"},
      {"synth-users", "synthetic dataset users"},
      {"synth-items", "synthetic dataset items"},
      {"synth-rank", "synthetic dataset factor rank"},
      {"synth-noise", "synthetic label flip probability"},
      {"eta", "reward-filter tolerance ('inf' disables the filter)"},
      {"delta", "proxy-test gradient-norm threshold"},
      {"rounds", "operator rounds per sampled loss"},
      {"max-iters", "outer search iterations cap"},
      {"max-samples", "sampled losses cap"},
      {"stall", "iterations without a promotion before stopping"},
      {"probe-batch", "proxy-test batch size (5 to 20)"},
      {"negative-reward", "reward for zero-gradient losses"},
      {"top-k", "survivors carried into the effectiveness test"},
      {"pairs", "validation-check pairs"},
      {"threshold", "validation-check pass rate"},
      {"loss", "zoo name or loss expression"},
  };
  return h;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Symbolic loss-function search for recommender models"};
  app.require_subcommand(1);

  std::map<std::string, std::string> flags;
  std::map<std::string, CLI::Option*> options;
  std::string config_path;

  auto add_flags = [&](CLI::App* sub, const std::vector<std::string>& keys) {
    sub->add_option("--config", config_path, "key=value configuration file (flags override it)");
    for (const auto& k : keys) options[sub->get_name() + "/" + k] = sub->add_option("--" + k, flags[k], flag_help().at(k));
  };
  const std::vector<std::string> training_keys = {"model", "dataset", "format", "task", "epsilon", "seed", "jobs",
                                                  "out", "max-epochs", "lr", "dim", "synth-users", "synth-items",
                                                  "synth-rank", "synth-noise"};
  auto* search = app.add_subcommand("search", "run loss search, validation check and effectiveness test");
  auto search_keys = training_keys;
  search_keys.insert(search_keys.end(), {"eta", "delta", "rounds", "max-iters", "max-samples", "stall",
                                         "probe-batch", "negative-reward", "top-k", "pairs", "threshold"});
  add_flags(search, search_keys);

  auto* check = app.add_subcommand("check", "report the validation-check positive rate of each loss");
  std::string check_file;
  check->add_option("file", check_file, "loss-list file, zoo name or loss expression");
  add_flags(check, {"loss", "epsilon", "seed", "pairs", "threshold", "out"});

  auto* train = app.add_subcommand("train", "train a fresh model under one loss");
  auto train_keys = training_keys;
  train_keys.push_back("loss");
  add_flags(train, train_keys);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : kExitUsage;
  }

  CLI::App* sub = app.get_subcommands().front();
  RunConfig cfg;
  try {
    if (!config_path.empty()) cfg = load_config(config_path);
    cfg.command = sub->get_name();
    for (const auto& [key, value] : flags) {
      auto it = options.find(cfg.command + "/" + key);
      if (it != options.end() && it->second->count() > 0) cfg.set(key, value);
    }
    if (cfg.command == "check" && !check_file.empty()) cfg.loss = check_file;
    if (cfg.command == "check" && check_file.empty() && options["check/loss"]->count() == 0 &&
        config_path.empty()) {
      throw ConfigError("loss", "no loss file given");
    }
    cfg.validate();
  } catch (const ConfigError& e) {
    std::cerr << "lossforge " << sub->get_name() << ": " << e.what() << '\n';
    return kExitUsage;
  }

  try {
    if (cfg.command == "check") return cmd_check(cfg);
    if (cfg.command == "train") return cmd_train(cfg);
    return cmd_search(cfg);
  } catch (const ConfigError& e) {
    std::cerr << "lossforge " << cfg.command << ": " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::invalid_argument& e) {
    std::cerr << "lossforge " << cfg.command << ": " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "lossforge " << cfg.command << ": " << e.what() << '\n';
    return kExitRuntime;
  }
}
