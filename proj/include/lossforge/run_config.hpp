#pragma once

// Run configuration: every field has a default, a config file holds flat
// key=value lines using the long flag names, and explicit flags override it.

#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <istream>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "lossforge/data.hpp"
#include "lossforge/models.hpp"
#include "lossforge/search.hpp"

namespace lossforge {

class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& field, const std::string& what)
      : std::runtime_error("invalid value for '" + field + "': " + what), field_(field) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

inline std::string format_double(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

struct RunConfig {
  std::string command = "search";
  std::string dataset;
  std::string format = "ml100k";
  std::string model = "mf";
  std::string task = "classification";
  std::string loss = "mse";
  std::string epsilon = "grid";  // a number, or "grid"
  double eta = 0.01;
  double delta = 1e-4;
  std::size_t rounds = kDefaultRounds;
  std::uint64_t seed = 0;
  std::size_t jobs = 1;
  std::string out;
  std::size_t max_iters = 100000;
  std::size_t max_samples = 3000;
  std::size_t stall = 500;
  std::size_t probe_batch = 5;
  double negative_reward = -0.05;
  std::size_t max_epochs = 1000;
  std::size_t top_k = 10;
  std::size_t pairs = kValidationPairs;
  double threshold = kValidationThreshold;
  double lr = 0.01;
  std::size_t dim = 64;
  std::size_t synth_users = 200;
  std::size_t synth_items = 100;
  std::size_t synth_rank = 2;
  double synth_noise = 0.05;

  /// Field names in echo order.
  static const std::vector<std::string>& keys() {
    static const std::vector<std::string> k = {
        "command",     "dataset",     "format",      "model",       "task",          "loss",       "epsilon",
        "eta",         "delta",       "rounds",      "seed",        "jobs",          "out",        "max-iters",
        "max-samples", "stall",       "probe-batch", "negative-reward", "max-epochs", "top-k",      "pairs",
        "threshold",   "lr",          "dim",         "synth-users", "synth-items",   "synth-rank", "synth-noise"};
    return k;
  }

  void set(const std::string& key, const std::string& value) {
    auto num = [&](double& dst) {
      if (value == "inf" || value == "+inf") {
        dst = INFINITY;
        return;
      }
      const char* b = value.data();
      auto [p, ec] = std::from_chars(b, b + value.size(), dst);
      if (ec != std::errc() || p != b + value.size()) throw ConfigError(key, "expected a number, got '" + value + "'");
    };
    auto count = [&](auto& dst) {
      using T = std::remove_reference_t<decltype(dst)>;
      T v{};
      const char* b = value.data();
      auto [p, ec] = std::from_chars(b, b + value.size(), v);
      if (ec != std::errc() || p != b + value.size()) {
        throw ConfigError(key, "expected a non-negative integer, got '" + value + "'");
      }
      dst = v;
    };
    if (key == "command") command = value;
    else if (key == "dataset") dataset = value;
    else if (key == "format") format = value;
    else if (key == "model") model = value;
    else if (key == "task") task = value;
    else if (key == "loss") loss = value;
    else if (key == "epsilon") epsilon = value;
    else if (key == "eta") num(eta);
    else if (key == "delta") num(delta);
    else if (key == "rounds") count(rounds);
    else if (key == "seed") count(seed);
    else if (key == "jobs") count(jobs);
    else if (key == "out") out = value;
    else if (key == "max-iters") count(max_iters);
    else if (key == "max-samples") count(max_samples);
    else if (key == "stall") count(stall);
    else if (key == "probe-batch") count(probe_batch);
    else if (key == "negative-reward") num(negative_reward);
    else if (key == "max-epochs") count(max_epochs);
    else if (key == "top-k") count(top_k);
    else if (key == "pairs") count(pairs);
    else if (key == "threshold") num(threshold);
    else if (key == "lr") num(lr);
    else if (key == "dim") count(dim);
    else if (key == "synth-users") count(synth_users);
    else if (key == "synth-items") count(synth_items);
    else if (key == "synth-rank") count(synth_rank);
    else if (key == "synth-noise") num(synth_noise);
    else throw ConfigError(key, "unknown configuration key");
  }

  std::string get(const std::string& key) const {
    if (key == "command") return command;
    if (key == "dataset") return dataset;
    if (key == "format") return format;
    if (key == "model") return model;
    if (key == "task") return task;
    if (key == "loss") return loss;
    if (key == "epsilon") return epsilon;
    if (key == "eta") return format_double(eta);
    if (key == "delta") return format_double(delta);
    if (key == "rounds") return std::to_string(rounds);
    if (key == "seed") return std::to_string(seed);
    if (key == "jobs") return std::to_string(jobs);
    if (key == "out") return out;
    if (key == "max-iters") return std::to_string(max_iters);
    if (key == "max-samples") return std::to_string(max_samples);
    if (key == "stall") return std::to_string(stall);
    if (key == "probe-batch") return std::to_string(probe_batch);
    if (key == "negative-reward") return format_double(negative_reward);
    if (key == "max-epochs") return std::to_string(max_epochs);
    if (key == "top-k") return std::to_string(top_k);
    if (key == "pairs") return std::to_string(pairs);
    if (key == "threshold") return format_double(threshold);
    if (key == "lr") return format_double(lr);
    if (key == "dim") return std::to_string(dim);
    if (key == "synth-users") return std::to_string(synth_users);
    if (key == "synth-items") return std::to_string(synth_items);
    if (key == "synth-rank") return std::to_string(synth_rank);
    if (key == "synth-noise") return format_double(synth_noise);
    throw ConfigError(key, "unknown configuration key");
  }

  /// Checks enumerations and ranges; errors name the field.
  void validate() const {
    if (command != "search" && command != "check" && command != "train") {
      throw ConfigError("command", "expected search, check or train");
    }
    if (model != "mf" && model != "mlp") throw ConfigError("model", "expected mf or mlp");
    if (task != "classification" && task != "regression") {
      throw ConfigError("task", "expected classification or regression");
    }
    if (format != "ml100k" && format != "csv") throw ConfigError("format", "expected ml100k or csv");
    if (epsilon != "grid") {
      double e = 0;
      const char* b = epsilon.data();
      auto [p, ec] = std::from_chars(b, b + epsilon.size(), e);
      if (ec != std::errc() || p != b + epsilon.size() || !(e >= SafeMathConfig{}.xi) || e > 1) {
        throw ConfigError("epsilon", "expected 'grid' or a number in [1e-6, 1]");
      }
    }
    if (!(eta >= 0)) throw ConfigError("eta", "must be non-negative");
    if (!(delta > 0)) throw ConfigError("delta", "must be positive");
    if (rounds == 0 || rounds > kMaxNodes) throw ConfigError("rounds", "must lie in [1, 256]");
    if (jobs == 0) throw ConfigError("jobs", "must be at least 1");
    if (probe_batch < 5 || probe_batch > 20) throw ConfigError("probe-batch", "must lie in [5, 20]");
    if (max_epochs == 0) throw ConfigError("max-epochs", "must be at least 1");
    if (top_k == 0) throw ConfigError("top-k", "must be at least 1");
    if (pairs == 0) throw ConfigError("pairs", "must be at least 1");
    if (!(threshold >= 0 && threshold <= 1)) throw ConfigError("threshold", "must lie in [0, 1]");
    if (!(lr >= 0)) throw ConfigError("lr", "must be non-negative");
    if (dim == 0) throw ConfigError("dim", "must be at least 1");
    if (!(synth_noise >= 0 && synth_noise <= 1)) throw ConfigError("synth-noise", "must lie in [0, 1]");
  }

  std::optional<double> fixed_epsilon() const {
    if (epsilon == "grid") return std::nullopt;
    return std::stod(epsilon);
  }

  SearchConfig search_config() const {
    SearchConfig s;
    s.delta = delta;
    s.eta = eta;
    s.probe_batch = probe_batch;
    s.rounds = rounds;
    s.task = parse_task(task);
    s.default_negative_reward = negative_reward;
    s.stall_budget = stall;
    s.max_iterations = max_iters;
    s.max_samples = max_samples;
    s.model_optimizer = OptimizerConfig::sgd(lr);
    return s;
  }

  EffectivenessConfig effectiveness_config() const {
    EffectivenessConfig e;
    e.model = parse_model_kind(model);
    e.dim = dim;
    e.task = parse_task(task);
    if (auto eps = fixed_epsilon()) e.epsilons = {*eps};
    e.max_epochs = max_epochs;
    e.jobs = jobs;
    e.top_k = top_k;
    e.seed = seed;
    e.optimizer = OptimizerConfig::sgd(lr);
    return e;
  }

  std::string to_text() const {
    std::string s;
    for (const auto& k : keys()) s += k + "=" + get(k) + "\n";
    return s;
  }
};

/// Reads `key=value` lines into `cfg`. Blank lines and `#` comments are skipped.
inline void read_config(std::istream& in, RunConfig& cfg) {
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto first = line.find_first_not_of(" \t");
    if (first == std::string::npos || line[first] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(lineno), "expected key=value");
    }
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t");
      const auto e = s.find_last_not_of(" \t");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    cfg.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
}

inline RunConfig load_config(const std::string& path, RunConfig base = {}) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config", "cannot open '" + path + "'");
  read_config(in, base);
  return base;
}

/// `LOSSFORGE_OUT` when set, otherwise "lossforge-out".
inline std::string default_output_root() {
  const char* env = std::getenv("LOSSFORGE_OUT");
  return env && *env ? env : "lossforge-out";
}

/// Loads the configured dataset. `synthetic` builds the generator's split;
/// `ml100k` with no such file falls back to data/ml-100k/u.data under
/// `LOSSFORGE_DATA` (default "data").
inline SplitDataset load_dataset(const RunConfig& cfg) {
  if (cfg.dataset.empty()) throw ConfigError("dataset", "no dataset given (use --dataset)");
  if (cfg.dataset == "synthetic") {
    return synth_dataset(cfg.synth_users, cfg.synth_items, cfg.synth_rank, cfg.synth_noise, cfg.seed).split;
  }
  std::string path = cfg.dataset;
  if (path == "ml100k" && !std::ifstream(path)) {
    const char* root = std::getenv("LOSSFORGE_DATA");
    path = std::string(root && *root ? root : "data") + "/ml-100k/u.data";
  }
  if (!std::ifstream(path)) throw ConfigError("dataset", "cannot open '" + path + "'");
  return prepare(load_tabular(path, parse_format(cfg.format)));
}

}  // namespace lossforge
