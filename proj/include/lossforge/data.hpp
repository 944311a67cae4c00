#pragma once

// Rating ingestion, binarization, positive leave-one-out splitting and a
// synthetic low-rank generator.

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <istream>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "lossforge/errors.hpp"

namespace lossforge {

struct Interaction {
  std::int64_t user = 0;
  std::int64_t item = 0;
  int rating = 0;
  std::int64_t timestamp = 0;

  friend bool operator==(const Interaction&, const Interaction&) = default;
};

struct LabeledInteraction {
  std::uint32_t user = 0;
  std::uint32_t item = 0;
  int label = 0;
  std::int64_t timestamp = 0;
};

/// One (user, item, label) training example.
struct Example {
  std::uint32_t user = 0;
  std::uint32_t item = 0;
  double label = 0.0;

  friend bool operator==(const Example&, const Example&) = default;
};

enum class DataFormat { Ml100k, Csv };

inline DataFormat parse_format(std::string_view name) {
  if (name == "ml100k") return DataFormat::Ml100k;
  if (name == "csv") return DataFormat::Csv;
  throw DataError("unknown dataset format '" + std::string(name) + "' (expected ml100k or csv)");
}

/// Interactions with ids remapped to dense indices in order of first appearance.
struct RatingData {
  std::vector<Interaction> interactions;  // user/item hold dense indices
  std::vector<std::int64_t> user_ids;     // dense index -> original id
  std::vector<std::int64_t> item_ids;

  std::size_t n_users() const noexcept { return user_ids.size(); }
  std::size_t n_items() const noexcept { return item_ids.size(); }
};

namespace detail {

template <class T>
bool parse_number(std::string_view s, T& out) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\r')) s.remove_suffix(1);
  if (s.empty()) return false;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

inline std::vector<std::string_view> split_fields(std::string_view line, char sep) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  for (;;) {
    const auto pos = line.find(sep, start);
    fields.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return fields;
}

}  // namespace detail

/// Parses one record; `lineno` only decorates error messages.
inline Interaction parse_interaction(std::string_view line, DataFormat format, std::size_t lineno = 0) {
  const char sep = format == DataFormat::Ml100k ? '\t' : ',';
  const auto fields = detail::split_fields(line, sep);
  const std::string where = "line " + std::to_string(lineno) + ": ";
  if (fields.size() != 4) {
    throw DataError(where + "expected 4 fields, found " + std::to_string(fields.size()));
  }
  Interaction r;
  if (!detail::parse_number(fields[0], r.user) || !detail::parse_number(fields[1], r.item) ||
      !detail::parse_number(fields[2], r.rating) || !detail::parse_number(fields[3], r.timestamp)) {
    throw DataError(where + "non-integer field");
  }
  if (r.rating < 1 || r.rating > 5) {
    throw DataError(where + "rating " + std::to_string(r.rating) + " outside [1, 5]");
  }
  return r;
}

/// Reads ML-100K `u.data` (tab-separated user, item, rating, timestamp) or a CSV
/// with header `user,item,rating,timestamp`.
inline RatingData load_tabular(std::istream& in, DataFormat format) {
  RatingData data;
  std::unordered_map<std::int64_t, std::uint32_t> users, items;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (format == DataFormat::Csv && lineno == 1) {
      std::string header = line;
      header.erase(std::remove_if(header.begin(), header.end(), [](char c) { return c == ' ' || c == '\r'; }),
                   header.end());
      if (header != "user,item,rating,timestamp") {
        throw DataError("line 1: expected header 'user,item,rating,timestamp'");
      }
      continue;
    }
    if (line.empty() || line == "\r") continue;
    Interaction r = parse_interaction(line, format, lineno);
    auto [uit, unew] = users.try_emplace(r.user, static_cast<std::uint32_t>(data.user_ids.size()));
    if (unew) data.user_ids.push_back(r.user);
    auto [iit, inew] = items.try_emplace(r.item, static_cast<std::uint32_t>(data.item_ids.size()));
    if (inew) data.item_ids.push_back(r.item);
    r.user = uit->second;
    r.item = iit->second;
    data.interactions.push_back(r);
  }
  if (data.interactions.empty()) throw DataError("dataset contains no interactions");
  return data;
}

inline RatingData load_tabular(const std::string& path, DataFormat format) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open dataset '" + path + "'");
  return load_tabular(in, format);
}

/// Label 1 iff rating >= 4.
inline std::vector<LabeledInteraction> binarize(const std::vector<Interaction>& interactions) {
  std::vector<LabeledInteraction> out;
  out.reserve(interactions.size());
  for (const auto& r : interactions) {
    if (r.rating < 1 || r.rating > 5) throw DataError("rating outside [1, 5]");
    out.push_back({static_cast<std::uint32_t>(r.user), static_cast<std::uint32_t>(r.item), r.rating >= 4 ? 1 : 0,
                   r.timestamp});
  }
  return out;
}

struct SplitDataset {
  std::vector<Example> train;
  std::vector<Example> validation;
  std::vector<Example> test;
  std::size_t n_users = 0;
  std::size_t n_items = 0;
  std::vector<std::int64_t> user_ids;  // optional original ids
  std::vector<std::int64_t> item_ids;
};

/// Users with at least this many interactions are split; others go to train.
inline constexpr std::size_t kMinInteractionsToSplit = 5;

/// Positive leave-one-out, per user in timestamp order (ties keep input order):
/// last positive and everything after it -> test; second-to-last positive up to
/// the last positive -> validation; the rest -> train.
inline SplitDataset leave_one_out_split(const std::vector<LabeledInteraction>& data, std::size_t n_users,
                                        std::size_t n_items) {
  SplitDataset split;
  split.n_users = n_users;
  split.n_items = n_items;
  std::vector<std::vector<std::size_t>> per_user(n_users);
  for (std::size_t k = 0; k < data.size(); ++k) {
    if (data[k].user >= n_users || data[k].item >= n_items) throw DataError("interaction id outside vocabulary");
    per_user[data[k].user].push_back(k);
  }
  auto emit = [&](std::vector<Example>& dst, std::size_t k) {
    dst.push_back({data[k].user, data[k].item, static_cast<double>(data[k].label)});
  };
  for (auto& seq : per_user) {
    std::stable_sort(seq.begin(), seq.end(),
                     [&](std::size_t a, std::size_t b) { return data[a].timestamp < data[b].timestamp; });
    std::vector<std::size_t> positives;
    for (std::size_t p = 0; p < seq.size(); ++p)
      if (data[seq[p]].label == 1) positives.push_back(p);
    if (seq.size() < kMinInteractionsToSplit || positives.empty()) {
      for (std::size_t k : seq) emit(split.train, k);
      continue;
    }
    const std::size_t last = positives.back();
    const std::size_t second = positives.size() >= 2 ? positives[positives.size() - 2] : last;
    for (std::size_t p = 0; p < seq.size(); ++p) {
      if (p >= last) {
        emit(split.test, seq[p]);
      } else if (p >= second) {
        emit(split.validation, seq[p]);
      } else {
        emit(split.train, seq[p]);
      }
    }
  }
  return split;
}

inline SplitDataset prepare(const RatingData& data) {
  SplitDataset split = leave_one_out_split(binarize(data.interactions), data.n_users(), data.n_items());
  split.user_ids = data.user_ids;
  split.item_ids = data.item_ids;
  return split;
}

/// Synthetic dataset with its generating factors.
struct SynthData {
  SplitDataset split;
  std::vector<LabeledInteraction> interactions;
  std::vector<double> user_factors;  // n_users x rank
  std::vector<double> item_factors;  // n_items x rank
  std::size_t rank = 0;
  double threshold = 0.0;  // median of all scores
};

/// Every (user, item) pair is observed. Score = <u, v> with standard normal
/// factors; label 1 iff the score exceeds the median, then flipped with
/// probability `noise`. Each user sees items in a random temporal order.
inline SynthData synth_dataset(std::size_t n_users, std::size_t n_items, std::size_t rank, double noise,
                               std::uint64_t seed) {
  if (rank == 0 || rank > std::min(n_users, n_items)) throw ContractError("synth_dataset: rank out of range");
  if (noise < 0 || noise > 1) throw ContractError("synth_dataset: noise must lie in [0, 1]");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  SynthData out;
  out.rank = rank;
  out.user_factors.resize(n_users * rank);
  out.item_factors.resize(n_items * rank);
  for (auto& v : out.user_factors) v = normal(rng);
  for (auto& v : out.item_factors) v = normal(rng);

  std::vector<double> scores(n_users * n_items);
  for (std::size_t u = 0; u < n_users; ++u)
    for (std::size_t i = 0; i < n_items; ++i) {
      double s = 0;
      for (std::size_t r = 0; r < rank; ++r) s += out.user_factors[u * rank + r] * out.item_factors[i * rank + r];
      scores[u * n_items + i] = s;
    }
  std::vector<double> sorted = scores;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t mid = sorted.size() / 2;
  out.threshold = sorted.size() % 2 == 1 ? sorted[mid] : 0.5 * (sorted[mid - 1] + sorted[mid]);

  std::bernoulli_distribution flip(noise);
  std::vector<std::uint32_t> order(n_items);
  for (std::size_t u = 0; u < n_users; ++u) {
    std::iota(order.begin(), order.end(), 0u);
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t t = 0; t < n_items; ++t) {
      const std::uint32_t i = order[t];
      int label = scores[u * n_items + i] > out.threshold ? 1 : 0;
      if (flip(rng)) label = 1 - label;
      out.interactions.push_back(
          {static_cast<std::uint32_t>(u), i, label, static_cast<std::int64_t>(u * n_items + t)});
    }
  }
  out.split = leave_one_out_split(out.interactions, n_users, n_items);
  return out;
}

/// Indices 0..n-1 in a random order.
template <class Rng>
std::vector<std::size_t> shuffled_order(std::size_t n, Rng& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

}  // namespace lossforge
