#pragma once

// Matrix factorization and MLP recommenders, and training under an arbitrary
// loss expression.

#include <cmath>
#include <cstdint>
#include <memory>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "lossforge/checkpoint.hpp"
#include "lossforge/data.hpp"
#include "lossforge/errors.hpp"
#include "lossforge/expr.hpp"
#include "lossforge/optim.hpp"
#include "lossforge/tensor.hpp"

namespace lossforge {

enum class ModelKind { Mf, Mlp };

inline ModelKind parse_model_kind(std::string_view name) {
  if (name == "mf") return ModelKind::Mf;
  if (name == "mlp") return ModelKind::Mlp;
  throw std::invalid_argument("unknown model '" + std::string(name) + "' (expected mf or mlp)");
}

inline std::string_view model_kind_name(ModelKind k) { return k == ModelKind::Mf ? "mf" : "mlp"; }

struct ModelDims {
  std::size_t n_users = 0;
  std::size_t n_items = 0;
  std::size_t dim = 64;
};

inline constexpr double kInitRange = 0.01;

/// A recommender maps (user, item) batches to predictions in (0, 1).
class Recommender {
 public:
  virtual ~Recommender() = default;

  virtual ModelKind kind() const = 0;
  virtual const ModelDims& dims() const = 0;

  /// Predictions as an [n x 1] tensor. Training mode enables dropout and
  /// batch statistics.
  virtual Tensor forward(Tape* tape, std::span<const std::uint32_t> users, std::span<const std::uint32_t> items,
                         bool training) = 0;

  /// Trainable tensors (handles into this model).
  virtual std::vector<Parameter> parameters() = 0;

  virtual std::unique_ptr<Recommender> clone() const = 0;

  virtual Blob to_blob() const = 0;
};

namespace detail {

template <class Rng>
Tensor uniform_tensor(std::size_t rows, std::size_t cols, double range, Rng& rng) {
  Tensor t(rows, cols, true);
  std::uniform_real_distribution<double> dist(-range, range);
  for (auto& v : t.values()) v = dist(rng);
  return t;
}

inline void check_ids(const ModelDims& d, std::span<const std::uint32_t> users, std::span<const std::uint32_t> items) {
  if (users.size() != items.size()) throw ContractError("user and item batches differ in length");
  for (auto u : users)
    if (u >= d.n_users) throw std::out_of_range("user id " + std::to_string(u) + " out of range");
  for (auto i : items)
    if (i >= d.n_items) throw std::out_of_range("item id " + std::to_string(i) + " out of range");
}

inline void copy_values(Tensor& dst, const Tensor& src) {
  if (dst.shape() != src.shape()) throw DataError("checkpoint array shape mismatch");
  std::copy(src.values().begin(), src.values().end(), dst.values().begin());
}

}  // namespace detail

/// yhat = sigmoid(<e_u, e_i> + b_u + b_i + b_g)
class MfModel final : public Recommender {
 public:
  MfModel(ModelDims dims, std::uint64_t seed) : dims_(dims) {
    std::mt19937_64 rng(seed);
    user_emb_ = detail::uniform_tensor(dims.n_users, dims.dim, kInitRange, rng);
    item_emb_ = detail::uniform_tensor(dims.n_items, dims.dim, kInitRange, rng);
    user_bias_ = Tensor(dims.n_users, 1, true);
    item_bias_ = Tensor(dims.n_items, 1, true);
    global_bias_ = Tensor(1, 1, true);
  }

  ModelKind kind() const override { return ModelKind::Mf; }
  const ModelDims& dims() const override { return dims_; }

  Tensor forward(Tape* tape, std::span<const std::uint32_t> users, std::span<const std::uint32_t> items,
                 bool /*training*/) override {
    detail::check_ids(dims_, users, items);
    Tensor eu = ops::embedding_lookup(tape, user_emb_, users);
    Tensor ei = ops::embedding_lookup(tape, item_emb_, items);
    Tensor h = ops::sum_rows(tape, ops::mul(tape, eu, ei));
    h = ops::add(tape, h, ops::embedding_lookup(tape, user_bias_, users));
    h = ops::add(tape, h, ops::embedding_lookup(tape, item_bias_, items));
    h = ops::add(tape, h, global_bias_);
    return ops::sigmoid(tape, h);
  }

  std::vector<Parameter> parameters() override {
    return {{user_emb_, true}, {item_emb_, true}, {user_bias_, false}, {item_bias_, false}, {global_bias_, false}};
  }

  std::unique_ptr<Recommender> clone() const override {
    auto m = std::unique_ptr<MfModel>(new MfModel(dims_));
    m->user_emb_ = user_emb_.deep_copy();
    m->item_emb_ = item_emb_.deep_copy();
    m->user_bias_ = user_bias_.deep_copy();
    m->item_bias_ = item_bias_.deep_copy();
    m->global_bias_ = global_bias_.deep_copy();
    return m;
  }

  Blob to_blob() const override {
    return {BlobKind::Mf, {user_emb_, item_emb_, user_bias_, item_bias_, global_bias_}};
  }

  static std::unique_ptr<MfModel> from_blob(const Blob& blob) {
    if (blob.kind != BlobKind::Mf || blob.arrays.size() != 5) throw DataError("not an MF checkpoint");
    ModelDims d{blob.arrays[0].rows(), blob.arrays[1].rows(), blob.arrays[0].cols()};
    auto m = std::make_unique<MfModel>(d, 0);
    auto params = m->parameters();
    for (std::size_t k = 0; k < params.size(); ++k) detail::copy_values(params[k].tensor, blob.arrays[k]);
    return m;
  }

  Tensor& user_embeddings() { return user_emb_; }
  Tensor& item_embeddings() { return item_emb_; }
  Tensor& user_bias() { return user_bias_; }
  Tensor& item_bias() { return item_bias_; }
  Tensor& global_bias() { return global_bias_; }

 private:
  explicit MfModel(ModelDims dims) : dims_(dims) {}

  ModelDims dims_;
  Tensor user_emb_, item_emb_, user_bias_, item_bias_, global_bias_;
};

/// h0 = [e_u, e_i]; two Linear -> BatchNorm -> ReLU -> Dropout blocks
/// (2d -> 64 -> 16), then Linear(16 -> 1) -> BatchNorm -> sigmoid.
class MlpModel final : public Recommender {
 public:
  static constexpr std::array<std::size_t, 3> kWidths = {64, 16, 1};
  static constexpr double kDropout = 0.2;

  MlpModel(ModelDims dims, std::uint64_t seed) : dims_(dims), dropout_rng_(seed ^ 0x9e3779b97f4a7c15ULL) {
    std::mt19937_64 rng(seed);
    user_emb_ = detail::uniform_tensor(dims.n_users, dims.dim, kInitRange, rng);
    item_emb_ = detail::uniform_tensor(dims.n_items, dims.dim, kInitRange, rng);
    std::size_t in = 2 * dims.dim;
    for (std::size_t out : kWidths) {
      Layer l;
      l.weight = detail::uniform_tensor(in, out, kInitRange, rng);
      l.bias = Tensor(1, out, true);
      l.gamma = Tensor::from(1, out, std::vector<Real>(out, 1.0), true);
      l.beta = Tensor(1, out, true);
      l.bn = ops::BatchNormState(out);
      layers_.push_back(std::move(l));
      in = out;
    }
  }

  ModelKind kind() const override { return ModelKind::Mlp; }
  const ModelDims& dims() const override { return dims_; }

  Tensor forward(Tape* tape, std::span<const std::uint32_t> users, std::span<const std::uint32_t> items,
                 bool training) override {
    detail::check_ids(dims_, users, items);
    Tensor h = ops::concat(tape, ops::embedding_lookup(tape, user_emb_, users),
                           ops::embedding_lookup(tape, item_emb_, items));
    for (std::size_t k = 0; k < layers_.size(); ++k) {
      Layer& l = layers_[k];
      h = ops::add(tape, ops::matmul(tape, h, l.weight), l.bias);
      h = ops::batchnorm(tape, h, l.gamma, l.beta, l.bn, training);
      if (k + 1 < layers_.size()) {
        h = ops::relu(tape, h);
        h = ops::dropout(tape, h, kDropout, dropout_rng_, training);
      }
    }
    return ops::sigmoid(tape, h);
  }

  std::vector<Parameter> parameters() override {
    std::vector<Parameter> p{{user_emb_, true}, {item_emb_, true}};
    for (auto& l : layers_) {
      p.push_back({l.weight, true});
      p.push_back({l.bias, false});
      p.push_back({l.gamma, false});
      p.push_back({l.beta, false});
    }
    return p;
  }

  std::unique_ptr<Recommender> clone() const override {
    auto m = std::unique_ptr<MlpModel>(new MlpModel(dims_));
    m->dropout_rng_ = dropout_rng_;
    m->user_emb_ = user_emb_.deep_copy();
    m->item_emb_ = item_emb_.deep_copy();
    for (const auto& l : layers_) {
      m->layers_.push_back({l.weight.deep_copy(), l.bias.deep_copy(), l.gamma.deep_copy(), l.beta.deep_copy(), l.bn});
    }
    return m;
  }

  Blob to_blob() const override {
    Blob b{BlobKind::Mlp, {user_emb_, item_emb_}};
    for (const auto& l : layers_) {
      b.arrays.push_back(l.weight);
      b.arrays.push_back(l.bias);
      b.arrays.push_back(l.gamma);
      b.arrays.push_back(l.beta);
      b.arrays.push_back(Tensor::from(1, l.bn.running_mean.size(), l.bn.running_mean));
      b.arrays.push_back(Tensor::from(1, l.bn.running_var.size(), l.bn.running_var));
    }
    return b;
  }

  static std::unique_ptr<MlpModel> from_blob(const Blob& blob) {
    if (blob.kind != BlobKind::Mlp || blob.arrays.size() != 2 + 6 * kWidths.size()) {
      throw DataError("not an MLP checkpoint");
    }
    ModelDims d{blob.arrays[0].rows(), blob.arrays[1].rows(), blob.arrays[0].cols()};
    auto m = std::make_unique<MlpModel>(d, 0);
    detail::copy_values(m->user_emb_, blob.arrays[0]);
    detail::copy_values(m->item_emb_, blob.arrays[1]);
    for (std::size_t k = 0; k < m->layers_.size(); ++k) {
      Layer& l = m->layers_[k];
      const std::size_t base = 2 + 6 * k;
      detail::copy_values(l.weight, blob.arrays[base]);
      detail::copy_values(l.bias, blob.arrays[base + 1]);
      detail::copy_values(l.gamma, blob.arrays[base + 2]);
      detail::copy_values(l.beta, blob.arrays[base + 3]);
      auto mean = blob.arrays[base + 4].values();
      auto var = blob.arrays[base + 5].values();
      l.bn.running_mean.assign(mean.begin(), mean.end());
      l.bn.running_var.assign(var.begin(), var.end());
    }
    return m;
  }

 private:
  struct Layer {
    Tensor weight, bias, gamma, beta;
    ops::BatchNormState bn;
  };

  explicit MlpModel(ModelDims dims) : dims_(dims) {}

  ModelDims dims_;
  std::mt19937_64 dropout_rng_;
  Tensor user_emb_, item_emb_;
  std::vector<Layer> layers_;
};

/// Fresh model with weights drawn from uniform(-0.01, 0.01); biases start at zero.
inline std::unique_ptr<Recommender> init_model(ModelKind kind, ModelDims dims, std::uint64_t seed) {
  if (kind == ModelKind::Mf) return std::make_unique<MfModel>(dims, seed);
  return std::make_unique<MlpModel>(dims, seed);
}

inline std::unique_ptr<Recommender> model_from_blob(const Blob& blob) {
  if (blob.kind == BlobKind::Mf) return MfModel::from_blob(blob);
  if (blob.kind == BlobKind::Mlp) return MlpModel::from_blob(blob);
  throw DataError("checkpoint does not hold a recommender");
}

/// True when every parameter value matches bitwise.
inline bool same_parameters(Recommender& a, Recommender& b) {
  auto pa = a.parameters();
  auto pb = b.parameters();
  if (pa.size() != pb.size()) return false;
  for (std::size_t k = 0; k < pa.size(); ++k) {
    auto va = pa[k].tensor.values();
    auto vb = pb[k].tensor.values();
    if (va.size() != vb.size() || !std::equal(va.begin(), va.end(), vb.begin())) return false;
  }
  return true;
}

inline constexpr std::size_t kEvalChunk = 4096;

/// Eval-mode predictions for every example.
inline std::vector<double> predict(Recommender& model, std::span<const Example> examples) {
  std::vector<double> out;
  out.reserve(examples.size());
  std::vector<std::uint32_t> users, items;
  for (std::size_t start = 0; start < examples.size(); start += kEvalChunk) {
    const std::size_t end = std::min(examples.size(), start + kEvalChunk);
    users.clear();
    items.clear();
    for (std::size_t k = start; k < end; ++k) {
      users.push_back(examples[k].user);
      items.push_back(examples[k].item);
    }
    Tensor y = model.forward(nullptr, users, items, false);
    out.insert(out.end(), y.values().begin(), y.values().end());
  }
  return out;
}

inline double predict_one(Recommender& model, std::uint32_t user, std::uint32_t item, bool training = false) {
  const std::uint32_t u[1] = {user};
  const std::uint32_t i[1] = {item};
  return model.forward(nullptr, u, i, training).values()[0];
}

enum class Reduction { Sum, Mean };

struct TrainConfig {
  std::size_t batch_size = 128;
  Reduction reduction = Reduction::Mean;
};

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Batch loss of `loss` over examples[ids], recorded on `tape`.
inline Tensor batch_loss(Tape* tape, Recommender& model, std::span<const Example> examples,
                         std::span<const std::size_t> ids, const LossExpr& loss, const SafeMathConfig& cfg,
                         Reduction reduction, bool training) {
  std::vector<std::uint32_t> users(ids.size()), items(ids.size());
  std::vector<Real> labels(ids.size());
  for (std::size_t k = 0; k < ids.size(); ++k) {
    users[k] = examples[ids[k]].user;
    items[k] = examples[ids[k]].item;
    labels[k] = examples[ids[k]].label;
  }
  Tensor yhat = model.forward(tape, users, items, training);
  const double scale = reduction == Reduction::Mean ? 1.0 / static_cast<double>(ids.size()) : 1.0;
  return ops::pointwise_loss(tape, yhat, labels, [&](Real p, Real y) {
    const Evaluation e = evaluate(loss, p, y, cfg);
    return std::pair<Real, Real>{scale * e.value, scale * e.grad};
  });
}

/// One pass over shuffled minibatches, one optimizer step per batch.
/// Returns the summed loss over the epoch.
template <class Rng>
double train_epoch(Recommender& model, std::span<const Example> train, const LossExpr& loss,
                   const SafeMathConfig& cfg, Optimizer& opt, Rng& rng, const TrainConfig& tc = {}) {
  if (tc.batch_size == 0) throw ContractError("batch size must be positive");
  loss.validate();
  if (loss.empty()) throw StructureError("loss expression has no nodes");
  auto params = model.parameters();
  const auto order = shuffled_order(train.size(), rng);
  double total = 0.0;
  for (std::size_t start = 0; start < order.size(); start += tc.batch_size) {
    const std::size_t end = std::min(order.size(), start + tc.batch_size);
    Tape tape;
    Tensor l = batch_loss(&tape, model, train, std::span(order).subspan(start, end - start), loss, cfg, tc.reduction,
                          true);
    const double v = l.item();
    if (!std::isfinite(v)) {
      throw TrainingError("non-finite loss " + std::to_string(v) + " in batch starting at " + std::to_string(start));
    }
    total += v;
    tape.backward(l);
    opt.step(params);
  }
  return total;
}

}  // namespace lossforge
