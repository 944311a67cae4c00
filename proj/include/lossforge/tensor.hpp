#pragma once

// Dense row-major 2-D tensors with tape-based reverse-mode differentiation.
//
// A Tensor is a shared handle: copies alias the same storage, deep_copy()
// does not. Primitives take a nullable Tape*; they record a backward closure
// only when a tape is given and some input requires a gradient.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "lossforge/errors.hpp"

namespace lossforge {

using Real = double;

class Tensor {
 public:
  Tensor() = default;

  Tensor(std::size_t rows, std::size_t cols, bool requires_grad = false)
      : s_(std::make_shared<Storage>()) {
    s_->rows = rows;
    s_->cols = cols;
    s_->value.assign(rows * cols, Real{0});
    s_->requires_grad = requires_grad;
  }

  static Tensor from(std::size_t rows, std::size_t cols, std::vector<Real> values, bool requires_grad = false) {
    if (values.size() != rows * cols) {
      throw DimensionError("tensor value count " + std::to_string(values.size()) + " does not match shape " +
                           std::to_string(rows) + "x" + std::to_string(cols));
    }
    Tensor t(rows, cols, requires_grad);
    t.s_->value = std::move(values);
    return t;
  }

  static Tensor scalar(Real v, bool requires_grad = false) { return from(1, 1, {v}, requires_grad); }

  bool defined() const noexcept { return static_cast<bool>(s_); }
  std::size_t rows() const noexcept { return s_->rows; }
  std::size_t cols() const noexcept { return s_->cols; }
  std::size_t size() const noexcept { return s_->value.size(); }
  std::array<std::size_t, 2> shape() const noexcept { return {s_->rows, s_->cols}; }
  bool is_scalar() const noexcept { return s_->rows == 1 && s_->cols == 1; }

  std::span<Real> values() noexcept { return s_->value; }
  std::span<const Real> values() const noexcept { return s_->value; }
  Real& at(std::size_t r, std::size_t c) { return s_->value[r * s_->cols + c]; }
  Real at(std::size_t r, std::size_t c) const { return s_->value[r * s_->cols + c]; }
  Real item() const {
    if (!is_scalar()) throw ContractError("item() on a non-scalar tensor");
    return s_->value[0];
  }

  bool requires_grad() const noexcept { return s_->requires_grad; }
  void set_requires_grad(bool on) noexcept { s_->requires_grad = on; }

  /// True once backward has written into this tensor since the last clear.
  bool has_grad() const noexcept { return s_->grad_valid; }

  std::span<const Real> grad() const {
    if (!s_->grad_valid) throw ContractError("tensor has no gradient");
    return s_->grad;
  }

  /// Gradient buffer, zero-filled if nothing has been accumulated yet.
  std::span<Real> grad_buffer() const {
    if (!s_->grad_valid) {
      s_->grad.assign(s_->value.size(), Real{0});
      s_->grad_valid = true;
    }
    return s_->grad;
  }

  void clear_grad() const noexcept { s_->grad_valid = false; }

  Tensor deep_copy() const {
    Tensor t;
    t.s_ = std::make_shared<Storage>(*s_);
    return t;
  }

  bool same_storage(const Tensor& other) const noexcept { return s_ == other.s_; }

 private:
  struct Storage {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<Real> value;
    std::vector<Real> grad;
    bool requires_grad = false;
    bool grad_valid = false;
  };
  std::shared_ptr<Storage> s_;
};

/// Ordered record of primitive applications. backward() replays the records
/// in reverse creation order, once; the tape is empty afterwards.
class Tape {
 public:
  void record(std::function<void()> backward_fn) { records_.push_back(std::move(backward_fn)); }

  std::size_t size() const noexcept { return records_.size(); }

  void backward(Tensor root) {
    if (!root.is_scalar()) throw ContractError("backward root must be a scalar");
    if (!root.requires_grad()) throw ContractError("backward root was not produced on a recording tape");
    root.grad_buffer()[0] += Real{1};
    for (auto it = records_.rbegin(); it != records_.rend(); ++it) (*it)();
    records_.clear();
  }

  void clear() noexcept { records_.clear(); }

 private:
  std::vector<std::function<void()>> records_;
};

namespace ops {

namespace detail {

inline bool recording(const Tape* tape, std::initializer_list<const Tensor*> inputs) {
  if (tape == nullptr) return false;
  for (const Tensor* t : inputs) {
    if (t->requires_grad()) return true;
  }
  return false;
}

inline std::string shape_str(const Tensor& t) { return std::to_string(t.rows()) + "x" + std::to_string(t.cols()); }

/// Records fn(out_grad) if out ever receives a gradient.
template <class F>
void on_backward(Tape* tape, Tensor out, F fn) {
  tape->record([out, fn]() mutable {
    if (!out.has_grad()) return;
    fn(out.grad());
  });
}

}  // namespace detail

inline Tensor matmul(Tape* tape, const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: " + detail::shape_str(a) + " times " + detail::shape_str(b));
  }
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  const bool rec = detail::recording(tape, {&a, &b});
  Tensor out(n, m, rec);
  auto av = a.values();
  auto bv = b.values();
  auto ov = out.values();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const Real x = av[i * k + p];
      if (x == Real{0}) continue;
      const Real* brow = &bv[p * m];
      Real* orow = &ov[i * m];
      for (std::size_t j = 0; j < m; ++j) orow[j] += x * brow[j];
    }
  }
  if (rec) {
    detail::on_backward(tape, out, [a, b, n, k, m](std::span<const Real> g) mutable {
      if (a.requires_grad()) {
        auto ga = a.grad_buffer();
        auto bv = b.values();
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t p = 0; p < k; ++p) {
            Real s = 0;
            for (std::size_t j = 0; j < m; ++j) s += g[i * m + j] * bv[p * m + j];
            ga[i * k + p] += s;
          }
      }
      if (b.requires_grad()) {
        auto gb = b.grad_buffer();
        auto av = a.values();
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t p = 0; p < k; ++p) {
            const Real x = av[i * k + p];
            if (x == Real{0}) continue;
            for (std::size_t j = 0; j < m; ++j) gb[p * m + j] += x * g[i * m + j];
          }
      }
    });
  }
  return out;
}

/// Elementwise sum. `b` may also be a single row broadcast over the rows of `a`.
inline Tensor add(Tape* tape, const Tensor& a, const Tensor& b) {
  const bool broadcast = b.rows() == 1 && a.rows() != 1 && b.cols() == a.cols();
  if (!broadcast && a.shape() != b.shape()) {
    throw DimensionError("add: " + detail::shape_str(a) + " plus " + detail::shape_str(b));
  }
  const std::size_t n = a.rows(), m = a.cols();
  const bool rec = detail::recording(tape, {&a, &b});
  Tensor out(n, m, rec);
  auto av = a.values();
  auto bv = b.values();
  auto ov = out.values();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) ov[i * m + j] = av[i * m + j] + bv[broadcast ? j : i * m + j];
  if (rec) {
    detail::on_backward(tape, out, [a, b, n, m, broadcast](std::span<const Real> g) mutable {
      if (a.requires_grad()) {
        auto ga = a.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (b.requires_grad()) {
        auto gb = b.grad_buffer();
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < m; ++j) gb[broadcast ? j : i * m + j] += g[i * m + j];
      }
    });
  }
  return out;
}

/// Elementwise product.
inline Tensor mul(Tape* tape, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("mul: " + detail::shape_str(a) + " times " + detail::shape_str(b));
  }
  const bool rec = detail::recording(tape, {&a, &b});
  Tensor out(a.rows(), a.cols(), rec);
  auto av = a.values();
  auto bv = b.values();
  auto ov = out.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * bv[i];
  if (rec) {
    detail::on_backward(tape, out, [a, b](std::span<const Real> g) mutable {
      if (a.requires_grad()) {
        auto ga = a.grad_buffer();
        auto bv = b.values();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
      }
      if (b.requires_grad()) {
        auto gb = b.grad_buffer();
        auto av = a.values();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
      }
    });
  }
  return out;
}

inline Tensor scale(Tape* tape, const Tensor& a, Real c) {
  const bool rec = detail::recording(tape, {&a});
  Tensor out(a.rows(), a.cols(), rec);
  auto av = a.values();
  auto ov = out.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = c * av[i];
  if (rec) {
    detail::on_backward(tape, out, [a, c](std::span<const Real> g) mutable {
      auto ga = a.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += c * g[i];
    });
  }
  return out;
}

/// Column-wise concatenation [a, b].
inline Tensor concat(Tape* tape, const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows()) {
    throw DimensionError("concat: " + detail::shape_str(a) + " with " + detail::shape_str(b));
  }
  const std::size_t n = a.rows(), ka = a.cols(), kb = b.cols();
  const bool rec = detail::recording(tape, {&a, &b});
  Tensor out(n, ka + kb, rec);
  auto av = a.values();
  auto bv = b.values();
  auto ov = out.values();
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(&av[i * ka], ka, &ov[i * (ka + kb)]);
    std::copy_n(&bv[i * kb], kb, &ov[i * (ka + kb) + ka]);
  }
  if (rec) {
    detail::on_backward(tape, out, [a, b, n, ka, kb](std::span<const Real> g) mutable {
      if (a.requires_grad()) {
        auto ga = a.grad_buffer();
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < ka; ++j) ga[i * ka + j] += g[i * (ka + kb) + j];
      }
      if (b.requires_grad()) {
        auto gb = b.grad_buffer();
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < kb; ++j) gb[i * kb + j] += g[i * (ka + kb) + ka + j];
      }
    });
  }
  return out;
}

/// Columns [start, start + width) of `a`.
inline Tensor slice_cols(Tape* tape, const Tensor& a, std::size_t start, std::size_t width) {
  if (start + width > a.cols()) {
    throw DimensionError("slice_cols: columns [" + std::to_string(start) + ", " + std::to_string(start + width) +
                         ") of " + detail::shape_str(a));
  }
  const std::size_t n = a.rows(), k = a.cols();
  const bool rec = detail::recording(tape, {&a});
  Tensor out(n, width, rec);
  auto av = a.values();
  auto ov = out.values();
  for (std::size_t i = 0; i < n; ++i) std::copy_n(&av[i * k + start], width, &ov[i * width]);
  if (rec) {
    detail::on_backward(tape, out, [a, n, k, start, width](std::span<const Real> g) mutable {
      auto ga = a.grad_buffer();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < width; ++j) ga[i * k + start + j] += g[i * width + j];
    });
  }
  return out;
}

/// Row-wise sum: [n x m] -> [n x 1].
inline Tensor sum_rows(Tape* tape, const Tensor& a) {
  const std::size_t n = a.rows(), m = a.cols();
  const bool rec = detail::recording(tape, {&a});
  Tensor out(n, 1, rec);
  auto av = a.values();
  auto ov = out.values();
  for (std::size_t i = 0; i < n; ++i) {
    Real s = 0;
    for (std::size_t j = 0; j < m; ++j) s += av[i * m + j];
    ov[i] = s;
  }
  if (rec) {
    detail::on_backward(tape, out, [a, n, m](std::span<const Real> g) mutable {
      auto ga = a.grad_buffer();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) ga[i * m + j] += g[i];
    });
  }
  return out;
}

/// Sum of all entries as a 1x1 tensor.
inline Tensor sum(Tape* tape, const Tensor& a) {
  const bool rec = detail::recording(tape, {&a});
  Tensor out(1, 1, rec);
  Real s = 0;
  for (Real v : a.values()) s += v;
  out.values()[0] = s;
  if (rec) {
    detail::on_backward(tape, out, [a](std::span<const Real> g) mutable {
      auto ga = a.grad_buffer();
      for (Real& v : ga) v += g[0];
    });
  }
  return out;
}

/// Rows `ids` of the table: [V x d] -> [ids.size() x d].
inline Tensor embedding_lookup(Tape* tape, const Tensor& table, std::span<const std::uint32_t> ids) {
  const std::size_t d = table.cols();
  for (std::uint32_t id : ids) {
    if (id >= table.rows()) {
      throw std::out_of_range("embedding_lookup: id " + std::to_string(id) + " outside table of " +
                              std::to_string(table.rows()) + " rows");
    }
  }
  const bool rec = detail::recording(tape, {&table});
  Tensor out(ids.size(), d, rec);
  auto tv = table.values();
  auto ov = out.values();
  for (std::size_t r = 0; r < ids.size(); ++r) std::copy_n(&tv[ids[r] * d], d, &ov[r * d]);
  if (rec) {
    std::vector<std::uint32_t> saved(ids.begin(), ids.end());
    detail::on_backward(tape, out, [table, saved = std::move(saved), d](std::span<const Real> g) mutable {
      auto gt = table.grad_buffer();
      for (std::size_t r = 0; r < saved.size(); ++r) {
        Real* row = &gt[saved[r] * d];
        for (std::size_t j = 0; j < d; ++j) row[j] += g[r * d + j];
      }
    });
  }
  return out;
}

namespace detail {

template <class Fwd, class Deriv>
Tensor unary(Tape* tape, const Tensor& a, Fwd fwd, Deriv deriv) {
  const bool rec = recording(tape, {&a});
  Tensor out(a.rows(), a.cols(), rec);
  auto av = a.values();
  auto ov = out.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = fwd(av[i]);
  if (rec) {
    // deriv(x, y) receives the input and the output value.
    on_backward(tape, out, [a, out, deriv](std::span<const Real> g) mutable {
      auto ga = a.grad_buffer();
      auto av = a.values();
      auto ov = out.values();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * deriv(av[i], ov[i]);
    });
  }
  return out;
}

}  // namespace detail

inline Tensor relu(Tape* tape, const Tensor& a) {
  return detail::unary(
      tape, a, [](Real x) { return x > 0 ? x : Real{0}; }, [](Real x, Real) { return x > 0 ? Real{1} : Real{0}; });
}

inline Real sigmoid(Real x) noexcept {
  if (x >= 0) return 1 / (1 + std::exp(-x));
  const Real e = std::exp(x);
  return e / (1 + e);
}

inline Tensor sigmoid(Tape* tape, const Tensor& a) {
  return detail::unary(
      tape, a, [](Real x) { return sigmoid(x); }, [](Real, Real y) { return y * (1 - y); });
}

inline Tensor tanh(Tape* tape, const Tensor& a) {
  return detail::unary(
      tape, a, [](Real x) { return std::tanh(x); }, [](Real, Real y) { return 1 - y * y; });
}

/// Running statistics for batchnorm; updated only in training mode.
struct BatchNormState {
  std::vector<Real> running_mean;
  std::vector<Real> running_var;
  Real momentum = 0.1;
  Real eps = 1e-5;

  explicit BatchNormState(std::size_t width = 0) : running_mean(width, 0.0), running_var(width, 1.0) {}
};

/// Per-column normalization over the batch, followed by gamma * xhat + beta.
/// Eval mode uses the running statistics.
inline Tensor batchnorm(Tape* tape, const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormState& state,
                        bool training) {
  const std::size_t n = x.rows(), m = x.cols();
  if (gamma.rows() != 1 || gamma.cols() != m || beta.shape() != gamma.shape() || state.running_mean.size() != m) {
    throw DimensionError("batchnorm: parameters do not match input width " + std::to_string(m));
  }
  if (training && n == 0) throw DimensionError("batchnorm: empty batch");
  std::vector<Real> mean(m), inv_std(m);
  auto xv = x.values();
  if (training) {
    for (std::size_t j = 0; j < m; ++j) {
      Real s = 0;
      for (std::size_t i = 0; i < n; ++i) s += xv[i * m + j];
      mean[j] = s / static_cast<Real>(n);
      Real v = 0;
      for (std::size_t i = 0; i < n; ++i) {
        const Real d = xv[i * m + j] - mean[j];
        v += d * d;
      }
      const Real var = v / static_cast<Real>(n);
      inv_std[j] = 1 / std::sqrt(var + state.eps);
      const Real unbiased = n > 1 ? v / static_cast<Real>(n - 1) : var;
      state.running_mean[j] = (1 - state.momentum) * state.running_mean[j] + state.momentum * mean[j];
      state.running_var[j] = (1 - state.momentum) * state.running_var[j] + state.momentum * unbiased;
    }
  } else {
    for (std::size_t j = 0; j < m; ++j) {
      mean[j] = state.running_mean[j];
      inv_std[j] = 1 / std::sqrt(state.running_var[j] + state.eps);
    }
  }
  const bool rec = detail::recording(tape, {&x, &gamma, &beta});
  Tensor xhat(n, m);
  Tensor out(n, m, rec);
  auto hv = xhat.values();
  auto ov = out.values();
  auto gv = gamma.values();
  auto bv = beta.values();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      hv[i * m + j] = (xv[i * m + j] - mean[j]) * inv_std[j];
      ov[i * m + j] = gv[j] * hv[i * m + j] + bv[j];
    }
  if (rec) {
    detail::on_backward(tape, out, [x, gamma, beta, xhat, inv_std, n, m, training](std::span<const Real> g) mutable {
      auto hv = xhat.values();
      if (gamma.requires_grad()) {
        auto gg = gamma.grad_buffer();
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < m; ++j) gg[j] += g[i * m + j] * hv[i * m + j];
      }
      if (beta.requires_grad()) {
        auto gb = beta.grad_buffer();
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < m; ++j) gb[j] += g[i * m + j];
      }
      if (!x.requires_grad()) return;
      auto gx = x.grad_buffer();
      auto gv = gamma.values();
      for (std::size_t j = 0; j < m; ++j) {
        if (!training) {
          for (std::size_t i = 0; i < n; ++i) gx[i * m + j] += g[i * m + j] * gv[j] * inv_std[j];
          continue;
        }
        Real sum_g = 0, sum_gh = 0;
        for (std::size_t i = 0; i < n; ++i) {
          sum_g += g[i * m + j];
          sum_gh += g[i * m + j] * hv[i * m + j];
        }
        const Real nn = static_cast<Real>(n);
        for (std::size_t i = 0; i < n; ++i) {
          gx[i * m + j] +=
              gv[j] * inv_std[j] / nn * (nn * g[i * m + j] - sum_g - hv[i * m + j] * sum_gh);
        }
      }
    });
  }
  return out;
}

/// Inverted dropout: kept entries are scaled by 1/(1-rate). Identity in eval mode.
template <class Rng>
Tensor dropout(Tape* tape, const Tensor& x, Real rate, Rng& rng, bool training) {
  if (rate < 0 || rate >= 1) throw ContractError("dropout rate must lie in [0, 1)");
  if (!training || rate == 0) return x;
  const bool rec = detail::recording(tape, {&x});
  Tensor out(x.rows(), x.cols(), rec);
  std::vector<Real> mask(x.size());
  std::bernoulli_distribution keep(1 - rate);
  const Real kept = 1 / (1 - rate);
  auto xv = x.values();
  auto ov = out.values();
  for (std::size_t i = 0; i < mask.size(); ++i) {
    mask[i] = keep(rng) ? kept : Real{0};
    ov[i] = xv[i] * mask[i];
  }
  if (rec) {
    detail::on_backward(tape, out, [x, mask = std::move(mask)](std::span<const Real> g) mutable {
      auto gx = x.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * mask[i];
    });
  }
  return out;
}

/// Sum over rows of a per-element loss of a [n x 1] prediction.
/// `fn(pred, target)` returns {value, d value / d pred}.
template <class F>
Tensor pointwise_loss(Tape* tape, const Tensor& pred, std::span<const Real> targets, F fn) {
  if (pred.cols() != 1 || pred.rows() != targets.size()) {
    throw DimensionError("pointwise_loss: prediction " + detail::shape_str(pred) + " against " +
                         std::to_string(targets.size()) + " targets");
  }
  const bool rec = detail::recording(tape, {&pred});
  Tensor out(1, 1, rec);
  std::vector<Real> dpred(targets.size());
  Real total = 0;
  auto pv = pred.values();
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const auto [value, grad] = fn(pv[i], targets[i]);
    total += value;
    dpred[i] = grad;
  }
  out.values()[0] = total;
  if (rec) {
    detail::on_backward(tape, out, [pred, dpred = std::move(dpred)](std::span<const Real> g) mutable {
      auto gp = pred.grad_buffer();
      for (std::size_t i = 0; i < dpred.size(); ++i) gp[i] += g[0] * dpred[i];
    });
  }
  return out;
}

/// Log-probability of `choice` and the entropy of softmax(logits) restricted to
/// the entries where `allowed` is set. Returns a 1x2 tensor {log p, entropy}.
inline Tensor categorical(Tape* tape, const Tensor& logits, const std::vector<bool>& allowed, std::size_t choice) {
  const std::size_t v = logits.cols();
  if (logits.rows() != 1 || allowed.size() != v) throw DimensionError("categorical: logits must be 1 x vocab");
  if (choice >= v || !allowed[choice]) throw ContractError("categorical: choice is masked out");
  auto lv = logits.values();
  Real mx = -INFINITY;
  for (std::size_t j = 0; j < v; ++j)
    if (allowed[j]) mx = std::max(mx, lv[j]);
  std::vector<Real> p(v, 0.0);
  Real z = 0;
  for (std::size_t j = 0; j < v; ++j)
    if (allowed[j]) z += (p[j] = std::exp(lv[j] - mx));
  Real entropy = 0;
  for (std::size_t j = 0; j < v; ++j) {
    if (!allowed[j]) continue;
    p[j] /= z;
    if (p[j] > 0) entropy -= p[j] * std::log(p[j]);
  }
  const Real log_p = lv[choice] - mx - std::log(z);
  const bool rec = detail::recording(tape, {&logits});
  Tensor out = Tensor::from(1, 2, {log_p, entropy}, rec);
  if (rec) {
    detail::on_backward(tape, out, [logits, p = std::move(p), choice, entropy](std::span<const Real> g) mutable {
      auto gl = logits.grad_buffer();
      for (std::size_t j = 0; j < p.size(); ++j) {
        if (p[j] == 0) continue;
        const Real dlogp = (j == choice ? 1 : 0) - p[j];
        const Real dent = -p[j] * (std::log(p[j]) + entropy);
        gl[j] += g[0] * dlogp + g[1] * dent;
      }
    });
  }
  return out;
}

}  // namespace ops

}  // namespace lossforge
