#pragma once

// Symbolic loss expressions over the prediction, the label and the constant 1.
//
// An expression is a list of operator nodes. Slots 0, 1 and 2 hold the initial
// variables (yhat, y, one); node k writes slot k + 3 and may only read slots
// created before it. The last node is the root, i.e. the loss value.

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <istream>
#include <map>
#include <optional>
#include <span>
#include <ostream>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "lossforge/errors.hpp"

namespace lossforge {

enum class Operator : std::uint8_t {
  Add,
  Multi,
  Max,
  Min,
  Neg,
  Identical,
  Log,
  Square,
  Reciprocal,
};

inline constexpr std::size_t kOperatorCount = 9;

inline constexpr std::array<Operator, kOperatorCount> kAllOperators = {
    Operator::Add, Operator::Multi,     Operator::Max,    Operator::Min,       Operator::Neg,
    Operator::Identical, Operator::Log, Operator::Square, Operator::Reciprocal,
};

constexpr int arity(Operator op) noexcept {
  switch (op) {
    case Operator::Add:
    case Operator::Multi:
    case Operator::Max:
    case Operator::Min:
      return 2;
    default:
      return 1;
  }
}

constexpr std::string_view op_name(Operator op) noexcept {
  switch (op) {
    case Operator::Add: return "add";
    case Operator::Multi: return "mul";
    case Operator::Max: return "max";
    case Operator::Min: return "min";
    case Operator::Neg: return "neg";
    case Operator::Identical: return "id";
    case Operator::Log: return "log";
    case Operator::Square: return "sq";
    case Operator::Reciprocal: return "rec";
  }
  return "?";
}

inline std::optional<Operator> op_from_name(std::string_view name) noexcept {
  for (Operator op : kAllOperators) {
    if (op_name(op) == name) return op;
  }
  return std::nullopt;
}

/// Slots that exist before any operator is applied.
enum Slot : std::uint8_t { kYhat = 0, kLabel = 1, kOne = 2 };
inline constexpr std::size_t kInitialSlots = 3;

/// Default number of controller rounds.
inline constexpr std::size_t kDefaultRounds = 10;

/// Upper bound on nodes in any expression, hand-written ones included.
inline constexpr std::size_t kMaxNodes = 256;

struct Node {
  Operator op = Operator::Identical;
  std::array<std::uint16_t, 2> args{0, 0};  // second entry unused for unary ops

  friend bool operator==(const Node&, const Node&) = default;
};

class LossExpr {
 public:
  LossExpr() = default;

  /// Validates the node list; throws StructureError on any violation.
  explicit LossExpr(std::vector<Node> nodes) : nodes_(std::move(nodes)) { validate(); }

  /// Appends a node and returns the slot it writes.
  std::size_t append(Operator op, std::size_t a, std::size_t b = 0) {
    Node n{op, {static_cast<std::uint16_t>(a), static_cast<std::uint16_t>(arity(op) == 2 ? b : 0)}};
    check_node(n, nodes_.size());
    if (nodes_.size() >= kMaxNodes) throw StructureError("loss expression exceeds node limit");
    nodes_.push_back(n);
    return nodes_.size() + kInitialSlots - 1;
  }

  const std::vector<Node>& nodes() const noexcept { return nodes_; }
  std::size_t size() const noexcept { return nodes_.size(); }
  bool empty() const noexcept { return nodes_.empty(); }
  std::size_t slot_count() const noexcept { return nodes_.size() + kInitialSlots; }
  std::size_t root_slot() const {
    if (nodes_.empty()) throw StructureError("loss expression has no nodes");
    return slot_count() - 1;
  }

  /// Marks which slots the root depends on (initial slots included).
  std::vector<bool> reachable() const {
    std::vector<bool> live(slot_count(), false);
    if (nodes_.empty()) return live;
    live[root_slot()] = true;
    for (std::size_t k = nodes_.size(); k-- > 0;) {
      if (!live[k + kInitialSlots]) continue;
      const Node& n = nodes_[k];
      live[n.args[0]] = true;
      if (arity(n.op) == 2) live[n.args[1]] = true;
    }
    return live;
  }

  void validate() const {
    if (nodes_.size() > kMaxNodes) throw StructureError("loss expression exceeds node limit");
    for (std::size_t k = 0; k < nodes_.size(); ++k) check_node(nodes_[k], k);
  }

  friend bool operator==(const LossExpr&, const LossExpr&) = default;

 private:
  static void check_node(const Node& n, std::size_t k) {
    if (static_cast<std::size_t>(n.op) >= kOperatorCount) {
      throw StructureError("node " + std::to_string(k) + ": unknown operator");
    }
    const std::size_t limit = k + kInitialSlots;
    if (n.args[0] >= limit || (arity(n.op) == 2 && n.args[1] >= limit)) {
      throw StructureError("node " + std::to_string(k) + ": operand refers to slot not yet created");
    }
    if (arity(n.op) == 2 && n.args[0] == n.args[1]) {
      throw StructureError("node " + std::to_string(k) + ": binary operator needs two distinct operands");
    }
  }

  std::vector<Node> nodes_;
};

/// xi bounds every intermediate magnitude into [xi, 1/xi]; epsilon is the
/// smoothing constant used inside Log and Reciprocal.
struct SafeMathConfig {
  double xi = 1e-6;
  double epsilon = 1e-6;

  static SafeMathConfig with_epsilon(double eps) { return SafeMathConfig{1e-6, eps}; }

  void validate() const {
    if (!(xi > 0.0 && xi <= epsilon && epsilon <= 1.0)) {
      throw ContractError("SafeMathConfig requires 0 < xi <= epsilon <= 1");
    }
  }
};

struct Evaluation {
  double value = 0.0;
  double grad = 0.0;  // d value / d yhat
};

namespace detail {

inline double sign_of(double x) noexcept { return x < 0.0 ? -1.0 : 1.0; }

struct Workspace {
  std::array<double, kMaxNodes + kInitialSlots> value;
  std::array<double, kMaxNodes + kInitialSlots> adjoint;
  std::array<bool, kMaxNodes + kInitialSlots> passes;  // raw value inside the clamp interval
};

inline void forward(const LossExpr& e, double yhat, double y, const SafeMathConfig& cfg, Workspace& w) {
  const double lo = cfg.xi;
  const double hi = 1.0 / cfg.xi;
  const double eps = cfg.epsilon;
  w.value[kYhat] = yhat;
  w.value[kLabel] = y;
  w.value[kOne] = 1.0;
  const auto& nodes = e.nodes();
  for (std::size_t k = 0; k < nodes.size(); ++k) {
    const Node& n = nodes[k];
    const double a = w.value[n.args[0]];
    const double b = arity(n.op) == 2 ? w.value[n.args[1]] : 0.0;
    double raw = 0.0;
    switch (n.op) {
      case Operator::Add: raw = a + b; break;
      case Operator::Multi: raw = a * b; break;
      case Operator::Max: raw = a >= b ? a : b; break;
      case Operator::Min: raw = a <= b ? a : b; break;
      case Operator::Neg: raw = -a; break;
      case Operator::Identical: raw = a; break;
      case Operator::Log: raw = sign_of(a) * std::log(std::fabs(a) + eps); break;
      case Operator::Square: raw = a * a; break;
      case Operator::Reciprocal: raw = sign_of(a) / (std::fabs(a) + eps); break;
    }
    const double mag = std::fabs(raw);
    const std::size_t slot = k + kInitialSlots;
    if (mag < lo) {
      w.value[slot] = sign_of(raw) * lo;
      w.passes[slot] = false;
    } else if (mag > hi) {
      w.value[slot] = sign_of(raw) * hi;
      w.passes[slot] = false;
    } else {
      w.value[slot] = raw;
      w.passes[slot] = true;
    }
  }
}

}  // namespace detail

/// Loss value and its derivative with respect to yhat in one forward/reverse sweep.
///
/// Each node's result is clamped to magnitude [xi, 1/xi] with its sign kept
/// (sign(0) = +1). A node whose raw value was clamped passes no gradient.
/// Max/Min ties send the gradient to the first operand.
inline Evaluation evaluate(const LossExpr& e, double yhat, double y, const SafeMathConfig& cfg = {}) {
  detail::Workspace w;
  const std::size_t root = e.root_slot();
  detail::forward(e, yhat, y, cfg, w);
  std::fill_n(w.adjoint.begin(), e.slot_count(), 0.0);
  w.adjoint[root] = 1.0;
  const auto& nodes = e.nodes();
  const double eps = cfg.epsilon;
  for (std::size_t k = nodes.size(); k-- > 0;) {
    const std::size_t slot = k + kInitialSlots;
    const double g = w.adjoint[slot];
    if (g == 0.0 || !w.passes[slot]) continue;
    const Node& n = nodes[k];
    const double a = w.value[n.args[0]];
    switch (n.op) {
      case Operator::Add:
        w.adjoint[n.args[0]] += g;
        w.adjoint[n.args[1]] += g;
        break;
      case Operator::Multi:
        w.adjoint[n.args[0]] += g * w.value[n.args[1]];
        w.adjoint[n.args[1]] += g * a;
        break;
      case Operator::Max:
        w.adjoint[a >= w.value[n.args[1]] ? n.args[0] : n.args[1]] += g;
        break;
      case Operator::Min:
        w.adjoint[a <= w.value[n.args[1]] ? n.args[0] : n.args[1]] += g;
        break;
      case Operator::Neg: w.adjoint[n.args[0]] -= g; break;
      case Operator::Identical: w.adjoint[n.args[0]] += g; break;
      case Operator::Log: w.adjoint[n.args[0]] += g / (std::fabs(a) + eps); break;
      case Operator::Square: w.adjoint[n.args[0]] += g * 2.0 * a; break;
      case Operator::Reciprocal: {
        const double d = std::fabs(a) + eps;
        w.adjoint[n.args[0]] -= g / (d * d);
        break;
      }
    }
  }
  return {w.value[root], w.adjoint[kYhat]};
}

inline double eval(const LossExpr& e, double yhat, double y, const SafeMathConfig& cfg = {}) {
  detail::Workspace w;
  const std::size_t root = e.root_slot();
  detail::forward(e, yhat, y, cfg, w);
  return w.value[root];
}

inline double grad_yhat(const LossExpr& e, double yhat, double y, const SafeMathConfig& cfg = {}) {
  return evaluate(e, yhat, y, cfg).grad;
}

/// Number of reachable Log and Reciprocal nodes; epsilon acts at exactly these sites.
inline std::size_t smoothing_sites(const LossExpr& e) {
  const auto live = e.reachable();
  std::size_t count = 0;
  for (std::size_t k = 0; k < e.size(); ++k) {
    const Operator op = e.nodes()[k].op;
    if (live[k + kInitialSlots] && (op == Operator::Log || op == Operator::Reciprocal)) ++count;
  }
  return count;
}

/// Whether yhat can influence the root at all.
inline bool depends_on_yhat(const LossExpr& e) {
  if (e.empty()) return false;
  return e.reachable()[kYhat];
}

// ---------------------------------------------------------------------------
// Text format: prefix S-expressions, atoms yhat|y|one.

namespace detail {

inline void write_slot(const LossExpr& e, std::size_t slot, std::string& out) {
  switch (slot) {
    case kYhat: out += "yhat"; return;
    case kLabel: out += "y"; return;
    case kOne: out += "one"; return;
    default: break;
  }
  const Node& n = e.nodes()[slot - kInitialSlots];
  out += '(';
  out += op_name(n.op);
  out += ' ';
  write_slot(e, n.args[0], out);
  if (arity(n.op) == 2) {
    out += ' ';
    write_slot(e, n.args[1], out);
  }
  out += ')';
}

class Parser {
 public:
  explicit Parser(std::string_view text) : text_(text) {}

  LossExpr run() {
    skip_space();
    const std::size_t root = parse_term();
    skip_space();
    if (pos_ != text_.size()) throw ParseError("unexpected trailing input", pos_);
    if (expr_.empty() || root != expr_.root_slot()) {
      // A bare atom, or a root that was hash-consed onto an earlier node.
      if (root < kInitialSlots) throw ParseError("expression must apply at least one operator", 0);
      expr_.append(Operator::Identical, root);
    }
    return std::move(expr_);
  }

 private:
  void skip_space() {
    while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
  }

  std::string_view word() {
    const std::size_t start = pos_;
    while (pos_ < text_.size()) {
      const char c = text_[pos_];
      if (c == '(' || c == ')' || std::isspace(static_cast<unsigned char>(c))) break;
      ++pos_;
    }
    return text_.substr(start, pos_ - start);
  }

  std::size_t parse_term() {
    skip_space();
    if (pos_ >= text_.size()) throw ParseError("unexpected end of input", pos_);
    if (text_[pos_] == ')') throw ParseError("unexpected ')'", pos_);
    if (text_[pos_] != '(') {
      const std::size_t at = pos_;
      const std::string_view w = word();
      if (w == "yhat") return kYhat;
      if (w == "y") return kLabel;
      if (w == "one") return kOne;
      throw ParseError("unknown atom '" + std::string(w) + "'", at);
    }
    const std::size_t open = pos_++;
    skip_space();
    const std::size_t head_at = pos_;
    const std::string_view head = word();
    const auto op = op_from_name(head);
    if (!op) throw ParseError("unknown operator '" + std::string(head) + "'", head_at);

    std::vector<std::size_t> operands;
    for (;;) {
      skip_space();
      if (pos_ >= text_.size()) throw ParseError("unclosed '('", open);
      if (text_[pos_] == ')') {
        ++pos_;
        break;
      }
      operands.push_back(parse_term());
    }
    if (operands.size() != static_cast<std::size_t>(arity(*op))) {
      throw ParseError("arity mismatch: '" + std::string(head) + "' expects " + std::to_string(arity(*op)) +
                           " operand(s), got " + std::to_string(operands.size()),
                       open);
    }
    std::size_t a = operands[0];
    std::size_t b = operands.size() > 1 ? operands[1] : 0;
    if (arity(*op) == 2 && a == b) {
      if (b < kInitialSlots) {
        throw ParseError("'" + std::string(head) + "' needs two distinct operands", open);
      }
      // Identical subterms: give the second operand its own copy of the node.
      const Node copy = expr_.nodes()[b - kInitialSlots];
      b = expr_.append(copy.op, copy.args[0], copy.args[1]);
      return intern(*op, a, b, open);
    }
    return intern(*op, a, b, open);
  }

  std::size_t intern(Operator op, std::size_t a, std::size_t b, std::size_t at) {
    const auto key = std::make_tuple(op, a, b);
    if (auto it = seen_.find(key); it != seen_.end()) return it->second;
    if (expr_.size() >= kMaxNodes) throw ParseError("expression exceeds node limit", at);
    const std::size_t slot = expr_.append(op, a, b);
    seen_.emplace(key, slot);
    return slot;
  }

  std::string_view text_;
  std::size_t pos_ = 0;
  LossExpr expr_;
  std::map<std::tuple<Operator, std::size_t, std::size_t>, std::size_t> seen_;
};

}  // namespace detail

/// Renders the tree rooted at the last node; unreachable nodes are dropped and
/// shared subterms are written out at every use.
inline std::string serialize(const LossExpr& e) {
  std::string out;
  detail::write_slot(e, e.root_slot(), out);
  return out;
}

/// Parses the prefix format. Repeated subterms share one node.
inline LossExpr parse(std::string_view text) { return detail::Parser(text).run(); }

/// Same loss tree, ignoring dead nodes and how subterms are shared.
inline bool structurally_equal(const LossExpr& a, const LossExpr& b) { return serialize(a) == serialize(b); }

/// Equivalent expression with dead nodes removed and repeated subterms shared.
inline LossExpr canonical(const LossExpr& e) { return parse(serialize(e)); }

/// Reads a newline-delimited loss list; blank lines and `#` comments are skipped.
inline std::vector<LossExpr> read_loss_list(std::istream& in) {
  std::vector<LossExpr> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    const auto last = line.find_last_not_of(" \t\r");
    try {
      out.push_back(parse(std::string_view(line).substr(first, last - first + 1)));
    } catch (const ParseError& err) {
      throw ParseError("line " + std::to_string(lineno) + ": " + err.what(), err.position());
    }
  }
  return out;
}

inline void write_loss_list(std::ostream& out, std::span<const LossExpr> losses) {
  for (const auto& e : losses) out << serialize(e) << '\n';
}

}  // namespace lossforge
