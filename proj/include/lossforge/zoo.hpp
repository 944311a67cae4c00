#pragma once

// Named losses: the handcrafted baselines and three searched classification
// losses, written in the loss DSL.

#include <array>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>

#include "lossforge/errors.hpp"
#include "lossforge/expr.hpp"

namespace lossforge {

namespace detail {

// p_t = y * yhat + (1 - y) * (1 - yhat)
inline constexpr std::string_view kFocalPt = "(add (mul y yhat) (mul (add one (neg y)) (add one (neg yhat))))";

inline std::string focal_text() {
  const std::string pt(kFocalPt);
  return "(neg (mul (sq (add one (neg " + pt + "))) (log " + pt + ")))";
}

}  // namespace detail

inline const std::array<std::pair<std::string_view, std::string>, 7>& zoo_entries() {
  static const std::array<std::pair<std::string_view, std::string>, 7> entries = {{
      {"mse", "(sq (add yhat (neg y)))"},
      {"bce", "(neg (add (mul y (log yhat)) (mul (add one (neg y)) (log (add one (neg yhat))))))"},
      // max(0, 1 - (2y - 1)(2yhat - 1)); the zero is spelled 1 + (-1)
      {"hinge",
       "(max (add one (neg one)) (add one (neg (mul (add y (add y (neg one))) (add yhat (add yhat (neg one)))))))"},
      {"focal", detail::focal_text()},
      {"maxr", "(max (mul yhat (rec y)) (mul y (rec yhat)))"},
      {"sumr", "(mul (add yhat y) (rec (mul yhat y)))"},
      {"logmin", "(mul (log (rec (min yhat y))) (add (add yhat y) (min yhat y)))"},
  }};
  return entries;
}

inline std::string zoo_names() {
  std::string out;
  for (const auto& [name, text] : zoo_entries()) {
    if (!out.empty()) out += ", ";
    out += name;
  }
  return out;
}

inline bool is_zoo_name(std::string_view name) {
  for (const auto& [n, text] : zoo_entries())
    if (n == name) return true;
  return false;
}

inline LossExpr zoo(std::string_view name) {
  for (const auto& [n, text] : zoo_entries())
    if (n == name) return parse(text);
  throw std::invalid_argument("unknown loss '" + std::string(name) + "'; valid names: " + zoo_names());
}

/// A zoo name, or otherwise DSL text.
inline LossExpr resolve_loss(std::string_view text) {
  if (is_zoo_name(text)) return zoo(text);
  if (!text.empty() && text.front() == '(') return parse(text);
  throw std::invalid_argument("unknown loss '" + std::string(text) + "'; valid names: " + zoo_names());
}

}  // namespace lossforge
