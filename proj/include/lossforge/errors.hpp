#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace lossforge {

/// Malformed loss expression (dangling operand, bad arity, empty graph).
class StructureError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Syntax error in the prefix loss-expression text format.
class ParseError : public std::invalid_argument {
 public:
  ParseError(const std::string& what, std::size_t position)
      : std::invalid_argument(what + " at position " + std::to_string(position)),
        position_(position) {}

  std::size_t position() const noexcept { return position_; }

 private:
  std::size_t position_;
};

/// Violated precondition of an API call (length mismatch, non-scalar root, ...).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Tensor shapes incompatible for a primitive.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Bad input data (malformed rating file, out-of-range ids).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Metric undefined on the given batch (e.g. AUC with one class only).
class MetricError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

}  // namespace lossforge
