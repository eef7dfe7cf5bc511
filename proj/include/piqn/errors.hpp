#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace piqn {

// Shape disagreement between operands.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Non-finite values, degenerate softmax rows, diverging training.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Gold span or label index outside the sentence / type inventory.
class AnnotationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class ParseError : public std::runtime_error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

// Assignment problems whose quantities exceed the available rows.
class InfeasibleError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Problem sizes beyond what an exhaustive routine will enumerate.
class CapacityError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Invalid configuration, generator spec, or file contents at the operator surface.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

}  // namespace piqn
