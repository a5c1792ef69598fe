#pragma once

#include <array>
#include <cstddef>
#include <stdexcept>
#include <string>

namespace memo {

/// Root of every error the toolkit raises on purpose.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad argument to an operation (shape mismatch, out-of-range index, empty input).
class ArgumentError : public Error {
 public:
  using Error::Error;
};

/// A documented precondition of the operation does not hold.
class PreconditionError : public Error {
 public:
  using Error::Error;
};

/// File does not start with the expected magic/version.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// File payload shorter (or longer) than its header declares.
class LengthError : public Error {
 public:
  using Error::Error;
};

/// I/O failure while reading or writing.
class StorageError : public Error {
 public:
  using Error::Error;
};

/// Tensor invariant violated; carries the first offending (l,h,i,j).
class ValidationError : public Error {
 public:
  ValidationError(const std::string& what, std::array<std::size_t, 4> where)
      : Error(what), where_(where) {}

  const std::array<std::size_t, 4>& where() const noexcept { return where_; }

 private:
  std::array<std::size_t, 4> where_;
};

/// Non-finite value produced inside the network.
class NumericError : public Error {
 public:
  NumericError(const std::string& layer, const std::string& what)
      : Error(layer + ": " + what), layer_(layer) {}

  const std::string& layer() const noexcept { return layer_; }

 private:
  std::string layer_;
};

/// Architecture or run configuration that cannot be built.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Taxonomy text that does not match the grammar.
class SyntaxError : public Error {
 public:
  SyntaxError(const std::string& what, std::size_t position)
      : Error(what + " at position " + std::to_string(position)), position_(position) {}

  std::size_t position() const noexcept { return position_; }

 private:
  std::size_t position_;
};

/// Taxonomy that parses but breaks one of the tree-building rules (1..3).
class RuleError : public Error {
 public:
  RuleError(int rule, const std::string& what)
      : Error("rule " + std::to_string(rule) + " violated: " + what), rule_(rule) {}

  int rule() const noexcept { return rule_; }

 private:
  int rule_;
};

/// A class has no members, so no balanced split exists.
class InfeasibleError : public Error {
 public:
  using Error::Error;
};

}  // namespace memo
