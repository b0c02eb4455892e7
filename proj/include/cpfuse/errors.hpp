#pragma once

#include <stdexcept>
#include <string>

namespace cpfuse {

/// Raised when the sizes of two operands do not agree.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A factor column has zero norm and cannot be normalized.
class DegenerateColumnError : public std::runtime_error {
 public:
  DegenerateColumnError(const std::string& what, long column)
      : std::runtime_error(what), column_(column) {}
  long column() const noexcept { return column_; }

 private:
  long column_;
};

/// A linear system or information matrix is numerically singular.
class SingularSystemError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace cpfuse
