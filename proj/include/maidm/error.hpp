#pragma once

#include <stdexcept>
#include <string>

namespace maidm {

/// Bad argument, malformed configuration or schema violation.
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// State outside the model's domain (e.g. a non-positive gap).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Factorization failure, non-finite posterior, failed sampler diagnostics.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// File could not be opened, read or written.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline void require(bool cond, const std::string& what) {
  if (!cond) throw InvalidArgument(what);
}

}  // namespace detail
}  // namespace maidm
