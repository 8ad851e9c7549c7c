#pragma once

#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace docunet {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor extents that do not fit the operation.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration value or combination.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed or inconsistent data (documents, labels, mentions).
class DataError : public Error {
 public:
  using Error::Error;
};

/// Failure while reading an external file format.
class IngestionError : public DataError {
 public:
  using DataError::DataError;
};

/// API misuse, e.g. calling backward() on a non-scalar.
class UsageError : public Error {
 public:
  using Error::Error;
};

/// Entity count exceeds the relation matrix size.
class CapacityError : public Error {
 public:
  using Error::Error;
};

/// Training produced a non-finite loss or gradient.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

namespace detail {

inline std::string shape_str(const std::vector<std::size_t>& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

template <typename... Parts>
std::string cat(const Parts&... parts) {
  std::ostringstream os;
  (os << ... << parts);
  return os.str();
}

}  // namespace detail
}  // namespace docunet
