#pragma once

#include <stdexcept>
#include <string>

namespace vc {

// Bad command line or configuration. CLI exit code 1.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Unreadable or malformed input data. CLI exit code 2.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class MissingFileError : public DataError {
 public:
  using DataError::DataError;
};

class UnsupportedFormatError : public DataError {
 public:
  using DataError::DataError;
};

class TruncatedFileError : public DataError {
 public:
  using DataError::DataError;
};

// A training loss became NaN or infinite. CLI exit code 3.
class NumericalDivergence : public std::runtime_error {
 public:
  NumericalDivergence(std::string term, double value)
      : std::runtime_error("non-finite " + term + " loss (" + std::to_string(value) + ")"),
        term_(std::move(term)) {}
  const std::string& term() const { return term_; }

 private:
  std::string term_;
};

}  // namespace vc
