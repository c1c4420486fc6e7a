#pragma once

#include <stdexcept>
#include <string>

namespace chef {

// Shape/dimension disagreement between operands or against a config.
struct DimError : std::runtime_error {
  explicit DimError(const std::string& msg) : std::runtime_error(msg) {}
};

// NaN/Inf produced or consumed where finite values are required.
struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// Unknown word or out-of-range token id.
struct VocabError : std::runtime_error {
  explicit VocabError(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed on-disk artifact (bad magic, version, truncation, schema).
struct FormatError : std::runtime_error {
  explicit FormatError(const std::string& msg) : std::runtime_error(msg) {}
};

struct IoError : std::runtime_error {
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

// Misuse of the autodiff tape (foreign variable, missing gradient, non-scalar loss).
struct TapeError : std::runtime_error {
  explicit TapeError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace chef
