#pragma once

#include <stdexcept>
#include <string>

namespace dfedrw {

// Invalid construction arguments or malformed config; CLI maps these to exit 2.
struct ValidationError : std::runtime_error {
  explicit ValidationError(const std::string& what) : std::runtime_error(what) {}
};

// Malformed external file (IDX container, adjacency list, partition JSON).
struct FormatError : std::runtime_error {
  explicit FormatError(const std::string& what) : std::runtime_error(what) {}
};

// Numerical failure (non-finite activations, eigensolver breakdown); exit 3.
struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace dfedrw
