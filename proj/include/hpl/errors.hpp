#pragma once

#include <stdexcept>

namespace hpl {

// Error taxonomy used across the library. Shape/argument/state errors are
// contract violations surfaced to callers, format errors cover artifact
// (de)serialization, numeric errors cover non-finite values.
struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ArgumentError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct StateError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct MissingArtifactError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace hpl
