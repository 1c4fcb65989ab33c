#pragma once

#include <stdexcept>
#include <string>

namespace demr {

// Bad configuration, malformed input, shape mismatch. CLI exit code 1.
struct ValidationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Non-finite losses, pole divisions, failed gradient checks. CLI exit code 2.
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace demr
