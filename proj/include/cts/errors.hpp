#pragma once

#include <stdexcept>
#include <string>

namespace cts {

// Error taxonomy. The CLI maps ConfigError/InputError/DomainError to exit
// code 2 and NumericError/TrainingError to exit code 3.

struct InputError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct DomainError : std::domain_error {
  using std::domain_error::domain_error;
};

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace cts
