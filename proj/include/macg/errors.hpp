#pragma once

#include <stdexcept>

namespace macg {

// Shape disagreement between operands.
struct DimensionError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Precondition or API-contract violation (empty support, bad call order, ...).
struct ContractError : std::logic_error {
  using std::logic_error::logic_error;
};

// Malformed or inconsistent input data.
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Non-finite values or numeric failure at runtime.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace macg
