#pragma once

#include <stdexcept>
#include <string>

namespace trex {

// Bad user input: malformed files, schema mismatches, invalid configuration.
// The CLI maps this to exit code 2.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A caller broke an operation's precondition (e.g. stepping a finished episode).
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

}  // namespace trex
