#pragma once

#include <stdexcept>
#include <string>

namespace lowfr {

// Base class for everything thrown by this library on purpose.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Bad arguments or inconsistent model/data configuration.
struct UsageError : Error {
  explicit UsageError(const std::string& msg) : Error(msg) {}
};

// Value outside its mathematical domain (non-PD correlation, psi >= 1, ...).
struct DomainError : Error {
  explicit DomainError(const std::string& msg) : Error(msg) {}
};

// A density or gradient evaluation produced a non-finite value.  The message
// names the term that failed so misbehaving fits can be traced to a block.
struct EvaluationError : Error {
  explicit EvaluationError(const std::string& msg) : Error(msg) {}
};

// Reading or writing files.
struct IoError : Error {
  explicit IoError(const std::string& msg) : Error(msg) {}
};

// Sampler could not start or produced an unusable fit.
struct InferenceError : Error {
  explicit InferenceError(const std::string& msg) : Error(msg) {}
};

}  // namespace lowfr
