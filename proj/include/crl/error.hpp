#pragma once

#include <stdexcept>
#include <string>

namespace crl {

// Base for every error raised by the library; the CLI maps these to a
// nonzero exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid configuration values or preconditions on declarative inputs.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// API misuse: shape mismatches, out-of-range indices, empty inputs.
class UsageError : public Error {
 public:
  using Error::Error;
};

// Manifest / feature-file ingestion failures.
class IngestionError : public Error {
 public:
  using Error::Error;
};

// Snapshot/restore mismatches and missing snapshots.
class IntegrityError : public Error {
 public:
  using Error::Error;
};

// Degenerate numerics (zero-norm rows and similar).
class NumericError : public Error {
 public:
  using Error::Error;
};

// Non-finite loss or gradient during training.
class TrainingError : public Error {
 public:
  using Error::Error;
};

class EvaluationError : public Error {
 public:
  using Error::Error;
};

}  // namespace crl
