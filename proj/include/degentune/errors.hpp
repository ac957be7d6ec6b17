#pragma once

#include <stdexcept>
#include <string>

namespace dgt {

/// Validation failures: bad arguments, malformed configs, schema violations.
/// The CLI maps these to exit code 2.
class ValidationError : public std::invalid_argument {
 public:
  explicit ValidationError(const std::string& what)
      : std::invalid_argument(what) {}
};

/// Runtime failures: I/O, divergence, missing files. CLI exit code 1.
class RuntimeError : public std::runtime_error {
 public:
  explicit RuntimeError(const std::string& what) : std::runtime_error(what) {}
};

class UnknownConceptError : public ValidationError {
 public:
  explicit UnknownConceptError(int concept_id)
      : ValidationError("unknown concept id " + std::to_string(concept_id)) {}
};

class DegenerateGridError : public ValidationError {
 public:
  DegenerateGridError()
      : ValidationError(
            "degenerate grid: a 1-cell grid has no non-identity permutation") {
  }
};

class InvalidGridError : public ValidationError {
 public:
  explicit InvalidGridError(const std::string& what) : ValidationError(what) {}
};

class IncompatibleCheckpointsError : public ValidationError {
 public:
  explicit IncompatibleCheckpointsError(const std::string& what)
      : ValidationError(what) {}
};

class InsufficientSamplesError : public ValidationError {
 public:
  explicit InsufficientSamplesError(const std::string& what)
      : ValidationError(what) {}
};

/// Training hit a NaN loss. Carries the path of the last finite checkpoint
/// when one was persisted.
class DivergedError : public RuntimeError {
 public:
  explicit DivergedError(const std::string& what,
                         const std::string& last_good = "")
      : RuntimeError(what), last_good_checkpoint(last_good) {}
  std::string last_good_checkpoint;
};

class TrainingFailedError : public RuntimeError {
 public:
  explicit TrainingFailedError(const std::string& what) : RuntimeError(what) {}
};

}  // namespace dgt
