#pragma once

#include <stdexcept>
#include <string>

namespace reident {

// Bad arguments, inconsistent shapes, or data that violates a documented
// precondition.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Unreadable or malformed input files (manifests, images, feature CSVs).
class IngestError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A network layout that cannot be realized for its input shape.
class SpecError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Non-finite loss or weights during optimization.
class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed experiment configuration.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A cross-validation rotation failed; carries the fold and phase.
class FoldError : public std::runtime_error {
 public:
  FoldError(int fold, const std::string& phase, const std::string& what)
      : std::runtime_error("fold " + std::to_string(fold) + ", " + phase + ": " + what), fold_(fold), phase_(phase) {}

  int fold() const { return fold_; }
  const std::string& phase() const { return phase_; }

 private:
  int fold_;
  std::string phase_;
};

}  // namespace reident
