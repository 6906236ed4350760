#pragma once

#include <stdexcept>
#include <string>

namespace tbin {

// Shape mismatch between operands.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Bad hyperparameter or configuration value.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Violated internal invariant (e.g. a fully masked softmax row).
class InvariantError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Malformed, truncated or version-mismatched file.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Missing key in a lookup table.
class LookupError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

// Metric undefined for the given input (e.g. single-class AUC).
class MetricError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Non-finite loss or gradient during training.
class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace tbin
