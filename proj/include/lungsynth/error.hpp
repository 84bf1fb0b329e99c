#pragma once

#include <stdexcept>
#include <string>

namespace lungsynth {

// Base of every error the library throws. The CLI maps exit codes from the
// concrete type: configuration problems exit 2, data problems 3, numerical
// failures 4.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual int exit_code() const { return 3; }
};

class ConfigError : public Error {
 public:
  using Error::Error;
  int exit_code() const override { return 2; }
};

// Malformed input file (missing or unparsable key, bad CSV row).
class FormatError : public Error {
 public:
  using Error::Error;
};

// Input file is well-formed but inconsistent with itself (size mismatch).
class IntegrityError : public Error {
 public:
  using Error::Error;
};

// A caller violated a precondition (shape mismatch, synthetic data in a test
// partition, empty input where data is required).
class ContractError : public Error {
 public:
  using Error::Error;
};

class NumericalError : public Error {
 public:
  using Error::Error;
  int exit_code() const override { return 4; }
};

// The requested slice lies outside the nodule sphere.
class EmptyRoiError : public Error {
 public:
  using Error::Error;
};

// Two-means clustering on a constant-intensity region.
class DegenerateClusterError : public Error {
 public:
  using Error::Error;
};

// Body mask threshold left no foreground.
class EmptyBodyError : public Error {
 public:
  using Error::Error;
};

}  // namespace lungsynth
