#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace bases {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor or model input shape does not match what the operation expects.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A layer list that does not compose into a classifier.
class SpecError : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::size_t offset)
      : Error(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

class TrainingDiverged : public Error {
 public:
  using Error::Error;
};

class DegenerateClassifier : public Error {
 public:
  using Error::Error;
};

class EnsembleArityError : public Error {
 public:
  using Error::Error;
};

/// Network-level failure talking to a remote victim (timeout, refused, budget).
class TransportError : public Error {
 public:
  using Error::Error;
};

class BudgetExhausted : public TransportError {
 public:
  using TransportError::TransportError;
};

/// The remote peer answered but the payload is malformed.
class ProtocolError : public Error {
 public:
  using Error::Error;
};

/// Oracle cannot provide what the caller asked for (e.g. logits from a hard-label server).
class CapabilityError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace bases
