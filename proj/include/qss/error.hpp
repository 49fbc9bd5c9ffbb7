#pragma once

#include <stdexcept>
#include <string>

namespace qss {

// Root of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Inconsistent parameters: wrong field, bad seed length, invalid config.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// A party violated the protocol contract (duplicate indices, improper request, unknown record).
class ProtocolError : public Error {
 public:
  using Error::Error;
};

// Envelope failed its Wegman-Carter check.
class IntegrityFailure : public ProtocolError {
 public:
  using ProtocolError::ProtocolError;
};

// Envelope sequence number or key range already seen.
class ReplayFailure : public ProtocolError {
 public:
  using ProtocolError::ProtocolError;
};

// Random or key material ran out.
class KeySupplyError : public Error {
 public:
  using Error::Error;
};

// A MAC seed or one-time key was asked to authenticate a second datum.
class SingleUseViolation : public Error {
 public:
  using Error::Error;
};

class PrecomputationExhausted : public Error {
 public:
  using Error::Error;
};

// Persistent state failed its hash-chain check.
class TamperDetected : public Error {
 public:
  using Error::Error;
};

// Raised by crash-injection hooks in tests; never thrown in normal operation.
class SimulatedCrash : public Error {
 public:
  using Error::Error;
};

}  // namespace qss
