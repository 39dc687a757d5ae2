#pragma once

#include <stdexcept>
#include <string>

namespace mvsc {

// Base class for every failure this library reports. The CLI catches this
// one type and maps it to a nonzero exit status.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor shapes or dimensions do not line up.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// A documented precondition was violated by the caller.
class ContractError : public Error {
 public:
  using Error::Error;
};

// A file does not carry the expected magic/layout.
class FormatError : public Error {
 public:
  using Error::Error;
};

// A file parsed but its header and payload disagree.
class CorruptionError : public Error {
 public:
  using Error::Error;
};

// Paired inputs (slices vs. text rows, manifests vs. sidecars) disagree.
class PairingError : public Error {
 public:
  using Error::Error;
};

// Bad key or unparseable value in a config file or on the command line.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// A config parsed but violates a cross-field invariant.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// A metric is mathematically undefined for the given inputs.
class UndefinedMetricError : public Error {
 public:
  using Error::Error;
};

inline void require(bool ok, const std::string& msg) {
  if (!ok) throw ContractError(msg);
}

}  // namespace mvsc
