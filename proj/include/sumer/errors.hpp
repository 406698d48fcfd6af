// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace sumer {

/// Base of every error thrown by this library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Input could not be parsed in its declared format.
class ParseError : public Error {
 public:
  using Error::Error;
};

/// Input parsed but violates a domain invariant.
class ValidationError : public Error {
 public:
  using Error::Error;
};

class NotFoundError : public Error {
 public:
  using Error::Error;
};

/// On-disk artifact written by an incompatible format version.
class VersionError : public Error {
 public:
  using Error::Error;
};

/// Binary payload shorter or longer than its manifest declares.
class TruncatedError : public Error {
 public:
  using Error::Error;
};

/// A backend lacks something the caller requires (logprobs, scoring, ...).
class CapabilityError : public Error {
 public:
  using Error::Error;
};

/// Transport or remote-service failure after the retry budget is spent.
/// Never converted into a reward or a metric.
class InfrastructureError : public Error {
 public:
  using Error::Error;
};

/// A scripted test double ran out of canned responses.
class ScriptExhaustedError : public Error {
 public:
  using Error::Error;
};

}  // namespace sumer
