#pragma once

#include <stdexcept>
#include <string>

namespace xdd {

// Error taxonomy mirrored by the C API status codes.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

class InvalidArgument : public Error {
 public:
  explicit InvalidArgument(const std::string& msg) : Error(msg) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& msg) : Error(msg) {}
};

// Training aborted on a non-finite loss; carries the offending term name.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& term, const std::string& msg)
      : Error(msg), term_(term) {}
  const std::string& term() const { return term_; }

 private:
  std::string term_;
};

// Checkpoint/config fingerprint mismatch.
class VersionError : public Error {
 public:
  explicit VersionError(const std::string& msg) : Error(msg) {}
};

#define XDD_CHECK_ARG(cond, msg)                  \
  do {                                            \
    if (!(cond)) throw ::xdd::InvalidArgument(msg); \
  } while (0)

}  // namespace xdd
