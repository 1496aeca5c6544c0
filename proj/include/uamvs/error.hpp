#pragma once

#include <stdexcept>
#include <string>

namespace uamvs {

// Caller supplied something outside an operation's domain.
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Malformed on-disk data. `line()` is 0 for binary formats.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, int line = 0)
      : std::runtime_error(line > 0 ? "line " + std::to_string(line) + ": " + what : what),
        line_(line) {}
  int line() const { return line_; }

 private:
  int line_;
};

// A computation had no data to work with (empty masks, empty clouds).
class EmptySupport : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace uamvs
