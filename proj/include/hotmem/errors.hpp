#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace hotmem {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid configuration, layout, or request alignment.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// API misuse, e.g. attaching a process twice.
class UsageError : public Error {
 public:
  using Error::Error;
};

/// Broken internal state (e.g. onlining a block that is already online).
class InternalError : public Error {
 public:
  using Error::Error;
};

/// No free page was available in the zones the allocator may use.
class AllocationFailure : public Error {
 public:
  using Error::Error;
};

/// A plug request asked for more memory than the guest can hold.
class PlugOverflow : public Error {
 public:
  using Error::Error;
};

/// The shared file-mapping partition ran out of pages.
class SharedExhausted : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

}  // namespace hotmem
