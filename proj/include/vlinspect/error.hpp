#pragma once

#include <stdexcept>
#include <string>

namespace vlinspect {

// Bad input to an operation (shapes, ranges, unknown tokens).
using InvalidArgument = std::invalid_argument;

// A configuration or artifact file is malformed or incomplete.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// Stored content does not match its recorded checksum.
class IntegrityError : public std::runtime_error {
 public:
  explicit IntegrityError(const std::string& what) : std::runtime_error(what) {}
};

class NotFound : public std::runtime_error {
 public:
  explicit NotFound(const std::string& what) : std::runtime_error(what) {}
};

// The request is valid but the session is not in a state that can serve it.
class Conflict : public std::runtime_error {
 public:
  explicit Conflict(const std::string& what) : std::runtime_error(what) {}
};

class Unavailable : public std::runtime_error {
 public:
  explicit Unavailable(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace vlinspect
