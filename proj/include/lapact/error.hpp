#pragma once

#include <stdexcept>
#include <string>

namespace lapact {

// Base of every error the library raises. `module()` names the pipeline stage
// ("dataset_model", "augment", ...) so the CLI can print module-qualified
// messages.
class Error : public std::runtime_error {
public:
  Error(std::string module, const std::string &what)
      : std::runtime_error(what), module_(std::move(module)) {}

  const std::string &module() const noexcept { return module_; }

private:
  std::string module_;
};

// Malformed input file (bad JSON, missing or mistyped field).
class ParseError : public Error {
public:
  using Error::Error;
};

// Well-formed input that violates a domain invariant.
class ValidationError : public Error {
public:
  using Error::Error;
};

class IoError : public Error {
public:
  using Error::Error;
};

// A caller broke an operation's precondition (bad parameter, wrong shape,
// unbalanced dataset, ...).
class PreconditionError : public Error {
public:
  using Error::Error;
};

// Configuration is inconsistent or names an unavailable component.
class ConfigError : public Error {
public:
  using Error::Error;
};

} // namespace lapact
