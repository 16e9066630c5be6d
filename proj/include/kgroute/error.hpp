#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace kgroute {

// Root of every error the library throws. The CLI maps the subclasses onto
// distinct exit codes (see tools/kgroute.cpp).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Caller violated a precondition (shape mismatch, non-probability input, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

// Malformed input record. `line` is 1-based, `offset` names the element
// within the record (e.g. triple index) or 0 when not applicable.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line, std::size_t offset)
      : Error("line " + std::to_string(line) + ", offset " + std::to_string(offset) + ": " + what),
        line_(line),
        offset_(offset) {}

  std::size_t line() const noexcept { return line_; }
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t line_;
  std::size_t offset_;
};

// Well-formed input that breaks a domain invariant (dangling node, ...).
class ValidationError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// A graph uses a node type or relation the parameter store has no weights for.
class UnsupportedSchemaError : public Error {
 public:
  using Error::Error;
};

// Training produced a non-finite loss.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& query_id)
      : Error("non-finite loss on query '" + query_id + "'"), query_id_(query_id) {}

  const std::string& query_id() const noexcept { return query_id_; }

 private:
  std::string query_id_;
};

// Network or provider failure. Retryable failures are retried by the clients
// before surfacing.
class TransportError : public Error {
 public:
  TransportError(const std::string& what, bool retryable) : Error(what), retryable_(retryable) {}

  bool retryable() const noexcept { return retryable_; }

 private:
  bool retryable_;
};

// A subcommand needs an artifact that an earlier subcommand produces.
class MissingArtifactError : public Error {
 public:
  using Error::Error;
};

}  // namespace kgroute
