#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace veritree {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Raised for malformed configuration, profiles, and missing referenced files.
class ConfigError : public Error {
 public:
  using Error::Error;
};

class ScoreParseError : public Error {
 public:
  using Error::Error;
};

class MalformedAction : public Error {
 public:
  using Error::Error;
};

class UnknownVerb : public Error {
 public:
  using Error::Error;
};

class MissingMarker : public Error {
 public:
  using Error::Error;
};

class NonIntegerScore : public Error {
 public:
  using Error::Error;
};

class BackendUnavailable : public Error {
 public:
  using Error::Error;
};

class ReplayMiss : public Error {
 public:
  explicit ReplayMiss(std::string digest)
      : Error("no recorded completion for prompt digest " + digest),
        digest_(std::move(digest)) {}
  const std::string& digest() const { return digest_; }

 private:
  std::string digest_;
};

class TemplateError : public Error {
 public:
  using Error::Error;
};

class ToolTimeout : public Error {
 public:
  using Error::Error;
};

class ToolTransportError : public Error {
 public:
  using Error::Error;
};

class UnregisteredVerb : public Error {
 public:
  using Error::Error;
};

class DuplicateVerb : public Error {
 public:
  using Error::Error;
};

class AllSubtasksResolved : public Error {
 public:
  AllSubtasksResolved() : Error("every subtask is pruned or completed") {}
};

class EmptyOutcomeSet : public Error {
 public:
  EmptyOutcomeSet() : Error("no verified subtask outcomes to fuse") {}
};

class UnknownLabel : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

class DuplicateId : public Error {
 public:
  DuplicateId(std::size_t line, const std::string& id)
      : Error("line " + std::to_string(line) + ": duplicate id '" + id + "'"),
        line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

class LengthMismatch : public Error {
 public:
  using Error::Error;
};

class UnknownModel : public Error {
 public:
  using Error::Error;
};

class EvaluatorFailure : public Error {
 public:
  using Error::Error;
};

}  // namespace veritree
