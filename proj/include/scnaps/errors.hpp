#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace scnaps {

// Every failure raised by the library derives from Error so callers (and the
// CLI) can report a single-line "kind: message" diagnostic.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& what)
      : std::runtime_error(what), kind_(std::move(kind)) {}
  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& what) : Error("shape", what) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error("config", what) {}
};

class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what) : Error("numeric", what) {}
};

class SamplingError : public Error {
 public:
  explicit SamplingError(const std::string& what) : Error("sampling", what) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error("io", what) {}
};

// Malformed binary input. `offset` is the byte position where parsing stopped.
class ParseError : public Error {
 public:
  ParseError(std::string reason, std::size_t offset, const std::string& what)
      : Error("parse", what), reason_(std::move(reason)), offset_(offset) {}
  const std::string& reason() const noexcept { return reason_; }
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::string reason_;
  std::size_t offset_;
};

// Cholesky failed at every jitter level tried.
class SpdError : public Error {
 public:
  SpdError(const std::string& what, std::vector<double> jitters)
      : Error("spd", what), jitters_(std::move(jitters)) {}
  const std::vector<double>& attempted_jitters() const noexcept { return jitters_; }

 private:
  std::vector<double> jitters_;
};

}  // namespace scnaps
