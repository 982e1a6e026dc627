#pragma once

#include <stdexcept>
#include <string>

namespace ocvkit {

// All library errors derive from Error and carry a stable machine-parseable
// code ("E_CONFIG", "E_DATA", "E_NUMERIC", "E_PROTOCOL", "E_IO"). The CLI
// prints "<code>: <message>" on one line and exits nonzero.
class Error : public std::runtime_error {
public:
  Error(std::string code, const std::string& message)
      : std::runtime_error(code + ": " + message), code_(std::move(code)) {}

  const std::string& code() const { return code_; }

private:
  std::string code_;
};

class ConfigError : public Error {
public:
  explicit ConfigError(const std::string& m) : Error("E_CONFIG", m) {}
};

class DataError : public Error {
public:
  explicit DataError(const std::string& m) : Error("E_DATA", m) {}
};

class NumericError : public Error {
public:
  explicit NumericError(const std::string& m) : Error("E_NUMERIC", m) {}
};

class ProtocolError : public Error {
public:
  explicit ProtocolError(const std::string& m) : Error("E_PROTOCOL", m) {}
};

class IoError : public Error {
public:
  explicit IoError(const std::string& m) : Error("E_IO", m) {}
};

}  // namespace ocvkit
