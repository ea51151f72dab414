#pragma once

#include <stdexcept>
#include <string>

namespace matrixkit {

// Error categories map 1:1 onto CLI exit codes (see tools/matrixkit.cpp):
// usage -> 2, data -> 3, numeric -> 4.
enum class ErrorKind { usage, data, numeric };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& msg)
      : std::runtime_error(msg), kind_(kind) {}

  ErrorKind kind() const { return kind_; }

  static Error usage(const std::string& msg) { return Error(ErrorKind::usage, msg); }
  static Error data(const std::string& msg) { return Error(ErrorKind::data, msg); }
  static Error numeric(const std::string& msg) { return Error(ErrorKind::numeric, msg); }

 private:
  ErrorKind kind_;
};

}  // namespace matrixkit
