#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace bedexit {

/// Stable machine-readable error categories; the CLI maps each to its own exit code.
enum class ErrorCode {
  usage = 2,
  config = 3,
  io = 4,
  format = 5,
  data = 6,
  checkpoint = 7,
  numeric = 8,
  invalid_argument = 9,
};

std::string_view error_code_name(ErrorCode code);

class Error : public std::runtime_error {
public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const { return code_; }

private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

inline void require(bool condition, ErrorCode code, const std::string& message) {
  if (!condition) fail(code, message);
}

}  // namespace bedexit
