// SPDX-License-Identifier: Apache-2.0
#ifndef G3CN_ERROR_HPP
#define G3CN_ERROR_HPP

#include <stdexcept>
#include <string>

namespace g3cn {

enum class ErrorCode {
  InvalidArgument,
  InvalidEdge,
  DisconnectedGraph,
  ShapeMismatch,
  InvalidAxis,
  InvalidLabel,
  NotScalar,
  ParseError,
  TruncatedFile,
  EmptySequence,
  VersionMismatch,
  ConfigError,
  DivergedLoss,
  InvalidBlock,
  IoError,
};

const char *error_code_name(ErrorCode code);

class Error : public std::runtime_error {
public:
  Error(ErrorCode code, const std::string &message)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + message),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

private:
  ErrorCode code_;
};

/// Parse failure carrying the 1-based line it was detected on.
class ParseError : public Error {
public:
  ParseError(std::size_t line, const std::string &expected)
      : Error(ErrorCode::ParseError,
              "line " + std::to_string(line) + ": expected " + expected),
        line_(line) {}

  std::size_t line() const noexcept { return line_; }

private:
  std::size_t line_;
};

} // namespace g3cn

#endif // G3CN_ERROR_HPP
