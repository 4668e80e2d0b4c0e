// SPDX-License-Identifier: Apache-2.0
#include "g3cn/error.hpp"

namespace g3cn {

const char *error_code_name(ErrorCode code) {
  switch (code) {
  case ErrorCode::InvalidArgument: return "InvalidArgument";
  case ErrorCode::InvalidEdge: return "InvalidEdge";
  case ErrorCode::DisconnectedGraph: return "DisconnectedGraph";
  case ErrorCode::ShapeMismatch: return "ShapeMismatch";
  case ErrorCode::InvalidAxis: return "InvalidAxis";
  case ErrorCode::InvalidLabel: return "InvalidLabel";
  case ErrorCode::NotScalar: return "NotScalar";
  case ErrorCode::ParseError: return "ParseError";
  case ErrorCode::TruncatedFile: return "TruncatedFile";
  case ErrorCode::EmptySequence: return "EmptySequence";
  case ErrorCode::VersionMismatch: return "VersionMismatch";
  case ErrorCode::ConfigError: return "ConfigError";
  case ErrorCode::DivergedLoss: return "DivergedLoss";
  case ErrorCode::InvalidBlock: return "InvalidBlock";
  case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

} // namespace g3cn
