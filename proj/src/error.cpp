#include "hbrnorm/error.hpp"

namespace hbrnorm {

std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::usage:
      return "E_USAGE";
    case ErrorCode::io:
      return "E_IO";
    case ErrorCode::schema:
      return "E_SCHEMA";
    case ErrorCode::degenerate_data:
      return "E_DEGENERATE_DATA";
    case ErrorCode::sampler:
      return "E_SAMPLER";
    case ErrorCode::diagnostics:
      return "E_DIAGNOSTICS";
    case ErrorCode::unknown_batch:
      return "E_UNKNOWN_BATCH";
    case ErrorCode::model_mismatch:
      return "E_MODEL_MISMATCH";
    case ErrorCode::invalid_argument:
      return "E_INVALID_ARGUMENT";
  }
  return "E_UNKNOWN";
}

}  // namespace hbrnorm
