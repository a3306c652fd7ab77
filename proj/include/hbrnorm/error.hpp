#ifndef HBRNORM_ERROR_HPP
#define HBRNORM_ERROR_HPP

#include <stdexcept>
#include <string>
#include <string_view>

namespace hbrnorm {

/// Error classes. The numeric values double as CLI exit codes.
enum class ErrorCode : int {
  usage = 2,
  io = 3,
  schema = 4,
  degenerate_data = 5,
  sampler = 6,
  diagnostics = 7,
  unknown_batch = 8,
  model_mismatch = 9,
  invalid_argument = 10,
};

std::string_view error_code_name(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace hbrnorm

#endif
