#pragma once

#include <stdexcept>
#include <string>

namespace smseg {

enum class ErrorCode {
  io,
  bad_magic,
  bad_version,
  bad_dtype,
  bad_rank,
  truncated,
  trailing_data,
  non_finite,
  shape_mismatch,
  invalid_argument,
  capacity,
  group_violation,
  out_of_range,
  unsupported,
  config,
};

const char* to_string(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code), detail_(what) {}

  ErrorCode code() const noexcept { return code_; }
  const std::string& detail() const noexcept { return detail_; }

 private:
  ErrorCode code_;
  std::string detail_;
};

}  // namespace smseg
