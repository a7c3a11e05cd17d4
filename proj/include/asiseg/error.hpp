#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace asiseg {

enum class ErrorCode {
  kShape,
  kConfig,
  kSchema,
  kArgument,
  kIo,
  kInputTooShort,
  kSampleRate,
  kEmptyDataset,
  kDegenerateRange,
  kValidation,
  kManifest,
  kNumeric,
  kVersion,
};

// Stable machine-readable name, used by the CLI error line.
std::string_view error_code_name(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

inline void check(bool condition, ErrorCode code, const std::string& message) {
  if (!condition) throw Error(code, message);
}

}  // namespace asiseg
