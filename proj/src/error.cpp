#include "asiseg/error.hpp"

namespace asiseg {

std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kShape: return "shape_error";
    case ErrorCode::kConfig: return "config_error";
    case ErrorCode::kSchema: return "schema_error";
    case ErrorCode::kArgument: return "argument_error";
    case ErrorCode::kIo: return "io_error";
    case ErrorCode::kInputTooShort: return "input_too_short";
    case ErrorCode::kSampleRate: return "sample_rate_error";
    case ErrorCode::kEmptyDataset: return "empty_dataset";
    case ErrorCode::kDegenerateRange: return "degenerate_range";
    case ErrorCode::kValidation: return "validation_error";
    case ErrorCode::kManifest: return "manifest_error";
    case ErrorCode::kNumeric: return "numeric_error";
    case ErrorCode::kVersion: return "version_error";
  }
  return "error";
}

}  // namespace asiseg
