#pragma once

#include <stdexcept>
#include <string>

namespace mmdl {

// Failure categories surfaced by the CLI as machine-parseable exit lines.
enum class ErrorCategory {
  dimension,   // shape / length mismatch
  config,      // invalid configuration value
  contract,    // API precondition violated
  numeric,     // NaN / divergence
  format,      // malformed container file
  checkpoint,  // checkpoint load / architecture mismatch
  io,          // filesystem failure
  usage,       // bad command line
};

const char* to_string(ErrorCategory cat);

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory cat, const std::string& msg)
      : std::runtime_error(std::string(to_string(cat)) + ": " + msg), cat_(cat) {}

  ErrorCategory category() const { return cat_; }

 private:
  ErrorCategory cat_;
};

inline const char* to_string(ErrorCategory cat) {
  switch (cat) {
    case ErrorCategory::dimension: return "dimension";
    case ErrorCategory::config: return "config";
    case ErrorCategory::contract: return "contract";
    case ErrorCategory::numeric: return "numeric";
    case ErrorCategory::format: return "format";
    case ErrorCategory::checkpoint: return "checkpoint";
    case ErrorCategory::io: return "io";
    case ErrorCategory::usage: return "usage";
  }
  return "unknown";
}

}  // namespace mmdl
