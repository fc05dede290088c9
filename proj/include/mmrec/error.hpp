#pragma once

#include <stdexcept>
#include <string>

namespace mmrec {

enum class ErrorKind {
    config,      // bad hyperparameter / config file
    format,      // malformed binary container (magic, header)
    parse,       // malformed text input
    validation,  // semantic constraint violated by otherwise well-formed data
    dimension,   // shape mismatch
    numeric,     // non-finite value, zero norm, undefined statistic
    input,       // empty / out-of-range argument
    contract,    // caller broke a documented precondition
    io,          // filesystem failure
};

class Error : public std::runtime_error {
  public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(message), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

  private:
    ErrorKind kind_;
};

inline const char* error_kind_name(ErrorKind k) {
    switch (k) {
        case ErrorKind::config: return "config";
        case ErrorKind::format: return "format";
        case ErrorKind::parse: return "parse";
        case ErrorKind::validation: return "validation";
        case ErrorKind::dimension: return "dimension";
        case ErrorKind::numeric: return "numeric";
        case ErrorKind::input: return "input";
        case ErrorKind::contract: return "contract";
        case ErrorKind::io: return "io";
    }
    return "unknown";
}

}  // namespace mmrec
