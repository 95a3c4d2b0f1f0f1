#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace segb {

enum class ErrorCode {
    invalid_input,
    configuration,
    index_out_of_range,
    schema_mismatch,
    not_trained,
    stage_gating,
    config_hash_mismatch,
    divergence,
    io,
};

std::string_view to_string(ErrorCode code);

// Every recoverable failure in the library is reported through this type.
// The CLI turns it into a one-line machine-parsable message.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(message), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

}  // namespace segb
