#include "segb/error.hpp"

namespace segb {

std::string_view to_string(ErrorCode code) {
    switch (code) {
        case ErrorCode::invalid_input: return "invalid_input";
        case ErrorCode::configuration: return "configuration";
        case ErrorCode::index_out_of_range: return "index_out_of_range";
        case ErrorCode::schema_mismatch: return "schema_mismatch";
        case ErrorCode::not_trained: return "not_trained";
        case ErrorCode::stage_gating: return "stage_gating";
        case ErrorCode::config_hash_mismatch: return "config_hash_mismatch";
        case ErrorCode::divergence: return "divergence";
        case ErrorCode::io: return "io";
    }
    return "unknown";
}

}  // namespace segb
