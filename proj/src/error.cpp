#include "rankmatch/error.hpp"

namespace rankmatch {

std::string_view to_string(Errc code) noexcept
{
    switch (code) {
    case Errc::length_mismatch: return "length_mismatch";
    case Errc::not_permutation: return "not_permutation";
    case Errc::invalid_length: return "invalid_length";
    case Errc::invalid_radius: return "invalid_radius";
    case Errc::empty_collection: return "empty_collection";
    case Errc::duplicate_user: return "duplicate_user";
    case Errc::unknown_user: return "unknown_user";
    case Errc::already_inactive: return "already_inactive";
    case Errc::invalid_argument: return "invalid_argument";
    case Errc::parse_error: return "parse_error";
    case Errc::io_error: return "io_error";
    case Errc::corrupt_snapshot: return "corrupt_snapshot";
    }
    return "unknown";
}

} // namespace rankmatch
