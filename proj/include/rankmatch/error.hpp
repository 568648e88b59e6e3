#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace rankmatch {

enum class Errc {
    length_mismatch,
    not_permutation,
    invalid_length,
    invalid_radius,
    empty_collection,
    duplicate_user,
    unknown_user,
    already_inactive,
    invalid_argument,
    parse_error,
    io_error,
    corrupt_snapshot,
};

std::string_view to_string(Errc code) noexcept;

/// Single exception type for the library; callers branch on code().
class Error : public std::runtime_error {
public:
    Error(Errc code, const std::string& what)
        : std::runtime_error(what), code_(code) {}

    Errc code() const noexcept { return code_; }

private:
    Errc code_;
};

} // namespace rankmatch
