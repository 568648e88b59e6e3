#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace rankmatch {

using Item = std::uint16_t;

/// A strict ranking of the items {0, ..., n-1}: position 0 is the most
/// preferred item. Construction validates the permutation, so every
/// RankList in circulation is well formed.
class RankList {
public:
    RankList() = default;

    /// Throws Error{not_permutation} or Error{invalid_length} (n < 2).
    explicit RankList(std::vector<Item> items);
    RankList(std::initializer_list<Item> items)
        : RankList(std::vector<Item>(items)) {}

    /// 0, 1, ..., n-1.
    static RankList identity(std::size_t n);

    std::size_t size() const noexcept { return items_.size(); }
    std::span<const Item> items() const noexcept { return items_; }
    Item operator[](std::size_t i) const noexcept { return items_[i]; }

    auto begin() const noexcept { return items_.begin(); }
    auto end() const noexcept { return items_.end(); }

    friend bool operator==(const RankList&, const RankList&) = default;

private:
    std::vector<Item> items_;
};

/// Number of discordant item pairs between two rankings.
struct RawDistance {
    std::uint32_t discordant = 0;
    friend auto operator<=>(const RawDistance&, const RawDistance&) = default;
};

/// n(n-1)/2, the number of unordered item pairs.
constexpr std::uint32_t max_pairs(std::size_t n) noexcept
{
    return static_cast<std::uint32_t>(n * (n - 1) / 2);
}

/// True when `items` is a permutation of 0..items.size()-1.
bool is_permutation(std::span<const Item> items) noexcept;

/// Kendall-Tau distance in O(n log n): b is relabelled through the inverse
/// of a and the inversions of the result are counted by merge sort.
/// Throws Error{length_mismatch}.
RawDistance kt_distance(const RankList& a, const RankList& b);

/// Validating overload for raw item sequences.
/// Throws Error{length_mismatch} or Error{not_permutation}.
RawDistance kt_distance(std::span<const Item> a, std::span<const Item> b);

/// discordant / (n(n-1)/2). Throws Error{invalid_length} for n < 2 and
/// Error{invalid_argument} when d exceeds the pair count.
double normalize(RawDistance d, std::size_t n);

namespace detail {
// Unchecked kernel; both spans must be permutations of equal length.
std::uint32_t count_discordant(std::span<const Item> a, std::span<const Item> b) noexcept;
} // namespace detail

/// Parses "3,1,0,2" (separator ',') or "3 1 0 2" (separator ' ', any
/// whitespace run). Throws Error{parse_error} or the RankList errors.
RankList parse_rank_list(std::string_view text, char separator);

std::string format_rank_list(const RankList& list, char separator);

} // namespace rankmatch
