#include "rankmatch/kendall.hpp"

#include "rankmatch/error.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>

namespace rankmatch {

namespace {

void require_list_length(std::size_t n)
{
    if (n < 2)
        throw Error(Errc::invalid_length,
                    "rank list needs at least 2 items, got " + std::to_string(n));
    if (n > std::size_t{1} << 16)
        throw Error(Errc::invalid_length, "rank list too long: " + std::to_string(n));
}

// Counts inversions of seq[0..n) by bottom-up merge sort; `scratch` must
// hold n entries. seq is left sorted.
std::uint32_t merge_count(Item* seq, Item* scratch, std::size_t n) noexcept
{
    std::uint32_t inversions = 0;
    Item* src = seq;
    Item* dst = scratch;
    for (std::size_t width = 1; width < n; width *= 2) {
        for (std::size_t lo = 0; lo < n; lo += 2 * width) {
            const std::size_t mid = std::min(lo + width, n);
            const std::size_t hi = std::min(lo + 2 * width, n);
            std::size_t i = lo, j = mid, k = lo;
            while (i < mid && j < hi) {
                if (src[j] < src[i]) {
                    // src[j] jumps every remaining element of the left run
                    inversions += static_cast<std::uint32_t>(mid - i);
                    dst[k++] = src[j++];
                } else {
                    dst[k++] = src[i++];
                }
            }
            while (i < mid) dst[k++] = src[i++];
            while (j < hi) dst[k++] = src[j++];
        }
        std::swap(src, dst);
    }
    return inversions;
}

} // namespace

RankList::RankList(std::vector<Item> items) : items_(std::move(items))
{
    require_list_length(items_.size());
    if (!is_permutation(items_))
        throw Error(Errc::not_permutation, "rank list is not a permutation of 0..n-1");
}

RankList RankList::identity(std::size_t n)
{
    require_list_length(n);
    std::vector<Item> items(n);
    for (std::size_t i = 0; i < n; ++i) items[i] = static_cast<Item>(i);
    return RankList(std::move(items));
}

bool is_permutation(std::span<const Item> items) noexcept
{
    std::vector<bool> seen(items.size(), false);
    for (Item v : items) {
        if (v >= items.size() || seen[v]) return false;
        seen[v] = true;
    }
    return true;
}

namespace detail {

std::uint32_t count_discordant(std::span<const Item> a, std::span<const Item> b) noexcept
{
    const std::size_t n = a.size();
    constexpr std::size_t small = 64;
    if (n <= small) {
        std::array<Item, small> position{};
        std::array<Item, small> seq{};
        std::array<Item, small> scratch{};
        for (std::size_t i = 0; i < n; ++i) position[a[i]] = static_cast<Item>(i);
        for (std::size_t i = 0; i < n; ++i) seq[i] = position[b[i]];
        return merge_count(seq.data(), scratch.data(), n);
    }
    std::vector<Item> position(n), seq(n), scratch(n);
    for (std::size_t i = 0; i < n; ++i) position[a[i]] = static_cast<Item>(i);
    for (std::size_t i = 0; i < n; ++i) seq[i] = position[b[i]];
    return merge_count(seq.data(), scratch.data(), n);
}

} // namespace detail

RawDistance kt_distance(const RankList& a, const RankList& b)
{
    if (a.size() != b.size())
        throw Error(Errc::length_mismatch,
                    "rank lists differ in length: " + std::to_string(a.size()) + " vs "
                        + std::to_string(b.size()));
    return {detail::count_discordant(a.items(), b.items())};
}

RawDistance kt_distance(std::span<const Item> a, std::span<const Item> b)
{
    if (a.size() != b.size())
        throw Error(Errc::length_mismatch,
                    "rank lists differ in length: " + std::to_string(a.size()) + " vs "
                        + std::to_string(b.size()));
    if (!is_permutation(a) || !is_permutation(b))
        throw Error(Errc::not_permutation, "rank list is not a permutation of 0..n-1");
    return {detail::count_discordant(a, b)};
}

double normalize(RawDistance d, std::size_t n)
{
    if (n < 2)
        throw Error(Errc::invalid_length, "normalization needs n >= 2");
    const std::uint32_t pairs = max_pairs(n);
    if (d.discordant > pairs)
        throw Error(Errc::invalid_argument, "discordant count exceeds n(n-1)/2");
    return static_cast<double>(d.discordant) / static_cast<double>(pairs);
}

RankList parse_rank_list(std::string_view text, char separator)
{
    std::vector<Item> items;
    std::size_t pos = 0;
    const auto is_sep = [separator](char c) {
        return separator == ' ' ? std::isspace(static_cast<unsigned char>(c)) != 0
                                : c == separator;
    };
    const auto skip_blank = [&] {
        while (pos < text.size() && std::isspace(static_cast<unsigned char>(text[pos])))
            ++pos;
    };
    skip_blank();
    while (pos < text.size()) {
        unsigned value = 0;
        const auto* first = text.data() + pos;
        const auto* last = text.data() + text.size();
        auto [ptr, ec] = std::from_chars(first, last, value);
        if (ec != std::errc{} || value > 0xFFFF)
            throw Error(Errc::parse_error,
                        "bad item at offset " + std::to_string(pos) + " in '"
                            + std::string(text) + "'");
        items.push_back(static_cast<Item>(value));
        pos = static_cast<std::size_t>(ptr - text.data());
        skip_blank();
        if (pos == text.size()) break;
        if (separator != ' ') {
            if (!is_sep(text[pos]))
                throw Error(Errc::parse_error,
                            "expected '" + std::string(1, separator) + "' at offset "
                                + std::to_string(pos));
            ++pos;
            skip_blank();
            if (pos == text.size())
                throw Error(Errc::parse_error, "trailing separator");
        }
    }
    return RankList(std::move(items));
}

std::string format_rank_list(const RankList& list, char separator)
{
    std::string out;
    for (std::size_t i = 0; i < list.size(); ++i) {
        if (i) out.push_back(separator);
        out += std::to_string(list[i]);
    }
    return out;
}

} // namespace rankmatch
