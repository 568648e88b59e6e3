#include "rankmatch/error.hpp"
#include "rankmatch/kendall.hpp"
#include "support/oracle.hpp"

#include <doctest.h>

#include <algorithm>
#include <random>

using namespace rankmatch;

namespace {

Errc code_of(auto&& fn)
{
    try {
        fn();
    } catch (const Error& e) {
        return e.code();
    }
    FAIL("expected an Error");
    return Errc::invalid_argument;
}

} // namespace

TEST_CASE("four-item example: [A,B,C,D] vs [C,D,A,B]")
{
    const RankList a{0, 1, 2, 3};
    const RankList b{2, 3, 0, 1};
    CHECK(kt_distance(a, b).discordant == 4);
    CHECK(normalize(kt_distance(a, b), 4) == 2.0 / 3.0);

    // A=0 B=1 C=2 D=3: AC, AD, BC, BD disagree; AB and CD agree.
    const auto pairs = oracle::discordant_pairs(a.items(), b.items());
    const std::vector<std::pair<Item, Item>> expected{{0, 2}, {0, 3}, {1, 2}, {1, 3}};
    CHECK(pairs == expected);
    CHECK(oracle::kt_distance_oracle(a, b) == 4);
}

TEST_CASE("trivial distances")
{
    CHECK(kt_distance(RankList{0, 1, 2, 3}, RankList{0, 1, 2, 3}).discordant == 0);
    CHECK(kt_distance(RankList{0, 1, 2}, RankList{1, 0, 2}).discordant == 1);
    CHECK(oracle::kt_distance_oracle(RankList{0, 1, 2}, RankList{1, 0, 2}) == 1);

    for (std::size_t n = 2; n <= 70; ++n) {
        std::vector<Item> rev(n);
        for (std::size_t i = 0; i < n; ++i) rev[i] = static_cast<Item>(n - 1 - i);
        const auto d = kt_distance(RankList::identity(n), RankList(rev));
        CHECK(d.discordant == max_pairs(n));
        CHECK(normalize(d, n) == 1.0);
    }
}

TEST_CASE("merge-sort count equals pair enumeration, exhaustively for n <= 5")
{
    for (std::size_t n = 2; n <= 5; ++n) {
        std::vector<Item> a(n);
        std::iota(a.begin(), a.end(), Item{0});
        std::vector<std::vector<Item>> all;
        do all.push_back(a);
        while (std::next_permutation(a.begin(), a.end()));
        for (const auto& x : all)
            for (const auto& y : all)
                REQUIRE(kt_distance(x, y).discordant == oracle::kt_distance_oracle(x, y));
    }
}

TEST_CASE("merge-sort count equals pair enumeration on random pairs up to n = 80")
{
    std::mt19937 rng(11);
    for (std::size_t n : {6u, 7u, 8u, 9u, 10u, 11u, 12u, 30u, 64u, 65u, 80u}) {
        for (int i = 0; i < 500; ++i) {
            const auto a = oracle::random_list(rng, n);
            const auto b = oracle::random_list(rng, n);
            REQUIRE(kt_distance(a, b).discordant == oracle::kt_distance_oracle(a, b));
        }
    }
}

TEST_CASE("metric axioms on random triples")
{
    std::mt19937 rng(3);
    for (int i = 0; i < 2000; ++i) {
        const std::size_t n = 2 + rng() % 14;
        const auto a = oracle::random_list(rng, n);
        const auto b = oracle::random_list(rng, n);
        const auto c = oracle::random_list(rng, n);
        const auto ab = kt_distance(a, b).discordant;
        CHECK(ab == kt_distance(b, a).discordant);
        CHECK((ab == 0) == (a == b));
        CHECK(kt_distance(a, a).discordant == 0);
        CHECK(kt_distance(a, c).discordant <= ab + kt_distance(b, c).discordant);
    }
}

TEST_CASE("one adjacent transposition moves the distance by exactly one")
{
    std::mt19937 rng(5);
    for (int i = 0; i < 2000; ++i) {
        const std::size_t n = 2 + rng() % 20;
        const auto a = oracle::random_list(rng, n);
        const auto b = oracle::random_list(rng, n);
        std::vector<Item> swapped(b.begin(), b.end());
        const std::size_t k = rng() % (n - 1);
        std::swap(swapped[k], swapped[k + 1]);
        const auto before = static_cast<long>(kt_distance(a, b).discordant);
        const auto after = static_cast<long>(kt_distance(a, RankList(swapped)).discordant);
        CHECK(std::abs(after - before) == 1);
    }
}

TEST_CASE("normalization bounds; 1 only for the reversal")
{
    std::mt19937 rng(9);
    for (int i = 0; i < 2000; ++i) {
        const std::size_t n = 2 + rng() % 6;
        const auto a = oracle::random_list(rng, n);
        const auto b = oracle::random_list(rng, n);
        const double v = normalize(kt_distance(a, b), n);
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
        std::vector<Item> rev(a.begin(), a.end());
        std::reverse(rev.begin(), rev.end());
        CHECK((v == 1.0) == (b == RankList(rev)));
    }
    CHECK(normalize({0}, 7) == 0.0);
}

TEST_CASE("error paths")
{
    CHECK(code_of([] { kt_distance(RankList{0, 1, 2}, RankList{0, 1}); }) == Errc::length_mismatch);
    CHECK(code_of([] { RankList{0, 0, 1}; }) == Errc::not_permutation);
    CHECK(code_of([] { RankList{0, 1, 3}; }) == Errc::not_permutation);
    CHECK(code_of([] { RankList{0}; }) == Errc::invalid_length);

    const std::vector<Item> good{0, 1, 2};
    const std::vector<Item> bad{0, 2, 2};
    const std::vector<Item> shorter{0, 1};
    CHECK(code_of([&] { kt_distance(good, bad); }) == Errc::not_permutation);
    CHECK(code_of([&] { kt_distance(good, shorter); }) == Errc::length_mismatch);
    CHECK(kt_distance(good, std::vector<Item>{2, 1, 0}).discordant == 3);

    CHECK(code_of([] { normalize({0}, 1); }) == Errc::invalid_length);
    CHECK(code_of([] { normalize({7}, 4); }) == Errc::invalid_argument);
}

TEST_CASE("rank list text forms")
{
    CHECK(parse_rank_list("2,0,1", ',') == RankList{2, 0, 1});
    CHECK(parse_rank_list(" 2 0\t1 ", ' ') == RankList{2, 0, 1});
    CHECK(format_rank_list(RankList{2, 0, 1}, ',') == "2,0,1");
    CHECK(code_of([] { parse_rank_list("2,,1", ','); }) == Errc::parse_error);
    CHECK(code_of([] { parse_rank_list("2,0,", ','); }) == Errc::parse_error);
    CHECK(code_of([] { parse_rank_list("2 x 1", ' '); }) == Errc::parse_error);
    CHECK(code_of([] { parse_rank_list("0,1,1", ','); }) == Errc::not_permutation);
}
