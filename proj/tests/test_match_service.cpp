#include "rankmatch/error.hpp"
#include "rankmatch/match_service.hpp"
#include "support/oracle.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

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

Vocabulary abcd() { return Vocabulary({"A", "B", "C", "D"}); }

Vocabulary numbered(std::size_t n)
{
    std::vector<std::string> names;
    for (std::size_t i = 0; i < n; ++i) names.push_back("item" + std::to_string(i));
    return Vocabulary(std::move(names));
}

std::vector<std::string> names(std::initializer_list<const char*> items)
{
    return {items.begin(), items.end()};
}

// Sorted linear scan over `users` (id -> current list), minus `self`.
std::vector<std::pair<UserId, std::uint32_t>> scan(const std::map<UserId, RankList>& users,
                                                   UserId self, std::uint32_t lo, std::uint32_t hi)
{
    std::vector<std::pair<std::uint32_t, UserId>> hits;
    const auto& q = users.at(self);
    for (const auto& [id, list] : users) {
        if (id == self) continue;
        const auto d = oracle::kt_distance_oracle(q, list);
        if (d >= lo && d <= hi) hits.emplace_back(d, id);
    }
    std::sort(hits.begin(), hits.end());
    std::vector<std::pair<UserId, std::uint32_t>> out;
    for (auto [d, id] : hits) out.emplace_back(id, d);
    return out;
}

std::vector<std::pair<UserId, std::uint32_t>> flatten(const std::vector<Match>& matches)
{
    std::vector<std::pair<UserId, std::uint32_t>> out;
    for (const auto& m : matches) out.emplace_back(m.id, m.raw);
    return out;
}

struct TempDir {
    std::filesystem::path path;
    TempDir()
    {
        path = std::filesystem::temp_directory_path()
               / ("rankmatch-test-" + std::to_string(std::random_device{}()));
        std::filesystem::create_directories(path);
    }
    ~TempDir() { std::filesystem::remove_all(path); }
};

} // namespace

TEST_CASE("vocabulary")
{
    const auto v = abcd();
    CHECK(v.to_rank_list(names({"C", "D", "A", "B"})) == RankList{2, 3, 0, 1});
    CHECK(v.to_names(RankList{1, 0, 3, 2}) == names({"B", "A", "D", "C"}));
    CHECK(code_of([&] { v.to_rank_list(names({"A", "B", "C"})); }) == Errc::not_permutation);
    CHECK(code_of([&] { v.to_rank_list(names({"A", "B", "C", "E"})); }) == Errc::not_permutation);
    CHECK(code_of([&] { v.to_rank_list(names({"A", "B", "C", "C"})); }) == Errc::not_permutation);
    CHECK(code_of([] { Vocabulary({"A"}); }) == Errc::invalid_argument);
    CHECK(code_of([] { Vocabulary({"A", "A"}); }) == Errc::invalid_argument);
    CHECK(code_of([] { Vocabulary({"A", "B C"}); }) == Errc::invalid_argument);

    std::istringstream in("tennis\nchess\n\nrowing\n");
    CHECK(Vocabulary::parse(in).names() == names({"tennis", "chess", "rowing"}));
}

TEST_CASE("register and match: four-item example")
{
    MatchService service(abcd());
    service.register_user(1, names({"A", "B", "C", "D"}));
    service.register_user(2, names({"C", "D", "A", "B"}));
    const auto m = service.match(1, 0.67);
    REQUIRE(m.size() == 1);
    CHECK(m[0].id == 2);
    CHECK(m[0].raw == 4);
    CHECK(m[0].distance == 2.0 / 3.0);
    CHECK(service.match(1, 0.66).empty());
}

TEST_CASE("register errors")
{
    MatchService service(abcd());
    service.register_user(1, names({"A", "B", "C", "D"}));
    CHECK(code_of([&] { service.register_user(2, names({"A", "B", "C"})); }) == Errc::not_permutation);
    CHECK(code_of([&] { service.register_user(2, names({"A", "B", "C", "X"})); }) == Errc::not_permutation);
    CHECK(code_of([&] { service.register_user(2, names({"A", "B", "B", "D"})); }) == Errc::not_permutation);
    CHECK(code_of([&] { service.register_user(1, names({"B", "A", "C", "D"})); }) == Errc::duplicate_user);
    CHECK(code_of([&] { service.match(9, 0.5); }) == Errc::unknown_user);
    CHECK(code_of([&] { service.update(9, names({"A", "B", "C", "D"})); }) == Errc::unknown_user);
    CHECK(code_of([&] { service.match(1, 1.5); }) == Errc::invalid_radius);
    CHECK(code_of([&] { service.match_ring(1, 0.5, 0.2); }) == Errc::invalid_radius);
}

TEST_CASE("self-exclusion and identical lists")
{
    MatchService service(abcd());
    service.register_user(1, names({"B", "A", "C", "D"}));
    CHECK(service.match(1, 0.0).empty());
    service.register_user(2, names({"B", "A", "C", "D"}));
    CHECK(flatten(service.match(1, 0.0)) == std::vector<std::pair<UserId, std::uint32_t>>{{2, 0}});
    CHECK(flatten(service.match(2, 0.0)) == std::vector<std::pair<UserId, std::uint32_t>>{{1, 0}});
}

TEST_CASE("update flow stays consistent with a linear scan")
{
    std::mt19937 rng(30);
    const std::size_t n = 8;
    MatchService service(numbered(n), {.cleanup_threshold = 0.25, .seed = 4});
    std::map<UserId, RankList> users;
    for (UserId id = 0; id < 1500; ++id) {
        users[id] = oracle::random_list(rng, n);
        service.register_user(id, users[id]);
    }

    bool cleaned = false;
    std::size_t previous_stored = service.stored_count();
    for (int step = 0; step < 800; ++step) {
        const UserId id = rng() % 1500;
        users[id] = oracle::random_list(rng, n);
        service.update(id, users[id]);
        if (service.stored_count() < previous_stored) cleaned = true;
        previous_stored = service.stored_count();
        CHECK(service.inactive_fraction() <= 0.25);
    }
    CHECK(cleaned);
    CHECK(service.active_count() == 1500);

    for (int i = 0; i < 60; ++i) {
        const UserId id = rng() % 1500;
        const double r = (rng() % 30) / 100.0;
        CHECK(flatten(service.match(id, r)) == scan(users, id, 0, radius_to_raw(r, n)));
    }

    // Only the new list's neighbourhood: the old list no longer matches at 0.
    const RankList old_list = users[3];
    RankList fresh;
    do fresh = oracle::random_list(rng, n);
    while (fresh == old_list);
    service.register_user(99999, old_list);
    service.update(3, fresh);
    users[3] = fresh;
    users[99999] = old_list;
    for (const auto& m : service.match(99999, 0.0)) CHECK(m.id != 3);
    CHECK(flatten(service.match(3, 0.2)) == scan(users, 3, 0, radius_to_raw(0.2, n)));
}

TEST_CASE("manual cleanup drops retired records")
{
    std::mt19937 rng(31);
    MatchService service(numbered(6), {.cleanup_threshold = 1.0});
    std::map<UserId, RankList> users;
    for (UserId id = 0; id < 300; ++id) {
        users[id] = oracle::random_list(rng, 6);
        service.register_user(id, users[id]);
    }
    for (UserId id = 0; id < 300; id += 2) {
        users[id] = oracle::random_list(rng, 6);
        service.update(id, users[id]);
    }
    CHECK(service.stored_count() == 450);
    service.cleanup();
    CHECK(service.stored_count() == 300);
    for (UserId id = 0; id < 300; id += 13)
        CHECK(flatten(service.match(id, 0.3)) == scan(users, id, 0, radius_to_raw(0.3, 6)));
}

TEST_CASE("ring matches: increments over a smaller ball")
{
    std::mt19937 rng(32);
    const std::size_t n = 9;
    MatchService service(numbered(n));
    std::map<UserId, RankList> users;
    for (UserId id = 0; id < 2000; ++id) {
        users[id] = oracle::random_list(rng, n);
        service.register_user(id, users[id]);
    }
    for (int i = 0; i < 40; ++i) {
        const UserId id = rng() % 2000;
        const double r_prev = (rng() % 20) / 100.0;
        const double r_new = r_prev + (rng() % 20) / 100.0;

        const auto ring = flatten(service.match_ring(id, r_prev, r_new, LowerBound::exclusive));
        const auto inner = flatten(service.match(id, r_prev));
        const auto outer = flatten(service.match(id, r_new));
        std::vector<std::pair<UserId, std::uint32_t>> increment;
        for (const auto& m : outer)
            if (std::find(inner.begin(), inner.end(), m) == inner.end()) increment.push_back(m);
        CHECK(ring == increment);

        // A ball is a prefix of every larger ball.
        CHECK(std::equal(inner.begin(), inner.end(), outer.begin()));

        const auto closed = flatten(service.match_ring(id, r_prev, r_new));
        CHECK(closed == scan(users, id, radius_to_raw_lower(r_prev, n), radius_to_raw(r_new, n)));
    }
}

TEST_CASE("snapshot round trip")
{
    std::mt19937 rng(33);
    MatchService service(numbered(7), {.cleanup_threshold = 1.0, .seed = 2});
    for (UserId id = 0; id < 400; ++id) service.register_user(id, oracle::random_list(rng, 7));
    for (UserId id = 0; id < 400; id += 3) service.update(id, oracle::random_list(rng, 7));

    std::ostringstream first;
    service.write_snapshot(first);
    std::istringstream in(first.str());
    const auto restored = MatchService::restore(in, {.cleanup_threshold = 1.0, .seed = 2});
    std::ostringstream second;
    restored->write_snapshot(second);
    CHECK(first.str() == second.str());
    CHECK(restored->stored_count() == service.stored_count());
    CHECK(restored->active_count() == 400);

    for (int i = 0; i < 100; ++i) {
        const UserId id = rng() % 400;
        const double r = (rng() % 40) / 100.0;
        CHECK(flatten(restored->match(id, r)) == flatten(service.match(id, r)));
    }

    MatchService empty(abcd());
    std::ostringstream e1;
    empty.write_snapshot(e1);
    CHECK(e1.str() == "rankmatch-snapshot\t1\nvocabulary\t4\nA\nB\nC\nD\nrecords\t0\n");
    std::istringstream e_in(e1.str());
    const auto empty_back = MatchService::restore(e_in);
    std::ostringstream e2;
    empty_back->write_snapshot(e2);
    CHECK(e1.str() == e2.str());
    CHECK(empty_back->stored_count() == 0);
}

TEST_CASE("corrupt snapshots are rejected")
{
    const auto restore = [](const std::string& text) {
        std::istringstream in(text);
        return MatchService::restore(in);
    };
    const std::string head = "rankmatch-snapshot\t1\nvocabulary\t3\nx\ny\nz\n";
    CHECK(code_of([&] { restore("rankmatch-snapshot\t2\n"); }) == Errc::corrupt_snapshot);
    CHECK(code_of([&] { restore(head); }) == Errc::corrupt_snapshot);
    CHECK(code_of([&] { restore(head + "records\t2\n1\t1\t0 1 2\n"); }) == Errc::corrupt_snapshot);
    CHECK(code_of([&] { restore(head + "records\t1\n1\t1\t0 1 1\n"); }) == Errc::corrupt_snapshot);
    CHECK(code_of([&] { restore(head + "records\t1\n1\t2\t0 1 2\n"); }) == Errc::corrupt_snapshot);
    CHECK(code_of([&] { restore(head + "records\t1\n1\t1\t0 1\n"); }) == Errc::corrupt_snapshot);
    CHECK(code_of([&] { restore(head + "records\t2\n1\t1\t0 1 2\n1\t1\t2 1 0\n"); })
          == Errc::corrupt_snapshot);
    CHECK(restore(head + "records\t2\n1\t0\t0 1 2\n1\t1\t2 1 0\n")->active_count() == 1);
}

TEST_CASE("mutations are persisted before returning")
{
    TempDir dir;
    const auto path = dir.path / "state.snap";
    {
        MatchService service(abcd(), {.cleanup_threshold = 1.0, .snapshot_path = path});
        service.register_user(1, names({"A", "B", "C", "D"}));
        service.register_user(2, names({"D", "C", "B", "A"}));
        service.update(2, names({"C", "D", "A", "B"}));
    }
    const auto restored = MatchService::restore(path);
    CHECK(restored->stored_count() == 3);
    CHECK(restored->active_count() == 2);
    CHECK(flatten(restored->match(1, 1.0)) == std::vector<std::pair<UserId, std::uint32_t>>{{2, 4}});

    CHECK(code_of([] { MatchService::restore(std::filesystem::path("/nonexistent/x.snap")); })
          == Errc::io_error);
}

TEST_CASE("protocol")
{
    TempDir dir;
    MatchService service(abcd(), {.snapshot_path = dir.path / "s.snap"});
    CHECK(service.handle("REGISTER\t1\tA\tB\tC\tD") == "OK");
    CHECK(service.handle("REGISTER\t2\tC\tD\tA\tB") == "OK");
    CHECK(service.handle("REGISTER\t3\tB\tA\tC\tD\r") == "OK");
    CHECK(service.handle("MATCH\t1\t0.67") == "OK\t2\t3:0.16666666666666666\t2:0.6666666666666666");
    CHECK(service.handle("RING\t1\t0.5\t1") == "OK\t1\t2:0.6666666666666666");
    CHECK(service.handle("RING\t1\t0\t0.5\texcl") == "OK\t1\t3:0.16666666666666666");
    CHECK(service.handle("UPDATE\t3\tD\tC\tB\tA") == "OK");
    CHECK(service.handle("MATCH\t1\t0.5") == "OK\t0");
    CHECK(service.handle("STATS") == "OK\tstored=4\tactive=3\tinactive=1");
    CHECK(service.handle("SNAPSHOT") == "OK");
    CHECK(service.handle("SNAPSHOT\t" + (dir.path / "other.snap").string()) == "OK");
    CHECK(std::filesystem::exists(dir.path / "other.snap"));

    CHECK(service.handle("REGISTER\t1\tA\tB\tC\tD").rfind("ERR\tduplicate_user\t", 0) == 0);
    CHECK(service.handle("REGISTER\t4\tA\tB\tC").rfind("ERR\tnot_permutation\t", 0) == 0);
    CHECK(service.handle("MATCH\t9\t0.5").rfind("ERR\tunknown_user\t", 0) == 0);
    CHECK(service.handle("MATCH\t1\t2").rfind("ERR\tinvalid_radius\t", 0) == 0);
    CHECK(service.handle("MATCH\tx\t0.2").rfind("ERR\tparse_error\t", 0) == 0);
    CHECK(service.handle("MATCH\t1").rfind("ERR\tinvalid_argument\t", 0) == 0);
    CHECK(service.handle("RING\t1\t0.5\t0.1").rfind("ERR\tinvalid_radius\t", 0) == 0);
    CHECK(service.handle("DELETE\t1").rfind("ERR\tinvalid_argument\t", 0) == 0);
    CHECK(service.handle("").rfind("ERR\t", 0) == 0);
}

TEST_CASE("service config file")
{
    std::istringstream in("listen = 0.0.0.0:9000\nvocab=/etc/items.txt\nthreshold=0.4\n"
                          "seed=12\nsnapshot=/var/lib/s.snap\nbucket=4\ncascade_depth=3\n");
    ServiceConfig config;
    parse_service_config(in, config);
    CHECK(config.listen == "0.0.0.0:9000");
    CHECK(config.vocabulary_path == "/etc/items.txt");
    CHECK(config.options.cleanup_threshold == 0.4);
    CHECK(config.options.seed == 12);
    CHECK(config.options.snapshot_path == std::filesystem::path("/var/lib/s.snap"));
    CHECK(config.options.bucket_size == 4);
    CHECK(config.options.cascade_depth == 3);

    std::istringstream bad("threshold=lots\n");
    CHECK(code_of([&] { parse_service_config(bad, config); }) == Errc::parse_error);
    std::istringstream unknown("port=1\n");
    CHECK(code_of([&] { parse_service_config(unknown, config); }) == Errc::parse_error);
}
