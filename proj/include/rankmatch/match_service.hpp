#pragma once

#include "rankmatch/metric_tree.hpp"

#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace rankmatch {

/// Fixed, ordered item names; an item's index is its position here.
class Vocabulary {
public:
    Vocabulary() = default;
    /// Names must be unique, non-empty and free of whitespace; at least two.
    /// Throws Error{invalid_argument}.
    explicit Vocabulary(std::vector<std::string> names);

    /// One name per line; blank lines are skipped.
    static Vocabulary parse(std::istream& in);
    static Vocabulary load(const std::filesystem::path& path);

    std::size_t size() const noexcept { return names_.size(); }
    const std::vector<std::string>& names() const noexcept { return names_; }

    /// Throws Error{not_permutation} for unknown, missing or repeated names.
    RankList to_rank_list(std::span<const std::string> ranked) const;
    std::vector<std::string> to_names(const RankList& list) const;

private:
    std::vector<std::string> names_;
};

struct ServiceOptions {
    /// Cleanup runs when the inactive share of stored records exceeds this.
    double cleanup_threshold = 0.25;
    std::uint64_t seed = 0;
    std::size_t bucket_size = 16;
    std::size_t cascade_depth = 8;
    /// When set, every mutation rewrites this snapshot before returning.
    std::optional<std::filesystem::path> snapshot_path;
};

/// Launch settings for the service, read from key=value lines: listen,
/// vocab, threshold, seed, snapshot, bucket, cascade_depth.
struct ServiceConfig {
    std::string listen = "127.0.0.1:7070";
    std::filesystem::path vocabulary_path;
    ServiceOptions options;
};

/// Keys not present keep the values already in `config`.
/// Throws Error{parse_error}.
void parse_service_config(std::istream& in, ServiceConfig& config);

struct Match {
    UserId id = 0;
    std::uint32_t raw = 0;
    double distance = 0.0;
};

enum class LowerBound { inclusive, exclusive };

/// Match service state: the vocabulary plus one metric tree over every
/// user's current ranking. Profile updates deactivate the old record and
/// insert a new one; stale records are dropped by cleanup.
///
/// Thread safety: mutations take an exclusive lock, matches and snapshots a
/// shared one.
class MatchService {
public:
    explicit MatchService(Vocabulary vocabulary, ServiceOptions options = {});

    MatchService(const MatchService&) = delete;
    MatchService& operator=(const MatchService&) = delete;

    void register_user(UserId id, std::span<const std::string> ranked);
    void register_user(UserId id, const RankList& list);
    void update(UserId id, std::span<const std::string> ranked);
    void update(UserId id, const RankList& list);

    /// Other active users within normalized distance r, nearest first, ties
    /// by id.
    std::vector<Match> match(UserId id, double r) const;
    std::vector<Match> match_ring(UserId id, double r_lo, double r_hi,
                                  LowerBound lower = LowerBound::inclusive) const;

    void cleanup();

    void write_snapshot(std::ostream& out) const;
    void snapshot(const std::filesystem::path& path) const;
    /// Throws Error{corrupt_snapshot}.
    static std::unique_ptr<MatchService> restore(std::istream& in, ServiceOptions options = {});
    static std::unique_ptr<MatchService> restore(const std::filesystem::path& path,
                                                 ServiceOptions options = {});

    std::size_t stored_count() const;
    std::size_t active_count() const;
    double inactive_fraction() const;
    const Vocabulary& vocabulary() const noexcept { return vocabulary_; }

    /// Executes one protocol line and returns the response line (without
    /// the trailing newline). Never throws for request errors.
    ///
    ///   REGISTER <id> <item>...        -> OK
    ///   UPDATE <id> <item>...          -> OK
    ///   MATCH <id> <r>                 -> OK <count> <id>:<distance>...
    ///   RING <id> <r_lo> <r_hi> [excl] -> OK <count> <id>:<distance>...
    ///   SNAPSHOT [path]                -> OK
    ///   STATS                          -> OK stored=<n> active=<n> inactive=<n>
    ///
    /// Fields are tab separated. Failures answer `ERR <code> <message>`.
    std::string handle(std::string_view request);

private:
    MatchService(Vocabulary vocabulary, ServiceOptions options, MetricTree tree);

    TreeOptions tree_options() const;
    void insert_locked(UserId id, RankList list);
    void persist_locked() const;
    void write_snapshot_locked(std::ostream& out) const;
    std::vector<Match> query_locked(UserId id, RawRange range) const;

    mutable std::shared_mutex mutex_;
    Vocabulary vocabulary_;
    ServiceOptions options_;
    MetricTree tree_;
};

} // namespace rankmatch
