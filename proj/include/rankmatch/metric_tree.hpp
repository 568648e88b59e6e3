#pragma once

#include "rankmatch/kendall.hpp"
#include "rankmatch/random.hpp"

#include <chrono>
#include <cstdint>
#include <iosfwd>
#include <limits>
#include <unordered_map>
#include <vector>

namespace rankmatch {

using UserId = std::uint64_t;

struct UserRecord {
    UserId id = 0;
    RankList list;
    bool active = true;
};

struct TreeOptions {
    /// Subtrees holding at most this many records are stored as flat
    /// buckets. 1 gives one record per leaf.
    std::size_t bucket_size = 16;
    /// How many of the nearest ancestors' distances a record consults
    /// during queries.
    std::size_t cascade_depth = 8;
    std::uint64_t seed = 0;
};

struct QueryOptions {
    /// Use stored ancestor distances to decide records and subtrees without
    /// evaluating the distance. Never changes answers, only call counts.
    bool cascade = true;
};

struct QueryStats {
    std::size_t n_found = 0;
    std::size_t dist_calls = 0;
    std::chrono::nanoseconds elapsed{0};
};

struct QueryResult {
    /// Traversal order; callers that need an order sort it.
    std::vector<UserId> ids;
    QueryStats stats;
};

/// Closed interval of raw (discordant-count) distances.
struct RawRange {
    std::uint32_t lo = 0;
    std::uint32_t hi = 0;
};

/// Largest integer R with R <= r * n(n-1)/2 + 1e-9, so that
/// normalized distance <= r  <=>  raw distance <= R.
/// Throws Error{invalid_radius} or Error{invalid_length}.
std::uint32_t radius_to_raw(double r, std::size_t n);

/// Smallest integer R with R >= r * n(n-1)/2 - 1e-9, so that
/// normalized distance >= r  <=>  raw distance >= R.
std::uint32_t radius_to_raw_lower(double r, std::size_t n);

/// Sentinels for radii of an empty side.
inline constexpr std::int32_t empty_inner_radius = -1;
inline constexpr std::int32_t empty_outer_radius = std::numeric_limits<std::int32_t>::max() / 4;

struct TreeNode {
    /// Number of internal ancestors.
    std::uint32_t depth = 0;
    bool leaf = true;

    // Internal nodes. Radii are raw distances from the vantage record and
    // range over the subtree's other records only.
    std::uint32_t vantage = 0;
    std::int32_t r_min = 0;
    std::int32_t r_inner = empty_inner_radius;
    std::int32_t r_outer = empty_outer_radius;
    std::int32_t r_max = 0;
    std::int32_t inner = -1;
    std::int32_t outer = -1;

    // Leaves: record indices.
    std::vector<std::uint32_t> bucket;
};

/// Cascading metric tree over Kendall-Tau distance.
///
/// Each internal node splits its records around a randomly chosen vantage
/// record at the median distance: the nearer half goes to the inner child,
/// the rest to the outer child, and the node keeps the four bounding radii.
/// Every record also keeps its distance to each vantage on its root path,
/// which lets queries bound d(q, x) from already computed d(q, ancestor)
/// values before paying for a distance evaluation.
///
/// Queries are const and may run concurrently; insert, deactivate and
/// cleanup need exclusive access.
class MetricTree {
public:
    /// Empty tree; the list length is fixed by the first insert.
    MetricTree() = default;
    explicit MetricTree(std::size_t list_length, TreeOptions options = {});

    /// Throws Error{empty_collection}, Error{length_mismatch} or
    /// Error{duplicate_user} (two active records sharing an id).
    static MetricTree build(std::vector<UserRecord> records, TreeOptions options = {});

    QueryResult ball_query(const RankList& q, double r, QueryOptions options = {}) const;
    QueryResult ring_query(const RankList& q, double r_lo, double r_hi,
                           QueryOptions options = {}) const;
    /// Active records x with range.lo <= kt_distance(q, x) <= range.hi;
    /// an inverted range is empty.
    QueryResult range_query(const RankList& q, RawRange range, QueryOptions options = {}) const;

    /// Routes the record down by the split radii, widening them on the
    /// way, and appends it to a leaf bucket (splitting it when full).
    void insert(UserRecord record);

    /// Soft delete: the record keeps routing queries but is never reported.
    void deactivate(UserId id);

    /// Rebuilds over the active records only.
    void cleanup();

    std::size_t list_length() const noexcept { return list_length_; }
    bool empty() const noexcept { return root_ < 0; }
    /// Records stored in the tree, active or not.
    std::size_t size() const noexcept { return records_.size(); }
    std::size_t active_count() const noexcept { return records_.size() - inactive_; }
    std::size_t inactive_count() const noexcept { return inactive_; }
    bool is_active(UserId id) const;
    /// The active record for `id`; throws Error{unknown_user}.
    const UserRecord& record_for(UserId id) const;

    const TreeOptions& options() const noexcept { return options_; }
    std::size_t build_distance_calls() const noexcept { return build_calls_; }
    std::size_t insert_distance_calls() const noexcept { return insert_calls_; }

    // Read-only structure access, used by tests and the dump.
    std::int32_t root() const noexcept { return root_; }
    const std::vector<TreeNode>& nodes() const noexcept { return nodes_; }
    const std::vector<UserRecord>& records() const noexcept { return records_; }
    /// Distances from record `index` to the vantage of each internal
    /// ancestor, indexed by ancestor depth.
    const std::vector<std::uint32_t>& ancestor_distances(std::size_t index) const
    {
        return paths_.at(index);
    }
    /// Indices of every record stored under `node`, vantages included.
    std::vector<std::uint32_t> subtree_records(std::int32_t node) const;

    /// One line per stored record in preorder (inner before outer):
    /// `depth<TAB>user_id<TAB>r_min<TAB>r_inner<TAB>r_outer<TAB>r_max`.
    /// Vantage lines carry the node radii, computed over the node's other
    /// records; bucket members and empty sides print `-`.
    void dump(std::ostream& out) const;

private:
    struct Walker;

    void build_into(std::int32_t node, std::vector<std::uint32_t> members, std::uint32_t depth);
    std::uint32_t distance(std::uint32_t a, std::uint32_t b) const noexcept;
    std::uint32_t append_record(UserRecord record);

    std::size_t list_length_ = 0;
    TreeOptions options_{};
    Rng rng_{};

    std::vector<UserRecord> records_;
    std::vector<std::vector<std::uint32_t>> paths_;
    std::vector<TreeNode> nodes_;
    std::int32_t root_ = -1;
    std::uint32_t max_depth_ = 0;

    // Latest record index per id, active or not.
    std::unordered_map<UserId, std::uint32_t> latest_;
    std::size_t inactive_ = 0;
    std::size_t build_calls_ = 0;
    std::size_t insert_calls_ = 0;
};

} // namespace rankmatch
