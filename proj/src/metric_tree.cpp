#include "rankmatch/metric_tree.hpp"

#include "rankmatch/error.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <string>
#include <unordered_set>

namespace rankmatch {

namespace {

constexpr double radius_epsilon = 1e-9;

void require_radius(double r)
{
    if (!(r >= 0.0 && r <= 1.0))
        throw Error(Errc::invalid_radius, "radius must lie in [0, 1], got " + std::to_string(r));
}

void require_length(std::size_t expected, std::size_t got)
{
    if (expected != got)
        throw Error(Errc::length_mismatch,
                    "rank list has length " + std::to_string(got) + ", tree holds length "
                        + std::to_string(expected));
}

enum class Verdict { excluded, included, undecided };

// Where a set of candidate distances [lower, upper] sits relative to range.
Verdict classify(std::int64_t lower, std::int64_t upper, RawRange range) noexcept
{
    if (upper < range.lo || lower > range.hi) return Verdict::excluded;
    if (lower >= range.lo && upper <= range.hi) return Verdict::included;
    return Verdict::undecided;
}

} // namespace

std::uint32_t radius_to_raw(double r, std::size_t n)
{
    require_radius(r);
    if (n < 2) throw Error(Errc::invalid_length, "list length must be >= 2");
    const double scaled = r * static_cast<double>(max_pairs(n)) + radius_epsilon;
    return std::min(static_cast<std::uint32_t>(std::floor(scaled)), max_pairs(n));
}

std::uint32_t radius_to_raw_lower(double r, std::size_t n)
{
    require_radius(r);
    if (n < 2) throw Error(Errc::invalid_length, "list length must be >= 2");
    const double scaled = r * static_cast<double>(max_pairs(n)) - radius_epsilon;
    return static_cast<std::uint32_t>(std::max(0.0, std::ceil(scaled)));
}

MetricTree::MetricTree(std::size_t list_length, TreeOptions options)
    : list_length_(list_length), options_(options), rng_(options.seed)
{
    if (list_length < 2) throw Error(Errc::invalid_length, "list length must be >= 2");
    if (options_.bucket_size == 0)
        throw Error(Errc::invalid_argument, "bucket size must be >= 1");
}

MetricTree MetricTree::build(std::vector<UserRecord> records, TreeOptions options)
{
    if (records.empty()) throw Error(Errc::empty_collection, "cannot build a tree over no records");
    MetricTree tree(records.front().list.size(), options);

    std::unordered_set<UserId> active_ids;
    for (const auto& rec : records) {
        require_length(tree.list_length_, rec.list.size());
        if (rec.active && !active_ids.insert(rec.id).second)
            throw Error(Errc::duplicate_user, "duplicate active user id " + std::to_string(rec.id));
    }

    std::vector<std::uint32_t> members(records.size());
    std::iota(members.begin(), members.end(), 0u);
    for (auto& rec : records) tree.append_record(std::move(rec));

    tree.nodes_.emplace_back();
    tree.root_ = 0;
    tree.build_into(0, std::move(members), 0);
    return tree;
}

std::uint32_t MetricTree::append_record(UserRecord record)
{
    const auto index = static_cast<std::uint32_t>(records_.size());
    if (!record.active) ++inactive_;
    // Later records win the id slot unless an active one already holds it.
    auto [it, fresh] = latest_.try_emplace(record.id, index);
    if (!fresh && (record.active || !records_[it->second].active)) it->second = index;
    records_.push_back(std::move(record));
    paths_.emplace_back();
    return index;
}

std::uint32_t MetricTree::distance(std::uint32_t a, std::uint32_t b) const noexcept
{
    return detail::count_discordant(records_[a].list.items(), records_[b].list.items());
}

void MetricTree::build_into(std::int32_t node, std::vector<std::uint32_t> members,
                            std::uint32_t depth)
{
    nodes_[node].depth = depth;
    max_depth_ = std::max(max_depth_, depth);
    if (members.size() <= options_.bucket_size) {
        nodes_[node].leaf = true;
        nodes_[node].bucket = std::move(members);
        return;
    }

    const auto pick = static_cast<std::size_t>(uniform_below(rng_, members.size()));
    const std::uint32_t vantage = members[pick];
    members.erase(members.begin() + static_cast<std::ptrdiff_t>(pick));

    std::vector<std::pair<std::uint32_t, std::uint32_t>> by_distance;
    by_distance.reserve(members.size());
    for (std::uint32_t m : members) {
        const std::uint32_t d = distance(vantage, m);
        ++build_calls_;
        paths_[m].push_back(d);
        by_distance.emplace_back(d, m);
    }
    // Ties at the median fill the inner side first, in input order.
    std::stable_sort(by_distance.begin(), by_distance.end(),
                     [](const auto& x, const auto& y) { return x.first < y.first; });

    const std::size_t inner_count = (by_distance.size() + 1) / 2;
    std::vector<std::uint32_t> inner, outer;
    inner.reserve(inner_count);
    outer.reserve(by_distance.size() - inner_count);
    for (std::size_t i = 0; i < by_distance.size(); ++i)
        (i < inner_count ? inner : outer).push_back(by_distance[i].second);

    {
        TreeNode& n = nodes_[node];
        n.leaf = false;
        n.bucket.clear();
        n.vantage = vantage;
        n.r_min = static_cast<std::int32_t>(by_distance.front().first);
        n.r_max = static_cast<std::int32_t>(by_distance.back().first);
        n.r_inner = static_cast<std::int32_t>(by_distance[inner_count - 1].first);
        n.r_outer = outer.empty() ? empty_outer_radius
                                  : static_cast<std::int32_t>(by_distance[inner_count].first);
    }

    const auto inner_node = static_cast<std::int32_t>(nodes_.size());
    nodes_.emplace_back();
    nodes_[node].inner = inner_node;
    build_into(inner_node, std::move(inner), depth + 1);

    if (!outer.empty()) {
        const auto outer_node = static_cast<std::int32_t>(nodes_.size());
        nodes_.emplace_back();
        nodes_[node].outer = outer_node;
        build_into(outer_node, std::move(outer), depth + 1);
    }
}

void MetricTree::insert(UserRecord record)
{
    if (list_length_ == 0) {
        if (record.list.size() < 2) throw Error(Errc::invalid_length, "list length must be >= 2");
        list_length_ = record.list.size();
        rng_.seed(options_.seed);
        if (options_.bucket_size == 0)
            throw Error(Errc::invalid_argument, "bucket size must be >= 1");
    }
    require_length(list_length_, record.list.size());
    if (record.active && is_active(record.id))
        throw Error(Errc::duplicate_user, "user " + std::to_string(record.id) + " is already active");

    const std::uint32_t index = append_record(std::move(record));

    if (root_ < 0) {
        nodes_.emplace_back();
        root_ = static_cast<std::int32_t>(nodes_.size() - 1);
        nodes_[root_].bucket.push_back(index);
        return;
    }

    std::int32_t node = root_;
    while (!nodes_[node].leaf) {
        TreeNode& n = nodes_[node];
        const std::uint32_t du = distance(n.vantage, index);
        ++insert_calls_;
        paths_[index].push_back(du);
        const auto d = static_cast<std::int32_t>(du);
        n.r_min = std::min(n.r_min, d);
        n.r_max = std::max(n.r_max, d);

        std::int32_t next;
        if (n.inner >= 0 && d <= n.r_inner) {
            next = n.inner;
        } else {
            n.r_outer = std::min(n.r_outer, d);
            if (n.outer < 0) {
                const std::uint32_t depth = n.depth + 1;
                TreeNode leaf;
                leaf.depth = depth;
                max_depth_ = std::max(max_depth_, depth);
                nodes_.push_back(std::move(leaf));
                nodes_[node].outer = static_cast<std::int32_t>(nodes_.size() - 1);
            }
            next = nodes_[node].outer;
        }
        node = next;
    }

    nodes_[node].bucket.push_back(index);
    if (nodes_[node].bucket.size() > options_.bucket_size) {
        std::vector<std::uint32_t> members = std::move(nodes_[node].bucket);
        nodes_[node].bucket.clear();
        build_into(node, std::move(members), nodes_[node].depth);
    }
}

bool MetricTree::is_active(UserId id) const
{
    const auto it = latest_.find(id);
    return it != latest_.end() && records_[it->second].active;
}

const UserRecord& MetricTree::record_for(UserId id) const
{
    const auto it = latest_.find(id);
    if (it == latest_.end() || !records_[it->second].active)
        throw Error(Errc::unknown_user, "no active user " + std::to_string(id));
    return records_[it->second];
}

void MetricTree::deactivate(UserId id)
{
    const auto it = latest_.find(id);
    if (it == latest_.end()) throw Error(Errc::unknown_user, "unknown user " + std::to_string(id));
    UserRecord& rec = records_[it->second];
    if (!rec.active)
        throw Error(Errc::already_inactive, "user " + std::to_string(id) + " is already inactive");
    rec.active = false;
    ++inactive_;
}

void MetricTree::cleanup()
{
    std::vector<UserRecord> survivors;
    survivors.reserve(active_count());
    for (auto& rec : records_)
        if (rec.active) survivors.push_back(std::move(rec));

    const std::size_t length = list_length_;
    if (survivors.empty()) {
        *this = length ? MetricTree(length, options_) : MetricTree();
        return;
    }
    *this = build(std::move(survivors), options_);
}

std::vector<std::uint32_t> MetricTree::subtree_records(std::int32_t node) const
{
    std::vector<std::uint32_t> out;
    std::vector<std::int32_t> stack{node};
    while (!stack.empty()) {
        const std::int32_t at = stack.back();
        stack.pop_back();
        if (at < 0) continue;
        const TreeNode& n = nodes_[at];
        if (n.leaf) {
            out.insert(out.end(), n.bucket.begin(), n.bucket.end());
        } else {
            out.push_back(n.vantage);
            stack.push_back(n.outer);
            stack.push_back(n.inner);
        }
    }
    return out;
}

void MetricTree::dump(std::ostream& out) const
{
    out << "# depth\tuser_id\tr_min\tr_inner\tr_outer\tr_max (radii exclude the vantage)\n";
    const auto radius = [](std::int32_t r) {
        return (r == empty_inner_radius || r == empty_outer_radius) ? std::string("-")
                                                                     : std::to_string(r);
    };
    std::vector<std::int32_t> stack;
    if (root_ >= 0) stack.push_back(root_);
    while (!stack.empty()) {
        const TreeNode& n = nodes_[stack.back()];
        stack.pop_back();
        if (n.leaf) {
            for (std::uint32_t m : n.bucket)
                out << n.depth << '\t' << records_[m].id << "\t-\t-\t-\t-\n";
            continue;
        }
        out << n.depth << '\t' << records_[n.vantage].id << '\t' << n.r_min << '\t'
            << radius(n.r_inner) << '\t' << radius(n.r_outer) << '\t' << n.r_max << '\n';
        if (n.outer >= 0) stack.push_back(n.outer);
        if (n.inner >= 0) stack.push_back(n.inner);
    }
}

// One query traversal. query_path[t] holds d(q, vantage at depth t) for the
// internal nodes on the current root path; it is always exact because a
// node's children are only entered after its vantage distance is computed.
struct MetricTree::Walker {
    const MetricTree& tree;
    const RankList& q;
    RawRange range;
    bool cascade;
    std::int64_t diameter;
    std::vector<std::int64_t> query_path;
    QueryResult result;

    std::int64_t measure(std::uint32_t index)
    {
        ++result.stats.dist_calls;
        return detail::count_discordant(q.items(), tree.records_[index].list.items());
    }

    // Bounds on d(q, record) from the nearest cascade_depth ancestors.
    std::pair<std::int64_t, std::int64_t> bounds(std::uint32_t index) const
    {
        const auto& path = tree.paths_[index];
        std::int64_t lower = 0;
        std::int64_t upper = diameter;
        const std::size_t depth = path.size();
        const std::size_t first = depth > tree.options_.cascade_depth
                                      ? depth - tree.options_.cascade_depth
                                      : 0;
        for (std::size_t j = depth; j-- > first;) {
            const std::int64_t dq = query_path[j];
            const std::int64_t dx = path[j];
            lower = std::max(lower, dq > dx ? dq - dx : dx - dq);
            upper = std::min(upper, dq + dx);
        }
        return {lower, upper};
    }

    Verdict child_verdict(std::int64_t lo, std::int64_t hi, std::int32_t shell_min,
                          std::int32_t shell_max) const
    {
        const std::int64_t lower = std::max<std::int64_t>({0, lo - shell_max, shell_min - hi});
        const std::int64_t upper = std::min<std::int64_t>(diameter, hi + shell_max);
        const Verdict v = classify(lower, upper, range);
        return (!cascade && v == Verdict::included) ? Verdict::undecided : v;
    }

    void report(std::uint32_t index) { result.ids.push_back(tree.records_[index].id); }

    void report_subtree(std::int32_t node)
    {
        for (std::uint32_t index : tree.subtree_records(node))
            if (tree.records_[index].active) report(index);
    }

    void visit_leaf(const TreeNode& n)
    {
        for (std::uint32_t index : n.bucket) {
            if (!tree.records_[index].active) continue;
            Verdict v = Verdict::undecided;
            if (cascade) {
                const auto [lo, hi] = bounds(index);
                v = classify(lo, hi, range);
            }
            if (v == Verdict::undecided) {
                const std::int64_t d = measure(index);
                v = classify(d, d, range);
            }
            if (v == Verdict::included) report(index);
        }
    }

    void run(std::int32_t root)
    {
        std::vector<std::int32_t> stack{root};
        while (!stack.empty()) {
            const TreeNode& n = tree.nodes_[stack.back()];
            stack.pop_back();
            if (n.leaf) {
                visit_leaf(n);
                continue;
            }

            const bool vantage_active = tree.records_[n.vantage].active;
            std::int64_t lo = 0;
            std::int64_t hi = diameter;
            if (cascade) std::tie(lo, hi) = bounds(n.vantage);

            const auto decide = [&](Verdict& vantage, Verdict& inner, Verdict& outer) {
                vantage = !vantage_active ? Verdict::excluded
                          : (cascade || lo == hi) ? classify(lo, hi, range)
                                                  : Verdict::undecided;
                inner = n.inner < 0 ? Verdict::excluded
                                    : child_verdict(lo, hi, n.r_min, n.r_inner);
                outer = n.outer < 0 ? Verdict::excluded
                                    : child_verdict(lo, hi, n.r_outer, n.r_max);
            };

            Verdict vantage, inner, outer;
            if (cascade) {
                decide(vantage, inner, outer);
            } else {
                vantage = inner = outer = Verdict::undecided;
            }
            if (vantage == Verdict::undecided || inner == Verdict::undecided
                || outer == Verdict::undecided) {
                const std::int64_t d = measure(n.vantage);
                lo = hi = d;
                query_path[n.depth] = d;
                decide(vantage, inner, outer);
            }

            if (vantage == Verdict::included) report(n.vantage);
            if (inner == Verdict::included) report_subtree(n.inner);
            if (outer == Verdict::included) report_subtree(n.outer);
            if (outer == Verdict::undecided) stack.push_back(n.outer);
            if (inner == Verdict::undecided) stack.push_back(n.inner);
        }
    }
};

QueryResult MetricTree::ball_query(const RankList& q, double r, QueryOptions options) const
{
    require_radius(r);
    if (list_length_ == 0) return {};
    require_length(list_length_, q.size());
    return range_query(q, {0, radius_to_raw(r, list_length_)}, options);
}

QueryResult MetricTree::ring_query(const RankList& q, double r_lo, double r_hi,
                                   QueryOptions options) const
{
    require_radius(r_lo);
    require_radius(r_hi);
    if (r_lo > r_hi)
        throw Error(Errc::invalid_radius, "ring lower radius exceeds upper radius");
    if (list_length_ == 0) return {};
    require_length(list_length_, q.size());
    return range_query(q,
                       {radius_to_raw_lower(r_lo, list_length_), radius_to_raw(r_hi, list_length_)},
                       options);
}

QueryResult MetricTree::range_query(const RankList& q, RawRange range, QueryOptions options) const
{
    if (list_length_ == 0) return {};
    require_length(list_length_, q.size());
    const auto start = std::chrono::steady_clock::now();
    Walker walker{*this, q, range, options.cascade, max_pairs(list_length_),
                  std::vector<std::int64_t>(max_depth_ + 1, 0), {}};
    if (root_ >= 0 && range.lo <= range.hi && range.lo <= max_pairs(list_length_))
        walker.run(root_);

    QueryResult result = std::move(walker.result);
    result.stats.n_found = result.ids.size();
    result.stats.elapsed = std::chrono::steady_clock::now() - start;
    return result;
}

} // namespace rankmatch
