#pragma once

#include "rankmatch/metric_tree.hpp"

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace rankmatch::bench {

/// {0.0} followed by 0.05 .. 0.17 in steps of 0.01.
std::vector<double> standard_radii();

struct GridConfig {
    std::vector<std::size_t> lens;
    std::vector<std::size_t> ns;
    std::vector<double> rs;
    std::size_t queries_per_cell = 5;
    std::uint64_t seed = 0;
    /// Per-cell tree seeds are derived from `seed`; tree.seed is ignored.
    TreeOptions tree{};
    /// Cells run on this many threads. Keep at 1 when timings matter.
    std::size_t jobs = 1;

    /// lens {10,15,20,30}, Ns up to 1e5, all standard radii.
    static GridConfig desk();
    /// The complete large-scale grid, Ns up to 2.5e6.
    static GridConfig full_grid();

    /// Throws Error{invalid_argument}.
    void validate() const;
};

struct CellResult {
    std::size_t len = 0;
    std::size_t n = 0;
    double r = 0.0;
    std::size_t query_index = 0;
    std::size_t n_found = 0;
    std::size_t dist_calls = 0;
    double relative_calls = 0.0;
    std::chrono::nanoseconds elapsed{0};
};

/// Tree construction cost for one (len, N) cell; query rows exclude it.
struct BuildResult {
    std::size_t len = 0;
    std::size_t n = 0;
    std::size_t dist_calls = 0;
    std::chrono::nanoseconds elapsed{0};
};

struct GridResults {
    std::vector<CellResult> cells;
    std::vector<BuildResult> builds;
};

/// `n` uniformly shuffled copies of 0..len-1, user ids 0..n-1.
std::vector<UserRecord> generate_population(std::size_t n, std::size_t len, std::uint64_t seed);

/// `k` distinct members, drawn by a partial shuffle of the indices.
std::vector<UserRecord> pick_queries(std::span<const UserRecord> population, std::size_t k,
                                     std::uint64_t seed);

/// Called after each (len, N) cell finishes, from the worker thread.
using Progress = std::function<void(const BuildResult&)>;

/// Rows ordered by len, N, r, query index, each in config order.
GridResults run_grid(const GridConfig& config, const Progress& progress = {});

inline constexpr std::string_view csv_header =
    "len,N,r,query_index,n_found,dist_calls,relative_calls,elapsed_ns";

void emit_csv(std::span<const CellResult> results, std::ostream& out);
/// Throws Error{io_error} when the file cannot be written.
void emit_csv(std::span<const CellResult> results, const std::filesystem::path& path);
/// `len,N,build_dist_calls,build_ns`.
void emit_build_csv(std::span<const BuildResult> builds, std::ostream& out);

/// Parses what emit_csv writes. Throws Error{parse_error}.
std::vector<CellResult> read_csv(std::istream& in);

/// key=value lines; '#' starts a comment. Keys: lens, ns, rs (comma
/// separated), queries, seed, bucket, cascade_depth, jobs. Keys not present
/// keep the values already in `config`.
void parse_grid_config(std::istream& in, GridConfig& config);

/// One permutation per line, space separated.
void write_population(std::span<const UserRecord> records, std::ostream& out);
/// Ids count non-blank lines from 0. Throws Error{parse_error},
/// Error{length_mismatch} and the RankList errors.
std::vector<UserRecord> read_population(std::istream& in);

std::string format_double(double value);

} // namespace rankmatch::bench
