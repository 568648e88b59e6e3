#include "rankmatch/bench.hpp"

#include "rankmatch/error.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <fstream>
#include <istream>
#include <mutex>
#include <numeric>
#include <ostream>
#include <sstream>
#include <thread>

namespace rankmatch::bench {

namespace {

std::string trim(std::string_view s)
{
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string_view::npos) return {};
    const auto last = s.find_last_not_of(" \t\r");
    return std::string(s.substr(first, last - first + 1));
}

std::vector<std::string> split(std::string_view s, char sep)
{
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const auto pos = s.find(sep, start);
        out.push_back(trim(s.substr(start, pos == std::string_view::npos ? pos : pos - start)));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

template <typename T>
T parse_number(std::string_view text, std::string_view what)
{
    T value{};
    const auto* last = text.data() + text.size();
    auto [ptr, ec] = std::from_chars(text.data(), last, value);
    if (ec != std::errc{} || ptr != last || text.empty())
        throw Error(Errc::parse_error,
                    "bad " + std::string(what) + " value '" + std::string(text) + "'");
    return value;
}

template <typename T>
std::vector<T> parse_list(std::string_view text, std::string_view what)
{
    std::vector<T> out;
    for (const auto& field : split(text, ',')) out.push_back(parse_number<T>(field, what));
    return out;
}

struct CellOutput {
    std::vector<CellResult> rows;
    BuildResult build;
};

CellOutput run_cell(const GridConfig& config, std::size_t len, std::size_t n)
{
    auto population = generate_population(n, len, derive_seed(config.seed, "population", len, n));
    const auto queries =
        pick_queries(population, config.queries_per_cell, derive_seed(config.seed, "queries", len, n));

    TreeOptions options = config.tree;
    options.seed = derive_seed(config.seed, "tree", len, n);

    CellOutput out;
    const auto start = std::chrono::steady_clock::now();
    const MetricTree tree = MetricTree::build(std::move(population), options);
    out.build = {len, n, tree.build_distance_calls(), std::chrono::steady_clock::now() - start};

    out.rows.reserve(config.rs.size() * queries.size());
    for (double r : config.rs) {
        for (std::size_t qi = 0; qi < queries.size(); ++qi) {
            const auto result = tree.ball_query(queries[qi].list, r);
            CellResult row;
            row.len = len;
            row.n = n;
            row.r = r;
            row.query_index = qi;
            row.n_found = result.stats.n_found;
            row.dist_calls = result.stats.dist_calls;
            row.relative_calls = static_cast<double>(row.dist_calls) / static_cast<double>(n);
            row.elapsed = result.stats.elapsed;
            out.rows.push_back(row);
        }
    }
    return out;
}

} // namespace

std::vector<double> standard_radii()
{
    std::vector<double> rs{0.0};
    for (int k = 5; k <= 17; ++k) rs.push_back(k / 100.0);
    return rs;
}

GridConfig GridConfig::desk()
{
    GridConfig c;
    c.lens = {10, 15, 20, 30};
    c.ns = {5000, 10000, 30000, 100000};
    c.rs = standard_radii();
    return c;
}

GridConfig GridConfig::full_grid()
{
    GridConfig c;
    c.lens = {10, 15, 20, 30};
    c.ns = {5000, 10000, 30000, 60000, 100000, 200000, 400000, 1200000, 1900000, 2500000};
    c.rs = standard_radii();
    return c;
}

void GridConfig::validate() const
{
    const auto fail = [](const std::string& msg) { throw Error(Errc::invalid_argument, msg); };
    if (lens.empty() || ns.empty() || rs.empty()) fail("grid needs at least one len, N and r");
    for (auto len : lens)
        if (len < 2) fail("list length must be >= 2, got " + std::to_string(len));
    for (auto n : ns)
        if (n < 1) fail("population size must be >= 1");
    for (double r : rs)
        if (!(r >= 0.0 && r <= 1.0)) fail("radius must lie in [0, 1], got " + format_double(r));
    if (queries_per_cell < 1) fail("queries per cell must be >= 1");
    for (auto n : ns)
        if (queries_per_cell > n)
            fail("queries per cell (" + std::to_string(queries_per_cell)
                 + ") exceeds population " + std::to_string(n));
    if (tree.bucket_size < 1) fail("bucket size must be >= 1");
    if (jobs < 1) fail("jobs must be >= 1");
}

std::vector<UserRecord> generate_population(std::size_t n, std::size_t len, std::uint64_t seed)
{
    if (n < 1) throw Error(Errc::invalid_argument, "population size must be >= 1");
    if (len < 2) throw Error(Errc::invalid_length, "list length must be >= 2");
    Rng rng(seed);
    std::vector<Item> base(len);
    std::iota(base.begin(), base.end(), Item{0});

    std::vector<UserRecord> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<Item> items = base;
        shuffle(std::span<Item>(items), rng);
        out.push_back({static_cast<UserId>(i), RankList(std::move(items)), true});
    }
    return out;
}

std::vector<UserRecord> pick_queries(std::span<const UserRecord> population, std::size_t k,
                                     std::uint64_t seed)
{
    if (k > population.size())
        throw Error(Errc::invalid_argument, "cannot pick " + std::to_string(k) + " queries from "
                                                + std::to_string(population.size()) + " records");
    Rng rng(seed);
    std::vector<std::size_t> index(population.size());
    std::iota(index.begin(), index.end(), std::size_t{0});
    std::vector<UserRecord> out;
    out.reserve(k);
    for (std::size_t i = 0; i < k; ++i) {
        const auto j = i + static_cast<std::size_t>(uniform_below(rng, index.size() - i));
        std::swap(index[i], index[j]);
        out.push_back(population[index[i]]);
    }
    return out;
}

GridResults run_grid(const GridConfig& config, const Progress& progress)
{
    config.validate();

    std::vector<std::pair<std::size_t, std::size_t>> cells;
    for (auto len : config.lens)
        for (auto n : config.ns) cells.emplace_back(len, n);

    std::vector<CellOutput> outputs(cells.size());
    std::vector<std::pair<Errc, std::string>> failures(cells.size());
    std::atomic<std::size_t> next{0};
    std::mutex progress_mutex;

    const auto worker = [&] {
        for (std::size_t i; (i = next.fetch_add(1)) < cells.size();) {
            const auto [len, n] = cells[i];
            try {
                outputs[i] = run_cell(config, len, n);
            } catch (const std::exception& e) {
                const auto* err = dynamic_cast<const Error*>(&e);
                failures[i] = {err ? err->code() : Errc::invalid_argument,
                               "cell len=" + std::to_string(len) + " N=" + std::to_string(n)
                                   + " failed: " + e.what()};
                next = cells.size();
                continue;
            }
            if (progress) {
                std::lock_guard lock(progress_mutex);
                progress(outputs[i].build);
            }
        }
    };

    const std::size_t threads = std::min(config.jobs, cells.size());
    if (threads <= 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    }

    for (const auto& [code, message] : failures)
        if (!message.empty()) throw Error(code, message);

    GridResults results;
    for (auto& out : outputs) {
        results.builds.push_back(out.build);
        results.cells.insert(results.cells.end(), out.rows.begin(), out.rows.end());
    }
    return results;
}

std::string format_double(double value)
{
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, value);
    return std::string(buf, ptr);
}

void emit_csv(std::span<const CellResult> results, std::ostream& out)
{
    out << csv_header << '\n';
    for (const auto& row : results) {
        out << row.len << ',' << row.n << ',' << format_double(row.r) << ',' << row.query_index
            << ',' << row.n_found << ',' << row.dist_calls << ','
            << format_double(row.relative_calls) << ',' << row.elapsed.count() << '\n';
    }
}

void emit_csv(std::span<const CellResult> results, const std::filesystem::path& path)
{
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(Errc::io_error, "cannot write " + path.string());
    emit_csv(results, out);
    out.flush();
    if (!out) throw Error(Errc::io_error, "write failed for " + path.string());
}

void emit_build_csv(std::span<const BuildResult> builds, std::ostream& out)
{
    out << "len,N,build_dist_calls,build_ns\n";
    for (const auto& b : builds)
        out << b.len << ',' << b.n << ',' << b.dist_calls << ',' << b.elapsed.count() << '\n';
}

std::vector<CellResult> read_csv(std::istream& in)
{
    std::string line;
    if (!std::getline(in, line) || trim(line) != csv_header)
        throw Error(Errc::parse_error, "missing or unexpected CSV header");
    std::vector<CellResult> out;
    while (std::getline(in, line)) {
        if (trim(line).empty()) continue;
        const auto f = split(line, ',');
        if (f.size() != 8)
            throw Error(Errc::parse_error, "expected 8 fields, got " + std::to_string(f.size()));
        CellResult row;
        row.len = parse_number<std::size_t>(f[0], "len");
        row.n = parse_number<std::size_t>(f[1], "N");
        row.r = parse_number<double>(f[2], "r");
        row.query_index = parse_number<std::size_t>(f[3], "query_index");
        row.n_found = parse_number<std::size_t>(f[4], "n_found");
        row.dist_calls = parse_number<std::size_t>(f[5], "dist_calls");
        row.relative_calls = parse_number<double>(f[6], "relative_calls");
        row.elapsed = std::chrono::nanoseconds(parse_number<std::int64_t>(f[7], "elapsed_ns"));
        out.push_back(row);
    }
    return out;
}

void parse_grid_config(std::istream& in, GridConfig& config)
{
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        if (trim(line).empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw Error(Errc::parse_error, "line " + std::to_string(line_no) + ": expected key=value");
        const std::string key = trim(std::string_view(line).substr(0, eq));
        const std::string value = trim(std::string_view(line).substr(eq + 1));
        if (key == "lens") config.lens = parse_list<std::size_t>(value, key);
        else if (key == "ns") config.ns = parse_list<std::size_t>(value, key);
        else if (key == "rs") config.rs = parse_list<double>(value, key);
        else if (key == "queries") config.queries_per_cell = parse_number<std::size_t>(value, key);
        else if (key == "seed") config.seed = parse_number<std::uint64_t>(value, key);
        else if (key == "bucket") config.tree.bucket_size = parse_number<std::size_t>(value, key);
        else if (key == "cascade_depth") config.tree.cascade_depth = parse_number<std::size_t>(value, key);
        else if (key == "jobs") config.jobs = parse_number<std::size_t>(value, key);
        else
            throw Error(Errc::parse_error,
                        "line " + std::to_string(line_no) + ": unknown key '" + key + "'");
    }
}

void write_population(std::span<const UserRecord> records, std::ostream& out)
{
    for (const auto& rec : records) out << format_rank_list(rec.list, ' ') << '\n';
}

std::vector<UserRecord> read_population(std::istream& in)
{
    std::vector<UserRecord> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        RankList list;
        try {
            list = parse_rank_list(line, ' ');
        } catch (const Error& e) {
            throw Error(e.code(), "line " + std::to_string(line_no) + ": " + e.what());
        }
        if (!out.empty() && list.size() != out.front().list.size())
            throw Error(Errc::length_mismatch,
                        "line " + std::to_string(line_no) + " has length "
                            + std::to_string(list.size()) + ", expected "
                            + std::to_string(out.front().list.size()));
        out.push_back({static_cast<UserId>(out.size()), std::move(list), true});
    }
    return out;
}

} // namespace rankmatch::bench
