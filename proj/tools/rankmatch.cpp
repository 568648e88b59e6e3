// rankmatch: dataset generation, range queries, the scaling benchmark and
// the match service behind one command.
//
// Exit status: 0 success, 2 usage error, 3 data or I/O error.

#include "rankmatch/bench.hpp"
#include "rankmatch/error.hpp"
#include "rankmatch/line_server.hpp"
#include "rankmatch/match_service.hpp"
#include "rankmatch/metric_tree.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <csignal>
#include <fstream>
#include <iostream>
#include <sstream>

namespace {

using namespace rankmatch;

constexpr int exit_usage = 2;
constexpr int exit_data = 3;

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::vector<UserRecord> load_dataset(const std::string& path)
{
    std::ifstream in(path);
    if (!in) throw Error(Errc::io_error, "cannot read " + path);
    auto records = bench::read_population(in);
    if (records.empty()) throw Error(Errc::empty_collection, path + " holds no rank lists");
    return records;
}

RankList parse_query(const std::string& text)
{
    try {
        return parse_rank_list(text, ',');
    } catch (const Error& e) {
        throw UsageError(std::string("--q: ") + e.what());
    }
}

template <typename T>
std::vector<T> parse_csv_flag(const std::string& text, const char* key)
{
    bench::GridConfig scratch;
    std::istringstream in(std::string(key) + "=" + text);
    try {
        bench::parse_grid_config(in, scratch);
    } catch (const Error& e) {
        throw UsageError(std::string("--") + key + ": " + e.what());
    }
    if constexpr (std::is_same_v<T, double>) return scratch.rs;
    else return std::string_view(key) == "lens" ? scratch.lens : scratch.ns;
}

void print_result(QueryResult result)
{
    std::sort(result.ids.begin(), result.ids.end());
    for (UserId id : result.ids) std::cout << id << '\n';
    std::cout << "n_found=" << result.stats.n_found << " dist_calls=" << result.stats.dist_calls
              << '\n';
}

struct TreeFlags {
    std::size_t bucket = 16;
    std::size_t cascade_depth = 8;
    std::uint64_t seed = 0;
    bool no_cascade = false;

    void attach(CLI::App* cmd)
    {
        cmd->add_option("--bucket", bucket, "Leaf bucket size")->check(CLI::PositiveNumber);
        cmd->add_option("--cascade-depth", cascade_depth, "Ancestor distances consulted per record");
        cmd->add_option("--seed", seed, "Tree construction seed");
        cmd->add_flag("--no-cascade", no_cascade, "Disable ancestor-distance pruning");
    }
    TreeOptions options() const { return {bucket, cascade_depth, seed}; }
};

int run_serve(const std::string& config_path, ServiceConfig config, const std::string& listen,
              const std::string& vocab, std::optional<double> threshold,
              std::optional<std::uint64_t> seed, const std::string& snapshot)
{
    if (!config_path.empty()) {
        std::ifstream in(config_path);
        if (!in) throw Error(Errc::io_error, "cannot read " + config_path);
        parse_service_config(in, config);
    }
    if (!listen.empty()) config.listen = listen;
    if (!vocab.empty()) config.vocabulary_path = vocab;
    if (threshold) config.options.cleanup_threshold = *threshold;
    if (seed) config.options.seed = *seed;
    if (!snapshot.empty()) config.options.snapshot_path = snapshot;

    const auto [host, port] = parse_listen_address(config.listen);

    std::unique_ptr<MatchService> service;
    if (config.options.snapshot_path && std::filesystem::exists(*config.options.snapshot_path)) {
        service = MatchService::restore(*config.options.snapshot_path, config.options);
        if (!config.vocabulary_path.empty()
            && Vocabulary::load(config.vocabulary_path).names() != service->vocabulary().names())
            throw Error(Errc::invalid_argument, "snapshot vocabulary differs from "
                                                    + config.vocabulary_path.string());
    } else {
        if (config.vocabulary_path.empty()) throw UsageError("serve needs --vocab or a snapshot");
        service = std::make_unique<MatchService>(Vocabulary::load(config.vocabulary_path),
                                                 config.options);
    }

    // Block the shutdown signals before any thread starts, then wait for one.
    sigset_t signals;
    sigemptyset(&signals);
    sigaddset(&signals, SIGINT);
    sigaddset(&signals, SIGTERM);
    pthread_sigmask(SIG_BLOCK, &signals, nullptr);

    LineServer server([&service](std::string_view line) { return service->handle(line); });
    server.listen(host, port);
    server.start();
    std::cout << "listening on " << host << ':' << server.port() << " ("
              << service->vocabulary().size() << " items, " << service->active_count()
              << " active users)" << std::endl;

    int sig = 0;
    sigwait(&signals, &sig);
    server.stop();
    std::cout << "stopped" << std::endl;
    return 0;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Kendall-Tau metric search over ranked preference lists"};
    app.require_subcommand(1);

    // gen
    auto* gen = app.add_subcommand("gen", "Write a population of shuffled permutations");
    std::size_t gen_n = 0, gen_len = 0;
    std::uint64_t gen_seed = 0;
    std::string gen_out;
    gen->add_option("--n", gen_n, "Number of lists")->required()->check(CLI::PositiveNumber);
    gen->add_option("--len", gen_len, "Items per list (>= 2)")
        ->required()
        ->check(CLI::Range(std::size_t{2}, std::size_t{65535}));
    gen->add_option("--seed", gen_seed, "Random seed");
    gen->add_option("--out", gen_out, "Output file (default: standard output)");

    // query / ring
    std::string data, q;
    double r = 0, r_lo = 0, r_hi = 0;
    TreeFlags query_flags, ring_flags;
    auto* query = app.add_subcommand("query", "Ball query: ids within normalized radius r");
    query->add_option("--data", data, "Population file")->required()->check(CLI::ExistingFile);
    query->add_option("--q", q, "Query permutation, comma separated")->required();
    query->add_option("--r", r, "Normalized radius")->required()->check(CLI::Range(0.0, 1.0));
    query_flags.attach(query);

    auto* ring = app.add_subcommand("ring", "Ring query: ids with r_lo <= distance <= r_hi");
    ring->add_option("--data", data, "Population file")->required()->check(CLI::ExistingFile);
    ring->add_option("--q", q, "Query permutation, comma separated")->required();
    ring->add_option("--r-lo", r_lo, "Inner normalized radius")->required()->check(CLI::Range(0.0, 1.0));
    ring->add_option("--r-hi", r_hi, "Outer normalized radius")->required()->check(CLI::Range(0.0, 1.0));
    ring_flags.attach(ring);

    // bench
    auto* bench_cmd = app.add_subcommand("bench", "Run the (len, N, r) scaling grid");
    std::string bench_config, lens_text, ns_text, rs_text, bench_out = "bench.csv", build_out;
    std::optional<std::size_t> bench_queries, bench_bucket, bench_depth, bench_jobs;
    std::optional<std::uint64_t> bench_seed;
    bool full_grid = false;
    bench_cmd->add_option("--config", bench_config, "key=value grid file")->check(CLI::ExistingFile);
    bench_cmd->add_option("--lens", lens_text, "List lengths, comma separated");
    bench_cmd->add_option("--ns", ns_text, "Population sizes, comma separated");
    bench_cmd->add_option("--rs", rs_text, "Normalized radii, comma separated");
    bench_cmd->add_option("--queries", bench_queries, "Queries per cell");
    bench_cmd->add_option("--seed", bench_seed, "Random seed");
    bench_cmd->add_option("--bucket", bench_bucket, "Leaf bucket size");
    bench_cmd->add_option("--cascade-depth", bench_depth, "Ancestor distances consulted per record");
    bench_cmd->add_option("--jobs", bench_jobs, "Cells run in parallel (1 for faithful timings)");
    bench_cmd->add_option("--out", bench_out, "CSV destination");
    bench_cmd->add_option("--build-out", build_out, "Build-cost CSV (default: <out>.build.csv)");
    bench_cmd->add_flag("--full-grid", full_grid, "Start from the complete large-scale grid");

    // serve
    auto* serve = app.add_subcommand("serve", "Run the match service");
    std::string serve_config, listen, vocab, snapshot;
    std::optional<double> threshold;
    std::optional<std::uint64_t> serve_seed;
    serve->add_option("--config", serve_config, "key=value service file")->check(CLI::ExistingFile);
    serve->add_option("--listen", listen, "host:port (port 0 picks one)");
    serve->add_option("--vocab", vocab, "Vocabulary file, one item per line");
    serve->add_option("--threshold", threshold, "Inactive fraction that triggers cleanup")
        ->check(CLI::Range(0.0, 1.0));
    serve->add_option("--seed", serve_seed, "Tree seed");
    serve->add_option("--snapshot", snapshot, "Snapshot file (restored when present)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return exit_usage;
    }

    try {
        if (gen->parsed()) {
            const auto records = bench::generate_population(gen_n, gen_len, gen_seed);
            if (gen_out.empty()) {
                bench::write_population(records, std::cout);
            } else {
                std::ofstream out(gen_out);
                if (!out) throw Error(Errc::io_error, "cannot write " + gen_out);
                bench::write_population(records, out);
                if (!out.flush()) throw Error(Errc::io_error, "write failed for " + gen_out);
            }
            return 0;
        }

        if (query->parsed() || ring->parsed()) {
            const bool is_ring = ring->parsed();
            if (is_ring && r_lo > r_hi) throw UsageError("--r-lo must not exceed --r-hi");
            const RankList ql = parse_query(q);
            const TreeFlags& flags = is_ring ? ring_flags : query_flags;
            const MetricTree tree = MetricTree::build(load_dataset(data), flags.options());
            const QueryOptions options{!flags.no_cascade};
            print_result(is_ring ? tree.ring_query(ql, r_lo, r_hi, options)
                                       : tree.ball_query(ql, r, options));
            return 0;
        }

        if (bench_cmd->parsed()) {
            auto config = full_grid ? bench::GridConfig::full_grid() : bench::GridConfig::desk();
            if (!bench_config.empty()) {
                std::ifstream in(bench_config);
                if (!in) throw Error(Errc::io_error, "cannot read " + bench_config);
                try {
                    bench::parse_grid_config(in, config);
                } catch (const Error& e) {
                    throw UsageError(bench_config + ": " + e.what());
                }
            }
            if (!lens_text.empty()) config.lens = parse_csv_flag<std::size_t>(lens_text, "lens");
            if (!ns_text.empty()) config.ns = parse_csv_flag<std::size_t>(ns_text, "ns");
            if (!rs_text.empty()) config.rs = parse_csv_flag<double>(rs_text, "rs");
            if (bench_queries) config.queries_per_cell = *bench_queries;
            if (bench_seed) config.seed = *bench_seed;
            if (bench_bucket) config.tree.bucket_size = *bench_bucket;
            if (bench_depth) config.tree.cascade_depth = *bench_depth;
            if (bench_jobs) config.jobs = *bench_jobs;
            try {
                config.validate();
            } catch (const Error& e) {
                throw UsageError(e.what());
            }

            const auto results = bench::run_grid(config, [](const bench::BuildResult& b) {
                std::cerr << "cell len=" << b.len << " N=" << b.n << " built ("
                          << b.dist_calls << " distance calls)\n";
            });
            bench::emit_csv(results.cells, std::filesystem::path(bench_out));
            if (build_out.empty()) {
                auto p = std::filesystem::path(bench_out);
                build_out = (p.parent_path() / p.stem()).string() + ".build.csv";
            }
            std::ofstream builds(build_out);
            if (!builds) throw Error(Errc::io_error, "cannot write " + build_out);
            bench::emit_build_csv(results.builds, builds);

            double max_relative = 0;
            for (const auto& row : results.cells)
                max_relative = std::max(max_relative, row.relative_calls);
            std::cout << "cells=" << results.builds.size() << " rows=" << results.cells.size()
                      << " max_relative_calls=" << bench::format_double(max_relative)
                      << " csv=" << bench_out << '\n';
            return 0;
        }

        if (serve->parsed())
            return run_serve(serve_config, ServiceConfig{}, listen, vocab, threshold, serve_seed,
                             snapshot);
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << '\n';
        return exit_usage;
    } catch (const Error& e) {
        std::cerr << "error (" << to_string(e.code()) << "): " << e.what() << '\n';
        return exit_data;
    }
    return 0;
}
