#include "rankmatch/match_service.hpp"

#include "rankmatch/bench.hpp"
#include "rankmatch/error.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fcntl.h>
#include <fstream>
#include <mutex>
#include <sstream>
#include <unistd.h>
#include <unordered_set>

namespace rankmatch {

namespace {

constexpr std::string_view snapshot_magic = "rankmatch-snapshot\t1";

std::vector<std::string_view> split_tabs(std::string_view line)
{
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const auto pos = line.find('\t', start);
        out.push_back(line.substr(start, pos == std::string_view::npos ? pos : pos - start));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

template <typename T>
bool parse_value(std::string_view text, T& value)
{
    const auto* last = text.data() + text.size();
    auto [ptr, ec] = std::from_chars(text.data(), last, value);
    return !text.empty() && ec == std::errc{} && ptr == last;
}

UserId parse_user(std::string_view text)
{
    UserId id = 0;
    if (!parse_value(text, id))
        throw Error(Errc::parse_error, "bad user id '" + std::string(text) + "'");
    return id;
}

double parse_radius(std::string_view text)
{
    double r = 0.0;
    if (!parse_value(text, r))
        throw Error(Errc::parse_error, "bad radius '" + std::string(text) + "'");
    return r;
}

void write_durably(const std::filesystem::path& path, const std::string& contents)
{
    const auto tmp = path.string() + ".tmp";
    const int fd = ::open(tmp.c_str(), O_WRONLY | O_CREAT | O_TRUNC | O_CLOEXEC, 0644);
    if (fd < 0) throw Error(Errc::io_error, "cannot write " + tmp);
    std::size_t written = 0;
    while (written < contents.size()) {
        const auto n = ::write(fd, contents.data() + written, contents.size() - written);
        if (n < 0) {
            ::close(fd);
            throw Error(Errc::io_error, "write failed for " + tmp);
        }
        written += static_cast<std::size_t>(n);
    }
    const bool synced = ::fsync(fd) == 0;
    ::close(fd);
    if (!synced) throw Error(Errc::io_error, "fsync failed for " + tmp);
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw Error(Errc::io_error, "cannot replace " + path.string() + ": " + ec.message());
}

std::string trim(std::string_view s)
{
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string_view::npos) return {};
    const auto last = s.find_last_not_of(" \t\r");
    return std::string(s.substr(first, last - first + 1));
}

} // namespace

void parse_service_config(std::istream& in, ServiceConfig& config)
{
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        if (trim(line).empty()) continue;
        const auto eq = line.find('=');
        const auto where = "line " + std::to_string(line_no) + ": ";
        if (eq == std::string::npos) throw Error(Errc::parse_error, where + "expected key=value");
        const std::string key = trim(std::string_view(line).substr(0, eq));
        const std::string value = trim(std::string_view(line).substr(eq + 1));
        const auto bad = [&] { return Error(Errc::parse_error, where + "bad value for " + key); };
        if (key == "listen") {
            config.listen = value;
        } else if (key == "vocab") {
            config.vocabulary_path = value;
        } else if (key == "snapshot") {
            config.options.snapshot_path = value;
        } else if (key == "threshold") {
            if (!parse_value(value, config.options.cleanup_threshold)) throw bad();
        } else if (key == "seed") {
            if (!parse_value(value, config.options.seed)) throw bad();
        } else if (key == "bucket") {
            if (!parse_value(value, config.options.bucket_size)) throw bad();
        } else if (key == "cascade_depth") {
            if (!parse_value(value, config.options.cascade_depth)) throw bad();
        } else {
            throw Error(Errc::parse_error, where + "unknown key '" + key + "'");
        }
    }
}

Vocabulary::Vocabulary(std::vector<std::string> names) : names_(std::move(names))
{
    if (names_.size() < 2) throw Error(Errc::invalid_argument, "vocabulary needs at least 2 items");
    if (names_.size() > 0xFFFF) throw Error(Errc::invalid_argument, "vocabulary too large");
    std::unordered_set<std::string_view> seen;
    for (const auto& name : names_) {
        if (name.empty()) throw Error(Errc::invalid_argument, "empty item name");
        if (std::any_of(name.begin(), name.end(),
                        [](unsigned char c) { return std::isspace(c) != 0; }))
            throw Error(Errc::invalid_argument, "item name '" + name + "' contains whitespace");
        if (!seen.insert(name).second)
            throw Error(Errc::invalid_argument, "duplicate item name '" + name + "'");
    }
}

Vocabulary Vocabulary::parse(std::istream& in)
{
    std::vector<std::string> names;
    std::string line;
    while (std::getline(in, line)) {
        while (!line.empty() && std::isspace(static_cast<unsigned char>(line.back())))
            line.pop_back();
        if (!line.empty()) names.push_back(line);
    }
    return Vocabulary(std::move(names));
}

Vocabulary Vocabulary::load(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) throw Error(Errc::io_error, "cannot read vocabulary " + path.string());
    return parse(in);
}

RankList Vocabulary::to_rank_list(std::span<const std::string> ranked) const
{
    if (ranked.size() != names_.size())
        throw Error(Errc::not_permutation,
                    "expected " + std::to_string(names_.size()) + " items, got "
                        + std::to_string(ranked.size()));
    std::vector<Item> items;
    items.reserve(ranked.size());
    for (const auto& name : ranked) {
        const auto it = std::find(names_.begin(), names_.end(), name);
        if (it == names_.end()) throw Error(Errc::not_permutation, "unknown item '" + name + "'");
        items.push_back(static_cast<Item>(it - names_.begin()));
    }
    // RankList rejects the repeated names.
    return RankList(std::move(items));
}

std::vector<std::string> Vocabulary::to_names(const RankList& list) const
{
    std::vector<std::string> out;
    out.reserve(list.size());
    for (Item item : list) out.push_back(names_.at(item));
    return out;
}

MatchService::MatchService(Vocabulary vocabulary, ServiceOptions options)
    : vocabulary_(std::move(vocabulary)), options_(std::move(options))
{
    if (!(options_.cleanup_threshold >= 0.0 && options_.cleanup_threshold <= 1.0))
        throw Error(Errc::invalid_argument, "cleanup threshold must lie in [0, 1]");
    tree_ = MetricTree(vocabulary_.size(), tree_options());
}

MatchService::MatchService(Vocabulary vocabulary, ServiceOptions options, MetricTree tree)
    : vocabulary_(std::move(vocabulary)), options_(std::move(options)), tree_(std::move(tree))
{
}

TreeOptions MatchService::tree_options() const
{
    return {options_.bucket_size, options_.cascade_depth, options_.seed};
}

void MatchService::insert_locked(UserId id, RankList list)
{
    tree_.insert({id, std::move(list), true});
}

void MatchService::register_user(UserId id, std::span<const std::string> ranked)
{
    register_user(id, vocabulary_.to_rank_list(ranked));
}

void MatchService::register_user(UserId id, const RankList& list)
{
    std::unique_lock lock(mutex_);
    if (list.size() != vocabulary_.size())
        throw Error(Errc::length_mismatch, "rank list length differs from the vocabulary");
    insert_locked(id, list);
    persist_locked();
}

void MatchService::update(UserId id, std::span<const std::string> ranked)
{
    update(id, vocabulary_.to_rank_list(ranked));
}

void MatchService::update(UserId id, const RankList& list)
{
    std::unique_lock lock(mutex_);
    if (list.size() != vocabulary_.size())
        throw Error(Errc::length_mismatch, "rank list length differs from the vocabulary");
    if (!tree_.is_active(id)) throw Error(Errc::unknown_user, "no active user " + std::to_string(id));
    tree_.deactivate(id);
    insert_locked(id, list);
    const double fraction = static_cast<double>(tree_.inactive_count())
                            / static_cast<double>(tree_.size());
    if (fraction > options_.cleanup_threshold) tree_.cleanup();
    persist_locked();
}

void MatchService::cleanup()
{
    std::unique_lock lock(mutex_);
    tree_.cleanup();
    persist_locked();
}

std::vector<Match> MatchService::query_locked(UserId id, RawRange range) const
{
    const UserRecord& self = tree_.record_for(id);
    std::vector<Match> out;
    if (range.lo > range.hi) return out;
    const auto result = tree_.range_query(self.list, range);

    out.reserve(result.ids.size());
    for (UserId other : result.ids) {
        if (other == id) continue;
        const UserRecord& rec = tree_.record_for(other);
        const auto raw = kt_distance(self.list, rec.list).discordant;
        out.push_back({other, raw, normalize({raw}, self.list.size())});
    }
    std::sort(out.begin(), out.end(), [](const Match& a, const Match& b) {
        return a.raw != b.raw ? a.raw < b.raw : a.id < b.id;
    });
    return out;
}

std::vector<Match> MatchService::match(UserId id, double r) const
{
    std::shared_lock lock(mutex_);
    return query_locked(id, {0, radius_to_raw(r, vocabulary_.size())});
}

std::vector<Match> MatchService::match_ring(UserId id, double r_lo, double r_hi,
                                            LowerBound lower) const
{
    if (!(r_lo <= r_hi))
        throw Error(Errc::invalid_radius, "ring lower radius exceeds upper radius");
    const std::size_t n = vocabulary_.size();
    const std::uint32_t hi = radius_to_raw(r_hi, n);
    const std::uint32_t lo = lower == LowerBound::inclusive ? radius_to_raw_lower(r_lo, n)
                                                            : radius_to_raw(r_lo, n) + 1;
    std::shared_lock lock(mutex_);
    return query_locked(id, {lo, hi});
}

std::size_t MatchService::stored_count() const
{
    std::shared_lock lock(mutex_);
    return tree_.size();
}

std::size_t MatchService::active_count() const
{
    std::shared_lock lock(mutex_);
    return tree_.active_count();
}

double MatchService::inactive_fraction() const
{
    std::shared_lock lock(mutex_);
    return tree_.size() ? static_cast<double>(tree_.inactive_count())
                              / static_cast<double>(tree_.size())
                        : 0.0;
}

void MatchService::write_snapshot_locked(std::ostream& out) const
{
    out << snapshot_magic << '\n';
    out << "vocabulary\t" << vocabulary_.size() << '\n';
    for (const auto& name : vocabulary_.names()) out << name << '\n';
    out << "records\t" << tree_.size() << '\n';
    for (const auto& rec : tree_.records())
        out << rec.id << '\t' << (rec.active ? 1 : 0) << '\t' << format_rank_list(rec.list, ' ')
            << '\n';
}

void MatchService::write_snapshot(std::ostream& out) const
{
    std::shared_lock lock(mutex_);
    write_snapshot_locked(out);
}

void MatchService::snapshot(const std::filesystem::path& path) const
{
    std::ostringstream buf;
    {
        std::shared_lock lock(mutex_);
        write_snapshot_locked(buf);
    }
    write_durably(path, buf.str());
}

void MatchService::persist_locked() const
{
    if (!options_.snapshot_path) return;
    std::ostringstream buf;
    write_snapshot_locked(buf);
    write_durably(*options_.snapshot_path, buf.str());
}

std::unique_ptr<MatchService> MatchService::restore(std::istream& in, ServiceOptions options)
{
    const auto corrupt = [](const std::string& why) {
        return Error(Errc::corrupt_snapshot, "corrupt snapshot: " + why);
    };
    std::string line;
    if (!std::getline(in, line) || line != snapshot_magic) throw corrupt("bad header");

    const auto read_count = [&](std::string_view label) {
        if (!std::getline(in, line)) throw corrupt("missing " + std::string(label) + " block");
        const auto fields = split_tabs(line);
        std::size_t count = 0;
        if (fields.size() != 2 || fields[0] != label || !parse_value(fields[1], count))
            throw corrupt("bad " + std::string(label) + " line '" + line + "'");
        return count;
    };

    const std::size_t vocab_size = read_count("vocabulary");
    std::vector<std::string> names;
    for (std::size_t i = 0; i < vocab_size; ++i) {
        if (!std::getline(in, line)) throw corrupt("truncated vocabulary");
        names.push_back(line);
    }
    Vocabulary vocabulary;
    try {
        vocabulary = Vocabulary(std::move(names));
    } catch (const Error& e) {
        throw corrupt(e.what());
    }

    const std::size_t record_count = read_count("records");
    std::vector<UserRecord> records;
    records.reserve(record_count);
    for (std::size_t i = 0; i < record_count; ++i) {
        if (!std::getline(in, line)) throw corrupt("truncated records");
        const auto fields = split_tabs(line);
        UserRecord rec;
        if (fields.size() != 3 || !parse_value(fields[0], rec.id)
            || (fields[1] != "0" && fields[1] != "1"))
            throw corrupt("bad record line " + std::to_string(i + 1));
        rec.active = fields[1] == "1";
        try {
            rec.list = parse_rank_list(fields[2], ' ');
        } catch (const Error& e) {
            throw corrupt("record line " + std::to_string(i + 1) + ": " + e.what());
        }
        if (rec.list.size() != vocabulary.size())
            throw corrupt("record line " + std::to_string(i + 1) + " has the wrong length");
        records.push_back(std::move(rec));
    }
    if (std::getline(in, line) && !line.empty()) throw corrupt("trailing data");

    const TreeOptions tree_options{options.bucket_size, options.cascade_depth, options.seed};
    MetricTree tree(vocabulary.size(), tree_options);
    if (!records.empty()) {
        try {
            tree = MetricTree::build(std::move(records), tree_options);
        } catch (const Error& e) {
            throw corrupt(e.what());
        }
    }
    return std::unique_ptr<MatchService>(
        new MatchService(std::move(vocabulary), std::move(options), std::move(tree)));
}

std::unique_ptr<MatchService> MatchService::restore(const std::filesystem::path& path,
                                                    ServiceOptions options)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(Errc::io_error, "cannot read snapshot " + path.string());
    return restore(in, std::move(options));
}

std::string MatchService::handle(std::string_view request)
{
    if (!request.empty() && request.back() == '\r') request.remove_suffix(1);
    const auto fields = split_tabs(request);
    const std::string_view verb = fields[0];

    const auto format_matches = [](const std::vector<Match>& matches) {
        std::string out = "OK\t" + std::to_string(matches.size());
        for (const auto& m : matches)
            out += '\t' + std::to_string(m.id) + ':' + bench::format_double(m.distance);
        return out;
    };
    const auto bad_request = [](const std::string& why) {
        return Error(Errc::invalid_argument, why);
    };

    try {
        if (verb == "REGISTER" || verb == "UPDATE") {
            if (fields.size() < 2) throw bad_request("missing user id");
            const UserId id = parse_user(fields[1]);
            std::vector<std::string> ranked(fields.begin() + 2, fields.end());
            if (verb == "REGISTER") register_user(id, ranked);
            else update(id, ranked);
            return "OK";
        }
        if (verb == "MATCH") {
            if (fields.size() != 3) throw bad_request("usage: MATCH <id> <r>");
            return format_matches(match(parse_user(fields[1]), parse_radius(fields[2])));
        }
        if (verb == "RING") {
            if (fields.size() != 4 && !(fields.size() == 5 && fields[4] == "excl"))
                throw bad_request("usage: RING <id> <r_lo> <r_hi> [excl]");
            const auto lower = fields.size() == 5 ? LowerBound::exclusive : LowerBound::inclusive;
            return format_matches(match_ring(parse_user(fields[1]), parse_radius(fields[2]),
                                             parse_radius(fields[3]), lower));
        }
        if (verb == "SNAPSHOT") {
            if (fields.size() > 2) throw bad_request("usage: SNAPSHOT [path]");
            if (fields.size() == 2) {
                snapshot(std::filesystem::path(std::string(fields[1])));
            } else {
                if (!options_.snapshot_path) throw bad_request("no snapshot path configured");
                snapshot(*options_.snapshot_path);
            }
            return "OK";
        }
        if (verb == "STATS") {
            std::shared_lock lock(mutex_);
            return "OK\tstored=" + std::to_string(tree_.size()) + "\tactive="
                   + std::to_string(tree_.active_count()) + "\tinactive="
                   + std::to_string(tree_.inactive_count());
        }
        throw bad_request("unknown verb '" + std::string(verb) + "'");
    } catch (const Error& e) {
        return "ERR\t" + std::string(to_string(e.code())) + '\t' + e.what();
    }
}

} // namespace rankmatch
