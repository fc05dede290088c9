#include "mmrec/corpus.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "mmrec/binio.hpp"

namespace mmrec {

namespace {

constexpr char kMagic[4] = {'M', 'M', 'F', '1'};
const char* kInteractionsHeader = "user_id\titem_id\ttimestamp";

std::vector<std::string> split_tabs(const std::string& line) {
    std::vector<std::string> out;
    size_t start = 0;
    while (true) {
        const size_t tab = line.find('\t', start);
        if (tab == std::string::npos) {
            out.push_back(line.substr(start));
            return out;
        }
        out.push_back(line.substr(start, tab - start));
        start = tab + 1;
    }
}

[[noreturn]] void parse_fail(const std::string& path, size_t lineno, const std::string& what) {
    throw Error(ErrorKind::parse, path + ":" + std::to_string(lineno) + ": " + what);
}

uint64_t parse_u64(const std::string& s, const std::string& path, size_t lineno) {
    uint64_t v = 0;
    if (s.empty()) parse_fail(path, lineno, "empty timestamp");
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v, 10);
    if (ec != std::errc() || ptr != s.data() + s.size())
        parse_fail(path, lineno, "timestamp is not an unsigned integer: '" + s + "'");
    return v;
}

void check_finite(const std::vector<double>& v, const std::string& id) {
    for (double x : v)
        if (!std::isfinite(x))
            throw Error(ErrorKind::validation, "non-finite feature value in record '" + id + "'");
}

}  // namespace

int64_t Catalog::ordinal_of(const std::string& item_id) const {
    const auto it = index.find(item_id);
    if (it == index.end())
        throw Error(ErrorKind::validation, "item not in catalog: '" + item_id + "'");
    return it->second;
}

Catalog load_catalog(const std::string& path) {
    std::ifstream is = open_in_binary(path);
    char magic[4];
    read_bytes(is, magic, 4, "magic");
    if (std::memcmp(magic, kMagic, 4) != 0)
        throw Error(ErrorKind::format, path + ": bad magic, not an MMF1 feature file");
    const uint32_t count = read_u32(is, "record count");
    const uint32_t d_raw = read_u32(is, "feature dimension");
    if (d_raw == 0) throw Error(ErrorKind::format, path + ": feature dimension must be positive");

    Catalog cat;
    cat.d_raw = d_raw;
    cat.items.reserve(count);
    for (uint32_t r = 0; r < count; ++r) {
        ItemRecord rec;
        const uint32_t id_len = read_u32(is, "id length");
        rec.item_id = read_str(is, id_len, "item id");
        if (rec.item_id.empty())
            throw Error(ErrorKind::validation, path + ": record " + std::to_string(r) + " has empty id");
        const uint8_t flags = read_u8(is, "flags");
        if (flags & ~uint8_t{0x03})
            throw Error(ErrorKind::format, path + ": unknown flag bits in record '" + rec.item_id + "'");
        rec.has_visual = flags & 0x01;
        rec.has_text = flags & 0x02;
        if (!rec.has_visual && !rec.has_text)
            throw Error(ErrorKind::validation,
                        path + ": record '" + rec.item_id + "' has no modalities");
        if (rec.has_visual) {
            const uint32_t m = read_u32(is, "frame count");
            if (m == 0)
                throw Error(ErrorKind::validation,
                            path + ": record '" + rec.item_id + "' has zero frames");
            rec.visual.resize(m);
            for (uint32_t f = 0; f < m; ++f) {
                rec.visual[f].resize(d_raw);
                for (uint32_t j = 0; j < d_raw; ++j)
                    rec.visual[f][j] = static_cast<double>(read_f32(is, "visual features"));
                check_finite(rec.visual[f], rec.item_id);
            }
        }
        if (rec.has_text) {
            rec.text.resize(d_raw);
            for (uint32_t j = 0; j < d_raw; ++j)
                rec.text[j] = static_cast<double>(read_f32(is, "text features"));
            check_finite(rec.text, rec.item_id);
        }
        if (cat.index.count(rec.item_id))
            throw Error(ErrorKind::validation, path + ": duplicate item id '" + rec.item_id + "'");
        cat.index.emplace(rec.item_id, static_cast<int64_t>(cat.items.size()));
        cat.items.push_back(std::move(rec));
    }
    if (is.peek() != std::char_traits<char>::eof())
        throw Error(ErrorKind::format, path + ": trailing bytes after last record");
    return cat;
}

void write_catalog(const std::string& path, const Catalog& catalog) {
    std::ofstream os = open_out_binary(path);
    os.write(kMagic, 4);
    write_u32(os, static_cast<uint32_t>(catalog.items.size()));
    write_u32(os, static_cast<uint32_t>(catalog.d_raw));
    for (const ItemRecord& rec : catalog.items) {
        write_u32(os, static_cast<uint32_t>(rec.item_id.size()));
        os.write(rec.item_id.data(), static_cast<std::streamsize>(rec.item_id.size()));
        const uint8_t flags =
            static_cast<uint8_t>((rec.has_visual ? 1 : 0) | (rec.has_text ? 2 : 0));
        write_u8(os, flags);
        if (rec.has_visual) {
            write_u32(os, static_cast<uint32_t>(rec.visual.size()));
            for (const auto& frame : rec.visual)
                for (double v : frame) write_f32(os, static_cast<float>(v));
        }
        if (rec.has_text)
            for (double v : rec.text) write_f32(os, static_cast<float>(v));
    }
    if (!os) throw Error(ErrorKind::io, "write failed: " + path);
}

InteractionLog load_interactions(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw Error(ErrorKind::io, "cannot open for reading: " + path);
    std::string line;
    size_t lineno = 0;
    InteractionLog log;
    bool saw_header = false;
    while (std::getline(is, line)) {
        ++lineno;
        if (!saw_header) {
            if (line != kInteractionsHeader)
                parse_fail(path, lineno, "expected header 'user_id<TAB>item_id<TAB>timestamp'");
            saw_header = true;
            continue;
        }
        const std::vector<std::string> f = split_tabs(line);
        if (f.size() != 3)
            parse_fail(path, lineno,
                       "expected 3 tab-separated fields, got " + std::to_string(f.size()));
        if (f[0].empty()) parse_fail(path, lineno, "empty user_id");
        if (f[1].empty()) parse_fail(path, lineno, "empty item_id");
        log.events.push_back({f[0], f[1], parse_u64(f[2], path, lineno)});
    }
    if (!saw_header) parse_fail(path, 1, "missing header line");
    return log;
}

void write_interactions(const std::string& path, const InteractionLog& log) {
    std::ofstream os(path, std::ios::binary);  // binary: keep LF endings everywhere
    if (!os) throw Error(ErrorKind::io, "cannot open for writing: " + path);
    os << kInteractionsHeader << '\n';
    for (const Event& e : log.events)
        os << e.user_id << '\t' << e.item_id << '\t' << e.timestamp << '\n';
    if (!os) throw Error(ErrorKind::io, "write failed: " + path);
}

InteractionLog kcore_filter(const InteractionLog& log, int64_t k) {
    if (k < 1) throw Error(ErrorKind::config, "kcore_filter: k must be >= 1");
    std::vector<const Event*> alive;
    alive.reserve(log.events.size());
    for (const Event& e : log.events) alive.push_back(&e);
    while (true) {
        std::unordered_map<std::string, int64_t> ucount, icount;
        for (const Event* e : alive) {
            ++ucount[e->user_id];
            ++icount[e->item_id];
        }
        std::vector<const Event*> next;
        next.reserve(alive.size());
        for (const Event* e : alive)
            if (ucount[e->user_id] >= k && icount[e->item_id] >= k) next.push_back(e);
        if (next.size() == alive.size()) break;
        alive = std::move(next);
    }
    InteractionLog out;
    out.events.reserve(alive.size());
    for (const Event* e : alive) out.events.push_back(*e);
    return out;
}

std::map<std::string, std::vector<std::string>> build_sequences(const InteractionLog& log) {
    std::map<std::string, std::vector<std::pair<uint64_t, std::string>>> per_user;
    for (const Event& e : log.events) per_user[e.user_id].emplace_back(e.timestamp, e.item_id);
    std::map<std::string, std::vector<std::string>> out;
    for (auto& [user, events] : per_user) {
        std::stable_sort(events.begin(), events.end(),
                         [](const auto& a, const auto& b) { return a.first < b.first; });
        std::vector<std::string>& seq = out[user];
        seq.reserve(events.size());
        for (auto& [ts, item] : events) seq.push_back(std::move(item));
    }
    return out;
}

SplitDataset leave_one_out_split(const std::map<std::string, std::vector<std::string>>& sequences) {
    SplitDataset split;
    for (const auto& [user, seq] : sequences) {
        if (seq.size() < 3) {
            ++split.excluded_users;
            continue;
        }
        SplitUser u;
        u.user_id = user;
        u.train.assign(seq.begin(), seq.end() - 2);
        u.valid_target = seq[seq.size() - 2];
        u.test_target = seq.back();
        split.users.push_back(std::move(u));
    }
    return split;
}

std::vector<std::string> truncate_sequence(const std::vector<std::string>& seq, int64_t n) {
    if (n < 1) throw Error(ErrorKind::config, "truncate_sequence: n must be >= 1");
    if (static_cast<int64_t>(seq.size()) <= n) return seq;
    return std::vector<std::string>(seq.end() - n, seq.end());
}

DatasetStats dataset_stats(const InteractionLog& log) {
    std::set<std::string> users, items;
    for (const Event& e : log.events) {
        users.insert(e.user_id);
        items.insert(e.item_id);
    }
    DatasetStats s;
    s.n_users = static_cast<int64_t>(users.size());
    s.n_items = static_cast<int64_t>(items.size());
    s.n_actions = static_cast<int64_t>(log.events.size());
    if (s.n_users == 0 || s.n_items == 0)
        throw Error(ErrorKind::input, "dataset_stats: sparsity undefined without users and items");
    s.sparsity = 1.0 - static_cast<double>(s.n_actions) /
                           (static_cast<double>(s.n_users) * static_cast<double>(s.n_items));
    return s;
}

// Split file: '#excluded_users=N' comment, then one line per user:
// user<TAB>valid_target<TAB>test_target<TAB>train_1<TAB>...<TAB>train_k
void write_split(const std::string& path, const SplitDataset& split) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error(ErrorKind::io, "cannot open for writing: " + path);
    os << "#excluded_users=" << split.excluded_users << '\n';
    for (const SplitUser& u : split.users) {
        os << u.user_id << '\t' << u.valid_target << '\t' << u.test_target;
        for (const std::string& it : u.train) os << '\t' << it;
        os << '\n';
    }
    if (!os) throw Error(ErrorKind::io, "write failed: " + path);
}

SplitDataset load_split(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw Error(ErrorKind::io, "cannot open for reading: " + path);
    SplitDataset split;
    std::string line;
    size_t lineno = 0;
    bool saw_header = false;
    while (std::getline(is, line)) {
        ++lineno;
        if (!saw_header) {
            const std::string prefix = "#excluded_users=";
            if (line.rfind(prefix, 0) != 0) parse_fail(path, lineno, "missing excluded_users header");
            split.excluded_users =
                static_cast<int64_t>(parse_u64(line.substr(prefix.size()), path, lineno));
            saw_header = true;
            continue;
        }
        const std::vector<std::string> f = split_tabs(line);
        if (f.size() < 4) parse_fail(path, lineno, "expected at least 4 fields");
        SplitUser u;
        u.user_id = f[0];
        u.valid_target = f[1];
        u.test_target = f[2];
        u.train.assign(f.begin() + 3, f.end());
        for (const std::string& field : f)
            if (field.empty()) parse_fail(path, lineno, "empty field");
        split.users.push_back(std::move(u));
    }
    if (!saw_header) parse_fail(path, 1, "missing excluded_users header");
    return split;
}

void write_stats(const std::string& path, const DatasetStats& stats) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error(ErrorKind::io, "cannot open for writing: " + path);
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.12g", stats.sparsity);
    os << "n_users\t" << stats.n_users << '\n'
       << "n_items\t" << stats.n_items << '\n'
       << "n_actions\t" << stats.n_actions << '\n'
       << "sparsity\t" << buf << '\n';
    if (!os) throw Error(ErrorKind::io, "write failed: " + path);
}

}  // namespace mmrec
