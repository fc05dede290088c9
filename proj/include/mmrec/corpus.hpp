#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "mmrec/error.hpp"

namespace mmrec {

// Raw modality features arrive precomputed; floats are stored as f32 in files
// and widened to f64 in memory, so write/load round-trips are bitwise.
struct ItemRecord {
    std::string item_id;
    bool has_visual = false;
    bool has_text = false;
    std::vector<std::vector<double>> visual;  // m frames, each d_raw
    std::vector<double> text;                 // d_raw
};

struct Catalog {
    int64_t d_raw = 0;
    std::vector<ItemRecord> items;                     // ordinal order
    std::unordered_map<std::string, int64_t> index;    // item_id -> ordinal

    int64_t size() const { return static_cast<int64_t>(items.size()); }
    int64_t ordinal_of(const std::string& item_id) const;
};

struct Event {
    std::string user_id;
    std::string item_id;
    uint64_t timestamp = 0;
};

struct InteractionLog {
    std::vector<Event> events;  // file order
};

struct SplitUser {
    std::string user_id;
    std::vector<std::string> train;  // chronological prefix
    std::string valid_target;        // second-to-last item
    std::string test_target;         // last item
};

struct SplitDataset {
    std::vector<SplitUser> users;    // ordered by user_id
    int64_t excluded_users = 0;      // users with fewer than 3 interactions
};

struct DatasetStats {
    int64_t n_users = 0;
    int64_t n_items = 0;
    int64_t n_actions = 0;
    double sparsity = 0.0;  // 1 - actions / (users * items)
};

Catalog load_catalog(const std::string& path);
void write_catalog(const std::string& path, const Catalog& catalog);

InteractionLog load_interactions(const std::string& path);
void write_interactions(const std::string& path, const InteractionLog& log);

// Iteratively removes every event of any user or item with fewer than k
// events (all violators of a pass removed together) until fixpoint.
InteractionLog kcore_filter(const InteractionLog& log, int64_t k);

// Per-user item sequences sorted by (timestamp, file order); duplicates kept.
// Keyed container is ordered so iteration is deterministic.
std::map<std::string, std::vector<std::string>> build_sequences(const InteractionLog& log);

SplitDataset leave_one_out_split(const std::map<std::string, std::vector<std::string>>& sequences);

std::vector<std::string> truncate_sequence(const std::vector<std::string>& seq, int64_t n);

DatasetStats dataset_stats(const InteractionLog& log);

void write_split(const std::string& path, const SplitDataset& split);
SplitDataset load_split(const std::string& path);

void write_stats(const std::string& path, const DatasetStats& stats);

}  // namespace mmrec
