#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mmrec/encoder.hpp"

namespace mmrec {

// A split user with item ids resolved to catalog ordinals.
struct SeqExample {
    std::string user_id;
    std::vector<int64_t> train;
    int64_t valid_target = -1;
    int64_t test_target = -1;
};

std::vector<SeqExample> to_examples(const SplitDataset& split, const Catalog& catalog);

// rank = 1 + |strictly greater| + |equal with smaller ordinal|.
int64_t rank_of_target(const std::vector<double>& scores, int64_t target);
double recall_at_k(int64_t rank, int64_t k);
double ndcg_at_k(int64_t rank, int64_t k);

struct EvalReport {
    int64_t n_users = 0;
    std::vector<int64_t> ks;
    std::vector<int64_t> ranks;   // per user, order of `examples`
    std::vector<double> recall;   // parallel to ks
    std::vector<double> ndcg;
};

// L2-normalized item-tower embeddings for every catalog ordinal, (n_items, d).
Tensor catalog_embeddings(Model& model, const CatalogFeatures& feats);

// Masked next-item query vectors, one per history (eval mode, batched).
// Histories keep their last n_max-1 items; a fully masked slot is appended.
Tensor query_vectors(Model& model, const CatalogFeatures& feats,
                     const std::vector<std::vector<int64_t>>& histories);

// cosine/tau of every catalog item against the history's query vector.
std::vector<double> score_catalog(Model& model, const CatalogFeatures& feats,
                                  const Tensor& item_embs, const std::vector<int64_t>& history);

std::vector<int64_t> predict_next(Model& model, const CatalogFeatures& feats,
                                  const std::vector<int64_t>& history, int64_t k);

// Test protocol: input = train + valid_target, target = test_target,
// candidates = the whole catalog with no history exclusion.
EvalReport evaluate(Model& model, const CatalogFeatures& feats,
                    const std::vector<SeqExample>& examples, const std::vector<int64_t>& ks);

// Controller metric: input = train, target = valid_target.
double validation_recall(Model& model, const CatalogFeatures& feats,
                         const std::vector<SeqExample>& examples, int64_t k);

// Global popularity scores: per-item interaction count over the train prefixes.
std::vector<double> pop_scores(const std::vector<SeqExample>& examples, int64_t n_items);

// Ranks one static score list for every user (the Pop baseline protocol).
EvalReport evaluate_static(const std::vector<double>& scores,
                           const std::vector<SeqExample>& examples, const std::vector<int64_t>& ks);

// UTF-8 lines 'metric<TAB>K<TAB>value'.
void write_report(const std::string& path, const EvalReport& report);
std::string format_report(const EvalReport& report);

}  // namespace mmrec
