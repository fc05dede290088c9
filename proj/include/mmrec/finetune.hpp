#pragma once

#include <cstdint>
#include <ostream>
#include <vector>

#include "mmrec/config.hpp"
#include "mmrec/eval.hpp"
#include "mmrec/optimizer.hpp"

namespace mmrec {

enum class MaskKind { masked, replaced, kept };

struct PredictionSlot {
    int64_t position = 0;
    int64_t original = 0;      // pre-masking item: always the label
    MaskKind kind = MaskKind::masked;
    int64_t replacement = -1;  // set when kind == replaced
};

struct MaskedSequence {
    std::vector<int64_t> items;         // truncated pre-masking ordinals
    std::vector<PredictionSlot> slots;  // ascending positions; final always last
};

// The final position is always fully masked and always a slot; each earlier
// position is selected with probability p and then masked (80%), replaced by
// a uniformly random other item (10%), or left unchanged (10%). Draw order on
// `rng`, ascending non-final positions: one selection uniform; when selected,
// one mode uniform; when replacing, one uniform_below(n_items-1) skipped past
// the original. The final position draws nothing.
MaskedSequence apply_masking(const std::vector<int64_t>& seq, double p, int64_t n_items, Rng& rng);

// Masked-item-prediction loss: mean cross-entropy over every prediction slot
// of cosine/tau logits between the slot's sequence-tower vector and the
// item-tower embeddings of `candidates` (encoded dropout-free on the same
// tape, so both towers receive gradients). The sequence pass runs first and
// is the only consumer of `rng`.
int mip_loss_node(Tape& tape, Model& model, const CatalogFeatures& feats,
                  const std::vector<MaskedSequence>& batch, const std::vector<int64_t>& candidates,
                  double tau, bool train, Rng* rng);

double mip_loss(Model& model, const CatalogFeatures& feats,
                const std::vector<MaskedSequence>& batch, const std::vector<int64_t>& candidates,
                double tau);

struct FinetuneEpoch {
    int64_t epoch = 0;
    double lr = 0.0;
    double train_loss = 0.0;
    double valid_recall = 0.0;  // Recall@10 on validation targets
};

struct FinetuneResult {
    std::vector<FinetuneEpoch> log;
    int64_t best_epoch = -1;
    double best_recall = 0.0;
    int64_t steps = 0;
};

// Epochs of shuffled mini-batches over the users' truncated train sequences;
// after each epoch the validation Recall@10 drives early stopping (halt once
// `patience` epochs pass without improvement). The model and optimizer are
// left at the best epoch's state.
FinetuneResult finetune_run(Model& model, AdamW& opt, const CatalogFeatures& feats,
                            const std::vector<SeqExample>& examples, const RunConfig& cfg,
                            uint64_t seed, std::ostream* progress);

}  // namespace mmrec
