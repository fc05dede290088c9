#pragma once

#include <cstdint>
#include <ostream>
#include <vector>

#include "mmrec/config.hpp"
#include "mmrec/encoder.hpp"
#include "mmrec/optimizer.hpp"

namespace mmrec {

// Tape nodes of the six (B, d) view matrices: three modality views from one
// train-mode pass, and their dropout-augmented twins from a second pass.
struct ViewNodes {
    int v = -1, t = -1, vt = -1;
    int v_aug = -1, t_aug = -1, vt_aug = -1;
};

// Every batch item must carry both modalities. View v keeps only the visual
// features (text token masked), view t the reverse, view vt both. The
// augmented pass replays the same construction with `rng_aug`.
ViewNodes make_views(Tape& tape, Model& model, const CatalogFeatures& feats,
                     const std::vector<int64_t>& items, bool train, Rng* rng_base, Rng* rng_aug);

// Symmetric InfoNCE between row-matched batches: mean cross-entropy of each
// row's positive against the batch under cosine/tau logits, plus the same
// with the roles of x and y exchanged.
int nce_loss_node(Tape& tape, int x, int y, double tau);
double nce_loss(const Tensor& x, const Tensor& y, double tau);

// lambda_vv * l(v,v') + lambda_tt * l(t,t') + lambda_vt * l(v,t)
// + lambda_vtvt * l(vt,vt'); zero-weight terms are skipped.
int composite_loss_node(Tape& tape, const ViewNodes& views, const RunConfig& cfg);

struct EpochRecord {
    int64_t epoch = 0;
    double lr = 0.0;
    double loss = 0.0;
};

struct PretrainResult {
    std::vector<EpochRecord> log;
    int64_t steps = 0;
};

// Shuffles the bi-modal items each epoch, minimizes the composite loss with
// AdamW under the per-epoch lr schedule. `progress` (optional) receives one
// human-readable line per epoch.
PretrainResult pretrain_run(Model& model, AdamW& opt, const CatalogFeatures& feats,
                            const RunConfig& cfg, uint64_t seed, std::ostream* progress);

}  // namespace mmrec
