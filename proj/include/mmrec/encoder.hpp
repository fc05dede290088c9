#pragma once

#include <cstdint>
#include <unordered_map>
#include <vector>

#include "mmrec/corpus.hpp"
#include "mmrec/model.hpp"

namespace mmrec {

// Frames kept when a clip exceeds max_frames: indices floor(j*m/max_frames)
// for j = 0..max_frames-1; otherwise all of them.
std::vector<int64_t> frame_subsample_indices(int64_t m, int64_t max_frames);

// Retained-frame average of an item's visual features.
std::vector<double> frame_mean(const std::vector<std::vector<double>>& frames,
                               int64_t max_frames);

// Raw modality inputs per catalog ordinal, frame-averaged once up front.
struct CatalogFeatures {
    int64_t d_raw = 0;
    Tensor vis;  // (n_visual, d_raw)
    Tensor txt;  // (n_text, d_raw)
    std::vector<int64_t> vis_row;  // per ordinal; -1 when the modality is absent
    std::vector<int64_t> txt_row;

    static CatalogFeatures build(const Catalog& catalog, int64_t max_frames);
};

// One output slot: an item occurrence contributing a visual and a text token.
// `item` = -1 encodes a fully masked slot; a present modality can still be
// masked explicitly (contrastive views, masked item prediction).
struct SlotSpec {
    int64_t item = -1;
    bool mask_visual = false;
    bool mask_text = false;
    int32_t position = -1;  // -1 = item tower (no positional row)
};

// Accumulates slots into one batched forward: a group per attention segment
// (a single item, or one user sequence). Feature rows are deduplicated.
class EncodeBatch {
  public:
    explicit EncodeBatch(const CatalogFeatures& feats) : feats_(&feats) {}

    void begin_group();
    int64_t add_slot(const SlotSpec& slot);  // returns the slot index
    void end_group();

    int64_t n_slots() const { return static_cast<int64_t>(tokens_.size()) / 2; }
    const std::vector<TokenSpec>& tokens() const { return tokens_; }
    const Segments& segments() const { return segments_; }
    int64_t n_visual_rows() const { return static_cast<int64_t>(v_items_.size()); }
    int64_t n_text_rows() const { return static_cast<int64_t>(t_items_.size()); }
    Tensor visual_matrix() const;
    Tensor text_matrix() const;
    bool closed() const { return group_start_ < 0; }

  private:
    const CatalogFeatures* feats_;
    std::vector<TokenSpec> tokens_;
    Segments segments_;
    int64_t group_start_ = -1;
    std::vector<int64_t> v_items_, t_items_;  // batch row -> catalog ordinal
    std::unordered_map<int64_t, int64_t> v_lookup_, t_lookup_;
};

// Shared transformer over the batch. Returns the tape node holding the
// (n_slots, d) pooled representations: per slot, the two transformer outputs
// go through their modality's output projection, are L2-normalized, and are
// fused by elementwise max. `rng` is only consumed in train mode.
int encode_forward(Tape& tape, Model& model, const EncodeBatch& batch, bool train, Rng* rng);

// Eval-mode conveniences.
Tensor embed_visual(const std::vector<std::vector<double>>& frames, Model& model);
Tensor embed_text(const std::vector<double>& text_vec, Model& model);
Tensor encode_item(Model& model, const CatalogFeatures& feats, const SlotSpec& slot);  // (d)
Tensor encode_sequence(Model& model, const CatalogFeatures& feats,
                       const std::vector<SlotSpec>& seq);  // (|seq|, d)

}  // namespace mmrec
