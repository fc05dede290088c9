#include "mmrec/encoder.hpp"

namespace mmrec {

std::vector<int64_t> frame_subsample_indices(int64_t m, int64_t max_frames) {
    if (m < 1) throw Error(ErrorKind::input, "frame_subsample_indices: no frames");
    if (max_frames < 1) throw Error(ErrorKind::config, "frame_subsample_indices: max_frames < 1");
    std::vector<int64_t> idx;
    if (m <= max_frames) {
        idx.resize(static_cast<size_t>(m));
        for (int64_t i = 0; i < m; ++i) idx[static_cast<size_t>(i)] = i;
        return idx;
    }
    idx.reserve(static_cast<size_t>(max_frames));
    for (int64_t j = 0; j < max_frames; ++j) idx.push_back(j * m / max_frames);
    return idx;
}

std::vector<double> frame_mean(const std::vector<std::vector<double>>& frames,
                               int64_t max_frames) {
    if (frames.empty()) throw Error(ErrorKind::input, "frame_mean: empty frame list");
    const std::vector<int64_t> idx =
        frame_subsample_indices(static_cast<int64_t>(frames.size()), max_frames);
    const size_t d = frames[0].size();
    std::vector<double> mean(d, 0.0);
    for (int64_t i : idx) {
        const auto& f = frames[static_cast<size_t>(i)];
        if (f.size() != d) throw Error(ErrorKind::dimension, "frame_mean: ragged frame lengths");
        for (size_t j = 0; j < d; ++j) mean[j] += f[j];
    }
    const double inv = 1.0 / static_cast<double>(idx.size());
    for (double& v : mean) v *= inv;
    return mean;
}

CatalogFeatures CatalogFeatures::build(const Catalog& catalog, int64_t max_frames) {
    CatalogFeatures out;
    out.d_raw = catalog.d_raw;
    out.vis_row.assign(catalog.items.size(), -1);
    out.txt_row.assign(catalog.items.size(), -1);
    std::vector<double> vdata, tdata;
    for (size_t i = 0; i < catalog.items.size(); ++i) {
        const ItemRecord& rec = catalog.items[i];
        if (rec.has_visual) {
            out.vis_row[i] = static_cast<int64_t>(vdata.size() / static_cast<size_t>(out.d_raw));
            const std::vector<double> mean = frame_mean(rec.visual, max_frames);
            if (static_cast<int64_t>(mean.size()) != out.d_raw)
                throw Error(ErrorKind::dimension, "catalog features: visual dim mismatch");
            vdata.insert(vdata.end(), mean.begin(), mean.end());
        }
        if (rec.has_text) {
            if (static_cast<int64_t>(rec.text.size()) != out.d_raw)
                throw Error(ErrorKind::dimension, "catalog features: text dim mismatch");
            out.txt_row[i] = static_cast<int64_t>(tdata.size() / static_cast<size_t>(out.d_raw));
            tdata.insert(tdata.end(), rec.text.begin(), rec.text.end());
        }
    }
    const int64_t n_vis = static_cast<int64_t>(vdata.size()) / out.d_raw;
    const int64_t n_txt = static_cast<int64_t>(tdata.size()) / out.d_raw;
    out.vis = Tensor({n_vis, out.d_raw}, std::move(vdata));
    out.txt = Tensor({n_txt, out.d_raw}, std::move(tdata));
    return out;
}

void EncodeBatch::begin_group() {
    if (group_start_ >= 0) throw Error(ErrorKind::contract, "encode batch: group already open");
    group_start_ = static_cast<int64_t>(tokens_.size());
}

void EncodeBatch::end_group() {
    if (group_start_ < 0) throw Error(ErrorKind::contract, "encode batch: no open group");
    const int64_t len = static_cast<int64_t>(tokens_.size()) - group_start_;
    if (len == 0) throw Error(ErrorKind::contract, "encode batch: empty group");
    segments_.emplace_back(group_start_, len);
    group_start_ = -1;
}

int64_t EncodeBatch::add_slot(const SlotSpec& slot) {
    if (group_start_ < 0) throw Error(ErrorKind::contract, "encode batch: slot outside a group");
    int32_t vrow = -1, trow = -1;
    if (slot.item >= 0) {
        if (slot.item >= static_cast<int64_t>(feats_->vis_row.size()))
            throw Error(ErrorKind::input, "encode batch: item ordinal out of range");
        if (!slot.mask_visual && feats_->vis_row[static_cast<size_t>(slot.item)] >= 0) {
            auto [it, fresh] = v_lookup_.try_emplace(slot.item,
                                                     static_cast<int64_t>(v_items_.size()));
            if (fresh) v_items_.push_back(slot.item);
            vrow = static_cast<int32_t>(it->second);
        }
        if (!slot.mask_text && feats_->txt_row[static_cast<size_t>(slot.item)] >= 0) {
            auto [it, fresh] = t_lookup_.try_emplace(slot.item,
                                                     static_cast<int64_t>(t_items_.size()));
            if (fresh) t_items_.push_back(slot.item);
            trow = static_cast<int32_t>(it->second);
        }
    }
    tokens_.push_back(TokenSpec{0, vrow, slot.position});
    tokens_.push_back(TokenSpec{1, trow, slot.position});
    return n_slots() - 1;
}

Tensor EncodeBatch::visual_matrix() const {
    Tensor out = Tensor::zeros({static_cast<int64_t>(v_items_.size()), feats_->d_raw});
    for (size_t i = 0; i < v_items_.size(); ++i) {
        const int64_t src = feats_->vis_row[static_cast<size_t>(v_items_[i])];
        for (int64_t j = 0; j < feats_->d_raw; ++j)
            out.at(static_cast<int64_t>(i), j) = feats_->vis.at(src, j);
    }
    return out;
}

Tensor EncodeBatch::text_matrix() const {
    Tensor out = Tensor::zeros({static_cast<int64_t>(t_items_.size()), feats_->d_raw});
    for (size_t i = 0; i < t_items_.size(); ++i) {
        const int64_t src = feats_->txt_row[static_cast<size_t>(t_items_[i])];
        for (int64_t j = 0; j < feats_->d_raw; ++j)
            out.at(static_cast<int64_t>(i), j) = feats_->txt.at(src, j);
    }
    return out;
}

int encode_forward(Tape& tape, Model& model, const EncodeBatch& batch, bool train, Rng* rng) {
    if (!batch.closed()) throw Error(ErrorKind::contract, "encode_forward: unclosed group");
    if (batch.n_slots() == 0) throw Error(ErrorKind::input, "encode_forward: empty batch");
    const ModelConfig& cfg = model.config();

    int vproj = -1, tproj = -1;
    if (batch.n_visual_rows() > 0)
        vproj = tape.add_rowvec(tape.matmul(tape.leaf(batch.visual_matrix()),
                                            tape.param(model.visual_in_w)),
                                tape.param(model.visual_in_b));
    if (batch.n_text_rows() > 0)
        tproj = tape.add_rowvec(tape.matmul(tape.leaf(batch.text_matrix()),
                                            tape.param(model.text_in_w)),
                                tape.param(model.text_in_b));

    int x = tape.compose_tokens(vproj, tproj, tape.param(model.mask_emb),
                                tape.param(model.modality_emb), tape.param(model.pos_emb),
                                batch.tokens());
    x = tape.dropout(x, cfg.embed_dropout, rng, train);

    for (LayerParams& L : model.layers) {
        const int q = tape.add_rowvec(tape.matmul(x, tape.param(L.wq)), tape.param(L.bq));
        const int k = tape.matmul(x, tape.param(L.wk));
        const int v = tape.add_rowvec(tape.matmul(x, tape.param(L.wv)), tape.param(L.bv));
        int a = tape.attention(q, k, v, cfg.n_heads, batch.segments());
        a = tape.add_rowvec(tape.matmul(a, tape.param(L.wo)), tape.param(L.bo));
        a = tape.dropout(a, cfg.hidden_dropout, rng, train);
        x = tape.layer_norm(tape.add(x, a), tape.param(L.ln1_gain), tape.param(L.ln1_bias),
                            cfg.ln_eps);
        int h = tape.gelu(tape.add_rowvec(tape.matmul(x, tape.param(L.w1)), tape.param(L.b1)));
        h = tape.add_rowvec(tape.matmul(h, tape.param(L.w2)), tape.param(L.b2));
        h = tape.dropout(h, cfg.hidden_dropout, rng, train);
        x = tape.layer_norm(tape.add(x, h), tape.param(L.ln2_gain), tape.param(L.ln2_bias),
                            cfg.ln_eps);
    }

    const int64_t n = batch.n_slots();
    std::vector<int64_t> evens(static_cast<size_t>(n)), odds(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
        evens[static_cast<size_t>(i)] = 2 * i;
        odds[static_cast<size_t>(i)] = 2 * i + 1;
    }
    const int vtok = tape.gather_rows(x, evens);
    const int ttok = tape.gather_rows(x, odds);
    const int vout = tape.l2_normalize_rows(tape.add_rowvec(
        tape.matmul(vtok, tape.param(model.visual_out_w)), tape.param(model.visual_out_b)));
    const int tout = tape.l2_normalize_rows(tape.add_rowvec(
        tape.matmul(ttok, tape.param(model.text_out_w)), tape.param(model.text_out_b)));
    return tape.emax(vout, tout);
}

Tensor embed_visual(const std::vector<std::vector<double>>& frames, Model& model) {
    const std::vector<double> mean = frame_mean(frames, model.config().max_frames);
    if (static_cast<int64_t>(mean.size()) != model.config().d_raw)
        throw Error(ErrorKind::dimension, "embed_visual: frame length != d_raw");
    Tensor row({1, model.config().d_raw}, std::vector<double>(mean.begin(), mean.end()));
    Tensor out = add_rowvec(matmul(row, model.visual_in_w.value), model.visual_in_b.value);
    return Tensor::vec(std::move(out.data));
}

Tensor embed_text(const std::vector<double>& text_vec, Model& model) {
    if (static_cast<int64_t>(text_vec.size()) != model.config().d_raw)
        throw Error(ErrorKind::dimension, "embed_text: vector length != d_raw");
    Tensor row({1, model.config().d_raw}, std::vector<double>(text_vec.begin(), text_vec.end()));
    Tensor out = add_rowvec(matmul(row, model.text_in_w.value), model.text_in_b.value);
    return Tensor::vec(std::move(out.data));
}

Tensor encode_item(Model& model, const CatalogFeatures& feats, const SlotSpec& slot) {
    EncodeBatch batch(feats);
    batch.begin_group();
    SlotSpec s = slot;
    s.position = -1;  // the item tower never sees positions
    batch.add_slot(s);
    batch.end_group();
    Tape tape;
    const int out = encode_forward(tape, model, batch, false, nullptr);
    return Tensor::vec(std::vector<double>(tape.value(out).data));
}

Tensor encode_sequence(Model& model, const CatalogFeatures& feats,
                       const std::vector<SlotSpec>& seq) {
    if (seq.empty()) throw Error(ErrorKind::input, "encode_sequence: empty sequence");
    if (static_cast<int64_t>(seq.size()) > model.config().n_max)
        throw Error(ErrorKind::contract, "encode_sequence: sequence longer than n_max");
    EncodeBatch batch(feats);
    batch.begin_group();
    for (size_t t = 0; t < seq.size(); ++t) {
        SlotSpec s = seq[t];
        s.position = static_cast<int32_t>(t);
        batch.add_slot(s);
    }
    batch.end_group();
    Tape tape;
    const int out = encode_forward(tape, model, batch, false, nullptr);
    return tape.value(out);
}

}  // namespace mmrec
