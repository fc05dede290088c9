#include "mmrec/pretrain.hpp"

#include <numeric>

namespace mmrec {

namespace {

// One pass: per item three single-slot groups in order v, t, vt.
struct PassNodes {
    int v, t, vt;
};

PassNodes run_pass(Tape& tape, Model& model, const CatalogFeatures& feats,
                   const std::vector<int64_t>& items, bool train, Rng* rng) {
    EncodeBatch batch(feats);
    for (int64_t item : items) {
        batch.begin_group();
        batch.add_slot({item, /*mask_visual=*/false, /*mask_text=*/true, -1});
        batch.end_group();
        batch.begin_group();
        batch.add_slot({item, /*mask_visual=*/true, /*mask_text=*/false, -1});
        batch.end_group();
        batch.begin_group();
        batch.add_slot({item, /*mask_visual=*/false, /*mask_text=*/false, -1});
        batch.end_group();
    }
    const int pooled = encode_forward(tape, model, batch, train, rng);
    const int64_t b = static_cast<int64_t>(items.size());
    std::vector<int64_t> rv, rt, rvt;
    for (int64_t i = 0; i < b; ++i) {
        rv.push_back(3 * i);
        rt.push_back(3 * i + 1);
        rvt.push_back(3 * i + 2);
    }
    return {tape.gather_rows(pooled, rv), tape.gather_rows(pooled, rt),
            tape.gather_rows(pooled, rvt)};
}

}  // namespace

ViewNodes make_views(Tape& tape, Model& model, const CatalogFeatures& feats,
                     const std::vector<int64_t>& items, bool train, Rng* rng_base, Rng* rng_aug) {
    if (items.empty()) throw Error(ErrorKind::input, "make_views: empty batch");
    for (int64_t item : items) {
        if (item < 0 || item >= static_cast<int64_t>(feats.vis_row.size()))
            throw Error(ErrorKind::input, "make_views: item ordinal out of range");
        if (feats.vis_row[static_cast<size_t>(item)] < 0 ||
            feats.txt_row[static_cast<size_t>(item)] < 0)
            throw Error(ErrorKind::contract,
                        "make_views: pretraining items must carry both modalities");
    }
    const PassNodes base = run_pass(tape, model, feats, items, train, rng_base);
    const PassNodes aug = run_pass(tape, model, feats, items, train, rng_aug);
    return {base.v, base.t, base.vt, aug.v, aug.t, aug.vt};
}

int nce_loss_node(Tape& tape, int x, int y, double tau) {
    if (tau <= 0.0) throw Error(ErrorKind::config, "nce_loss: tau must be positive");
    const Tensor& xv = tape.value(x);
    const Tensor& yv = tape.value(y);
    if (xv.rank() != 2 || !xv.same_shape(yv))
        throw Error(ErrorKind::dimension, "nce_loss: x and y must be matching (B,d) matrices");
    const int64_t b = xv.rows();
    if (b < 1) throw Error(ErrorKind::input, "nce_loss: empty batch");
    const int xn = tape.l2_normalize_rows(x);
    const int yn = tape.l2_normalize_rows(y);
    const int logits = tape.scale(tape.matmul_nt(xn, yn), 1.0 / tau);
    std::vector<int64_t> diag(static_cast<size_t>(b));
    std::iota(diag.begin(), diag.end(), 0);
    const int fwd = tape.cross_entropy_rows(logits, diag);
    const int bwd = tape.cross_entropy_rows(tape.transpose(logits), diag);
    return tape.add(fwd, bwd);
}

double nce_loss(const Tensor& x, const Tensor& y, double tau) {
    Tape tape;
    return tape.value(nce_loss_node(tape, tape.leaf(x), tape.leaf(y), tau)).data[0];
}

int composite_loss_node(Tape& tape, const ViewNodes& views, const RunConfig& cfg) {
    struct Term {
        double weight;
        int x, y;
    };
    const Term terms[] = {{cfg.lambda_vv, views.v, views.v_aug},
                          {cfg.lambda_tt, views.t, views.t_aug},
                          {cfg.lambda_vt, views.v, views.t},
                          {cfg.lambda_vtvt, views.vt, views.vt_aug}};
    int total = -1;
    for (const Term& term : terms) {
        if (term.weight == 0.0) continue;
        const int part = tape.scale(nce_loss_node(tape, term.x, term.y, cfg.tau), term.weight);
        total = total < 0 ? part : tape.add(total, part);
    }
    if (total < 0) throw Error(ErrorKind::config, "composite_loss: all lambda weights are zero");
    return total;
}

PretrainResult pretrain_run(Model& model, AdamW& opt, const CatalogFeatures& feats,
                            const RunConfig& cfg, uint64_t seed, std::ostream* progress) {
    std::vector<int64_t> items;
    for (size_t i = 0; i < feats.vis_row.size(); ++i)
        if (feats.vis_row[i] >= 0 && feats.txt_row[i] >= 0)
            items.push_back(static_cast<int64_t>(i));
    if (items.empty())
        throw Error(ErrorKind::input, "pretrain: no bi-modal items in the catalog");

    Rng root(seed);
    Rng rng_shuffle = root.stream(streams::pretrain_shuffle);
    Rng rng_base = root.stream(streams::pretrain_dropout);
    Rng rng_aug = root.stream(streams::pretrain_dropout_aug);

    PretrainResult result;
    for (int64_t epoch = 0; epoch < cfg.pretrain_epochs; ++epoch) {
        const double lr = lr_schedule(cfg.pretrain_lr, cfg.lr_decay, epoch);
        opt.set_lr(lr);
        rng_shuffle.shuffle(items);

        double loss_sum = 0.0;
        for (size_t start = 0; start < items.size(); start += static_cast<size_t>(cfg.pretrain_batch)) {
            const size_t stop = std::min(items.size(), start + static_cast<size_t>(cfg.pretrain_batch));
            const std::vector<int64_t> batch(items.begin() + static_cast<int64_t>(start),
                                             items.begin() + static_cast<int64_t>(stop));
            Tape tape;
            const ViewNodes views =
                make_views(tape, model, feats, batch, true, &rng_base, &rng_aug);
            const int loss = composite_loss_node(tape, views, cfg);
            model.zero_grads();
            tape.backward(loss);
            opt.step();
            ++result.steps;
            loss_sum += tape.value(loss).data[0] * static_cast<double>(batch.size());
        }
        const double mean_loss = loss_sum / static_cast<double>(items.size());
        result.log.push_back({epoch, lr, mean_loss});
        if (progress)
            (*progress) << "pretrain epoch " << epoch << " lr " << format_double(lr) << " loss "
                        << format_double(mean_loss) << "\n";
    }
    return result;
}

}  // namespace mmrec
