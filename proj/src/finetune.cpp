#include "mmrec/finetune.hpp"

#include <algorithm>
#include <numeric>
#include <unordered_map>

namespace mmrec {

MaskedSequence apply_masking(const std::vector<int64_t>& seq, double p, int64_t n_items, Rng& rng) {
    if (seq.empty()) throw Error(ErrorKind::input, "apply_masking: empty sequence");
    if (p < 0.0 || p > 1.0) throw Error(ErrorKind::config, "apply_masking: p must be in [0,1]");
    MaskedSequence out;
    out.items = seq;
    const int64_t last = static_cast<int64_t>(seq.size()) - 1;
    for (int64_t pos = 0; pos < last; ++pos) {
        if (rng.uniform() >= p) continue;
        const int64_t original = seq[static_cast<size_t>(pos)];
        PredictionSlot slot{pos, original, MaskKind::masked, -1};
        const double mode = rng.uniform();
        if (mode < 0.8) {
            slot.kind = MaskKind::masked;
        } else if (mode < 0.9) {
            if (n_items >= 2) {
                // Uniform over the catalog minus the original.
                int64_t r = static_cast<int64_t>(
                    rng.uniform_below(static_cast<uint64_t>(n_items - 1)));
                if (r >= original) ++r;
                slot.kind = MaskKind::replaced;
                slot.replacement = r;
            }  // single-item catalog: nothing to replace with, keep the mask
        } else {
            slot.kind = MaskKind::kept;
        }
        out.slots.push_back(slot);
    }
    out.slots.push_back({last, seq[static_cast<size_t>(last)], MaskKind::masked, -1});
    return out;
}

int mip_loss_node(Tape& tape, Model& model, const CatalogFeatures& feats,
                  const std::vector<MaskedSequence>& batch, const std::vector<int64_t>& candidates,
                  double tau, bool train, Rng* rng) {
    if (tau <= 0.0) throw Error(ErrorKind::config, "mip_loss: tau must be positive");
    if (batch.empty()) throw Error(ErrorKind::input, "mip_loss: empty batch");
    if (candidates.empty()) throw Error(ErrorKind::input, "mip_loss: empty candidate set");
    std::unordered_map<int64_t, int64_t> cand_row;
    for (size_t i = 0; i < candidates.size(); ++i)
        if (!cand_row.emplace(candidates[i], static_cast<int64_t>(i)).second)
            throw Error(ErrorKind::contract, "mip_loss: duplicate candidate");

    // Sequence tower (train mode masks/dropout), then candidate tower without
    // dropout, both on one tape.
    EncodeBatch seq_batch(feats);
    std::vector<int64_t> slot_rows;
    std::vector<int64_t> slot_targets;
    for (const MaskedSequence& ms : batch) {
        if (ms.items.empty()) throw Error(ErrorKind::input, "mip_loss: empty sequence");
        if (static_cast<int64_t>(ms.items.size()) > model.config().n_max)
            throw Error(ErrorKind::contract, "mip_loss: sequence longer than n_max");
        std::vector<const PredictionSlot*> at(ms.items.size(), nullptr);
        for (const PredictionSlot& s : ms.slots) {
            if (s.position < 0 || s.position >= static_cast<int64_t>(ms.items.size()))
                throw Error(ErrorKind::contract, "mip_loss: slot position out of range");
            at[static_cast<size_t>(s.position)] = &s;
        }
        seq_batch.begin_group();
        for (size_t pos = 0; pos < ms.items.size(); ++pos) {
            SlotSpec spec;
            spec.position = static_cast<int32_t>(pos);
            const PredictionSlot* s = at[pos];
            if (s == nullptr) {
                spec.item = ms.items[pos];
            } else if (s->kind == MaskKind::masked) {
                spec.item = -1;
            } else if (s->kind == MaskKind::replaced) {
                spec.item = s->replacement;
            } else {
                spec.item = ms.items[pos];
            }
            const int64_t row = seq_batch.add_slot(spec);
            if (s != nullptr) {
                const auto it = cand_row.find(s->original);
                if (it == cand_row.end())
                    throw Error(ErrorKind::contract, "mip_loss: slot target missing from candidates");
                slot_rows.push_back(row);
                slot_targets.push_back(it->second);
            }
        }
        seq_batch.end_group();
    }
    const int seq_out = encode_forward(tape, model, seq_batch, train, rng);

    EncodeBatch cand_batch(feats);
    for (int64_t c : candidates) {
        if (c < 0 || c >= static_cast<int64_t>(feats.vis_row.size()))
            throw Error(ErrorKind::input, "mip_loss: candidate ordinal out of range");
        cand_batch.begin_group();
        cand_batch.add_slot({c, false, false, -1});
        cand_batch.end_group();
    }
    const int cand_out = encode_forward(tape, model, cand_batch, false, nullptr);

    const int pred = tape.l2_normalize_rows(tape.gather_rows(seq_out, slot_rows));
    const int cand = tape.l2_normalize_rows(cand_out);
    const int logits = tape.scale(tape.matmul_nt(pred, cand), 1.0 / tau);
    return tape.cross_entropy_rows(logits, slot_targets);
}

double mip_loss(Model& model, const CatalogFeatures& feats,
                const std::vector<MaskedSequence>& batch, const std::vector<int64_t>& candidates,
                double tau) {
    Tape tape;
    return tape.value(mip_loss_node(tape, model, feats, batch, candidates, tau, false, nullptr))
        .data[0];
}

namespace {

struct Snapshot {
    std::vector<Tensor> values, m, v;
    int64_t step = 0;

    static Snapshot take(Model& model, AdamW& opt) {
        Snapshot s;
        for (Parameter* p : model.parameters()) s.values.push_back(p->value);
        for (size_t i = 0; i < opt.params().size(); ++i) {
            s.m.push_back(opt.moment1(i));
            s.v.push_back(opt.moment2(i));
        }
        s.step = opt.step_count();
        return s;
    }

    void restore(Model& model, AdamW& opt) const {
        const std::vector<Parameter*> params = model.parameters();
        for (size_t i = 0; i < params.size(); ++i) params[i]->value = values[i];
        for (size_t i = 0; i < opt.params().size(); ++i) {
            opt.moment1(i) = m[i];
            opt.moment2(i) = v[i];
        }
        opt.set_step_count(step);
    }
};

}  // namespace

FinetuneResult finetune_run(Model& model, AdamW& opt, const CatalogFeatures& feats,
                            const std::vector<SeqExample>& examples, const RunConfig& cfg,
                            uint64_t seed, std::ostream* progress) {
    if (examples.empty()) throw Error(ErrorKind::input, "finetune: empty split");
    const int64_t n_items = static_cast<int64_t>(feats.vis_row.size());

    std::vector<int64_t> all_items;
    if (cfg.candidate_mode == CandidateMode::full) {
        all_items.resize(static_cast<size_t>(n_items));
        std::iota(all_items.begin(), all_items.end(), 0);
    }

    Rng root(seed);
    Rng rng_shuffle = root.stream(streams::finetune_shuffle);
    Rng rng_mask = root.stream(streams::finetune_mask);
    Rng rng_dropout = root.stream(streams::finetune_dropout);

    std::vector<size_t> order(examples.size());
    std::iota(order.begin(), order.end(), 0);

    FinetuneResult result;
    double best = -1.0;
    int64_t last_improve = 0;
    Snapshot best_state = Snapshot::take(model, opt);

    for (int64_t epoch = 0; epoch < cfg.finetune_epochs; ++epoch) {
        const double lr = lr_schedule(cfg.finetune_lr, cfg.lr_decay, epoch);
        opt.set_lr(lr);
        rng_shuffle.shuffle(order);

        double loss_sum = 0.0;
        int64_t slot_count = 0;
        for (size_t start = 0; start < order.size(); start += static_cast<size_t>(cfg.finetune_batch)) {
            const size_t stop =
                std::min(order.size(), start + static_cast<size_t>(cfg.finetune_batch));
            std::vector<MaskedSequence> batch;
            batch.reserve(stop - start);
            for (size_t u = start; u < stop; ++u) {
                const std::vector<int64_t>& train_seq = examples[order[u]].train;
                std::vector<int64_t> seq = train_seq;
                if (static_cast<int64_t>(seq.size()) > cfg.n_max)
                    seq.assign(train_seq.end() - cfg.n_max, train_seq.end());
                batch.push_back(apply_masking(seq, cfg.mask_ratio, n_items, rng_mask));
            }

            std::vector<int64_t> candidates;
            if (cfg.candidate_mode == CandidateMode::full) {
                candidates = all_items;
            } else {
                for (const MaskedSequence& ms : batch)
                    for (const PredictionSlot& s : ms.slots) candidates.push_back(s.original);
                std::sort(candidates.begin(), candidates.end());
                candidates.erase(std::unique(candidates.begin(), candidates.end()),
                                 candidates.end());
            }

            Tape tape;
            const int loss = mip_loss_node(tape, model, feats, batch, candidates, cfg.tau, true,
                                           &rng_dropout);
            model.zero_grads();
            tape.backward(loss);
            opt.step();
            ++result.steps;
            int64_t batch_slots = 0;
            for (const MaskedSequence& ms : batch)
                batch_slots += static_cast<int64_t>(ms.slots.size());
            loss_sum += tape.value(loss).data[0] * static_cast<double>(batch_slots);
            slot_count += batch_slots;
        }

        const double train_loss = loss_sum / static_cast<double>(slot_count);
        const double recall = validation_recall(model, feats, examples, 10);
        result.log.push_back({epoch, lr, train_loss, recall});
        if (progress)
            (*progress) << "finetune epoch " << epoch << " lr " << format_double(lr) << " loss "
                        << format_double(train_loss) << " valid_recall@10 "
                        << format_double(recall) << "\n";

        if (recall > best) {
            best = recall;
            last_improve = epoch;
            result.best_epoch = epoch;
            result.best_recall = recall;
            best_state = Snapshot::take(model, opt);
        } else {
            if (recall == best) {
                // a tie refreshes the kept checkpoint -- of equally good
                // epochs the most-trained one wins -- without extending the
                // early-stopping window
                result.best_epoch = epoch;
                best_state = Snapshot::take(model, opt);
            }
            if (epoch - last_improve >= cfg.patience) break;
        }
    }
    best_state.restore(model, opt);
    return result;
}

}  // namespace mmrec
