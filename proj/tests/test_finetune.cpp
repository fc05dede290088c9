#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "mmrec/finetune.hpp"
#include "mmrec/gradcheck.hpp"
#include "mmrec/pretrain.hpp"

using namespace mmrec;

namespace {

Catalog bimodal_catalog(int64_t n, int64_t d_raw, uint64_t seed, bool identical = false) {
    Rng rng(seed, 901);
    Catalog c;
    c.d_raw = d_raw;
    std::vector<double> shared_v, shared_t;
    for (int64_t j = 0; j < d_raw; ++j) {
        shared_v.push_back(rng.normal());
        shared_t.push_back(rng.normal());
    }
    for (int64_t i = 0; i < n; ++i) {
        ItemRecord rec;
        rec.item_id = "it" + std::to_string(i);
        rec.has_visual = rec.has_text = true;
        if (identical) {
            rec.visual = {shared_v};
            rec.text = shared_t;
        } else {
            rec.visual.emplace_back();
            for (int64_t j = 0; j < d_raw; ++j) rec.visual.back().push_back(rng.normal());
            for (int64_t j = 0; j < d_raw; ++j) rec.text.push_back(rng.normal());
        }
        c.index[rec.item_id] = i;
        c.items.push_back(std::move(rec));
    }
    return c;
}

RunConfig tiny_run_config() {
    RunConfig cfg;
    cfg.d_raw = 5;
    cfg.d = 8;
    cfg.n_layers = 1;
    cfg.n_heads = 2;
    cfg.max_frames = 2;
    cfg.n_max = 6;
    return cfg;
}

}  // namespace

TEST_CASE("masking: p=0 marks exactly the final position") {
    Rng rng(1, 50);
    const MaskedSequence m = apply_masking({7, 3, 9, 2}, 0.0, 10, rng);
    CHECK(m.items == std::vector<int64_t>{7, 3, 9, 2});
    REQUIRE(m.slots.size() == 1);
    CHECK(m.slots[0].position == 3);
    CHECK(m.slots[0].original == 2);
    CHECK(m.slots[0].kind == MaskKind::masked);

    const MaskedSequence single = apply_masking({5}, 0.0, 10, rng);
    REQUIRE(single.slots.size() == 1);
    CHECK(single.slots[0].position == 0);
    CHECK(single.slots[0].original == 5);

    CHECK_THROWS_AS(apply_masking({}, 0.2, 10, rng), Error);
    CHECK_THROWS_AS(apply_masking({1}, -0.1, 10, rng), Error);
    CHECK_THROWS_AS(apply_masking({1}, 1.5, 10, rng), Error);
}

TEST_CASE("masking: p=1 selects everything and matches an RNG replay oracle") {
    const std::vector<int64_t> seq = {4, 0, 8, 1, 6, 3};
    const int64_t n_items = 9;
    for (uint64_t seed = 0; seed < 40; ++seed) {
        Rng rng(seed, 51);
        const MaskedSequence m = apply_masking(seq, 1.0, n_items, rng);
        REQUIRE(m.slots.size() == seq.size());

        Rng replay(seed, 51);
        for (size_t pos = 0; pos + 1 < seq.size(); ++pos) {
            const PredictionSlot& slot = m.slots[pos];
            CHECK(slot.position == static_cast<int64_t>(pos));
            CHECK(slot.original == seq[pos]);
            CHECK(replay.uniform() < 1.0);  // the selection draw
            const double mode = replay.uniform();
            if (mode < 0.8) {
                CHECK(slot.kind == MaskKind::masked);
            } else if (mode < 0.9) {
                int64_t r = static_cast<int64_t>(
                    replay.uniform_below(static_cast<uint64_t>(n_items - 1)));
                if (r >= seq[pos]) ++r;
                CHECK(slot.kind == MaskKind::replaced);
                CHECK(slot.replacement == r);
                CHECK(slot.replacement != slot.original);
                CHECK(slot.replacement < n_items);
            } else {
                CHECK(slot.kind == MaskKind::kept);
            }
        }
        CHECK(m.slots.back().position == static_cast<int64_t>(seq.size()) - 1);
        CHECK(m.slots.back().kind == MaskKind::masked);
    }
}

TEST_CASE("masking: selection rate and mode proportions") {
    Rng rng(99, 52);
    const std::vector<int64_t> seq(20, 3);  // length 20, originals all item 3
    int64_t selected = 0, masked = 0, replaced = 0, kept = 0;
    const int64_t trials = 20000;
    for (int64_t t = 0; t < trials; ++t) {
        const MaskedSequence m = apply_masking(seq, 0.2, 50, rng);
        CHECK(m.slots.back().position == 19);
        selected += static_cast<int64_t>(m.slots.size()) - 1;
        for (const PredictionSlot& s : m.slots) {
            if (s.position == 19) continue;
            if (s.kind == MaskKind::masked) ++masked;
            if (s.kind == MaskKind::replaced) ++replaced;
            if (s.kind == MaskKind::kept) ++kept;
        }
    }
    const double mean_selected = static_cast<double>(selected) / static_cast<double>(trials);
    CHECK(std::abs(mean_selected - 3.8) / 3.8 < 0.02);  // p*(L-1) = 3.8
    const double total = static_cast<double>(masked + replaced + kept);
    CHECK(std::abs(static_cast<double>(masked) / total - 0.8) < 0.02);
    CHECK(std::abs(static_cast<double>(replaced) / total - 0.1) < 0.02);
    CHECK(std::abs(static_cast<double>(kept) / total - 0.1) < 0.02);
}

TEST_CASE("masking: replacement excludes the original and covers the rest") {
    Rng rng(7, 53);
    std::vector<int64_t> seen(5, 0);
    for (int64_t t = 0; t < 4000; ++t) {
        const MaskedSequence m = apply_masking({2, 2, 2, 2, 2, 2, 0}, 1.0, 5, rng);
        for (const PredictionSlot& s : m.slots)
            if (s.kind == MaskKind::replaced) {
                CHECK(s.replacement != s.original);
                ++seen[static_cast<size_t>(s.replacement)];
            }
    }
    CHECK(seen[2] == 0);
    for (int64_t i : {0, 1, 3, 4}) CHECK(seen[static_cast<size_t>(i)] > 0);

    // a one-item catalog has nothing to replace with: stays masked
    Rng rng1(7, 54);
    for (int64_t t = 0; t < 500; ++t) {
        const MaskedSequence m = apply_masking({0, 0, 0, 0}, 1.0, 1, rng1);
        for (const PredictionSlot& s : m.slots) CHECK(s.kind != MaskKind::replaced);
    }
}

TEST_CASE("mip loss: closed forms through the encoder") {
    RunConfig cfg = tiny_run_config();
    Model model(cfg.model_config());
    model.init_params(3);

    // single candidate which is also the target: certain softmax
    {
        const Catalog cat = bimodal_catalog(1, 5, 21);
        const CatalogFeatures feats = CatalogFeatures::build(cat, 2);
        Rng rng(0, 55);
        const MaskedSequence m = apply_masking({0, 0, 0}, 0.5, 1, rng);
        CHECK(mip_loss(model, feats, {m}, {0}, 0.05) == doctest::Approx(0.0).epsilon(1e-12));
    }

    // identical item features make every candidate embedding equal: ln C
    {
        const Catalog cat = bimodal_catalog(4, 5, 22, true);
        const CatalogFeatures feats = CatalogFeatures::build(cat, 2);
        Rng rng(0, 56);
        const MaskedSequence m = apply_masking({1, 3, 0}, 0.3, 4, rng);
        const double got = mip_loss(model, feats, {m}, {0, 1, 2, 3}, 0.05);
        CHECK(got == doctest::Approx(std::log(4.0)).epsilon(1e-9));
    }
}

TEST_CASE("mip loss: matches an independent softmax oracle") {
    // oracle over plain vectors; first verify its own closed form
    auto ce_oracle = [](const std::vector<std::vector<double>>& preds,
                        const std::vector<std::vector<double>>& cands,
                        const std::vector<size_t>& targets, double tau) {
        auto cosine = [](const std::vector<double>& a, const std::vector<double>& b) {
            double dot = 0.0, na = 0.0, nb = 0.0;
            for (size_t j = 0; j < a.size(); ++j) {
                dot += a[j] * b[j];
                na += a[j] * a[j];
                nb += b[j] * b[j];
            }
            return dot / (std::sqrt(na) * std::sqrt(nb));
        };
        double total = 0.0;
        for (size_t s = 0; s < preds.size(); ++s) {
            double denom = 0.0, target_logit = 0.0;
            double mx = -1e300;
            std::vector<double> logits;
            for (const auto& c : cands) {
                logits.push_back(cosine(preds[s], c) / tau);
                mx = std::max(mx, logits.back());
            }
            for (size_t j = 0; j < logits.size(); ++j) denom += std::exp(logits[j] - mx);
            target_logit = logits[targets[s]] - mx;
            total += std::log(denom) - target_logit;
        }
        return total / static_cast<double>(preds.size());
    };
    CHECK(ce_oracle({{1.0, 0.0}}, {{2.0, 0.0}, {0.0, 0.5}}, {0}, 1.0) ==
          doctest::Approx(std::log(1.0 + std::exp(-1.0))).epsilon(1e-12));
    CHECK(ce_oracle({{1.0, 0.0}}, {{2.0, 0.0}, {0.0, 0.5}}, {0}, 1.0) ==
          doctest::Approx(0.3132616875182228).epsilon(1e-12));

    RunConfig cfg = tiny_run_config();
    Model model(cfg.model_config());
    model.init_params(11);
    const Catalog cat = bimodal_catalog(5, 5, 23);
    const CatalogFeatures feats = CatalogFeatures::build(cat, 2);

    Rng rng(1, 57);
    const std::vector<MaskedSequence> batch = {
        apply_masking({0, 2, 4, 1}, 0.5, 5, rng),
        apply_masking({3, 3, 0}, 0.5, 5, rng),
    };
    const std::vector<int64_t> candidates = {0, 1, 2, 3, 4};
    const double got = mip_loss(model, feats, batch, candidates, 0.05);

    std::vector<std::vector<double>> preds, cands;
    std::vector<size_t> targets;
    for (const MaskedSequence& m : batch) {
        std::vector<SlotSpec> slots;
        for (size_t pos = 0; pos < m.items.size(); ++pos)
            slots.push_back({m.items[pos], false, false, static_cast<int32_t>(pos)});
        for (const PredictionSlot& s : m.slots) {
            auto& spec = slots[static_cast<size_t>(s.position)];
            if (s.kind == MaskKind::masked) spec.item = -1;
            if (s.kind == MaskKind::replaced) spec.item = s.replacement;
        }
        const Tensor rows = encode_sequence(model, feats, slots);
        for (const PredictionSlot& s : m.slots) {
            std::vector<double> v;
            for (int64_t j = 0; j < rows.cols(); ++j) v.push_back(rows.at(s.position, j));
            preds.push_back(std::move(v));
            targets.push_back(static_cast<size_t>(s.original));
        }
    }
    for (int64_t c : candidates) {
        const Tensor e = encode_item(model, feats, {c, false, false, -1});
        cands.push_back(e.data);
    }
    CHECK(got == doctest::Approx(ce_oracle(preds, cands, targets, 0.05)).epsilon(1e-10));
}

TEST_CASE("mip loss: candidate order does not matter; targets must be present") {
    RunConfig cfg = tiny_run_config();
    Model model(cfg.model_config());
    model.init_params(13);
    const Catalog cat = bimodal_catalog(6, 5, 29);
    const CatalogFeatures feats = CatalogFeatures::build(cat, 2);
    Rng rng(2, 58);
    const std::vector<MaskedSequence> batch = {apply_masking({0, 5, 2, 4}, 0.4, 6, rng)};

    const double a = mip_loss(model, feats, batch, {0, 1, 2, 3, 4, 5}, 0.05);
    const double b = mip_loss(model, feats, batch, {5, 3, 1, 0, 2, 4}, 0.05);
    CHECK(a == doctest::Approx(b).epsilon(1e-12));

    CHECK_THROWS_AS(mip_loss(model, feats, batch, {0, 1}, 0.05), Error);      // targets missing
    CHECK_THROWS_AS(mip_loss(model, feats, batch, {0, 0, 2, 4, 5}, 0.05), Error);  // duplicate
    CHECK_THROWS_AS(mip_loss(model, feats, batch, {}, 0.05), Error);
    CHECK_THROWS_AS(mip_loss(model, feats, {}, {0}, 0.05), Error);
}

TEST_CASE("mip loss: gradients match finite differences at a tiny config") {
    RunConfig cfg = tiny_run_config();
    cfg.d_raw = 4;
    Model model(cfg.model_config());
    Rng warm(17, streams::gradcheck);
    randomize_params(model.parameters(), warm, 0.4);
    const Catalog cat = bimodal_catalog(4, 4, 31);
    const CatalogFeatures feats = CatalogFeatures::build(cat, 2);
    Rng mask_rng(3, 59);
    const std::vector<MaskedSequence> batch = {
        apply_masking({0, 1, 2}, 0.5, 4, mask_rng),
        apply_masking({3, 0}, 0.5, 4, mask_rng),
    };
    const std::vector<int64_t> candidates = {0, 1, 2, 3};

    auto loss = [&](bool with_grad) {
        Tape tape;
        const int node = mip_loss_node(tape, model, feats, batch, candidates, 0.05, false, nullptr);
        if (with_grad) tape.backward(node);
        return tape.value(node).data[0];
    };
    Rng pick(18, streams::gradcheck);
    const GradCheckReport rep =
        grad_check(model.parameters(), loss, 1e-4, 1 << 30, pick);
    INFO("worst ", rep.worst_param, "[", rep.worst_index, "] fd=", rep.worst_fd,
         " analytic=", rep.worst_analytic);
    CHECK(rep.max_rel_err < 1e-4);
}

// shared by the two finetune_run cases below: every user walks the fixed
// cycle i -> (i+1) mod n, with staggered starts so the train windows cover
// all transitions
std::vector<SeqExample> cycle_examples(int64_t n_users, int64_t n_items) {
    std::vector<SeqExample> examples;
    for (int64_t u = 0; u < n_users; ++u) {
        SeqExample ex;
        ex.user_id = "u" + std::to_string(u);
        int64_t item = u % n_items;
        for (int64_t s = 0; s < 6; ++s) {
            ex.train.push_back(item);
            item = (item + 1) % n_items;
        }
        ex.valid_target = item;
        ex.test_target = (item + 1) % n_items;
        examples.push_back(std::move(ex));
    }
    return examples;
}

TEST_CASE("finetune run: patience clock and tie-refreshed checkpoint") {
    // eight items: Recall@10 is saturated from the very first epoch, so the
    // controller sees one long run of ties and the stopping rule is exact
    const Catalog cat = bimodal_catalog(8, 5, 37);
    const CatalogFeatures feats = CatalogFeatures::build(cat, 2);
    const std::vector<SeqExample> examples = cycle_examples(12, 8);

    RunConfig cfg = tiny_run_config();
    cfg.n_max = 4;
    cfg.embed_dropout = 0.1;
    cfg.hidden_dropout = 0.1;
    cfg.finetune_epochs = 150;
    cfg.finetune_batch = 4;
    cfg.finetune_lr = 1e-3;
    cfg.lr_decay = 1.0;
    cfg.patience = 7;
    cfg.seed = 4;

    Model model(cfg.model_config());
    model.init_params(cfg.seed);
    AdamWConfig ocfg = cfg.adamw_config();
    ocfg.lr = cfg.finetune_lr;
    AdamW opt(model.parameters(), ocfg);
    const FinetuneResult res = finetune_run(model, opt, feats, examples, cfg, cfg.seed, nullptr);

    // stopped by patience, not by the epoch budget: the single strict
    // improvement is epoch 0, and ties do not extend the window
    REQUIRE(res.log.size() == static_cast<size_t>(cfg.patience) + 1);
    CHECK(res.log.back().epoch == cfg.patience);
    for (const FinetuneEpoch& e : res.log) {
        CHECK(e.valid_recall == 1.0);
        CHECK(e.lr == cfg.finetune_lr);
        CHECK(std::isfinite(e.train_loss));
    }
    CHECK(res.best_recall == 1.0);
    // of equally good epochs the most-trained one wins
    CHECK(res.best_epoch == res.log.back().epoch);
    CHECK(validation_recall(model, feats, examples, 10) == 1.0);

    // same seed reproduces the whole trajectory
    Model model2(cfg.model_config());
    model2.init_params(cfg.seed);
    AdamW opt2(model2.parameters(), ocfg);
    const FinetuneResult res2 = finetune_run(model2, opt2, feats, examples, cfg, cfg.seed, nullptr);
    CHECK(res2.best_epoch == res.best_epoch);
    REQUIRE(res2.log.size() == res.log.size());
    for (size_t e = 0; e < res.log.size(); ++e) {
        CHECK(res2.log[e].train_loss == res.log[e].train_loss);
        CHECK(res2.log[e].valid_recall == res.log[e].valid_recall);
    }
}

TEST_CASE("finetune run: learns a deterministic successor") {
    const int64_t n_items = 16;  // > 10 so Recall@10 is not free
    const Catalog cat = bimodal_catalog(n_items, 5, 37);
    const CatalogFeatures feats = CatalogFeatures::build(cat, 2);
    const std::vector<SeqExample> examples = cycle_examples(16, n_items);

    RunConfig cfg = tiny_run_config();
    cfg.d = 32;
    cfg.n_heads = 4;
    // windows of two with the slot pinned to the final position: every
    // training step is literally "guess the successor"
    cfg.n_max = 2;
    cfg.mask_ratio = 0.0;
    cfg.embed_dropout = 0.1;
    cfg.hidden_dropout = 0.1;
    cfg.pretrain_batch = 16;
    cfg.pretrain_epochs = 40;
    cfg.pretrain_lr = 1e-3;
    cfg.finetune_epochs = 150;
    cfg.finetune_batch = 4;
    cfg.finetune_lr = 3e-3;
    cfg.lr_decay = 1.0;
    cfg.patience = 150;  // run the whole budget; recall saturates mid-run
    cfg.seed = 4;

    Model model(cfg.model_config());
    model.init_params(cfg.seed);
    {  // contrastive warm start; from a cold init the masked objective stalls
        AdamWConfig pocfg = cfg.adamw_config();
        pocfg.lr = cfg.pretrain_lr;
        AdamW popt(model.parameters(), pocfg);
        pretrain_run(model, popt, feats, cfg, cfg.seed, nullptr);
    }
    AdamWConfig ocfg = cfg.adamw_config();
    ocfg.lr = cfg.finetune_lr;
    AdamW opt(model.parameters(), ocfg);
    const FinetuneResult res = finetune_run(model, opt, feats, examples, cfg, cfg.seed, nullptr);

    REQUIRE(res.log.size() == static_cast<size_t>(cfg.finetune_epochs));
    CHECK(res.best_recall == 1.0);
    // saturation plus tie refreshes pin the checkpoint to the final epoch
    CHECK(res.best_epoch == res.log.back().epoch);
    CHECK(validation_recall(model, feats, examples, 10) == res.best_recall);

    // the kept model actually ranks the true successor on the held-out step
    const EvalReport rep = evaluate(model, feats, examples, {1, 10});
    CHECK(rep.recall[1] > 0.9);
    CHECK(rep.recall[0] > 0.5);  // chance is 1/16
}

TEST_CASE("finetune run: in-batch candidates still cover every target") {
    const Catalog cat = bimodal_catalog(6, 5, 41);
    const CatalogFeatures feats = CatalogFeatures::build(cat, 2);
    std::vector<SeqExample> examples;
    for (int64_t u = 0; u < 6; ++u) {
        SeqExample ex;
        ex.user_id = "u" + std::to_string(u);
        ex.train = {u % 6, (u + 1) % 6, (u + 2) % 6};
        ex.valid_target = (u + 3) % 6;
        ex.test_target = (u + 4) % 6;
        examples.push_back(std::move(ex));
    }
    RunConfig cfg = tiny_run_config();
    cfg.candidate_mode = CandidateMode::in_batch;
    cfg.finetune_epochs = 3;
    cfg.finetune_batch = 3;
    cfg.finetune_lr = 1e-3;
    cfg.patience = 10;
    cfg.seed = 6;
    Model model(cfg.model_config());
    model.init_params(cfg.seed);
    AdamWConfig ocfg = cfg.adamw_config();
    ocfg.lr = cfg.finetune_lr;
    AdamW opt(model.parameters(), ocfg);
    const FinetuneResult res = finetune_run(model, opt, feats, examples, cfg, cfg.seed, nullptr);
    CHECK(res.steps == 3 * 2);  // 6 users in batches of 3
    for (const FinetuneEpoch& e : res.log) CHECK(std::isfinite(e.train_loss));
}
