#include <doctest.h>

#include <cmath>
#include <vector>

#include "mmrec/gradcheck.hpp"
#include "mmrec/pretrain.hpp"

using namespace mmrec;

namespace {

Tensor random_rows(int64_t n, int64_t d, Rng& rng) {
    Tensor t = Tensor::zeros({n, d});
    for (double& x : t.data) x = rng.normal();
    return t;
}

Catalog bimodal_catalog(int64_t n, int64_t d_raw, uint64_t seed) {
    Rng rng(seed, 900);
    Catalog c;
    c.d_raw = d_raw;
    for (int64_t i = 0; i < n; ++i) {
        ItemRecord rec;
        rec.item_id = "it" + std::to_string(i);
        rec.has_visual = rec.has_text = true;
        rec.visual.emplace_back();
        for (int64_t j = 0; j < d_raw; ++j) rec.visual.back().push_back(rng.normal());
        for (int64_t j = 0; j < d_raw; ++j) rec.text.push_back(rng.normal());
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
    cfg.n_max = 4;
    return cfg;
}

}  // namespace

TEST_CASE("nce: single pair scores zero") {
    Rng rng(1, 2);
    for (int trial = 0; trial < 8; ++trial) {
        const Tensor x = random_rows(1, 6, rng);
        const Tensor y = random_rows(1, 6, rng);
        CHECK(std::abs(nce_loss(x, y, 0.05)) <= 1e-12);
    }
}

TEST_CASE("nce: two identical rows give 2 ln 2 at any temperature") {
    Rng rng(3, 4);
    for (const double tau : {1.0, 0.05, 0.3}) {
        Tensor x = Tensor::zeros({2, 5});
        const Tensor row = random_rows(1, 5, rng);
        for (int64_t j = 0; j < 5; ++j) {
            x.at(0, j) = row.data[static_cast<size_t>(j)];
            x.at(1, j) = row.data[static_cast<size_t>(j)];
        }
        CHECK(std::abs(nce_loss(x, x, tau) - 2.0 * std::log(2.0)) <= 1e-9);
    }
}

TEST_CASE("nce: orthonormal pairs at tau 1") {
    const Tensor x({2, 2}, {1.0, 0.0, 0.0, 1.0});
    const double want = 2.0 * std::log(1.0 + std::exp(-1.0));  // 0.62652...
    CHECK(nce_loss(x, x, 1.0) == doctest::Approx(want).epsilon(1e-12));
    CHECK(want == doctest::Approx(0.6265233750364456).epsilon(1e-12));
}

TEST_CASE("nce: symmetric in its arguments") {
    Rng rng(5, 6);
    for (int trial = 0; trial < 100; ++trial) {
        const int64_t b = 1 + static_cast<int64_t>(rng.uniform_below(6));
        const Tensor x = random_rows(b, 7, rng);
        const Tensor y = random_rows(b, 7, rng);
        const double xy = nce_loss(x, y, 0.05);
        const double yx = nce_loss(y, x, 0.05);
        CHECK(std::abs(xy - yx) <= 1e-12);
        CHECK(xy >= 0.0);
    }
}

TEST_CASE("nce: joint row permutation leaves the loss unchanged") {
    Rng rng(7, 8);
    const Tensor x = random_rows(5, 6, rng);
    const Tensor y = random_rows(5, 6, rng);
    const std::vector<int64_t> perm = {3, 0, 4, 1, 2};
    Tensor xp = Tensor::zeros({5, 6}), yp = Tensor::zeros({5, 6});
    for (int64_t r = 0; r < 5; ++r)
        for (int64_t j = 0; j < 6; ++j) {
            xp.at(r, j) = x.at(perm[static_cast<size_t>(r)], j);
            yp.at(r, j) = y.at(perm[static_cast<size_t>(r)], j);
        }
    CHECK(std::abs(nce_loss(x, y, 0.1) - nce_loss(xp, yp, 0.1)) <= 1e-12);
}

TEST_CASE("nce: self-alignment is bounded by 2 ln B") {
    Rng rng(9, 10);
    for (int trial = 0; trial < 20; ++trial) {
        const int64_t b = 2 + static_cast<int64_t>(rng.uniform_below(5));
        const Tensor x = random_rows(b, 8, rng);
        // the diagonal holds the largest logit of every row (cosine with
        // itself is 1), so each row's target probability is at least 1/B
        CHECK(nce_loss(x, x, 0.05) <= 2.0 * std::log(static_cast<double>(b)) + 1e-12);
    }
}

TEST_CASE("nce: argument validation") {
    const Tensor x({2, 3}, {1.0, 0.0, 0.0, 0.0, 1.0, 0.0});
    const Tensor y({3, 3}, std::vector<double>(9, 0.5));
    CHECK_THROWS_AS(nce_loss(x, y, 0.05), Error);  // row mismatch
    CHECK_THROWS_AS(nce_loss(x, x, 0.0), Error);   // bad temperature
    CHECK_THROWS_AS(nce_loss(x, x, -1.0), Error);
}

TEST_CASE("views: bi-modal batches only, masked-token construction") {
    const Catalog cat = bimodal_catalog(4, 5, 11);
    const CatalogFeatures feats = CatalogFeatures::build(cat, 2);
    RunConfig cfg = tiny_run_config();
    Model model(cfg.model_config());
    model.init_params(42);

    Tape tape;
    const ViewNodes views = make_views(tape, model, feats, {0, 2}, false, nullptr, nullptr);
    const Tensor &v = tape.value(views.v), &t = tape.value(views.t), &vt = tape.value(views.vt);
    CHECK(v.shape == std::vector<int64_t>{2, 8});
    CHECK(t.shape == std::vector<int64_t>{2, 8});
    CHECK(vt.shape == std::vector<int64_t>{2, 8});

    // view v masks the text token, so it equals encoding the item that way
    const Tensor v0 = encode_item(model, feats, {0, false, true, -1});
    const Tensor t0 = encode_item(model, feats, {0, true, false, -1});
    const Tensor vt0 = encode_item(model, feats, {0, false, false, -1});
    for (int64_t j = 0; j < 8; ++j) {
        CHECK(v.at(0, j) == v0.data[static_cast<size_t>(j)]);
        CHECK(t.at(0, j) == t0.data[static_cast<size_t>(j)]);
        CHECK(vt.at(0, j) == vt0.data[static_cast<size_t>(j)]);
    }

    // without dropout the augmented pass reproduces the first one
    CHECK(tape.value(views.v_aug).data == v.data);
    CHECK(tape.value(views.t_aug).data == t.data);
    CHECK(tape.value(views.vt_aug).data == vt.data);

    // an item missing a modality cannot form contrastive views
    Catalog broken = cat;
    broken.items[1].has_text = false;
    broken.items[1].text.clear();
    const CatalogFeatures bf = CatalogFeatures::build(broken, 2);
    Tape tape2;
    CHECK_THROWS_AS(make_views(tape2, model, bf, {1}, false, nullptr, nullptr), Error);
}

TEST_CASE("views: dropout makes the augmented pass distinct but replayable") {
    const Catalog cat = bimodal_catalog(3, 5, 13);
    const CatalogFeatures feats = CatalogFeatures::build(cat, 2);
    RunConfig cfg = tiny_run_config();
    Model model(cfg.model_config());
    model.init_params(7);

    auto views_data = [&](uint64_t sa, uint64_t sb) {
        Tape tape;
        Rng a(99, sa), b(99, sb);
        const ViewNodes views = make_views(tape, model, feats, {0, 1, 2}, true, &a, &b);
        return std::pair(tape.value(views.vt).data, tape.value(views.vt_aug).data);
    };
    const auto [base1, aug1] = views_data(3, 4);
    const auto [base2, aug2] = views_data(3, 4);
    CHECK(base1 == base2);
    CHECK(aug1 == aug2);
    CHECK(base1 != aug1);  // independent dropout draws

    // identical streams collapse the two passes onto each other
    const auto [base3, aug3] = views_data(5, 5);
    CHECK(base3 == aug3);
}

TEST_CASE("composite loss: weighted sum of the four terms") {
    const Catalog cat = bimodal_catalog(4, 5, 17);
    const CatalogFeatures feats = CatalogFeatures::build(cat, 2);
    RunConfig cfg = tiny_run_config();
    Model model(cfg.model_config());
    model.init_params(23);

    Tape tape;
    const ViewNodes views = make_views(tape, model, feats, {0, 1, 2, 3}, false, nullptr, nullptr);
    const int node = composite_loss_node(tape, views, cfg);
    const double got = tape.value(node).data[0];

    const Tensor &v = tape.value(views.v), &t = tape.value(views.t), &vt = tape.value(views.vt);
    const double want = 0.25 * (nce_loss(v, v, cfg.tau) + nce_loss(t, t, cfg.tau) +
                                nce_loss(v, t, cfg.tau) + nce_loss(vt, vt, cfg.tau));
    CHECK(got == doctest::Approx(want).epsilon(1e-12));

    // a single selector weight isolates one term
    RunConfig sel = cfg;
    sel.lambda_vv = sel.lambda_tt = sel.lambda_vtvt = 0.0;
    sel.lambda_vt = 1.0;
    Tape tape2;
    const ViewNodes views2 = make_views(tape2, model, feats, {0, 1, 2, 3}, false, nullptr, nullptr);
    const int node2 = composite_loss_node(tape2, views2, sel);
    CHECK(tape2.value(node2).data[0] == doctest::Approx(nce_loss(v, t, cfg.tau)).epsilon(1e-12));

    RunConfig none = cfg;
    none.lambda_vv = none.lambda_tt = none.lambda_vt = none.lambda_vtvt = 0.0;
    Tape tape3;
    const ViewNodes views3 = make_views(tape3, model, feats, {0, 1}, false, nullptr, nullptr);
    CHECK_THROWS_AS(composite_loss_node(tape3, views3, none), Error);
}

TEST_CASE("pretrain run: schedule, step count, loss goes down") {
    const Catalog cat = bimodal_catalog(6, 5, 19);
    const CatalogFeatures feats = CatalogFeatures::build(cat, 2);
    RunConfig cfg = tiny_run_config();
    cfg.embed_dropout = 0.1;
    cfg.hidden_dropout = 0.1;
    cfg.pretrain_epochs = 30;
    cfg.pretrain_batch = 4;  // 6 items -> batches of 4 and 2
    cfg.pretrain_lr = 1e-2;
    cfg.lr_decay = 0.98;
    cfg.seed = 5;

    Model model(cfg.model_config());
    model.init_params(cfg.seed);
    AdamWConfig ocfg = cfg.adamw_config();
    ocfg.lr = cfg.pretrain_lr;
    AdamW opt(model.parameters(), ocfg);
    const PretrainResult res = pretrain_run(model, opt, feats, cfg, cfg.seed, nullptr);

    REQUIRE(res.log.size() == 30);
    CHECK(res.steps == 30 * 2);
    CHECK(opt.step_count() == res.steps);
    for (int64_t e = 0; e < 30; ++e) {
        CHECK(res.log[static_cast<size_t>(e)].epoch == e);
        CHECK(res.log[static_cast<size_t>(e)].lr == lr_schedule(1e-2, 0.98, e));
    }
    CHECK(res.log.back().loss < res.log.front().loss);
    CHECK(res.log.back().loss < 0.5 * res.log.front().loss);

    // reproducibility: the same seed gives the same trajectory
    Model model2(cfg.model_config());
    model2.init_params(cfg.seed);
    AdamW opt2(model2.parameters(), ocfg);
    const PretrainResult res2 = pretrain_run(model2, opt2, feats, cfg, cfg.seed, nullptr);
    for (size_t e = 0; e < res.log.size(); ++e) CHECK(res.log[e].loss == res2.log[e].loss);
    const auto pa = model.parameters(), pb = model2.parameters();
    for (size_t i = 0; i < pa.size(); ++i) CHECK(pa[i]->value.data == pb[i]->value.data);
}

TEST_CASE("pretrain: composite gradients match finite differences") {
    const Catalog cat = bimodal_catalog(3, 4, 29);
    const CatalogFeatures feats = CatalogFeatures::build(cat, 2);
    RunConfig cfg = tiny_run_config();
    cfg.d_raw = 4;
    Model model(cfg.model_config());
    Rng warm(29, streams::gradcheck);
    randomize_params(model.parameters(), warm, 0.4);

    auto loss = [&](bool with_grad) {
        Tape tape;
        const ViewNodes views =
            make_views(tape, model, feats, {0, 1, 2}, false, nullptr, nullptr);
        const int node = composite_loss_node(tape, views, cfg);
        if (with_grad) tape.backward(node);
        return tape.value(node).data[0];
    };
    Rng pick(30, streams::gradcheck);
    const GradCheckReport rep =
        grad_check(model.parameters(), loss, 1e-4, 1 << 30, pick);
    INFO("worst ", rep.worst_param, "[", rep.worst_index, "] fd=", rep.worst_fd,
         " analytic=", rep.worst_analytic);
    CHECK(rep.max_rel_err < 1e-4);
}
