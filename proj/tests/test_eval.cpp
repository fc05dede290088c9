#include <doctest.h>
#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <vector>

#include "mmrec/eval.hpp"
#include "mmrec/rng.hpp"

using namespace mmrec;

namespace {

Catalog bimodal_catalog(int64_t n, int64_t d_raw, uint64_t seed) {
    Rng rng(seed, 902);
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

ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.d_raw = 5;
    cfg.d = 8;
    cfg.n_layers = 1;
    cfg.n_heads = 2;
    cfg.max_frames = 2;
    cfg.n_max = 4;
    return cfg;
}

// sort-based ranking oracle: descending score, ascending ordinal on ties
int64_t rank_oracle(const std::vector<double>& scores, int64_t target) {
    std::vector<int64_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int64_t a, int64_t b) {
        if (scores[static_cast<size_t>(a)] != scores[static_cast<size_t>(b)])
            return scores[static_cast<size_t>(a)] > scores[static_cast<size_t>(b)];
        return a < b;
    });
    for (size_t pos = 0; pos < order.size(); ++pos)
        if (order[pos] == target) return static_cast<int64_t>(pos) + 1;
    return -1;
}

}  // namespace

TEST_CASE("rank: deterministic tie-break by ordinal") {
    const std::vector<double> scores = {1.0, 3.0, 3.0, 2.0};
    CHECK(rank_of_target(scores, 1) == 1);  // first of the tied maxima
    CHECK(rank_of_target(scores, 2) == 2);  // loses the tie to ordinal 1
    CHECK(rank_of_target(scores, 3) == 3);
    CHECK(rank_of_target(scores, 0) == 4);
    CHECK_THROWS_AS(rank_of_target(scores, 4), Error);
    CHECK_THROWS_AS(rank_of_target(scores, -1), Error);
    CHECK_THROWS_AS(rank_of_target({}, 0), Error);

    const std::vector<double> flat(5, 0.25);
    for (int64_t t = 0; t < 5; ++t) CHECK(rank_of_target(flat, t) == t + 1);
}

TEST_CASE("recall and ndcg: closed forms and bounds") {
    CHECK(recall_at_k(1, 10) == 1.0);
    CHECK(recall_at_k(10, 10) == 1.0);
    CHECK(recall_at_k(11, 10) == 0.0);
    CHECK(ndcg_at_k(1, 10) == 1.0);  // 1/log2(2)
    CHECK(ndcg_at_k(2, 10) == doctest::Approx(1.0 / std::log2(3.0)).epsilon(1e-15));
    CHECK(ndcg_at_k(4, 10) == doctest::Approx(1.0 / std::log2(5.0)).epsilon(1e-15));
    CHECK(ndcg_at_k(11, 10) == 0.0);
    CHECK_THROWS_AS(recall_at_k(0, 10), Error);
    CHECK_THROWS_AS(recall_at_k(3, 0), Error);
    CHECK_THROWS_AS(ndcg_at_k(-1, 10), Error);
    CHECK_THROWS_AS(ndcg_at_k(3, 0), Error);

    for (int64_t rank = 1; rank <= 30; ++rank) {
        double prev_r = 0.0, prev_n = 0.0;
        for (int64_t k = 1; k <= 30; ++k) {
            const double r = recall_at_k(rank, k), n = ndcg_at_k(rank, k);
            CHECK(r >= prev_r);  // monotone in K
            CHECK(n >= prev_n);
            CHECK(n <= r);  // discounted gain never exceeds the hit indicator
            CHECK(0.0 <= n);
            CHECK(r <= 1.0);
            prev_r = r;
            prev_n = n;
        }
    }
}

TEST_CASE("rank matches the full-sort oracle on random score lists") {
    Rng rng(123, 60);
    for (int trial = 0; trial < 1000; ++trial) {
        const int64_t n = 1 + static_cast<int64_t>(rng.uniform_below(40));
        std::vector<double> scores;
        for (int64_t i = 0; i < n; ++i)
            scores.push_back(static_cast<double>(rng.uniform_below(8)));  // plenty of ties
        const int64_t target = static_cast<int64_t>(rng.uniform_below(static_cast<uint64_t>(n)));
        CHECK(rank_of_target(scores, target) == rank_oracle(scores, target));
    }
}

TEST_CASE("static evaluation: hand-checked two-user example") {
    std::vector<SeqExample> ex(2);
    ex[0] = {"u0", {1}, 2, 0};
    ex[1] = {"u1", {0}, 1, 2};
    const std::vector<double> scores = {5.0, 1.0, 3.0, 2.0};
    // targets: u0 -> item 0 (rank 1), u1 -> item 2 (rank 2)
    const EvalReport rep = evaluate_static(scores, ex, {1, 2});
    CHECK(rep.n_users == 2);
    CHECK(rep.ranks == std::vector<int64_t>{1, 2});
    REQUIRE(rep.recall.size() == 2);
    CHECK(rep.recall[0] == 0.5);
    CHECK(rep.recall[1] == 1.0);
    CHECK(rep.ndcg[0] == 0.5);
    CHECK(rep.ndcg[1] == doctest::Approx(0.5 * (1.0 + 1.0 / std::log2(3.0))).epsilon(1e-15));

    CHECK_THROWS_AS(evaluate_static(scores, ex, {0}), Error);
    CHECK_THROWS_AS(evaluate_static(scores, {}, {1}), Error);
}

TEST_CASE("pop baseline: counts train prefixes only") {
    std::vector<SeqExample> ex(2);
    ex[0] = {"u0", {0, 1, 1}, 3, 2};
    ex[1] = {"u1", {1, 2}, 0, 3};
    const std::vector<double> pop = pop_scores(ex, 4);
    CHECK(pop == std::vector<double>{1.0, 3.0, 1.0, 0.0});  // targets not counted

    // most-popular item ranks first everywhere
    const EvalReport rep = evaluate_static(pop, ex, {1});
    CHECK(rank_of_target(pop, 1) == 1);
    CHECK(rep.ranks[0] == 3);  // u0 test target 2: behind items 1, 0 (tie, smaller ordinal)
    CHECK(rep.ranks[1] == 4);  // u1 test target 3: count 0, last

    CHECK_THROWS_AS(pop_scores(ex, 2), Error);  // train ordinal 2 out of range
}

TEST_CASE("catalog embeddings: unit rows matching the single-item path") {
    Model model(tiny_config());
    model.init_params(19);
    const Catalog cat = bimodal_catalog(7, 5, 61);
    const CatalogFeatures feats = CatalogFeatures::build(cat, 2);
    const Tensor embs = catalog_embeddings(model, feats);
    REQUIRE(embs.shape == std::vector<int64_t>{7, 8});
    for (int64_t i = 0; i < 7; ++i) {
        double sq = 0.0;
        for (int64_t j = 0; j < 8; ++j) sq += embs.at(i, j) * embs.at(i, j);
        CHECK(sq == doctest::Approx(1.0).epsilon(1e-12));
        const Tensor one =
            l2_normalize_rows(Tensor({1, 8}, encode_item(model, feats, {i, false, false, -1}).data));
        for (int64_t j = 0; j < 8; ++j) CHECK(embs.at(i, j) == one.at(0, j));
    }
}

TEST_CASE("query vectors: truncation to the window and masked final slot") {
    Model model(tiny_config());  // n_max 4 -> keep last 3 history items
    model.init_params(29);
    const Catalog cat = bimodal_catalog(7, 5, 67);
    const CatalogFeatures feats = CatalogFeatures::build(cat, 2);

    const std::vector<int64_t> long_hist = {6, 5, 4, 3, 2, 1};
    const Tensor a = query_vectors(model, feats, {long_hist});
    const Tensor b = query_vectors(model, feats, {{3, 2, 1}});
    CHECK(a.data == b.data);

    // equals the sequence tower run by hand with the masked query slot
    const Tensor rows = encode_sequence(
        model, feats, {{3, false, false, 0}, {2, false, false, 1}, {1, false, false, 2},
                       {-1, false, false, 3}});
    for (int64_t j = 0; j < 8; ++j) CHECK(a.at(0, j) == rows.at(3, j));

    // batching users together changes nothing
    const Tensor joint = query_vectors(model, feats, {long_hist, {0, 1}, {5}});
    for (int64_t j = 0; j < 8; ++j) CHECK(joint.at(0, j) == a.at(0, j));
    const Tensor solo = query_vectors(model, feats, {{5}});
    for (int64_t j = 0; j < 8; ++j) CHECK(joint.at(2, j) == solo.at(0, j));
}

TEST_CASE("scores are cosine over tau and ignore embedding scale") {
    Model model(tiny_config());
    model.init_params(31);
    const Catalog cat = bimodal_catalog(5, 5, 71);
    const CatalogFeatures feats = CatalogFeatures::build(cat, 2);
    const Tensor embs = catalog_embeddings(model, feats);
    const std::vector<int64_t> hist = {0, 3};
    const std::vector<double> scores = score_catalog(model, feats, embs, hist);
    REQUIRE(scores.size() == 5);
    const double tau = model.config().tau;
    for (double s : scores) CHECK(std::abs(s) <= 1.0 / tau + 1e-9);

    // rescaling an item embedding before normalization leaves scores alone
    Tensor scaled = embs;
    for (int64_t j = 0; j < 8; ++j) scaled.at(2, j) *= 37.5;
    const std::vector<double> rescored =
        score_catalog(model, feats, l2_normalize_rows(scaled), hist);
    for (size_t i = 0; i < scores.size(); ++i)
        CHECK(scores[i] == doctest::Approx(rescored[i]).epsilon(1e-12));

    CHECK_THROWS_AS(score_catalog(model, feats, embs, {}), Error);
}

TEST_CASE("predict_next: brute-force agreement, clipping, determinism") {
    Model model(tiny_config());
    model.init_params(37);
    const Catalog cat = bimodal_catalog(9, 5, 73);
    const CatalogFeatures feats = CatalogFeatures::build(cat, 2);
    const std::vector<int64_t> hist = {4, 7};

    const Tensor embs = catalog_embeddings(model, feats);
    const std::vector<double> scores = score_catalog(model, feats, embs, hist);
    std::vector<int64_t> want(9);
    std::iota(want.begin(), want.end(), 0);
    std::sort(want.begin(), want.end(), [&](int64_t a, int64_t b) {
        if (scores[static_cast<size_t>(a)] != scores[static_cast<size_t>(b)])
            return scores[static_cast<size_t>(a)] > scores[static_cast<size_t>(b)];
        return a < b;
    });

    const std::vector<int64_t> top3 = predict_next(model, feats, hist, 3);
    CHECK(top3 == std::vector<int64_t>(want.begin(), want.begin() + 3));
    CHECK(predict_next(model, feats, hist, 3) == top3);

    const std::vector<int64_t> all = predict_next(model, feats, hist, 9);
    CHECK(all == want);
    std::vector<int64_t> sorted_all = all;
    std::sort(sorted_all.begin(), sorted_all.end());
    for (int64_t i = 0; i < 9; ++i) CHECK(sorted_all[static_cast<size_t>(i)] == i);

    CHECK(predict_next(model, feats, hist, 99) == want);  // clipped
    CHECK_THROWS_AS(predict_next(model, feats, hist, 0), Error);
}

TEST_CASE("evaluate: batched protocol equals the per-user path") {
    Model model(tiny_config());
    model.init_params(41);
    const Catalog cat = bimodal_catalog(6, 5, 79);
    const CatalogFeatures feats = CatalogFeatures::build(cat, 2);

    std::vector<SeqExample> ex(3);
    ex[0] = {"u0", {0, 1}, 2, 3};
    ex[1] = {"u1", {5, 4, 3, 2}, 1, 0};  // long train hits the window
    ex[2] = {"u2", {3}, 5, 4};

    const std::vector<int64_t> ks = {1, 3, 6};
    const EvalReport rep = evaluate(model, feats, ex, ks);
    CHECK(rep.n_users == 3);
    CHECK(rep.ks == ks);
    REQUIRE(rep.ranks.size() == 3);

    const Tensor embs = catalog_embeddings(model, feats);
    std::vector<double> recall_sum(ks.size(), 0.0), ndcg_sum(ks.size(), 0.0);
    for (size_t u = 0; u < ex.size(); ++u) {
        std::vector<int64_t> input = ex[u].train;
        input.push_back(ex[u].valid_target);  // test-time input includes validation item
        const std::vector<double> scores = score_catalog(model, feats, embs, input);
        const int64_t rank = rank_of_target(scores, ex[u].test_target);
        CHECK(rep.ranks[u] == rank);
        for (size_t ki = 0; ki < ks.size(); ++ki) {
            recall_sum[ki] += recall_at_k(rank, ks[ki]);
            ndcg_sum[ki] += ndcg_at_k(rank, ks[ki]);
        }
    }
    for (size_t ki = 0; ki < ks.size(); ++ki) {
        CHECK(rep.recall[ki] == doctest::Approx(recall_sum[ki] / 3.0).epsilon(1e-15));
        CHECK(rep.ndcg[ki] == doctest::Approx(ndcg_sum[ki] / 3.0).epsilon(1e-15));
    }
    CHECK(rep.recall.back() == 1.0);  // K = catalog size always hits

    // validation protocol: train only, valid target
    const double vrec = validation_recall(model, feats, ex, 2);
    double want = 0.0;
    for (const SeqExample& e : ex) {
        const std::vector<double> scores = score_catalog(model, feats, embs, e.train);
        want += recall_at_k(rank_of_target(scores, e.valid_target), 2);
    }
    CHECK(vrec == doctest::Approx(want / 3.0).epsilon(1e-15));
}

TEST_CASE("evaluate: identical inputs give identical reports") {
    Model model(tiny_config());
    model.init_params(43);
    const Catalog cat = bimodal_catalog(5, 5, 83);
    const CatalogFeatures feats = CatalogFeatures::build(cat, 2);
    std::vector<SeqExample> ex(2);
    ex[0] = {"u0", {0, 1, 2}, 3, 4};
    ex[1] = {"u1", {4, 3}, 2, 1};
    const EvalReport a = evaluate(model, feats, ex, {1, 5});
    const EvalReport b = evaluate(model, feats, ex, {1, 5});
    CHECK(a.ranks == b.ranks);
    CHECK(a.recall == b.recall);
    CHECK(a.ndcg == b.ndcg);
    CHECK(format_report(a) == format_report(b));
}

TEST_CASE("reports: exact text format and file round-trip") {
    EvalReport rep;
    rep.n_users = 2;
    rep.ks = {10, 50};
    rep.ranks = {1, 12};
    rep.recall = {0.5, 1.0};
    rep.ndcg = {0.5, 0.635};
    const std::string text = format_report(rep);
    CHECK(text ==
          "recall\t10\t0.5\nndcg\t10\t0.5\nrecall\t50\t1\nndcg\t50\t0.635\n");

    const std::string path = (std::filesystem::temp_directory_path() /
                              ("mmrec_report_" + std::to_string(::getpid()) + ".tsv"))
                                 .string();
    write_report(path, rep);
    std::ifstream is(path, std::ios::binary);
    const std::string body(std::istreambuf_iterator<char>(is), {});
    CHECK(body == text);
    std::filesystem::remove(path);
}

TEST_CASE("to_examples resolves ids and rejects unknown items") {
    const Catalog cat = bimodal_catalog(3, 5, 89);  // ids it0, it1, it2
    SplitDataset split;
    split.users.push_back({"ua", {"it0", "it2"}, "it1", "it0"});
    const std::vector<SeqExample> ex = to_examples(split, cat);
    REQUIRE(ex.size() == 1);
    CHECK(ex[0].train == std::vector<int64_t>{0, 2});
    CHECK(ex[0].valid_target == 1);
    CHECK(ex[0].test_target == 0);

    split.users.push_back({"ub", {"it0"}, "missing", "it1"});
    CHECK_THROWS_AS(to_examples(split, cat), Error);
}
