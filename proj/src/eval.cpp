#include "mmrec/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>

#include "mmrec/config.hpp"

namespace mmrec {

namespace {

// Compensated (Kahan) mean so aggregation is independent of user order.
class KahanSum {
  public:
    void add(double x) {
        const double y = x - c_;
        const double t = s_ + y;
        c_ = (t - s_) - y;
        s_ = t;
    }
    double sum() const { return s_; }

  private:
    double s_ = 0.0, c_ = 0.0;
};

std::vector<int64_t> tail(const std::vector<int64_t>& v, int64_t n) {
    if (static_cast<int64_t>(v.size()) <= n) return v;
    return std::vector<int64_t>(v.end() - n, v.end());
}

}  // namespace

std::vector<SeqExample> to_examples(const SplitDataset& split, const Catalog& catalog) {
    std::vector<SeqExample> out;
    out.reserve(split.users.size());
    for (const SplitUser& u : split.users) {
        SeqExample e;
        e.user_id = u.user_id;
        e.train.reserve(u.train.size());
        for (const std::string& item : u.train) e.train.push_back(catalog.ordinal_of(item));
        e.valid_target = catalog.ordinal_of(u.valid_target);
        e.test_target = catalog.ordinal_of(u.test_target);
        out.push_back(std::move(e));
    }
    return out;
}

int64_t rank_of_target(const std::vector<double>& scores, int64_t target) {
    if (target < 0 || target >= static_cast<int64_t>(scores.size()))
        throw Error(ErrorKind::input, "rank_of_target: target out of range");
    const double ts = scores[static_cast<size_t>(target)];
    int64_t rank = 1;
    for (int64_t i = 0; i < static_cast<int64_t>(scores.size()); ++i) {
        const double s = scores[static_cast<size_t>(i)];
        if (s > ts || (s == ts && i < target)) ++rank;
    }
    return rank;
}

double recall_at_k(int64_t rank, int64_t k) {
    if (rank < 1 || k < 1) throw Error(ErrorKind::input, "recall_at_k: rank and k must be >= 1");
    return rank <= k ? 1.0 : 0.0;
}

double ndcg_at_k(int64_t rank, int64_t k) {
    if (rank < 1 || k < 1) throw Error(ErrorKind::input, "ndcg_at_k: rank and k must be >= 1");
    if (rank > k) return 0.0;
    return 1.0 / std::log2(static_cast<double>(rank) + 1.0);
}

Tensor catalog_embeddings(Model& model, const CatalogFeatures& feats) {
    const int64_t n = static_cast<int64_t>(feats.vis_row.size());
    if (n == 0) throw Error(ErrorKind::input, "catalog_embeddings: empty catalog");
    Tensor out = Tensor::zeros({n, model.config().d});
    const int64_t chunk = 512;
    for (int64_t c0 = 0; c0 < n; c0 += chunk) {
        const int64_t c1 = std::min(n, c0 + chunk);
        EncodeBatch batch(feats);
        for (int64_t i = c0; i < c1; ++i) {
            batch.begin_group();
            batch.add_slot({i, false, false, -1});
            batch.end_group();
        }
        Tape tape;
        const int pooled = encode_forward(tape, model, batch, false, nullptr);
        const Tensor& vals = tape.value(pooled);
        for (int64_t i = c0; i < c1; ++i)
            for (int64_t j = 0; j < model.config().d; ++j) out.at(i, j) = vals.at(i - c0, j);
    }
    return l2_normalize_rows(out);
}

Tensor query_vectors(Model& model, const CatalogFeatures& feats,
                     const std::vector<std::vector<int64_t>>& histories) {
    const int64_t d = model.config().d;
    const int64_t keep = model.config().n_max - 1;
    Tensor out = Tensor::zeros({static_cast<int64_t>(histories.size()), d});
    const size_t chunk = 128;
    for (size_t c0 = 0; c0 < histories.size(); c0 += chunk) {
        const size_t c1 = std::min(histories.size(), c0 + chunk);
        EncodeBatch batch(feats);
        std::vector<int64_t> slot_of_user;
        for (size_t u = c0; u < c1; ++u) {
            const std::vector<int64_t> hist = tail(histories[u], keep);
            batch.begin_group();
            int32_t pos = 0;
            for (int64_t item : hist) batch.add_slot({item, false, false, pos++});
            slot_of_user.push_back(batch.add_slot({-1, false, false, pos}));
            batch.end_group();
        }
        Tape tape;
        const int pooled = encode_forward(tape, model, batch, false, nullptr);
        const Tensor& vals = tape.value(pooled);
        for (size_t u = c0; u < c1; ++u)
            for (int64_t j = 0; j < d; ++j)
                out.at(static_cast<int64_t>(u), j) = vals.at(slot_of_user[u - c0], j);
    }
    return out;
}

std::vector<double> score_catalog(Model& model, const CatalogFeatures& feats,
                                  const Tensor& item_embs, const std::vector<int64_t>& history) {
    if (history.empty()) throw Error(ErrorKind::input, "score_catalog: empty history");
    const Tensor q = l2_normalize_rows(query_vectors(model, feats, {history}));
    const int64_t n = item_embs.rows();
    std::vector<double> scores(static_cast<size_t>(n), 0.0);
    const double inv_tau = 1.0 / model.config().tau;
    for (int64_t i = 0; i < n; ++i) {
        double acc = 0.0;
        for (int64_t j = 0; j < item_embs.cols(); ++j) acc += item_embs.at(i, j) * q.at(0, j);
        scores[static_cast<size_t>(i)] = acc * inv_tau;
    }
    return scores;
}

std::vector<int64_t> predict_next(Model& model, const CatalogFeatures& feats,
                                  const std::vector<int64_t>& history, int64_t k) {
    const int64_t n = static_cast<int64_t>(feats.vis_row.size());
    if (k < 1) throw Error(ErrorKind::input, "predict_next: k must be >= 1");
    if (k > n) {
        std::cerr << "predict_next: k " << k << " exceeds catalog size " << n << "; clipping\n";
        k = n;
    }
    const Tensor item_embs = catalog_embeddings(model, feats);
    const std::vector<double> scores = score_catalog(model, feats, item_embs, history);
    std::vector<int64_t> order(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
    std::stable_sort(order.begin(), order.end(), [&scores](int64_t a, int64_t b) {
        return scores[static_cast<size_t>(a)] > scores[static_cast<size_t>(b)];
    });
    order.resize(static_cast<size_t>(k));
    return order;
}

namespace {

EvalReport aggregate(std::vector<int64_t> ranks, const std::vector<int64_t>& ks) {
    for (int64_t k : ks)
        if (k < 1) throw Error(ErrorKind::config, "evaluate: every K must be >= 1");
    EvalReport report;
    report.n_users = static_cast<int64_t>(ranks.size());
    report.ks = ks;
    report.ranks = std::move(ranks);
    for (int64_t k : ks) {
        KahanSum r, n;
        for (int64_t rank : report.ranks) {
            r.add(recall_at_k(rank, k));
            n.add(ndcg_at_k(rank, k));
        }
        report.recall.push_back(r.sum() / static_cast<double>(report.n_users));
        report.ndcg.push_back(n.sum() / static_cast<double>(report.n_users));
    }
    return report;
}

}  // namespace

EvalReport evaluate(Model& model, const CatalogFeatures& feats,
                    const std::vector<SeqExample>& examples, const std::vector<int64_t>& ks) {
    if (examples.empty()) throw Error(ErrorKind::input, "evaluate: empty split");
    const Tensor item_embs = catalog_embeddings(model, feats);
    std::vector<std::vector<int64_t>> histories;
    histories.reserve(examples.size());
    for (const SeqExample& e : examples) {
        std::vector<int64_t> input = e.train;
        input.push_back(e.valid_target);
        histories.push_back(std::move(input));
    }
    const Tensor q = l2_normalize_rows(query_vectors(model, feats, histories));
    const double inv_tau = 1.0 / model.config().tau;
    const int64_t n = item_embs.rows();
    std::vector<int64_t> ranks;
    ranks.reserve(examples.size());
    std::vector<double> scores(static_cast<size_t>(n));
    for (size_t u = 0; u < examples.size(); ++u) {
        for (int64_t i = 0; i < n; ++i) {
            double acc = 0.0;
            for (int64_t j = 0; j < item_embs.cols(); ++j)
                acc += item_embs.at(i, j) * q.at(static_cast<int64_t>(u), j);
            scores[static_cast<size_t>(i)] = acc * inv_tau;
        }
        ranks.push_back(rank_of_target(scores, examples[u].test_target));
    }
    return aggregate(std::move(ranks), ks);
}

double validation_recall(Model& model, const CatalogFeatures& feats,
                         const std::vector<SeqExample>& examples, int64_t k) {
    if (examples.empty()) throw Error(ErrorKind::input, "validation_recall: empty split");
    const Tensor item_embs = catalog_embeddings(model, feats);
    std::vector<std::vector<int64_t>> histories;
    histories.reserve(examples.size());
    for (const SeqExample& e : examples) histories.push_back(e.train);
    const Tensor q = l2_normalize_rows(query_vectors(model, feats, histories));
    const int64_t n = item_embs.rows();
    KahanSum hits;
    std::vector<double> scores(static_cast<size_t>(n));
    for (size_t u = 0; u < examples.size(); ++u) {
        for (int64_t i = 0; i < n; ++i) {
            double acc = 0.0;
            for (int64_t j = 0; j < item_embs.cols(); ++j)
                acc += item_embs.at(i, j) * q.at(static_cast<int64_t>(u), j);
            scores[static_cast<size_t>(i)] = acc;
        }
        hits.add(recall_at_k(rank_of_target(scores, examples[u].valid_target), k));
    }
    return hits.sum() / static_cast<double>(examples.size());
}

std::vector<double> pop_scores(const std::vector<SeqExample>& examples, int64_t n_items) {
    if (n_items < 1) throw Error(ErrorKind::input, "pop_scores: empty catalog");
    std::vector<double> counts(static_cast<size_t>(n_items), 0.0);
    for (const SeqExample& e : examples)
        for (int64_t item : e.train) {
            if (item < 0 || item >= n_items)
                throw Error(ErrorKind::input, "pop_scores: item ordinal out of range");
            counts[static_cast<size_t>(item)] += 1.0;
        }
    return counts;
}

EvalReport evaluate_static(const std::vector<double>& scores,
                           const std::vector<SeqExample>& examples, const std::vector<int64_t>& ks) {
    if (examples.empty()) throw Error(ErrorKind::input, "evaluate_static: empty split");
    std::vector<int64_t> ranks;
    ranks.reserve(examples.size());
    for (const SeqExample& e : examples) ranks.push_back(rank_of_target(scores, e.test_target));
    return aggregate(std::move(ranks), ks);
}

std::string format_report(const EvalReport& report) {
    std::string out;
    for (size_t i = 0; i < report.ks.size(); ++i) {
        out += "recall\t" + std::to_string(report.ks[i]) + "\t" + format_double(report.recall[i]) +
               "\n";
        out += "ndcg\t" + std::to_string(report.ks[i]) + "\t" + format_double(report.ndcg[i]) +
               "\n";
    }
    return out;
}

void write_report(const std::string& path, const EvalReport& report) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error(ErrorKind::io, "cannot open for writing: " + path);
    os << format_report(report);
    if (!os) throw Error(ErrorKind::io, "write failed: " + path);
}

}  // namespace mmrec
