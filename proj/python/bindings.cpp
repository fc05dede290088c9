#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mmrec/checkpoint.hpp"
#include "mmrec/config.hpp"
#include "mmrec/corpus.hpp"
#include "mmrec/encoder.hpp"
#include "mmrec/eval.hpp"
#include "mmrec/finetune.hpp"
#include "mmrec/pretrain.hpp"
#include "mmrec/synth.hpp"

namespace py = pybind11;
using namespace mmrec;

namespace {

Tensor to_tensor(const std::vector<std::vector<double>>& rows) {
    if (rows.empty()) throw Error(ErrorKind::dimension, "matrix must have at least one row");
    const int64_t cols = static_cast<int64_t>(rows[0].size());
    std::vector<double> flat;
    flat.reserve(rows.size() * rows[0].size());
    for (const auto& r : rows) {
        if (static_cast<int64_t>(r.size()) != cols)
            throw Error(ErrorKind::dimension, "matrix rows have unequal lengths");
        flat.insert(flat.end(), r.begin(), r.end());
    }
    return Tensor({static_cast<int64_t>(rows.size()), cols}, std::move(flat));
}

std::vector<std::vector<double>> to_rows(const Tensor& t) {
    std::vector<std::vector<double>> out(static_cast<size_t>(t.rows()));
    for (int64_t i = 0; i < t.rows(); ++i) {
        out[static_cast<size_t>(i)].assign(t.data.begin() + i * t.cols(),
                                           t.data.begin() + (i + 1) * t.cols());
    }
    return out;
}

CatalogFeatures features_for(const Model& model, const Catalog& catalog) {
    return CatalogFeatures::build(catalog, model.config().max_frames);
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "dual-tower multi-modal sequential recommender";

    py::register_exception<Error>(m, "Error");

    py::enum_<CandidateMode>(m, "CandidateMode")
        .value("full", CandidateMode::full)
        .value("in_batch", CandidateMode::in_batch);

    py::class_<RunConfig>(m, "RunConfig")
        .def(py::init<>())
        .def_readwrite("d_raw", &RunConfig::d_raw)
        .def_readwrite("d", &RunConfig::d)
        .def_readwrite("n_layers", &RunConfig::n_layers)
        .def_readwrite("n_heads", &RunConfig::n_heads)
        .def_readwrite("max_frames", &RunConfig::max_frames)
        .def_readwrite("n_max", &RunConfig::n_max)
        .def_readwrite("embed_dropout", &RunConfig::embed_dropout)
        .def_readwrite("hidden_dropout", &RunConfig::hidden_dropout)
        .def_readwrite("tau", &RunConfig::tau)
        .def_readwrite("lambda_vv", &RunConfig::lambda_vv)
        .def_readwrite("lambda_tt", &RunConfig::lambda_tt)
        .def_readwrite("lambda_vt", &RunConfig::lambda_vt)
        .def_readwrite("lambda_vtvt", &RunConfig::lambda_vtvt)
        .def_readwrite("pretrain_batch", &RunConfig::pretrain_batch)
        .def_readwrite("pretrain_epochs", &RunConfig::pretrain_epochs)
        .def_readwrite("pretrain_lr", &RunConfig::pretrain_lr)
        .def_readwrite("mask_ratio", &RunConfig::mask_ratio)
        .def_readwrite("finetune_batch", &RunConfig::finetune_batch)
        .def_readwrite("finetune_epochs", &RunConfig::finetune_epochs)
        .def_readwrite("finetune_lr", &RunConfig::finetune_lr)
        .def_readwrite("patience", &RunConfig::patience)
        .def_readwrite("candidate_mode", &RunConfig::candidate_mode)
        .def_readwrite("lr_decay", &RunConfig::lr_decay)
        .def_readwrite("weight_decay", &RunConfig::weight_decay)
        .def_readwrite("adam_beta1", &RunConfig::adam_beta1)
        .def_readwrite("adam_beta2", &RunConfig::adam_beta2)
        .def_readwrite("adam_eps", &RunConfig::adam_eps)
        .def_readwrite("seed", &RunConfig::seed)
        .def("validate", &RunConfig::validate)
        .def("__repr__",
             [](const RunConfig& cfg) { return "RunConfig(\n" + serialize_run_config(cfg) + ")"; });
    m.def("parse_run_config", &parse_run_config_text, py::arg("text"));
    m.def("load_run_config", &load_run_config, py::arg("path"));
    m.def("serialize_run_config", &serialize_run_config, py::arg("config"));

    py::class_<SynthSpec>(m, "SynthSpec")
        .def(py::init<>())
        .def_readwrite("n_items", &SynthSpec::n_items)
        .def_readwrite("n_users", &SynthSpec::n_users)
        .def_readwrite("seq_len_min", &SynthSpec::seq_len_min)
        .def_readwrite("seq_len_max", &SynthSpec::seq_len_max)
        .def_readwrite("latent_dim", &SynthSpec::latent_dim)
        .def_readwrite("d_raw", &SynthSpec::d_raw)
        .def_readwrite("n_frames", &SynthSpec::n_frames)
        .def_readwrite("branching", &SynthSpec::branching)
        .def_readwrite("noise_scale", &SynthSpec::noise_scale)
        .def("validate", &SynthSpec::validate);
    m.def("parse_synth_spec", &parse_synth_spec_text, py::arg("text"));
    m.def("load_synth_spec", &load_synth_spec, py::arg("path"));
    m.def("generate_synthetic", &generate_synthetic, py::arg("spec"), py::arg("seed"),
          "synthetic bi-modal catalog and interaction log, deterministic in seed");

    py::class_<Event>(m, "Event")
        .def(py::init<>())
        .def_readwrite("user_id", &Event::user_id)
        .def_readwrite("item_id", &Event::item_id)
        .def_readwrite("timestamp", &Event::timestamp);

    py::class_<InteractionLog>(m, "InteractionLog")
        .def(py::init<>())
        .def_readwrite("events", &InteractionLog::events)
        .def("__len__", [](const InteractionLog& log) { return log.events.size(); });
    m.def("load_interactions", &load_interactions, py::arg("path"));
    m.def("save_interactions", &write_interactions, py::arg("path"), py::arg("log"));

    py::class_<Catalog>(m, "Catalog")
        .def_readonly("d_raw", &Catalog::d_raw)
        .def("__len__", [](const Catalog& c) { return c.items.size(); })
        .def("item_ids",
             [](const Catalog& c) {
                 std::vector<std::string> ids;
                 ids.reserve(c.items.size());
                 for (const ItemRecord& r : c.items) ids.push_back(r.item_id);
                 return ids;
             })
        .def("ordinal_of", &Catalog::ordinal_of, py::arg("item_id"));
    m.def("load_catalog", &load_catalog, py::arg("path"));
    m.def("save_catalog", &write_catalog, py::arg("path"), py::arg("catalog"));

    py::class_<DatasetStats>(m, "DatasetStats")
        .def_readonly("n_users", &DatasetStats::n_users)
        .def_readonly("n_items", &DatasetStats::n_items)
        .def_readonly("n_actions", &DatasetStats::n_actions)
        .def_readonly("sparsity", &DatasetStats::sparsity);
    m.def("dataset_stats", &dataset_stats, py::arg("log"));
    m.def("kcore_filter", &kcore_filter, py::arg("log"), py::arg("k"),
          "drop events of users/items with fewer than k events, to fixpoint");

    py::class_<SplitUser>(m, "SplitUser")
        .def(py::init<>())
        .def_readwrite("user_id", &SplitUser::user_id)
        .def_readwrite("train", &SplitUser::train)
        .def_readwrite("valid_target", &SplitUser::valid_target)
        .def_readwrite("test_target", &SplitUser::test_target);

    py::class_<SplitDataset>(m, "SplitDataset")
        .def(py::init<>())
        .def_readwrite("users", &SplitDataset::users)
        .def_readwrite("excluded_users", &SplitDataset::excluded_users)
        .def("__len__", [](const SplitDataset& s) { return s.users.size(); });
    m.def(
        "leave_one_out",
        [](const InteractionLog& log) { return leave_one_out_split(build_sequences(log)); },
        py::arg("log"), "per-user chronological split: last item test, second-to-last valid");
    m.def("load_split", &load_split, py::arg("path"));
    m.def("save_split", &write_split, py::arg("path"), py::arg("split"));

    py::class_<SeqExample>(m, "SeqExample")
        .def(py::init<>())
        .def_readwrite("user_id", &SeqExample::user_id)
        .def_readwrite("train", &SeqExample::train)
        .def_readwrite("valid_target", &SeqExample::valid_target)
        .def_readwrite("test_target", &SeqExample::test_target);
    m.def("to_examples", &to_examples, py::arg("split"), py::arg("catalog"),
          "resolve split item ids to catalog ordinals");

    py::class_<Model>(m, "Model").def_property_readonly("n_params", [](Model& model) {
        int64_t n = 0;
        for (const Parameter* p : model.parameters()) n += p->value.numel();
        return n;
    });
    m.def(
        "make_model",
        [](const RunConfig& cfg) {
            Model model(cfg.model_config());
            model.init_params(cfg.seed);
            return model;
        },
        py::arg("config"), "fresh model, weights drawn from config.seed");

    m.def(
        "save_checkpoint",
        [](const std::string& path, Model& model, const RunConfig& cfg) {
            save_checkpoint(path, model, nullptr, {serialize_run_config(cfg), cfg.seed, 0});
        },
        py::arg("path"), py::arg("model"), py::arg("config"));
    m.def("checkpoint_config",
          [](const std::string& path) { return parse_run_config_text(checkpoint_config_text(path)); },
          py::arg("path"));
    m.def(
        "load_model",
        [](const std::string& path) {
            const RunConfig cfg = parse_run_config_text(checkpoint_config_text(path));
            Model model(cfg.model_config());
            load_checkpoint(path, model, nullptr);
            return model;
        },
        py::arg("path"), "model restored from a checkpoint's own embedded config");

    py::class_<EpochRecord>(m, "EpochRecord")
        .def_readonly("epoch", &EpochRecord::epoch)
        .def_readonly("lr", &EpochRecord::lr)
        .def_readonly("loss", &EpochRecord::loss);
    py::class_<PretrainResult>(m, "PretrainResult")
        .def_readonly("log", &PretrainResult::log)
        .def_readonly("steps", &PretrainResult::steps);
    m.def(
        "pretrain",
        [](Model& model, const Catalog& catalog, const RunConfig& cfg) {
            const CatalogFeatures feats = features_for(model, catalog);
            AdamWConfig ocfg = cfg.adamw_config();
            ocfg.lr = cfg.pretrain_lr;
            AdamW opt(model.parameters(), ocfg);
            return pretrain_run(model, opt, feats, cfg, cfg.seed, nullptr);
        },
        py::arg("model"), py::arg("catalog"), py::arg("config"),
        py::call_guard<py::gil_scoped_release>(),
        "contrastive pretraining over the bi-modal catalog items");

    py::class_<FinetuneEpoch>(m, "FinetuneEpoch")
        .def_readonly("epoch", &FinetuneEpoch::epoch)
        .def_readonly("lr", &FinetuneEpoch::lr)
        .def_readonly("train_loss", &FinetuneEpoch::train_loss)
        .def_readonly("valid_recall", &FinetuneEpoch::valid_recall);
    py::class_<FinetuneResult>(m, "FinetuneResult")
        .def_readonly("log", &FinetuneResult::log)
        .def_readonly("best_epoch", &FinetuneResult::best_epoch)
        .def_readonly("best_recall", &FinetuneResult::best_recall)
        .def_readonly("steps", &FinetuneResult::steps);
    m.def(
        "finetune",
        [](Model& model, const Catalog& catalog, const std::vector<SeqExample>& examples,
           const RunConfig& cfg) {
            const CatalogFeatures feats = features_for(model, catalog);
            AdamWConfig ocfg = cfg.adamw_config();
            ocfg.lr = cfg.finetune_lr;
            AdamW opt(model.parameters(), ocfg);
            return finetune_run(model, opt, feats, examples, cfg, cfg.seed, nullptr);
        },
        py::arg("model"), py::arg("catalog"), py::arg("examples"), py::arg("config"),
        py::call_guard<py::gil_scoped_release>(),
        "masked-item fine-tuning with validation early stopping; the model is "
        "left at the best checkpoint");

    py::class_<EvalReport>(m, "EvalReport")
        .def_readonly("n_users", &EvalReport::n_users)
        .def_readonly("ks", &EvalReport::ks)
        .def_readonly("ranks", &EvalReport::ranks)
        .def_readonly("recall", &EvalReport::recall)
        .def_readonly("ndcg", &EvalReport::ndcg)
        .def("__repr__", [](const EvalReport& r) { return format_report(r); });
    m.def(
        "evaluate",
        [](Model& model, const Catalog& catalog, const std::vector<SeqExample>& examples,
           const std::vector<int64_t>& ks) {
            const CatalogFeatures feats = features_for(model, catalog);
            return evaluate(model, feats, examples, ks);
        },
        py::arg("model"), py::arg("catalog"), py::arg("examples"),
        py::arg("ks") = std::vector<int64_t>{10, 50}, py::call_guard<py::gil_scoped_release>(),
        "full-catalog ranking of every user's test target");
    m.def(
        "validation_recall",
        [](Model& model, const Catalog& catalog, const std::vector<SeqExample>& examples,
           int64_t k) {
            const CatalogFeatures feats = features_for(model, catalog);
            return validation_recall(model, feats, examples, k);
        },
        py::arg("model"), py::arg("catalog"), py::arg("examples"), py::arg("k") = 10);
    m.def("pop_scores", &pop_scores, py::arg("examples"), py::arg("n_items"),
          "per-item interaction counts over the train prefixes");
    m.def("evaluate_static", &evaluate_static, py::arg("scores"), py::arg("examples"),
          py::arg("ks") = std::vector<int64_t>{10, 50},
          "rank one fixed score list for every user (the Pop baseline)");
    m.def("format_report", &format_report, py::arg("report"));
    m.def("save_report", &write_report, py::arg("path"), py::arg("report"));

    m.def(
        "predict_next",
        [](Model& model, const Catalog& catalog, const std::vector<int64_t>& history, int64_t k) {
            const CatalogFeatures feats = features_for(model, catalog);
            return predict_next(model, feats, history, k);
        },
        py::arg("model"), py::arg("catalog"), py::arg("history"), py::arg("k") = 10,
        "top-k catalog ordinals for one history of catalog ordinals");
    m.def(
        "item_embeddings",
        [](Model& model, const Catalog& catalog) {
            return to_rows(catalog_embeddings(model, features_for(model, catalog)));
        },
        py::arg("model"), py::arg("catalog"),
        "L2-normalized item-tower embeddings, one row per catalog ordinal");
    m.def(
        "query_embeddings",
        [](Model& model, const Catalog& catalog,
           const std::vector<std::vector<int64_t>>& histories) {
            return to_rows(query_vectors(model, features_for(model, catalog), histories));
        },
        py::arg("model"), py::arg("catalog"), py::arg("histories"),
        "masked next-item query vectors, one row per history");

    m.def(
        "nce_loss",
        [](const std::vector<std::vector<double>>& x, const std::vector<std::vector<double>>& y,
           double tau) { return nce_loss(to_tensor(x), to_tensor(y), tau); },
        py::arg("x"), py::arg("y"), py::arg("tau") = 0.05,
        "symmetric InfoNCE between row-matched batches under cosine/tau");
}
