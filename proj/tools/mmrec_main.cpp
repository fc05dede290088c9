#include <CLI11.hpp>
#include <fstream>
#include <iostream>
#include <numeric>

#include "mmrec/checkpoint.hpp"
#include "mmrec/config.hpp"
#include "mmrec/corpus.hpp"
#include "mmrec/encoder.hpp"
#include "mmrec/eval.hpp"
#include "mmrec/finetune.hpp"
#include "mmrec/gradcheck.hpp"
#include "mmrec/pretrain.hpp"
#include "mmrec/synth.hpp"

using namespace mmrec;

namespace {

void echo_config(const RunConfig& cfg) {
    std::cout << "# resolved config\n" << serialize_run_config(cfg) << "# end config\n";
}

std::ofstream open_text_out(const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error(ErrorKind::io, "cannot open for writing: " + path);
    return os;
}

Catalog load_catalog_checked(const std::string& path, const RunConfig& cfg) {
    Catalog catalog = load_catalog(path);
    if (catalog.d_raw != cfg.d_raw)
        throw Error(ErrorKind::dimension,
                    "feature file d_raw " + std::to_string(catalog.d_raw) +
                        " does not match config d_raw " + std::to_string(cfg.d_raw));
    return catalog;
}

void require_same_model(const RunConfig& a, const RunConfig& b, const std::string& what) {
    if (a.d_raw != b.d_raw || a.d != b.d || a.n_layers != b.n_layers || a.n_heads != b.n_heads ||
        a.max_frames != b.max_frames || a.n_max != b.n_max)
        throw Error(ErrorKind::config, what + ": model shape differs from the run config");
}

int run_preprocess(const std::string& interactions, int64_t kcore, const std::string& out_split,
                   const std::string& stats_path) {
    const InteractionLog raw = load_interactions(interactions);
    const InteractionLog filtered = kcore_filter(raw, kcore);
    const auto sequences = build_sequences(filtered);
    const SplitDataset split = leave_one_out_split(sequences);
    write_split(out_split, split);
    const DatasetStats stats = dataset_stats(filtered);
    if (!stats_path.empty()) write_stats(stats_path, stats);
    std::cout << "events " << raw.events.size() << " -> " << filtered.events.size() << " after "
              << kcore << "-core\n"
              << "users " << stats.n_users << " items " << stats.n_items << " sparsity "
              << format_double(stats.sparsity) << "\n"
              << "split users " << split.users.size() << " excluded " << split.excluded_users
              << "\n";
    return 0;
}

int run_synth(const std::string& spec_path, uint64_t seed, const std::string& out_features,
              const std::string& out_interactions) {
    const SynthSpec spec = load_synth_spec(spec_path);
    const auto [catalog, log] = generate_synthetic(spec, seed);
    write_catalog(out_features, catalog);
    write_interactions(out_interactions, log);
    std::cout << "items " << catalog.items.size() << " events " << log.events.size() << "\n";
    return 0;
}

int run_pretrain(const RunConfig& cfg, const std::string& features, const std::string& out,
                 const std::string& log_path) {
    echo_config(cfg);
    const Catalog catalog = load_catalog_checked(features, cfg);
    const CatalogFeatures feats = CatalogFeatures::build(catalog, cfg.max_frames);
    Model model(cfg.model_config());
    model.init_params(cfg.seed);
    AdamWConfig ocfg = cfg.adamw_config();
    ocfg.lr = cfg.pretrain_lr;
    AdamW opt(model.parameters(), ocfg);
    const PretrainResult result = pretrain_run(model, opt, feats, cfg, cfg.seed, &std::cout);
    if (!log_path.empty()) {
        std::ofstream os = open_text_out(log_path);
        for (const EpochRecord& r : result.log)
            os << r.epoch << '\t' << format_double(r.loss) << '\n';
    }
    save_checkpoint(out, model, &opt,
                    {serialize_run_config(cfg), cfg.seed,
                     static_cast<uint64_t>(opt.step_count())});
    std::cout << "checkpoint " << out << " steps " << result.steps << "\n";
    return 0;
}

int run_finetune(const RunConfig& cfg, const std::string& features, const std::string& split_path,
                 const std::string& init, const std::string& out, const std::string& log_path) {
    echo_config(cfg);
    const Catalog catalog = load_catalog_checked(features, cfg);
    const CatalogFeatures feats = CatalogFeatures::build(catalog, cfg.max_frames);
    const SplitDataset split = load_split(split_path);
    const std::vector<SeqExample> examples = to_examples(split, catalog);

    Model model(cfg.model_config());
    if (!init.empty()) {
        const RunConfig init_cfg = parse_run_config_text(checkpoint_config_text(init));
        require_same_model(cfg, init_cfg, "--init checkpoint");
        load_checkpoint(init, model, nullptr);
    } else {
        model.init_params(cfg.seed);
    }
    AdamWConfig ocfg = cfg.adamw_config();
    ocfg.lr = cfg.finetune_lr;
    AdamW opt(model.parameters(), ocfg);
    const FinetuneResult result =
        finetune_run(model, opt, feats, examples, cfg, cfg.seed, &std::cout);
    if (!log_path.empty()) {
        std::ofstream os = open_text_out(log_path);
        for (const FinetuneEpoch& r : result.log)
            os << r.epoch << '\t' << format_double(r.train_loss) << '\t'
               << format_double(r.valid_recall) << '\n';
    }
    save_checkpoint(out, model, &opt,
                    {serialize_run_config(cfg), cfg.seed,
                     static_cast<uint64_t>(opt.step_count())});
    std::cout << "best epoch " << result.best_epoch << " valid_recall@10 "
              << format_double(result.best_recall) << " checkpoint " << out << "\n";
    return 0;
}

int run_evaluate(const std::string& checkpoint, const std::string& features,
                 const std::string& split_path, std::vector<int64_t> ks, const std::string& out,
                 const std::string& pop_out) {
    const RunConfig cfg = parse_run_config_text(checkpoint_config_text(checkpoint));
    echo_config(cfg);
    const Catalog catalog = load_catalog_checked(features, cfg);
    const CatalogFeatures feats = CatalogFeatures::build(catalog, cfg.max_frames);
    const SplitDataset split = load_split(split_path);
    const std::vector<SeqExample> examples = to_examples(split, catalog);

    Model model(cfg.model_config());
    load_checkpoint(checkpoint, model, nullptr);
    if (ks.empty()) ks = {10, 50};
    const EvalReport report = evaluate(model, feats, examples, ks);
    std::cout << format_report(report);
    if (!out.empty()) write_report(out, report);
    if (!pop_out.empty()) {
        const EvalReport pop =
            evaluate_static(pop_scores(examples, catalog.size()), examples, ks);
        std::cout << "# pop baseline\n" << format_report(pop);
        write_report(pop_out, pop);
    }
    return 0;
}

int run_gradcheck(const RunConfig& cfg, double tolerance, int64_t samples) {
    if (cfg.d > 16)
        throw Error(ErrorKind::config, "gradcheck: requires a tiny model (d <= 16), got d = " +
                                           std::to_string(cfg.d));
    echo_config(cfg);

    // A tiny bi-modal fixture; everything below is deterministic in cfg.seed.
    SynthSpec spec;
    spec.n_items = 6;
    spec.n_users = 4;
    spec.seq_len_min = 4;
    spec.seq_len_max = 6;
    spec.latent_dim = 4;
    spec.d_raw = cfg.d_raw;
    spec.n_frames = 2;
    spec.branching = 1;
    spec.noise_scale = 0.1;
    const auto [catalog, log] = generate_synthetic(spec, cfg.seed);
    const CatalogFeatures feats = CatalogFeatures::build(catalog, cfg.max_frames);

    Model model(cfg.model_config());
    Rng warm(cfg.seed, streams::gradcheck);
    randomize_params(model.parameters(), warm, 0.4);
    const std::vector<int64_t> items = {0, 1, 2, 3};

    const auto composite_fn = [&](bool with_grad) {
        Tape tape;
        Rng base(cfg.seed, streams::pretrain_dropout);
        Rng aug(cfg.seed, streams::pretrain_dropout_aug);
        const ViewNodes views = make_views(tape, model, feats, items, true, &base, &aug);
        const int loss = composite_loss_node(tape, views, cfg);
        if (with_grad) tape.backward(loss);
        return tape.value(loss).data[0];
    };

    std::vector<MaskedSequence> batch;
    {
        Rng mask(cfg.seed, streams::finetune_mask);
        batch.push_back(apply_masking({0, 1, 2, 3}, cfg.mask_ratio, catalog.size(), mask));
        batch.push_back(apply_masking({4, 5, 0}, cfg.mask_ratio, catalog.size(), mask));
    }
    std::vector<int64_t> candidates(static_cast<size_t>(catalog.size()));
    std::iota(candidates.begin(), candidates.end(), 0);
    const auto mip_fn = [&](bool with_grad) {
        Tape tape;
        Rng drop(cfg.seed, streams::finetune_dropout);
        const int loss =
            mip_loss_node(tape, model, feats, batch, candidates, cfg.tau, true, &drop);
        if (with_grad) tape.backward(loss);
        return tape.value(loss).data[0];
    };

    bool ok = true;
    for (const auto& [name, fn] :
         std::vector<std::pair<std::string, std::function<double(bool)>>>{
             {"composite_loss", composite_fn}, {"mip_loss", mip_fn}}) {
        Rng pick(cfg.seed, streams::gradcheck);
        const GradCheckReport report =
            grad_check(model.parameters(), fn, 1e-4, samples, pick);
        std::cout << name << " max relative error " << format_double(report.max_rel_err) << " over "
                  << report.n_checked << " coordinates (worst " << report.worst_param << "["
                  << report.worst_index << "])\n";
        ok = ok && report.pass(tolerance);
    }
    std::cout << (ok ? "gradcheck passed" : "gradcheck FAILED") << " (tolerance "
              << format_double(tolerance) << ")\n";
    return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"dual-tower multi-modal sequential recommender"};
    app.require_subcommand(1);
    int64_t threads = 1;
    bool deterministic = false;
    app.add_option("--threads", threads, "worker threads (current engine is single-threaded)")
        ->check(CLI::PositiveNumber);
    app.add_flag("--deterministic", deterministic,
                 "bit-reproducible mode (always on; flag kept for compatibility)");

    // preprocess
    auto* pre = app.add_subcommand("preprocess", "k-core filter, order and split interactions");
    std::string pre_interactions, pre_split, pre_stats;
    int64_t pre_k = 5;
    pre->add_option("--interactions", pre_interactions, "interactions TSV")->required();
    pre->add_option("--k-core", pre_k, "minimum user/item interaction count");
    pre->add_option("--out-split", pre_split, "output split file")->required();
    pre->add_option("--stats", pre_stats, "output dataset statistics file");

    // synth
    auto* syn = app.add_subcommand("synth", "generate a synthetic multi-modal corpus");
    std::string syn_spec, syn_features, syn_interactions;
    uint64_t syn_seed = 42;
    syn->add_option("--spec", syn_spec, "synthesis spec file")->required();
    syn->add_option("--seed", syn_seed, "generator seed");
    syn->add_option("--out-features", syn_features, "output MMF1 feature file")->required();
    syn->add_option("--out-interactions", syn_interactions, "output interactions TSV")->required();

    // shared train/eval options
    std::string cfg_path, features, out, log_path, split_path, init_path, checkpoint, report_out,
        pop_out;
    uint64_t seed_override = 0;

    auto* pt = app.add_subcommand("pretrain", "contrastive pretraining over the item catalog");
    pt->add_option("--config", cfg_path, "run config file")->required();
    pt->add_option("--features", features, "MMF1 feature file")->required();
    pt->add_option("--out", out, "output checkpoint")->required();
    pt->add_option("--log", log_path, "per-epoch loss log");
    auto* pt_seed = pt->add_option("--seed", seed_override, "override config seed");

    auto* ft = app.add_subcommand("finetune", "masked-item-prediction fine-tuning");
    ft->add_option("--config", cfg_path, "run config file")->required();
    ft->add_option("--features", features, "MMF1 feature file")->required();
    ft->add_option("--split", split_path, "split file from preprocess")->required();
    ft->add_option("--init", init_path, "optional pretrained checkpoint");
    ft->add_option("--out", out, "output checkpoint")->required();
    ft->add_option("--log", log_path, "per-epoch training log");
    auto* ft_seed = ft->add_option("--seed", seed_override, "override config seed");

    auto* ev = app.add_subcommand("evaluate", "full-catalog test-set evaluation");
    std::vector<int64_t> ks;
    ev->add_option("--checkpoint", checkpoint, "trained checkpoint")->required();
    ev->add_option("--features", features, "MMF1 feature file")->required();
    ev->add_option("--split", split_path, "split file from preprocess")->required();
    ev->add_option("--ks", ks, "cutoff list")->delimiter(',');
    ev->add_option("--out", report_out, "report file");
    ev->add_option("--pop", pop_out, "also report the popularity baseline to this file");

    auto* gc = app.add_subcommand("gradcheck", "finite-difference check of both training losses");
    double gc_tol = 1e-4;
    int64_t gc_samples = 24;
    gc->add_option("--config", cfg_path, "run config file (tiny model)");
    gc->add_option("--tolerance", gc_tol, "max relative error allowed");
    gc->add_option("--samples", gc_samples, "coordinates checked per parameter")
        ->check(CLI::PositiveNumber);
    auto* gc_seed = gc->add_option("--seed", seed_override, "override config seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (pre->parsed()) return run_preprocess(pre_interactions, pre_k, pre_split, pre_stats);
        if (syn->parsed()) return run_synth(syn_spec, syn_seed, syn_features, syn_interactions);
        if (pt->parsed()) {
            RunConfig cfg = load_run_config(cfg_path);
            if (pt_seed->count()) cfg.seed = seed_override;
            return run_pretrain(cfg, features, out, log_path);
        }
        if (ft->parsed()) {
            RunConfig cfg = load_run_config(cfg_path);
            if (ft_seed->count()) cfg.seed = seed_override;
            return run_finetune(cfg, features, split_path, init_path, out, log_path);
        }
        if (ev->parsed()) return run_evaluate(checkpoint, features, split_path, ks, report_out, pop_out);
        if (gc->parsed()) {
            RunConfig cfg;
            if (!cfg_path.empty()) {
                cfg = load_run_config(cfg_path);
            } else {
                cfg.d_raw = 6;
                cfg.d = 8;
                cfg.n_layers = 1;
                cfg.n_heads = 2;
                cfg.max_frames = 4;
                cfg.n_max = 6;
                cfg.embed_dropout = 0.0;
                cfg.hidden_dropout = 0.0;
            }
            if (gc_seed->count()) cfg.seed = seed_override;
            return run_gradcheck(cfg, gc_tol, gc_samples);
        }
    } catch (const Error& e) {
        std::cerr << "error (" << error_kind_name(e.kind()) << "): " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 2;
}
