from mmrec._core import (
    CandidateMode,
    Catalog,
    DatasetStats,
    EpochRecord,
    Error,
    EvalReport,
    Event,
    FinetuneEpoch,
    FinetuneResult,
    InteractionLog,
    Model,
    PretrainResult,
    RunConfig,
    SeqExample,
    SplitDataset,
    SplitUser,
    SynthSpec,
    checkpoint_config,
    dataset_stats,
    evaluate,
    evaluate_static,
    finetune,
    format_report,
    generate_synthetic,
    item_embeddings,
    kcore_filter,
    leave_one_out,
    load_catalog,
    load_interactions,
    load_model,
    load_run_config,
    load_split,
    load_synth_spec,
    make_model,
    nce_loss,
    parse_run_config,
    parse_synth_spec,
    pop_scores,
    predict_next,
    pretrain,
    query_embeddings,
    save_catalog,
    save_checkpoint,
    save_interactions,
    save_report,
    save_split,
    serialize_run_config,
    to_examples,
    validation_recall,
)

__all__ = [
    "CandidateMode",
    "Catalog",
    "DatasetStats",
    "EpochRecord",
    "Error",
    "EvalReport",
    "Event",
    "FinetuneEpoch",
    "FinetuneResult",
    "InteractionLog",
    "Model",
    "PretrainResult",
    "RunConfig",
    "SeqExample",
    "SplitDataset",
    "SplitUser",
    "SynthSpec",
    "checkpoint_config",
    "dataset_stats",
    "evaluate",
    "evaluate_static",
    "finetune",
    "format_report",
    "generate_synthetic",
    "item_embeddings",
    "kcore_filter",
    "leave_one_out",
    "load_catalog",
    "load_interactions",
    "load_model",
    "load_run_config",
    "load_split",
    "load_synth_spec",
    "make_model",
    "nce_loss",
    "parse_run_config",
    "parse_synth_spec",
    "pop_scores",
    "predict_next",
    "pretrain",
    "query_embeddings",
    "save_catalog",
    "save_checkpoint",
    "save_interactions",
    "save_report",
    "save_split",
    "serialize_run_config",
    "to_examples",
    "validation_recall",
]
