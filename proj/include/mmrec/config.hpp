#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "mmrec/model.hpp"
#include "mmrec/optimizer.hpp"

namespace mmrec {

enum class CandidateMode { full, in_batch };

// Flat key=value run configuration. Every knob of the model, optimizer,
// pretraining and fine-tuning lives here; paths stay on the command line.
struct RunConfig {
    // model
    int64_t d_raw = 512;
    int64_t d = 512;
    int64_t n_layers = 2;
    int64_t n_heads = 8;
    int64_t max_frames = 10;
    int64_t n_max = 20;
    double embed_dropout = 0.2;
    double hidden_dropout = 0.5;
    double tau = 0.05;
    // pretrain
    double lambda_vv = 0.25;
    double lambda_tt = 0.25;
    double lambda_vt = 0.25;
    double lambda_vtvt = 0.25;
    int64_t pretrain_batch = 48000;
    int64_t pretrain_epochs = 10;
    double pretrain_lr = 5e-5;
    // finetune
    double mask_ratio = 0.2;
    int64_t finetune_batch = 8192;
    int64_t finetune_epochs = 200;
    double finetune_lr = 1e-3;
    int64_t patience = 10;
    CandidateMode candidate_mode = CandidateMode::full;
    // optimizer
    double lr_decay = 0.9;
    double weight_decay = 0.01;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    // randomness
    uint64_t seed = 42;

    void validate() const;
    ModelConfig model_config() const;
    AdamWConfig adamw_config() const;
};

// Parses `key = value` lines; '#' starts a comment; unknown or duplicate
// keys are rejected. Missing keys keep their defaults.
RunConfig parse_run_config_text(const std::string& text);
RunConfig load_run_config(const std::string& path);

// Canonical full echo; feeding the output back reproduces the config exactly.
std::string serialize_run_config(const RunConfig& cfg);

// Shared low-level reader for key=value files.
std::map<std::string, std::string> parse_kv_text(const std::string& text);
std::string read_text_file(const std::string& path);
std::string format_double(double v);  // shortest round-trip decimal

}  // namespace mmrec
