#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mmrec/autodiff.hpp"

namespace mmrec {

struct ModelConfig {
    int64_t d_raw = 512;
    int64_t d = 512;
    int64_t n_layers = 2;
    int64_t n_heads = 8;
    int64_t max_frames = 10;
    int64_t n_max = 20;
    double embed_dropout = 0.2;
    double hidden_dropout = 0.5;
    double tau = 0.05;
    double ln_eps = 1e-12;

    void validate() const;
};

struct LayerParams {
    // no key bias: it shifts every score in a softmax row equally, so it can
    // never influence the output and its gradient is identically zero
    Parameter wq, bq, wk, wv, bv, wo, bo;
    Parameter ln1_gain, ln1_bias;
    Parameter w1, b1, w2, b2;
    Parameter ln2_gain, ln2_bias;
};

// One parameter set serving both towers: the item encoder and the sequence
// encoder read the same storage, differing only in whether positional rows
// are added to the input tokens.
class Model {
  public:
    explicit Model(ModelConfig cfg);

    // Truncated-normal(0.02) weights and embedding tables, zero biases,
    // unit layer-norm gains. Consumes a dedicated rng stream of `seed`.
    void init_params(uint64_t seed);

    std::vector<Parameter*> parameters();  // fixed canonical order
    Parameter& find(const std::string& name);
    void zero_grads();

    const ModelConfig& config() const { return cfg_; }

    Parameter visual_in_w, visual_in_b;  // D_raw -> d
    Parameter text_in_w, text_in_b;
    Parameter modality_emb;  // (2, d): row 0 visual, row 1 text
    Parameter mask_emb;      // (d)
    Parameter pos_emb;       // (n_max, d)
    std::vector<LayerParams> layers;
    Parameter visual_out_w, visual_out_b;  // d -> d
    Parameter text_out_w, text_out_b;

  private:
    ModelConfig cfg_;
};

}  // namespace mmrec
