#pragma once

#include <cstdint>
#include <string>
#include <utility>

#include "mmrec/corpus.hpp"

namespace mmrec {

// Shared-latent synthetic corpus: both modalities of an item are fixed random
// linear projections of one latent vector plus independent noise, so
// cross-modal alignment is learnable with a known ceiling. `branching`
// controls the sequence process: 0 = i.i.d. uniform items, 1 = deterministic
// successor (one shared permutation cycle), b>1 = uniform choice among b fixed
// successors per item (first-order Markov).
struct SynthSpec {
    int64_t n_items = 100;
    int64_t n_users = 64;
    int64_t seq_len_min = 12;
    int64_t seq_len_max = 12;
    int64_t latent_dim = 8;
    int64_t d_raw = 32;
    int64_t n_frames = 3;
    int64_t branching = 1;
    double noise_scale = 0.05;

    void validate() const;
};

SynthSpec parse_synth_spec_text(const std::string& text);
SynthSpec load_synth_spec(const std::string& path);
std::string serialize_synth_spec(const SynthSpec& spec);

// Deterministic in `seed`. Feature values are quantized to f32 at generation
// time so that writing and reloading the catalog is bitwise lossless.
std::pair<Catalog, InteractionLog> generate_synthetic(const SynthSpec& spec, uint64_t seed);

}  // namespace mmrec
