#pragma once

#include <cstdint>
#include <string>

#include "mmrec/model.hpp"
#include "mmrec/optimizer.hpp"

namespace mmrec {

// Checkpoint layout (all integers little-endian):
//   magic 'MMCK' | u32 version | u32 config_len | config bytes (UTF-8 key=value)
//   | u32 n_params | records | u32 n_opt_tensors | records | u64 seed | u64 step
// where each record is: u32 name_len | name | u32 rank | u32 dims[rank]
// | f32 values (row-major). Optimizer tensors are stored under
// 'adam_m.<param>' / 'adam_v.<param>' names. Values are written in 32-bit,
// so loading quantizes the in-memory 64-bit state.

struct CheckpointMeta {
    std::string config_text;
    uint64_t seed = 0;
    uint64_t step = 0;
};

void save_checkpoint(const std::string& path, Model& model, AdamW* opt,
                     const CheckpointMeta& meta);

// Reads only the embedded config text (to construct a Model before loading).
std::string checkpoint_config_text(const std::string& path);

// Fills `model` (and optimizer state when `opt` is given) from the file.
// Parameter names and shapes must match the constructed model exactly.
CheckpointMeta load_checkpoint(const std::string& path, Model& model, AdamW* opt);

}  // namespace mmrec
