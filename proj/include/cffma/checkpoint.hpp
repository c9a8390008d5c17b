#pragma once

#include <cstdint>
#include <string>

#include "cffma/adam.hpp"
#include "cffma/model.hpp"

namespace cffma {

// Checkpoint container: magic "CFFM", u32 version=1, u32 config_len + UTF-8
// key=value config block (includes the training step), u32 n_params, then per
// parameter: u16 name_len, name bytes, u8 ndim, u32 dims..., f32 data
// little-endian. An optional optimizer section with the same entry layout
// follows (detected by the file not ending after the parameters).
inline constexpr uint32_t kCheckpointVersion = 1;

struct CheckpointData {
    ModelParams params;
    int64_t step = 0;
    bool has_optimizer = false;
    AdamState optimizer;
};

void save_checkpoint(const std::string& path, const ModelParams& params, int64_t step,
                     const AdamState* optimizer = nullptr);

// Rebuilds the model from the embedded config, then overwrites every tensor
// with the stored data; shapes are checked against the config.
CheckpointData load_checkpoint(const std::string& path);

// Config block round-trip, shared with the CLI config-file parser.
std::string serialize_config(const ModelConfig& config, int64_t step);

}  // namespace cffma
