#pragma once

#include "model.h"

#include <cstdint>
#include <filesystem>
#include <string>

namespace gridvla {

struct CheckpointMeta {
    int         stage = 0; // 0: fresh init, 1/2 after the corresponding stage
    int64_t     step  = 0;
    uint64_t    seed  = 0;
    std::string config_hash;
};

// Single file: 8-byte magic, u32 version, u32 header length, header JSON
// (model config + blob manifest + meta), then the named parameter blobs as
// little-endian 64-bit reals at the manifest offsets.
void checkpoint_save(const std::filesystem::path & path, const ModelParameters & params,
                     const CheckpointMeta & meta);

struct LoadedCheckpoint {
    ModelParameters params;
    CheckpointMeta  meta;
};

LoadedCheckpoint checkpoint_load(const std::filesystem::path & path);

} // namespace gridvla
