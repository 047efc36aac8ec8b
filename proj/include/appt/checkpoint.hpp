#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "appt/backbone.hpp"
#include "appt/params.hpp"

namespace appt {

// A checkpoint is a directory holding
//   manifest.txt  - one "tensor <name> f32 <shape> <offset> <length>" line per
//                   tensor plus "meta <key> <value>" lines (config echo, seed)
//   weights.bin   - the concatenated little-endian IEEE-754 f32 payload
// Offsets never overlap and each length is product(shape) * 4. Values are
// widened to f64 on load; a load/save cycle reproduces the blob bit for bit.
struct CheckpointMeta {
    std::vector<std::pair<std::string, std::string>> items;

    void set(const std::string& key, const std::string& value);
    const std::string* find(const std::string& key) const;
};

void save_checkpoint(const std::string& dir,
                     const std::vector<std::pair<std::string, Tensor>>& tensors,
                     const CheckpointMeta& meta);

struct LoadedCheckpoint {
    std::map<std::string, Tensor> tensors;
    CheckpointMeta meta;
};

LoadedCheckpoint load_checkpoint(const std::string& dir);

// Populate an initialized parameter set from a checkpoint. Every registered
// name must be present with a matching shape (the offending tensor is named
// otherwise) unless listed in `optional`; unknown extras produce a warning on
// stderr and are ignored.
void fill_params_from_checkpoint(const LoadedCheckpoint& ckpt, ParamSet& params,
                                 bool trainable_only = false,
                                 const std::vector<std::string>& optional = {});

void save_backbone_checkpoint(const BackboneParams& backbone, const std::string& dir);
BackboneParams load_backbone_checkpoint(const std::string& dir, const BackboneConfig& config);

struct CheckpointInfo {
    struct Row {
        std::string name;
        Shape shape;
        uint64_t bytes = 0;
    };
    std::vector<Row> rows;
    CheckpointMeta meta;
    uint64_t total_values = 0;
    uint64_t total_bytes = 0;
};

CheckpointInfo inspect_checkpoint(const std::string& dir);

} // namespace appt
