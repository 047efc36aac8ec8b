#pragma once

#include <string>
#include <unordered_map>

#include "appt/backbone.hpp"
#include "appt/embed.hpp"
#include "appt/params.hpp"
#include "appt/pointcloud.hpp"
#include "appt/prompt.hpp"

namespace appt {

struct ModelConfig {
    BackboneConfig backbone;
    PointEmbedConfig embed; // d_out is forced to backbone.d
    int n_classes = 4;
    int n_groups = 64;   // centroids sampled per cloud
    int k_neighbors = 16;
    bool normalize_input = true;
    // Component switches; all on for the full model.
    bool use_prompt = true;
    bool use_posin = true;
    bool use_pooled_cls = true; // off: the raw final class token feeds the head

    void validate() const;
};

// The assembled classifier: frozen backbone + class token, trainable point
// embedding (shared with the prompt generator), position injector, and head.
struct Model {
    ModelConfig config;
    BackboneParams backbone;
    PointEmbedParams embed;
    PosInParams posin;
    Tensor head_w; // [d, n_classes], no bias
    ParamSet params;
    uint64_t trainable_seed = 0;

    static Model create(const ModelConfig& config, uint64_t trainable_seed,
                        BackboneParams backbone);
};

struct BoundModel {
    BoundPointEmbed embed;
    Var posin_kernel;
    BoundBackbone backbone;
    Var head_w;
    std::unordered_map<std::string, Var> by_name; // every registered parameter

    static BoundModel bind(Tape& tape, const Model& model);
};

struct ForwardResult {
    PointEmbeddings embeddings; // Ê, one row per group
    Var e_g;                    // global embedding (mean of Ê)
    Var p0;                     // invalid when the prompt path is off
    BlockState state;           // final (cls, Z, E) triple
    Var e_cls;                  // pooled class token
    Var logits;                 // [1, n_classes]
};

// One cloud end to end: embed -> position injection -> prompted blocks ->
// pooling -> head. `group_rows` is the flat [n_groups*k, 3+C] neighborhood
// tensor from PointGroups::flat_rows().
ForwardResult model_forward(Tape& tape, const BoundModel& bound, const Model& model,
                            const Tensor& group_rows, uint64_t groups_id = 0,
                            PromptTrace* trace = nullptr);

// normalize (optional) -> farthest point sampling -> kNN grouping.
PointGroups tokenize_cloud(const PointCloud& cloud, const ModelConfig& config, uint64_t fps_seed);

struct ParamPartition {
    std::vector<const ParamSet::Entry*> frozen;
    std::vector<const ParamSet::Entry*> trainable;
    int64_t frozen_count = 0;
    int64_t trainable_count = 0;
    double trainable_ratio() const {
        return static_cast<double>(trainable_count) /
               static_cast<double>(trainable_count + frozen_count);
    }
};

// Splits the registry and re-verifies that every tensor owned by the model is
// registered exactly once (IntegrityError otherwise).
ParamPartition param_partition(const Model& model);

// Closed-form parameter counts from shapes alone; no allocation. These back
// the large-shape accounting checks.
int64_t backbone_param_count(const BackboneConfig& config);
int64_t trainable_param_count(const PointEmbedConfig& embed, int n_classes);

} // namespace appt
