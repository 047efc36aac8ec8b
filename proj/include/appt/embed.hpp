#pragma once

#include <cstdint>

#include "appt/params.hpp"
#include "appt/pointcloud.hpp"
#include "appt/rng.hpp"
#include "appt/tape.hpp"

namespace appt {

// Local-geometry aggregator: two shared per-neighbor MLP stages with max-pool
// between them, then a linear projection to the backbone width. Hidden widths
// default to (d/2, 3d/2) so the trainable budget at d = 768 lands where the
// full-scale model's does.
struct PointEmbedConfig {
    int in_width = 3;  // d' + C of the grouped points
    int d_out = 768;   // must equal the backbone width
    int stage1_width = 0; // 0 -> d_out / 2
    int stage2_width = 0; // 0 -> 3 * d_out / 2

    int resolved_stage1() const { return stage1_width > 0 ? stage1_width : d_out / 2; }
    int resolved_stage2() const { return stage2_width > 0 ? stage2_width : 3 * d_out / 2; }
};

// All trainable. These same tensors also back the prompt generator; the two
// modules share parameters by construction.
struct PointEmbedParams {
    Tensor s1_w1, s1_b1; // in -> h1
    Tensor s1_w2, s1_b2; // h1 -> h1
    Tensor s2_w1, s2_b1; // 2*h1 -> h2
    Tensor s2_w2, s2_b2; // h2 -> h2
    Tensor proj_w, proj_b; // h2 -> d

    static PointEmbedParams init(const PointEmbedConfig& config, Rng& rng);
    void register_into(ParamSet& params, const std::string& prefix) const;
    int64_t count() const;
};

struct BoundPointEmbed {
    Var s1_w1, s1_b1, s1_w2, s1_b2;
    Var s2_w1, s2_b1, s2_w2, s2_b2;
    Var proj_w, proj_b;
    static BoundPointEmbed bind(Tape& tape, const PointEmbedParams& p);
};

// Per-group d-dimensional embeddings, one row per group. `rows` must be the
// flat [n_groups*k, in_width] view of a PointGroups tensor. The result is
// invariant to any permutation of the k neighbors within a group, and row i
// depends only on group i.
struct PointEmbeddings {
    Var values;             // [n_groups, d]
    uint64_t source_groups; // provenance: PointGroups::id
};

PointEmbeddings point_embed(Tape& tape, const BoundPointEmbed& params,
                            const PointEmbedConfig& config, Var group_rows, int group_size,
                            uint64_t groups_id);

// Channel-wise mean of the embeddings: the centroid every relative position
// is measured against.
Var global_embedding(Var embeddings);

// Two-scalar position injector, a width-2 convolution without bias:
// token_i = a * (emb_i - e_g) + b * emb_i. Trainable; initialized to the
// identity (a, b) = (0, 1).
struct PosInParams {
    Tensor kernel; // [1,2] = {a, b}

    static PosInParams init();
    void register_into(ParamSet& params) const;
};

Var pos_inject(Tape& tape, Var embeddings, Var global_emb, Var posin_kernel);

} // namespace appt
