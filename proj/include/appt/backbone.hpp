#pragma once

#include <cstdint>
#include <vector>

#include "appt/params.hpp"
#include "appt/tape.hpp"

namespace appt {

struct BackboneConfig {
    int n_blocks = 12;
    int d = 768;
    int n_heads = 12;
    int mlp_hidden = 0; // 0 -> 4 * d
    bool has_cls_token = true;
    // Standard pre-norm wiring (LN before attention and before the MLP).
    // When false, the attention branch runs un-normalized and only the MLP
    // branch is normalized.
    bool pre_norm = true;
    bool final_norm = false;

    int resolved_mlp_hidden() const { return mlp_hidden > 0 ? mlp_hidden : 4 * d; }
    int head_dim() const { return d / n_heads; }
    void validate() const;
};

// One transformer block. All tensors are frozen.
struct BlockParams {
    Tensor wq, bq, wk, bk, wv, bv, wo, bo;
    Tensor ln1_g, ln1_b, ln2_g, ln2_b;
    Tensor mlp_w1, mlp_b1, mlp_w2, mlp_b2;
};

struct BackboneParams {
    BackboneConfig config;
    std::vector<BlockParams> blocks;
    Tensor cls_token;    // [1,d], frozen
    Tensor final_ln_g;   // only used when config.final_norm
    Tensor final_ln_b;
    uint64_t init_seed = 0; // recorded for run manifests; 0 when loaded from disk

    void register_into(ParamSet& params) const;
    int64_t count() const;
};

// Stand-in for pre-trained weights: truncated normal(0, 0.02) clipped at two
// sigma, zero biases, unit layer-norm gains. Values are rounded through f32
// so a save/load cycle is bit-exact.
BackboneParams init_random(const BackboneConfig& config, uint64_t seed);

struct BoundBlock {
    Var wq, bq, wk, bk, wv, bv, wo, bo;
    Var ln1_g, ln1_b, ln2_g, ln2_b;
    Var mlp_w1, mlp_b1, mlp_w2, mlp_b2;
};

struct BoundBackbone {
    std::vector<BoundBlock> blocks;
    Var cls_token;
    Var final_ln_g, final_ln_b;
    static BoundBackbone bind(Tape& tape, const BackboneParams& p);
};

// Full multi-head self-attention over all tokens (no mask): per-head scaled
// dot-product with scale 1/sqrt(d/n_heads), softmax over keys, value mixing,
// output projection.
Var mhsa(Tape& tape, Var tokens, const BoundBlock& block, const BackboneConfig& config);

// One encoder block; preserves token count and width and is
// permutation-equivariant over tokens.
Var block_forward(Tape& tape, Var tokens, const BoundBlock& block, const BackboneConfig& config);

constexpr double kLayerNormEps = 1e-5;

} // namespace appt
