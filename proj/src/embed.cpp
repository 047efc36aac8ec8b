#include "appt/embed.hpp"

#include <cmath>

namespace appt {

namespace {

// Fan-in scaled truncated normal for the trainable MLP stack; values pass
// through f32 so checkpoints round-trip bit-exactly.
Tensor init_linear(Rng& rng, int fan_in, int fan_out) {
    Tensor w({fan_in, fan_out});
    double sigma = std::sqrt(2.0 / fan_in);
    double* p = w.data();
    for (int64_t i = 0; i < w.size(); ++i) {
        p[i] = static_cast<double>(static_cast<float>(rng.truncated_normal(0.0, sigma, 2.0)));
    }
    w.set_requires_grad(true);
    return w;
}

Tensor init_bias(int n) {
    Tensor b({1, n});
    b.set_requires_grad(true);
    return b;
}

} // namespace

PointEmbedParams PointEmbedParams::init(const PointEmbedConfig& config, Rng& rng) {
    const int in = config.in_width;
    const int h1 = config.resolved_stage1();
    const int h2 = config.resolved_stage2();
    const int d = config.d_out;
    if (in < 1 || h1 < 1 || h2 < 1 || d < 1) throw ContractError("point embed widths must be positive");
    PointEmbedParams p;
    p.s1_w1 = init_linear(rng, in, h1);
    p.s1_b1 = init_bias(h1);
    p.s1_w2 = init_linear(rng, h1, h1);
    p.s1_b2 = init_bias(h1);
    p.s2_w1 = init_linear(rng, 2 * h1, h2);
    p.s2_b1 = init_bias(h2);
    p.s2_w2 = init_linear(rng, h2, h2);
    p.s2_b2 = init_bias(h2);
    p.proj_w = init_linear(rng, h2, d);
    p.proj_b = init_bias(d);
    return p;
}

void PointEmbedParams::register_into(ParamSet& params, const std::string& prefix) const {
    params.add(prefix + ".stage1.w1", s1_w1, true);
    params.add(prefix + ".stage1.w1.bias", s1_b1, true);
    params.add(prefix + ".stage1.w2", s1_w2, true);
    params.add(prefix + ".stage1.w2.bias", s1_b2, true);
    params.add(prefix + ".stage2.w1", s2_w1, true);
    params.add(prefix + ".stage2.w1.bias", s2_b1, true);
    params.add(prefix + ".stage2.w2", s2_w2, true);
    params.add(prefix + ".stage2.w2.bias", s2_b2, true);
    params.add(prefix + ".proj.w", proj_w, true);
    params.add(prefix + ".proj.w.bias", proj_b, true);
}

int64_t PointEmbedParams::count() const {
    return s1_w1.size() + s1_b1.size() + s1_w2.size() + s1_b2.size() + s2_w1.size() +
           s2_b1.size() + s2_w2.size() + s2_b2.size() + proj_w.size() + proj_b.size();
}

BoundPointEmbed BoundPointEmbed::bind(Tape& tape, const PointEmbedParams& p) {
    BoundPointEmbed b;
    b.s1_w1 = tape.leaf(p.s1_w1);
    b.s1_b1 = tape.leaf(p.s1_b1);
    b.s1_w2 = tape.leaf(p.s1_w2);
    b.s1_b2 = tape.leaf(p.s1_b2);
    b.s2_w1 = tape.leaf(p.s2_w1);
    b.s2_b1 = tape.leaf(p.s2_b1);
    b.s2_w2 = tape.leaf(p.s2_w2);
    b.s2_b2 = tape.leaf(p.s2_b2);
    b.proj_w = tape.leaf(p.proj_w);
    b.proj_b = tape.leaf(p.proj_b);
    return b;
}

PointEmbeddings point_embed(Tape& tape, const BoundPointEmbed& params,
                            const PointEmbedConfig& config, Var group_rows, int group_size,
                            uint64_t groups_id) {
    const Tensor& rows = tape.value(group_rows);
    if (rows.cols() != config.in_width) {
        throw ContractError("point_embed: input width " + std::to_string(rows.cols()) +
                            " does not match configured " + std::to_string(config.in_width));
    }
    if (group_size < 1 || rows.rows() % group_size != 0) {
        throw ContractError("point_embed: row count not divisible by group size");
    }
    // stage 1: per-neighbor MLP, then pool over each group
    Var h = gelu(add(matmul(group_rows, params.s1_w1), params.s1_b1));
    h = gelu(add(matmul(h, params.s1_w2), params.s1_b2));
    Var pooled1 = group_max_pool(h, group_size);
    // re-attach the pooled context to every neighbor
    Var joined = group_concat(h, pooled1, group_size);
    // stage 2: per-neighbor MLP, pool again
    Var h2 = gelu(add(matmul(joined, params.s2_w1), params.s2_b1));
    h2 = gelu(add(matmul(h2, params.s2_w2), params.s2_b2));
    Var pooled2 = group_max_pool(h2, group_size);
    // final projection to the backbone width
    Var out = add(matmul(pooled2, params.proj_w), params.proj_b);
    return PointEmbeddings{out, groups_id};
}

Var global_embedding(Var embeddings) { return mean_rows(embeddings); }

PosInParams PosInParams::init() {
    PosInParams p;
    p.kernel = Tensor({1, 2}, {0.0, 1.0});
    p.kernel.set_requires_grad(true);
    return p;
}

void PosInParams::register_into(ParamSet& params) const {
    params.add("posin.kernel", kernel, true);
}

Var pos_inject(Tape& tape, Var embeddings, Var global_emb, Var posin_kernel) {
    const Tensor& kv = tape.value(posin_kernel);
    if (kv.size() != 2) throw ContractError("pos_inject: kernel must hold exactly 2 weights");
    Var a = slice_cols(posin_kernel, 0, 1);
    Var b = slice_cols(posin_kernel, 1, 1);
    Var relative = sub(embeddings, global_emb); // row broadcast
    return add(scale_by(relative, a), scale_by(embeddings, b));
}

} // namespace appt
