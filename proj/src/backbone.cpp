#include "appt/backbone.hpp"

#include "appt/rng.hpp"

namespace appt {

void BackboneConfig::validate() const {
    if (n_blocks < 1) throw ContractError("backbone needs at least one block");
    if (d < 1 || n_heads < 1 || d % n_heads != 0) {
        throw ContractError("backbone width " + std::to_string(d) +
                            " must be divisible by head count " + std::to_string(n_heads));
    }
}

namespace {

Tensor frozen_trunc_normal(Rng& rng, Shape shape, double sigma) {
    Tensor t(std::move(shape));
    double* p = t.data();
    for (int64_t i = 0; i < t.size(); ++i) {
        p[i] = static_cast<double>(static_cast<float>(rng.truncated_normal(0.0, sigma, 2.0)));
    }
    return t;
}

} // namespace

BackboneParams init_random(const BackboneConfig& config, uint64_t seed) {
    config.validate();
    Rng rng(Rng::derive(seed, "backbone"));
    const int d = config.d;
    const int h = config.resolved_mlp_hidden();
    BackboneParams out;
    out.config = config;
    out.init_seed = seed;
    out.blocks.resize(static_cast<size_t>(config.n_blocks));
    for (auto& b : out.blocks) {
        b.wq = frozen_trunc_normal(rng, {d, d}, 0.02);
        b.bq = Tensor({1, d});
        b.wk = frozen_trunc_normal(rng, {d, d}, 0.02);
        b.bk = Tensor({1, d});
        b.wv = frozen_trunc_normal(rng, {d, d}, 0.02);
        b.bv = Tensor({1, d});
        b.wo = frozen_trunc_normal(rng, {d, d}, 0.02);
        b.bo = Tensor({1, d});
        b.ln1_g = Tensor::full({1, d}, 1.0);
        b.ln1_b = Tensor({1, d});
        b.ln2_g = Tensor::full({1, d}, 1.0);
        b.ln2_b = Tensor({1, d});
        b.mlp_w1 = frozen_trunc_normal(rng, {d, h}, 0.02);
        b.mlp_b1 = Tensor({1, h});
        b.mlp_w2 = frozen_trunc_normal(rng, {h, d}, 0.02);
        b.mlp_b2 = Tensor({1, d});
    }
    if (config.has_cls_token) out.cls_token = frozen_trunc_normal(rng, {1, d}, 0.02);
    if (config.final_norm) {
        out.final_ln_g = Tensor::full({1, d}, 1.0);
        out.final_ln_b = Tensor({1, d});
    }
    return out;
}

void BackboneParams::register_into(ParamSet& params) const {
    if (config.has_cls_token) params.add("cls_token", cls_token, false);
    for (size_t l = 0; l < blocks.size(); ++l) {
        const BlockParams& b = blocks[l];
        const std::string p = "blocks." + std::to_string(l) + ".";
        params.add(p + "ln1.gamma", b.ln1_g, false);
        params.add(p + "ln1.beta", b.ln1_b, false);
        params.add(p + "attn.wq", b.wq, false);
        params.add(p + "attn.wq.bias", b.bq, false);
        params.add(p + "attn.wk", b.wk, false);
        params.add(p + "attn.wk.bias", b.bk, false);
        params.add(p + "attn.wv", b.wv, false);
        params.add(p + "attn.wv.bias", b.bv, false);
        params.add(p + "attn.wo", b.wo, false);
        params.add(p + "attn.wo.bias", b.bo, false);
        params.add(p + "ln2.gamma", b.ln2_g, false);
        params.add(p + "ln2.beta", b.ln2_b, false);
        params.add(p + "mlp.w1", b.mlp_w1, false);
        params.add(p + "mlp.w1.bias", b.mlp_b1, false);
        params.add(p + "mlp.w2", b.mlp_w2, false);
        params.add(p + "mlp.w2.bias", b.mlp_b2, false);
    }
    if (config.final_norm) {
        params.add("final_ln.gamma", final_ln_g, false);
        params.add("final_ln.beta", final_ln_b, false);
    }
}

int64_t BackboneParams::count() const {
    int64_t n = config.has_cls_token ? cls_token.size() : 0;
    for (const auto& b : blocks) {
        n += b.wq.size() + b.bq.size() + b.wk.size() + b.bk.size() + b.wv.size() + b.bv.size() +
             b.wo.size() + b.bo.size() + b.ln1_g.size() + b.ln1_b.size() + b.ln2_g.size() +
             b.ln2_b.size() + b.mlp_w1.size() + b.mlp_b1.size() + b.mlp_w2.size() +
             b.mlp_b2.size();
    }
    if (config.final_norm) n += final_ln_g.size() + final_ln_b.size();
    return n;
}

BoundBackbone BoundBackbone::bind(Tape& tape, const BackboneParams& p) {
    BoundBackbone out;
    out.blocks.reserve(p.blocks.size());
    for (const auto& b : p.blocks) {
        BoundBlock bb;
        bb.wq = tape.leaf(b.wq);
        bb.bq = tape.leaf(b.bq);
        bb.wk = tape.leaf(b.wk);
        bb.bk = tape.leaf(b.bk);
        bb.wv = tape.leaf(b.wv);
        bb.bv = tape.leaf(b.bv);
        bb.wo = tape.leaf(b.wo);
        bb.bo = tape.leaf(b.bo);
        bb.ln1_g = tape.leaf(b.ln1_g);
        bb.ln1_b = tape.leaf(b.ln1_b);
        bb.ln2_g = tape.leaf(b.ln2_g);
        bb.ln2_b = tape.leaf(b.ln2_b);
        bb.mlp_w1 = tape.leaf(b.mlp_w1);
        bb.mlp_b1 = tape.leaf(b.mlp_b1);
        bb.mlp_w2 = tape.leaf(b.mlp_w2);
        bb.mlp_b2 = tape.leaf(b.mlp_b2);
        out.blocks.push_back(bb);
    }
    if (p.config.has_cls_token) out.cls_token = tape.leaf(p.cls_token);
    if (p.config.final_norm) {
        out.final_ln_g = tape.leaf(p.final_ln_g);
        out.final_ln_b = tape.leaf(p.final_ln_b);
    }
    return out;
}

Var mhsa(Tape& tape, Var tokens, const BoundBlock& block, const BackboneConfig& config) {
    const int d = config.d;
    const int heads = config.n_heads;
    const int hd = config.head_dim();
    if (tape.value(tokens).cols() != d) {
        throw ContractError("mhsa: token width " + std::to_string(tape.value(tokens).cols()) +
                            " does not match backbone width " + std::to_string(d));
    }
    Var q = add(matmul(tokens, block.wq), block.bq);
    Var k = add(matmul(tokens, block.wk), block.bk);
    Var v = add(matmul(tokens, block.wv), block.bv);
    const double att_scale = 1.0 / std::sqrt(static_cast<double>(hd));
    std::vector<Var> head_out;
    head_out.reserve(static_cast<size_t>(heads));
    for (int h = 0; h < heads; ++h) {
        Var qh = slice_cols(q, h * hd, hd);
        Var kh = slice_cols(k, h * hd, hd);
        Var vh = slice_cols(v, h * hd, hd);
        Var scores = scale(matmul_nt(qh, kh), att_scale);
        Var weights = softmax_rows(scores);
        head_out.push_back(matmul(weights, vh));
    }
    Var mixed = heads == 1 ? head_out[0] : concat_cols(head_out);
    return add(matmul(mixed, block.wo), block.bo);
}

Var block_forward(Tape& tape, Var tokens, const BoundBlock& block, const BackboneConfig& config) {
    Var x = tokens;
    if (config.pre_norm) {
        Var attended = mhsa(tape, layer_norm(x, block.ln1_g, block.ln1_b, kLayerNormEps), block,
                            config);
        Var mid = add(x, attended);
        Var expanded = gelu(add(
            matmul(layer_norm(mid, block.ln2_g, block.ln2_b, kLayerNormEps), block.mlp_w1),
            block.mlp_b1));
        return add(mid, add(matmul(expanded, block.mlp_w2), block.mlp_b2));
    }
    // un-normalized attention branch, normalization only ahead of the MLP
    Var mid = add(x, mhsa(tape, x, block, config));
    Var expanded = gelu(add(
        matmul(layer_norm(mid, block.ln2_g, block.ln2_b, kLayerNormEps), block.mlp_w1),
        block.mlp_b1));
    return add(mid, add(matmul(expanded, block.mlp_w2), block.mlp_b2));
}

} // namespace appt
