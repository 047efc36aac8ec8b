#include "appt/model.hpp"

#include <set>

#include "appt/rng.hpp"

namespace appt {

void ModelConfig::validate() const {
    backbone.validate();
    if (embed.d_out != backbone.d) {
        throw ContractError("embed width " + std::to_string(embed.d_out) +
                            " must equal backbone width " + std::to_string(backbone.d));
    }
    if (n_classes < 2) throw ContractError("need at least 2 classes");
    if (n_groups < 1 || k_neighbors < 1) throw ContractError("grouping sizes must be positive");
    if (!backbone.has_cls_token) throw ContractError("classifier requires a class token");
}

Model Model::create(const ModelConfig& config, uint64_t trainable_seed, BackboneParams backbone) {
    ModelConfig cfg = config;
    cfg.embed.d_out = cfg.backbone.d;
    cfg.validate();
    if (backbone.config.d != cfg.backbone.d || backbone.config.n_blocks != cfg.backbone.n_blocks) {
        throw ContractError("backbone parameters do not match the model configuration");
    }

    Model m;
    m.config = cfg;
    m.backbone = std::move(backbone);
    m.backbone.config = cfg.backbone; // wiring flags come from the run config
    m.trainable_seed = trainable_seed;

    Rng embed_rng(Rng::derive(trainable_seed, "embed"));
    m.embed = PointEmbedParams::init(cfg.embed, embed_rng);
    m.posin = PosInParams::init();

    Rng head_rng(Rng::derive(trainable_seed, "head"));
    m.head_w = Tensor({cfg.backbone.d, cfg.n_classes});
    double* p = m.head_w.data();
    for (int64_t i = 0; i < m.head_w.size(); ++i) {
        p[i] = static_cast<double>(static_cast<float>(head_rng.truncated_normal(0.0, 0.02, 2.0)));
    }
    m.head_w.set_requires_grad(true);

    m.backbone.register_into(m.params);
    m.embed.register_into(m.params, "embed");
    m.posin.register_into(m.params);
    m.params.add("head.w", m.head_w, true);
    return m;
}

BoundModel BoundModel::bind(Tape& tape, const Model& model) {
    BoundModel b;
    b.embed = BoundPointEmbed::bind(tape, model.embed);
    b.posin_kernel = tape.leaf(model.posin.kernel);
    b.backbone = BoundBackbone::bind(tape, model.backbone);
    b.head_w = tape.leaf(model.head_w);

    // name -> Var map for gradient collection; leaves share tensor storage,
    // so matching on storage id is exact
    std::unordered_map<const void*, Var> by_storage;
    auto note = [&](Var v) {
        if (v.valid()) by_storage[tape.value(v).storage_id()] = v;
    };
    note(b.posin_kernel);
    note(b.head_w);
    note(b.embed.s1_w1);
    note(b.embed.s1_b1);
    note(b.embed.s1_w2);
    note(b.embed.s1_b2);
    note(b.embed.s2_w1);
    note(b.embed.s2_b1);
    note(b.embed.s2_w2);
    note(b.embed.s2_b2);
    note(b.embed.proj_w);
    note(b.embed.proj_b);
    note(b.backbone.cls_token);
    note(b.backbone.final_ln_g);
    note(b.backbone.final_ln_b);
    for (const auto& blk : b.backbone.blocks) {
        for (Var v : {blk.wq, blk.bq, blk.wk, blk.bk, blk.wv, blk.bv, blk.wo, blk.bo, blk.ln1_g,
                      blk.ln1_b, blk.ln2_g, blk.ln2_b, blk.mlp_w1, blk.mlp_b1, blk.mlp_w2,
                      blk.mlp_b2}) {
            note(v);
        }
    }
    for (const auto& e : model.params.entries()) {
        auto it = by_storage.find(e.tensor.storage_id());
        if (it == by_storage.end()) {
            throw IntegrityError("parameter " + e.name + " was not bound to the tape");
        }
        b.by_name[e.name] = it->second;
    }
    return b;
}

ForwardResult model_forward(Tape& tape, const BoundModel& bound, const Model& model,
                            const Tensor& group_rows, uint64_t groups_id, PromptTrace* trace) {
    const ModelConfig& cfg = model.config;
    if (group_rows.cols() != cfg.embed.in_width) {
        throw ContractError("model_forward: group width " + std::to_string(group_rows.cols()) +
                            " does not match embed input width " +
                            std::to_string(cfg.embed.in_width));
    }
    if (group_rows.rows() % cfg.k_neighbors != 0) {
        throw ContractError("model_forward: group rows not divisible by k");
    }

    ForwardResult r;
    Var rows = tape.constant(group_rows);
    r.embeddings = point_embed(tape, bound.embed, cfg.embed, rows, cfg.k_neighbors, groups_id);
    r.e_g = global_embedding(r.embeddings.values);

    Var tokens = cfg.use_posin
                     ? pos_inject(tape, r.embeddings.values, r.e_g, bound.posin_kernel)
                     : r.embeddings.values;
    if (cfg.use_prompt) r.p0 = gen_prompt(tape, r.embeddings.values);

    r.state = prompted_forward(tape, tokens, r.p0, bound.backbone.cls_token, bound.backbone,
                               model.backbone.config, trace);
    r.e_cls = cfg.use_pooled_cls ? pool_cls(tape, r.state) : r.state.cls;
    r.logits = matmul(r.e_cls, bound.head_w);
    return r;
}

PointGroups tokenize_cloud(const PointCloud& cloud, const ModelConfig& config, uint64_t fps_seed) {
    const PointCloud* src = &cloud;
    PointCloud normalized;
    if (config.normalize_input) {
        normalized = normalize_unit_sphere(cloud);
        src = &normalized;
    }
    SampledCentroids centroids = fps(*src, config.n_groups, fps_seed);
    return knn_group(*src, centroids, config.k_neighbors);
}

ParamPartition param_partition(const Model& model) {
    // every tensor the model owns, for the exhaustiveness check
    std::set<const void*> owned;
    auto own = [&](const Tensor& t) {
        if (t.defined()) owned.insert(t.storage_id());
    };
    own(model.head_w);
    own(model.posin.kernel);
    own(model.embed.s1_w1);
    own(model.embed.s1_b1);
    own(model.embed.s1_w2);
    own(model.embed.s1_b2);
    own(model.embed.s2_w1);
    own(model.embed.s2_b1);
    own(model.embed.s2_w2);
    own(model.embed.s2_b2);
    own(model.embed.proj_w);
    own(model.embed.proj_b);
    own(model.backbone.cls_token);
    own(model.backbone.final_ln_g);
    own(model.backbone.final_ln_b);
    for (const auto& b : model.backbone.blocks) {
        for (const Tensor* t : {&b.wq, &b.bq, &b.wk, &b.bk, &b.wv, &b.bv, &b.wo, &b.bo, &b.ln1_g,
                                &b.ln1_b, &b.ln2_g, &b.ln2_b, &b.mlp_w1, &b.mlp_b1, &b.mlp_w2,
                                &b.mlp_b2}) {
            own(*t);
        }
    }
    std::set<const void*> registered;
    for (const auto& e : model.params.entries()) registered.insert(e.tensor.storage_id());
    for (const void* id : owned) {
        if (!registered.count(id)) {
            throw IntegrityError("a model parameter is in neither the frozen nor trainable set");
        }
    }

    ParamPartition out;
    out.frozen = model.params.partition(false);
    out.trainable = model.params.partition(true);
    for (const auto* e : out.frozen) out.frozen_count += e->tensor.size();
    for (const auto* e : out.trainable) out.trainable_count += e->tensor.size();
    return out;
}

int64_t backbone_param_count(const BackboneConfig& config) {
    const int64_t d = config.d;
    const int64_t h = config.resolved_mlp_hidden();
    int64_t per_block = 4 * (d * d + d) // qkv + output projections with biases
                        + 2 * 2 * d     // two layer norms
                        + (d * h + h) + (h * d + d);
    int64_t n = per_block * config.n_blocks;
    if (config.has_cls_token) n += d;
    if (config.final_norm) n += 2 * d;
    return n;
}

int64_t trainable_param_count(const PointEmbedConfig& embed, int n_classes) {
    const int64_t in = embed.in_width;
    const int64_t h1 = embed.resolved_stage1();
    const int64_t h2 = embed.resolved_stage2();
    const int64_t d = embed.d_out;
    int64_t n = (in * h1 + h1) + (h1 * h1 + h1)         // stage 1
                + (2 * h1 * h2 + h2) + (h2 * h2 + h2)   // stage 2
                + (h2 * d + d)                          // projection
                + 2                                     // position injector
                + d * n_classes;                        // head, no bias
    return n;
}

} // namespace appt
