#include "appt/prompt.hpp"

namespace appt {

Var gen_prompt(Tape& tape, Var embeddings) {
    const Tensor& v = tape.value(embeddings);
    if (v.rows() < 1) throw ContractError("gen_prompt: need at least one embedding row");
    return add(max_rows(embeddings), mean_rows(embeddings));
}

BlockState prompted_forward(Tape& tape, Var tokens, Var p0, Var cls,
                            const BoundBackbone& backbone, const BackboneConfig& config,
                            PromptTrace* trace) {
    if (!cls.valid()) throw ContractError("prompted_forward: class token required");
    const int d = config.d;
    if (tape.value(tokens).cols() != d) {
        throw ContractError("prompted_forward: token width " +
                            std::to_string(tape.value(tokens).cols()) +
                            " does not match backbone width " + std::to_string(d));
    }
    const int n_tokens = tape.value(tokens).rows();
    const bool with_prompt = p0.valid();

    BlockState state;
    state.cls = cls;
    state.tokens = tokens;
    state.level = 0;

    for (size_t l = 0; l < backbone.blocks.size(); ++l) {
        std::vector<Var> parts;
        parts.push_back(state.cls);
        if (with_prompt) {
            parts.push_back(p0); // fresh every level, never the transformed copy
            if (state.prompts.valid()) parts.push_back(state.prompts);
        }
        parts.push_back(state.tokens);
        Var input = concat_rows(parts);

        if (trace) {
            const Tensor& iv = tape.value(input);
            trace->input_rows.push_back(iv.rows());
            if (with_prompt) {
                Tensor p0_row({1, d});
                std::copy_n(iv.data() + d, d, p0_row.data()); // row 1 of the assembled input
                trace->p0_entering.push_back(std::move(p0_row));
            }
        }

        Var output = block_forward(tape, input, backbone.blocks[l], config);

        state.cls = slice_rows(output, 0, 1);
        const int prompt_rows = with_prompt ? static_cast<int>(l) + 1 : 0;
        if (with_prompt) state.prompts = slice_rows(output, 1, prompt_rows);
        state.tokens = slice_rows(output, 1 + prompt_rows, n_tokens);
        state.level = static_cast<int>(l) + 1;
        if (trace) trace->prompt_rows_out.push_back(prompt_rows);
    }

    if (config.final_norm) {
        state.cls = layer_norm(state.cls, backbone.final_ln_g, backbone.final_ln_b, kLayerNormEps);
        if (state.prompts.valid()) {
            state.prompts =
                layer_norm(state.prompts, backbone.final_ln_g, backbone.final_ln_b, kLayerNormEps);
        }
        state.tokens =
            layer_norm(state.tokens, backbone.final_ln_g, backbone.final_ln_b, kLayerNormEps);
    }
    return state;
}

Var pool_cls(Tape& tape, const BlockState& state) {
    std::vector<Var> parts;
    parts.push_back(state.cls);
    if (state.prompts.valid()) parts.push_back(state.prompts);
    parts.push_back(state.tokens);
    Var stacked = concat_rows(parts);
    return add(max_rows(stacked), mean_rows(stacked));
}

} // namespace appt
