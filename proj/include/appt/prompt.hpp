#pragma once

#include <vector>

#include "appt/backbone.hpp"
#include "appt/tape.hpp"

namespace appt {

// Point-prompt: channel-wise max plus channel-wise mean of the point
// embeddings. Consumes the same embeddings the token path uses, so the prompt
// generator and the embedding module share every parameter.
Var gen_prompt(Tape& tape, Var embeddings);

// The (class token, prompt features, point tokens) triple flowing between
// blocks. `prompts` has exactly `level` rows; it is invalid at level 0 and
// when the prompt path is disabled.
struct BlockState {
    Var cls;
    Var prompts;
    Var tokens;
    int level = 0;
};

// Optional per-block diagnostics recorded while the stack runs.
struct PromptTrace {
    std::vector<int> input_rows;       // assembled sequence length per block
    std::vector<Tensor> p0_entering;   // copy of the p0 slice of each block input
    std::vector<int> prompt_rows_out;  // rows of the prompt features after each block
};

// Runs the full prompted stack. Block 1 consumes [cls, p0, tokens]; block l
// consumes [cls, p0, Z^(l-1), E^(l-1)], i.e. 1 + l + n_groups rows. A fresh
// p0 is prepended at every level; the transformed prompt positions become
// Z^(l) and are carried forward. When p0 is invalid the prompt path is off
// and blocks see [cls, tokens] only.
BlockState prompted_forward(Tape& tape, Var tokens, Var p0, Var cls,
                            const BoundBackbone& backbone, const BackboneConfig& config,
                            PromptTrace* trace = nullptr);

// Channel-wise max + mean over the stacked final rows [cls; Z^(L); E^(L)].
Var pool_cls(Tape& tape, const BlockState& state);

} // namespace appt
