#pragma once

#include <string>
#include <vector>

#include "appt/finite_diff.hpp"
#include "appt/model.hpp"
#include "appt/train.hpp"

namespace appt {

// ---------------------------------------------------------------------------
// Shared probes: small helpers the property suite and the acceptance checks
// both build on.

struct TestModelSpec {
    int blocks = 4;
    int d = 128;
    int heads = 4;
    int n_groups = 32;
    int k = 8;
    int classes = 4;
    int stage1 = 0; // 0 keeps the width defaults
    int stage2 = 0;
    uint64_t seed = 1;
    bool randomize_trainables = true; // draw a non-identity operating point
};

Model make_random_model(const TestModelSpec& spec);

// Redraws every trainable tensor (including the position injector kernel)
// from a truncated normal; puts the model at a generic operating point.
void randomize_trainables(Model& model, uint64_t seed, double sigma = 0.2);

// A synthetic cloud tokenized with the model's grouping settings.
Tensor make_random_group_rows(const Model& model, uint64_t seed);

struct ForwardProbe {
    Tensor e_g, p0, e_cls, tokens; // value snapshots; p0 undefined when prompt off
};

ForwardProbe forward_probe(const Model& model, const Tensor& group_rows,
                           PromptTrace* trace = nullptr);

// max_i |a_i - b_i| / max(max_i |b_i|, floor)
double rel_change(const Tensor& a, const Tensor& b, double floor = 1e-12);

// Permute the k-row blocks of a flat group tensor.
Tensor permute_groups(const Tensor& group_rows, int k, const std::vector<int>& perm);

struct PermutationStats {
    double max_rel_eg = 0.0;
    double max_rel_p0 = 0.0;
    double max_rel_ecls = 0.0;
    double max_token_row_diff = 0.0; // equivariance residual, absolute
};

PermutationStats permutation_stats(const Model& model, const Tensor& group_rows, int n_perms,
                                   uint64_t seed);

// Full-model analytic-vs-central-difference check on randomly chosen
// trainable coordinates.
FiniteDiffReport model_gradient_check(const Model& model, const Tensor& group_rows, int label,
                                      int n_coords, double h, double tolerance, uint64_t seed);

// ---------------------------------------------------------------------------
// Property suite

enum class CheckLevel { Fast, Full };

struct CheckOptions {
    CheckLevel level = CheckLevel::Fast;
    uint64_t seed = 1;
    // Test hook: deliberately corrupt a frozen tensor mid-check so the
    // frozen-hash property must report failure.
    bool corrupt_frozen = false;
};

struct PropertyResult {
    std::string name;
    bool pass = false;
    std::string detail;
    double seconds = 0.0;
};

std::vector<PropertyResult> run_property_suite(const CheckOptions& options);

} // namespace appt
