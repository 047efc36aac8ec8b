#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "appt/params.hpp"

namespace appt {

// Central-difference gradient verification. The loss function is evaluated at
// in-place perturbations of the registered parameter storage, so it must be a
// pure function of the parameter values; the harness evaluates the base point
// twice and refuses to run if the results differ.
struct FiniteDiffRow {
    std::string param;
    int64_t index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
    double rel_err = 0.0; // |a - n| / max(|a|, |n|, 1e-8)
    bool pass = false;
};

struct FiniteDiffReport {
    std::vector<FiniteDiffRow> rows;
    double max_rel_err = 0.0;
    bool all_pass = true;
};

struct FiniteDiffCoord {
    const ParamSet::Entry* param = nullptr;
    int64_t index = 0;
};

FiniteDiffReport finite_diff_check(const std::function<double()>& loss_fn,
                                   const std::function<std::map<std::string, Tensor>()>& grad_fn,
                                   const std::vector<FiniteDiffCoord>& coords, double h,
                                   double tolerance);

// Draws `count` coordinates across the trainable parameters, proportionally
// seeded and deterministic.
std::vector<FiniteDiffCoord> sample_trainable_coords(const ParamSet& params, int count,
                                                     uint64_t seed);

} // namespace appt
