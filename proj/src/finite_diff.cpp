#include "appt/finite_diff.hpp"

#include <cmath>
#include <cstring>

#include "appt/rng.hpp"

namespace appt {

FiniteDiffReport finite_diff_check(const std::function<double()>& loss_fn,
                                   const std::function<std::map<std::string, Tensor>()>& grad_fn,
                                   const std::vector<FiniteDiffCoord>& coords, double h,
                                   double tolerance) {
    if (h <= 0.0) throw ContractError("finite_diff_check: step size must be positive");
    const double base1 = loss_fn();
    const double base2 = loss_fn();
    if (std::memcmp(&base1, &base2, sizeof(double)) != 0) {
        throw ContractError("finite_diff_check: loss function is not deterministic (" +
                            std::to_string(base1) + " vs " + std::to_string(base2) + ")");
    }

    std::map<std::string, Tensor> grads = grad_fn();

    FiniteDiffReport report;
    for (const FiniteDiffCoord& c : coords) {
        if (!c.param) throw ContractError("finite_diff_check: null coordinate");
        auto git = grads.find(c.param->name);
        if (git == grads.end()) {
            throw ContractError("finite_diff_check: no analytic gradient for " + c.param->name);
        }
        // perturb the shared storage in place, restore exactly afterwards
        double* slot = const_cast<Tensor&>(c.param->tensor).data() + c.index;
        const double saved = *slot;
        *slot = saved + h;
        const double up = loss_fn();
        *slot = saved - h;
        const double down = loss_fn();
        *slot = saved;

        FiniteDiffRow row;
        row.param = c.param->name;
        row.index = c.index;
        row.analytic = git->second.data()[c.index];
        row.numeric = (up - down) / (2.0 * h);
        row.rel_err = std::fabs(row.analytic - row.numeric) /
                      std::max({std::fabs(row.analytic), std::fabs(row.numeric), 1e-8});
        row.pass = row.rel_err <= tolerance;
        report.max_rel_err = std::max(report.max_rel_err, row.rel_err);
        report.all_pass = report.all_pass && row.pass;
        report.rows.push_back(std::move(row));
    }
    return report;
}

std::vector<FiniteDiffCoord> sample_trainable_coords(const ParamSet& params, int count,
                                                     uint64_t seed) {
    auto trainable = params.partition(true);
    if (trainable.empty()) throw ContractError("no trainable parameters to sample");
    int64_t total = 0;
    for (const auto* e : trainable) total += e->tensor.size();
    Rng rng(Rng::derive(seed, "fd-coords"));
    std::vector<FiniteDiffCoord> out;
    out.reserve(static_cast<size_t>(count));
    for (int i = 0; i < count; ++i) {
        int64_t flat = static_cast<int64_t>(rng.uniform() * static_cast<double>(total));
        if (flat >= total) flat = total - 1;
        for (const auto* e : trainable) {
            if (flat < e->tensor.size()) {
                out.push_back({e, flat});
                break;
            }
            flat -= e->tensor.size();
        }
    }
    return out;
}

} // namespace appt
