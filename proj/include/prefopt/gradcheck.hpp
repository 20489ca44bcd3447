#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "prefopt/rng.hpp"
#include "prefopt/tensor.hpp"

namespace prefopt {

struct GradCheckOptions {
    double step = 1e-4;
    // Coordinates checked per parameter set. Parameter vectors larger than
    // this are subsampled (deterministically, from `seed`); smaller ones are
    // checked exhaustively.
    size_t max_coords = 256;
    uint64_t seed = 0x5eedc0de;
};

struct GradCheckResult {
    double max_rel_error = 0.0;
    size_t coords_checked = 0;
    // Location of the worst coordinate, for diagnostics.
    size_t worst_param = 0;
    size_t worst_index = 0;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
};

// Central-difference check of reverse-mode gradients.
//
// `fn` rebuilds the scalar objective from the current parameter values and
// must be deterministic. Analytic gradients come from one backward pass;
// numeric ones from (f(p+h) - f(p-h)) / 2h per sampled coordinate. Relative
// error uses denominator max(|analytic|, |numeric|, floor) with floor 1e-8
// so near-zero gradients do not blow up the ratio.
inline GradCheckResult finite_diff_check(const std::function<TensorPtr()>& fn,
                                         const std::vector<TensorPtr>& params,
                                         const GradCheckOptions& opts = {}) {
    if (opts.step <= 0.0) throw ContractError("finite_diff_check: step must be positive");
    constexpr double denom_floor = 1e-8;

    for (const auto& p : params) p->zero_grad();
    TensorPtr root = fn();
    if (!std::isfinite(root->item())) {
        throw NumericalError("finite_diff_check: objective is not finite");
    }
    backward(root);

    std::vector<std::vector<double>> analytic;
    analytic.reserve(params.size());
    for (const auto& p : params) analytic.push_back(p->grad);

    size_t total = 0;
    for (const auto& p : params) total += p->values.size();
    size_t budget = std::min(opts.max_coords, total);

    // Pick coordinate indices over the concatenated parameter vector.
    std::vector<size_t> coords;
    coords.reserve(budget);
    if (budget == total) {
        for (size_t i = 0; i < total; ++i) coords.push_back(i);
    } else {
        Rng rng(opts.seed);
        std::vector<size_t> all(total);
        for (size_t i = 0; i < total; ++i) all[i] = i;
        for (size_t i = 0; i < budget; ++i) {
            size_t j = i + rng.uniform(total - i);
            std::swap(all[i], all[j]);
            coords.push_back(all[i]);
        }
    }

    GradCheckResult result;
    result.coords_checked = coords.size();
    for (size_t flat : coords) {
        size_t pi = 0, off = flat;
        while (off >= params[pi]->values.size()) {
            off -= params[pi]->values.size();
            ++pi;
        }
        double& slot = params[pi]->values[off];
        double orig = slot;
        slot = orig + opts.step;
        double f_plus = fn()->item();
        slot = orig - opts.step;
        double f_minus = fn()->item();
        slot = orig;
        if (!std::isfinite(f_plus) || !std::isfinite(f_minus)) {
            throw NumericalError("finite_diff_check: objective not finite at perturbed point");
        }
        double numeric = (f_plus - f_minus) / (2.0 * opts.step);
        double a = analytic[pi][off];
        double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), denom_floor});
        if (rel > result.max_rel_error) {
            result.max_rel_error = rel;
            result.worst_param = pi;
            result.worst_index = off;
            result.worst_analytic = a;
            result.worst_numeric = numeric;
        }
    }
    return result;
}

} // namespace prefopt
