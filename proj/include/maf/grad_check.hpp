#pragma once

#include "maf/tensor.hpp"

#include <functional>
#include <vector>

namespace maf {

// Central-difference gradient verification. `f` must be a pure function of
// the parameter tensors; it is re-evaluated 2x per coordinate. The relative
// error for a coordinate is |analytic - numeric| / max(1, |numeric|); the
// maximum over all coordinates is returned.
inline double finite_diff_check(const std::function<double(const std::vector<Tensor>&)>& f,
                                std::vector<Tensor> params,
                                const std::vector<Tensor>& analytic_grads, double h) {
    if (h <= 0.0) throw ContractError("finite_diff_check requires h > 0");
    if (analytic_grads.size() != params.size())
        throw DimensionError("analytic gradient count != param count");
    double max_rel = 0.0;
    for (std::size_t p = 0; p < params.size(); ++p) {
        if (!params[p].same_shape(analytic_grads[p]))
            throw DimensionError("analytic gradient shape mismatch");
        for (std::size_t i = 0; i < params[p].size(); ++i) {
            const double orig = params[p][i];
            params[p][i] = orig + h;
            const double fp = f(params);
            params[p][i] = orig - h;
            const double fm = f(params);
            params[p][i] = orig;
            if (!std::isfinite(fp) || !std::isfinite(fm))
                throw NumericError("non-finite objective during finite differences");
            const double numeric = (fp - fm) / (2.0 * h);
            const double rel =
                std::abs(analytic_grads[p][i] - numeric) / std::max(1.0, std::abs(numeric));
            max_rel = std::max(max_rel, rel);
        }
    }
    return max_rel;
}

} // namespace maf
