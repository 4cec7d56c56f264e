#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "stilt/param.hpp"
#include "stilt/rng.hpp"

namespace stilt {

struct GradCheckOptions {
    double step = 1e-5;
    /// 0 = check every coordinate. Otherwise check at most this many
    /// coordinates per tensor, chosen reproducibly from `coord_seed`.
    std::size_t max_coords_per_tensor = 0;
    std::uint64_t coord_seed = 0;
    /// Relative-error denominator floor; keeps finite-difference noise on
    /// near-zero gradients from registering as large relative error.
    double denom_floor = 1e-3;
};

struct GradCheckReport {
    double max_rel_err = 0.0;
    std::string worst_tensor;
    std::size_t worst_coord = 0;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
    std::size_t coords_checked = 0;
};

/// Central-difference gradient oracle. `params` must already hold analytic
/// gradients for `f` (zero grads, run forward+backward, then call this).
/// `f` is re-evaluated at perturbed coordinates; it must be deterministic
/// (fixed dropout masks or dropout disabled). Frozen tensors are skipped:
/// their analytic gradient is zero by contract while the numeric one need
/// not be.
///
/// ParamSet needs: `for_each_tensor(void(const std::string&, ParamTensor&))`.
template <typename ParamSet, typename LossFn>
GradCheckReport finite_difference_check_report(LossFn&& f, ParamSet& params,
                                               const GradCheckOptions& opts = {}) {
    if (opts.step <= 0.0)
        throw std::invalid_argument("finite_difference_check: step must be positive");

    GradCheckReport report;
    DeterministicRng coord_rng(opts.coord_seed, 0x9DC5);

    std::vector<ParamTensor*> tensors;
    std::vector<std::string> names;
    params.for_each_tensor([&](const std::string& name, ParamTensor& t) {
        tensors.push_back(&t);
        names.push_back(name);
    });

    for (std::size_t ti = 0; ti < tensors.size(); ++ti) {
        ParamTensor& tensor = *tensors[ti];
        if (!tensor.trainable) continue;

        std::vector<std::size_t> coords(tensor.value.size());
        for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
        if (opts.max_coords_per_tensor > 0 && coords.size() > opts.max_coords_per_tensor) {
            coord_rng.shuffle(coords);
            coords.resize(opts.max_coords_per_tensor);
            std::sort(coords.begin(), coords.end());
        }

        for (std::size_t idx : coords) {
            const double saved = tensor.value.data[idx];
            tensor.value.data[idx] = saved + opts.step;
            const double f_plus = f(params);
            tensor.value.data[idx] = saved - opts.step;
            const double f_minus = f(params);
            tensor.value.data[idx] = saved;
            if (!std::isfinite(f_plus) || !std::isfinite(f_minus))
                throw std::runtime_error("finite_difference_check: non-finite loss at " +
                                         names[ti] + "[" + std::to_string(idx) + "]");

            const double numeric = (f_plus - f_minus) / (2.0 * opts.step);
            const double analytic = tensor.grad.data[idx];
            const double denom =
                std::max({opts.denom_floor, std::abs(analytic), std::abs(numeric)});
            const double rel = std::abs(analytic - numeric) / denom;
            ++report.coords_checked;
            if (rel > report.max_rel_err) {
                report.max_rel_err = rel;
                report.worst_tensor = names[ti];
                report.worst_coord = idx;
                report.worst_analytic = analytic;
                report.worst_numeric = numeric;
            }
        }
    }
    return report;
}

template <typename ParamSet, typename LossFn>
double finite_difference_check(LossFn&& f, ParamSet& params, double step = 1e-5) {
    GradCheckOptions opts;
    opts.step = step;
    return finite_difference_check_report(std::forward<LossFn>(f), params, opts).max_rel_err;
}

/// Minimal parameter set for checking a single op in isolation.
struct SingleTensorParams {
    std::string name;
    ParamTensor* tensor;

    template <typename Fn>
    void for_each_tensor(Fn&& fn) {
        fn(name, *tensor);
    }
};

}  // namespace stilt
