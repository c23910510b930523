#pragma once

#include <cmath>
#include <functional>

#include "covnat/params.hpp"
#include "covnat/tensor.hpp"

namespace covnat {

// Central-difference check of the reverse-mode gradients of a deterministic
// scalar function of the given parameters. Returns the max over all parameter
// entries of |analytic - numeric| / max(1, |numeric|).
inline double finite_diff_check(const std::function<Tensor()>& f, ParameterStore& params,
                                double h = 1e-5) {
    if (!(h >= 1e-7 && h <= 1e-4)) throw ContractError("finite_diff_check: h outside [1e-7, 1e-4]");

    params.zero_grads();
    Tensor loss = f();
    if (!std::isfinite(loss.value())) throw NumericError("finite_diff_check: non-finite loss");
    backward(loss);

    std::vector<std::vector<double>> analytic(params.size());
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        const Tensor& t = params.at(pi).tensor;
        analytic[pi] = t.has_grad() ? t.grad() : std::vector<double>(t.values().size(), 0.0);
    }

    double worst = 0.0;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Tensor t = params.at(pi).tensor;
        auto& vals = t.mutable_values();
        for (std::size_t i = 0; i < vals.size(); ++i) {
            const double saved = vals[i];
            vals[i] = saved + h;
            const double up = f().value();
            vals[i] = saved - h;
            const double down = f().value();
            vals[i] = saved;
            if (!std::isfinite(up) || !std::isfinite(down))
                throw NumericError("finite_diff_check: non-finite loss during perturbation");
            const double numeric = (up - down) / (2.0 * h);
            const double err = std::abs(analytic[pi][i] - numeric) / std::max(1.0, std::abs(numeric));
            worst = std::max(worst, err);
        }
    }
    params.zero_grads();
    return worst;
}

}  // namespace covnat
