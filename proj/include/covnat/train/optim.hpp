#pragma once

#include <cmath>
#include <vector>

#include "covnat/params.hpp"

namespace covnat {

// First/second moment buffers aligned with the parameter store order.
struct AdamState {
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;
    long step = 0;

    static AdamState for_store(const ParameterStore& store) {
        AdamState s;
        s.m.reserve(store.size());
        s.v.reserve(store.size());
        for (const auto& p : store) {
            s.m.emplace_back(p.tensor.values().size(), 0.0);
            s.v.emplace_back(p.tensor.values().size(), 0.0);
        }
        return s;
    }
};

// Standard Adam with bias correction. Parameters without a populated grad
// are treated as having zero gradient (moments decay, values stay put when
// the moments are zero).
inline void adam_step(ParameterStore& store, AdamState& state, double lr, double beta1 = 0.9,
                      double beta2 = 0.999, double eps = 1e-8) {
    if (state.m.size() != store.size()) throw ContractError("adam_step: state/store size mismatch");
    ++state.step;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
    for (std::size_t pi = 0; pi < store.size(); ++pi) {
        Tensor t = store.at(pi).tensor;
        auto& vals = t.mutable_values();
        auto& m = state.m[pi];
        auto& v = state.v[pi];
        if (m.size() != vals.size()) throw ContractError("adam_step: moment shape mismatch");
        const bool has_grad = t.has_grad();
        const std::vector<double>* g = has_grad ? &t.grad() : nullptr;
        for (std::size_t i = 0; i < vals.size(); ++i) {
            const double gi = g ? (*g)[i] : 0.0;
            m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
            v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            vals[i] -= lr * mhat / (std::sqrt(vhat) + eps);
        }
    }
}

}  // namespace covnat
