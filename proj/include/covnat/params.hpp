#pragma once

#include <map>
#include <string>
#include <vector>

#include "covnat/random.hpp"
#include "covnat/tensor.hpp"

namespace covnat {

struct Parameter {
    std::string name;
    Tensor tensor;
};

// Ordered collection of named trainable tensors. Order is registration order
// and is the canonical order for optimizer state and checkpoints.
class ParameterStore {
public:
    Tensor create(const std::string& name, const Shape& shape, Rng& rng, double init_range) {
        Tensor t = Tensor::zeros(shape);
        if (init_range > 0.0) {
            for (double& v : t.mutable_values()) v = rng.uniform(-init_range, init_range);
        }
        return add(name, t);
    }

    Tensor create_const(const std::string& name, const Shape& shape, double fill) {
        return add(name, Tensor::full(shape, fill));
    }

    Tensor add(const std::string& name, Tensor t) {
        if (index_.count(name)) throw ContractError("duplicate parameter name: " + name);
        t.set_requires_grad(true);
        index_[name] = params_.size();
        params_.push_back(Parameter{name, t});
        return t;
    }

    bool has(const std::string& name) const { return index_.count(name) != 0; }

    Tensor get(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw ContractError("unknown parameter: " + name);
        return params_[it->second].tensor;
    }

    std::size_t size() const { return params_.size(); }
    const Parameter& at(std::size_t i) const { return params_[i]; }
    Parameter& at(std::size_t i) { return params_[i]; }

    auto begin() const { return params_.begin(); }
    auto end() const { return params_.end(); }

    Index total_values() const {
        Index n = 0;
        for (const auto& p : params_) n += p.tensor.numel();
        return n;
    }

    void zero_grads() {
        for (auto& p : params_) p.tensor.zero_grad();
    }

private:
    std::vector<Parameter> params_;
    std::map<std::string, std::size_t> index_;
};

}  // namespace covnat
