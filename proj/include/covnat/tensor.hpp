#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "covnat/error.hpp"

namespace covnat {

using Index = std::int64_t;
using Shape = std::vector<Index>;

inline Index shape_numel(const Shape& s) {
    Index n = 1;
    for (Index d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "(";
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ")";
    return os.str();
}

namespace autograd {

// Thread-local so decode workers can disable taping independently.
inline bool& enabled_flag() {
    thread_local bool enabled = true;
    return enabled;
}

inline bool enabled() { return enabled_flag(); }

struct NoGradGuard {
    NoGradGuard() : prev_(enabled_flag()) { enabled_flag() = false; }
    ~NoGradGuard() { enabled_flag() = prev_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

}  // namespace autograd

struct Node {
    Shape shape;
    std::vector<double> values;
    std::vector<double> grad;  // empty until first accumulation
    bool requires_grad = false;
    const char* op = "leaf";
    std::vector<std::shared_ptr<Node>> parents;
    // Reads this node's grad and accumulates into parents' grads.
    std::function<void(Node&)> backward_fn;

    Index numel() const { return static_cast<Index>(values.size()); }

    // Zero-initialized gradient buffer, allocated on demand.
    std::vector<double>& grad_buffer() {
        if (grad.empty()) grad.assign(values.size(), 0.0);
        return grad;
    }

    void accumulate_grad(const std::vector<double>& g) {
        auto& buf = grad_buffer();
        for (std::size_t i = 0; i < buf.size(); ++i) buf[i] += g[i];
    }
};

// Value-semantic handle to a graph node. Copies share the node.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

    static Tensor zeros(const Shape& shape) { return full(shape, 0.0); }

    static Tensor full(const Shape& shape, double v) {
        auto n = std::make_shared<Node>();
        n->shape = shape;
        n->values.assign(static_cast<std::size_t>(shape_numel(shape)), v);
        return Tensor(std::move(n));
    }

    static Tensor from_values(const Shape& shape, std::vector<double> vals) {
        if (static_cast<Index>(vals.size()) != shape_numel(shape))
            throw ShapeError("from_values: " + shape_str(shape) + " cannot hold " +
                             std::to_string(vals.size()) + " values");
        auto n = std::make_shared<Node>();
        n->shape = shape;
        n->values = std::move(vals);
        return Tensor(std::move(n));
    }

    static Tensor scalar(double v) { return full({1}, v); }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    Index rank() const { return static_cast<Index>(node_->shape.size()); }
    Index size(Index axis) const { return node_->shape[static_cast<std::size_t>(axis)]; }
    Index numel() const { return node_->numel(); }

    const std::vector<double>& values() const { return node_->values; }
    // Mutation is only meaningful on leaves (parameters, data); mutating an
    // interior node invalidates any taped graph that produced it.
    std::vector<double>& mutable_values() { return node_->values; }

    double value() const {
        if (numel() != 1) throw ContractError("value(): tensor is not scalar, shape " + shape_str(shape()));
        return node_->values[0];
    }

    double at(Index i) const { return node_->values[static_cast<std::size_t>(i)]; }
    double at(Index r, Index c) const {
        return node_->values[static_cast<std::size_t>(r * size(rank() - 1) + c)];
    }

    bool requires_grad() const { return node_->requires_grad; }
    Tensor& set_requires_grad(bool f) {
        node_->requires_grad = f;
        return *this;
    }

    bool has_grad() const { return !node_->grad.empty(); }
    const std::vector<double>& grad() const {
        if (node_->grad.empty()) throw ContractError("grad(): no gradient populated");
        return node_->grad;
    }
    void zero_grad() { node_->grad.clear(); }

    const std::shared_ptr<Node>& node() const { return node_; }

private:
    std::shared_ptr<Node> node_;
};

namespace detail {

// Post-order topological sort, iterative to keep deep graphs off the C stack.
inline std::vector<Node*> topo_order(Node* root) {
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(root, 0);
    visited.insert(root);
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* p = node->parents[next].get();
            ++next;
            if (visited.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    return order;
}

}  // namespace detail

// Reverse-mode sweep from a scalar loss. Leaf gradients accumulate across
// calls (callers zero them explicitly between steps); interior node gradients
// are transient and reset at the start of every sweep. `seed` is
// d(total)/d(loss), used when a batch total is assembled from independently
// taped per-pair subgraphs.
inline void backward(const Tensor& loss, double seed = 1.0) {
    if (loss.numel() != 1)
        throw ContractError("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
    Node* root = loss.node().get();
    if (!root->requires_grad) return;
    std::vector<Node*> order = detail::topo_order(root);
    for (Node* n : order)
        if (n->backward_fn) n->grad.clear();
    root->grad_buffer()[0] += seed;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
    }
}

}  // namespace covnat
