#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <vector>

#include "hsi/tensor.hpp"

namespace hsi::nn {

class Graph;

/// Handle to a node of a Graph. Cheap to copy; valid while the graph lives.
class Var {
public:
    Var() = default;

    [[nodiscard]] const DenseTensor& value() const;
    [[nodiscard]] const DenseTensor& grad() const;
    [[nodiscard]] const Shape& shape() const { return value().shape(); }
    [[nodiscard]] std::size_t id() const noexcept { return id_; }
    [[nodiscard]] Graph* graph() const noexcept { return graph_; }
    [[nodiscard]] bool valid() const noexcept { return graph_ != nullptr; }

private:
    friend class Graph;
    Var(Graph* g, std::size_t id) : graph_(g), id_(id) {}

    Graph* graph_ = nullptr;
    std::size_t id_ = 0;
};

/// Tape of operations for reverse-mode differentiation. Nodes are appended
/// in creation order, which is a topological order, so backward walks the
/// tape from the root down and visits every node at most once.
class Graph {
public:
    using BackwardFn = std::function<void(Graph&, std::size_t self)>;

    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    /// Leaf node. Gradients are accumulated for it when `requires_grad`.
    Var input(DenseTensor value, bool requires_grad = true);
    Var constant(DenseTensor value) { return input(std::move(value), false); }

    /// Records an operation node. `fn` receives the node id and must add its
    /// contribution into the gradients of the inputs that require them.
    Var record(DenseTensor value, const std::vector<Var>& inputs, BackwardFn fn);

    /// Seeds d(root)/d(root) = 1 for a single-element root and propagates.
    /// Gradients from a previous call are discarded.
    void backward(const Var& root);

    [[nodiscard]] const DenseTensor& value(std::size_t id) const { return nodes_.at(id).value; }
    [[nodiscard]] const DenseTensor& grad(std::size_t id) const;
    /// Gradient buffer of node `id`, allocated as zeros on first use.
    DenseTensor& grad_mut(std::size_t id);
    [[nodiscard]] bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
    [[nodiscard]] std::size_t size() const noexcept { return nodes_.size(); }
    /// Number of backward closures run by the last backward().
    [[nodiscard]] std::size_t backward_visits() const noexcept { return visits_; }

private:
    struct Node {
        DenseTensor value;
        DenseTensor grad;
        bool has_grad = false;
        bool requires_grad = false;
        BackwardFn backward;
    };

    // Deque keeps references to existing nodes stable while new ones are added.
    std::deque<Node> nodes_;
    std::size_t visits_ = 0;
};

}  // namespace hsi::nn
