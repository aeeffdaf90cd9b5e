#include "hsi/nn/graph.hpp"

#include <stdexcept>

namespace hsi::nn {

const DenseTensor& Var::value() const {
    if (graph_ == nullptr) throw std::logic_error("use of an empty Var");
    return graph_->value(id_);
}

const DenseTensor& Var::grad() const {
    if (graph_ == nullptr) throw std::logic_error("use of an empty Var");
    return graph_->grad(id_);
}

Var Graph::input(DenseTensor value, bool requires_grad) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
}

Var Graph::record(DenseTensor value, const std::vector<Var>& inputs, BackwardFn fn) {
    Node n;
    n.value = std::move(value);
    for (const Var& v : inputs) {
        if (v.graph() != this) throw std::invalid_argument("operation mixes Vars from different graphs");
        n.requires_grad = n.requires_grad || nodes_[v.id()].requires_grad;
    }
    if (n.requires_grad) n.backward = std::move(fn);
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
}

const DenseTensor& Graph::grad(std::size_t id) const {
    const Node& n = nodes_.at(id);
    if (!n.has_grad) throw std::logic_error("gradient requested for a node outside the last backward pass");
    return n.grad;
}

DenseTensor& Graph::grad_mut(std::size_t id) {
    Node& n = nodes_.at(id);
    if (!n.has_grad) {
        n.grad = DenseTensor(n.value.shape());
        n.has_grad = true;
    }
    return n.grad;
}

void Graph::backward(const Var& root) {
    if (root.graph() != this) throw std::invalid_argument("root belongs to another graph");
    if (nodes_[root.id()].value.size() != 1) throw std::invalid_argument("backward root must be a scalar");
    for (auto& n : nodes_) {
        n.has_grad = false;
        n.grad = DenseTensor();
        if (n.requires_grad && !n.backward) {  // leaf: zero gradient even if unreached
            n.grad = DenseTensor(n.value.shape());
            n.has_grad = true;
        }
    }
    visits_ = 0;
    grad_mut(root.id())[0] = 1.0;
    for (std::size_t id = root.id() + 1; id-- > 0;) {
        Node& n = nodes_[id];
        if (!n.has_grad || !n.backward) continue;
        n.backward(*this, id);
        ++visits_;
    }
}

}  // namespace hsi::nn
