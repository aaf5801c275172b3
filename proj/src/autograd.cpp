#include "cbstm/autograd.hpp"

#include "cbstm/params.hpp"

namespace cbstm {

const Tensor& Value::tensor() const {
    if (!valid()) throw ArgumentError("use of invalid Value handle");
    return tape->value(id);
}

const Shape& Value::shape() const { return tensor().shape(); }

void Tape::check_open() const {
    if (consumed_) throw ArgumentError("tape already consumed by backward()");
}

Value Tape::leaf(Tensor value, bool requires_grad) {
    check_open();
    if (!value.all_finite())
        throw ArgumentError("non-finite element entering the graph (shape " +
                            value.shape().str() + ")");
    Node node;
    node.value = std::move(value);
    node.requires_grad = requires_grad;
    nodes_.push_back(std::move(node));
    return Value{this, static_cast<int>(nodes_.size()) - 1};
}

Value Tape::param(Parameter& p) {
    Value v = leaf(p.value, p.trainable);
    nodes_.back().bound_param = &p;
    return v;
}

Value Tape::record(Tensor output, std::vector<int> parents, BackwardFn backward) {
    check_open();
    Node node;
    node.value = std::move(output);
    node.parents = std::move(parents);
    for (int pid : node.parents) {
        if (pid < 0 || pid >= static_cast<int>(nodes_.size()))
            throw ArgumentError("operation parent not on this tape");
        if (nodes_[static_cast<std::size_t>(pid)].requires_grad) node.requires_grad = true;
    }
    if (node.requires_grad) node.backward = std::move(backward);
    nodes_.push_back(std::move(node));
    return Value{this, static_cast<int>(nodes_.size()) - 1};
}

Tensor& Tape::grad_buffer(int id) {
    Node& node = nodes_[static_cast<std::size_t>(id)];
    if (!node.grad_allocated) {
        node.grad = Tensor::zeros(node.value.shape());
        node.grad_allocated = true;
    }
    return node.grad;
}

const Tensor& Tape::grad(Value v) {
    if (!v.valid() || v.tape != this) throw ArgumentError("grad() on foreign Value");
    Node& node = nodes_[static_cast<std::size_t>(v.id)];
    if (!node.grad_allocated) {
        zero_scratch_ = Tensor::zeros(node.value.shape());
        return zero_scratch_;
    }
    return node.grad;
}

void Tape::backward(Value loss) {
    check_open();
    if (!loss.valid() || loss.tape != this)
        throw ArgumentError("backward() on a Value from another tape");
    if (value(loss.id).numel() != 1)
        throw ArgumentError("backward() requires a scalar loss, got shape " +
                            value(loss.id).shape().str());

    consumed_ = true;
    grad_buffer(loss.id)[0] = 1.0;

    // Children always have larger ids than their parents, so one descending
    // sweep propagates every contribution before a node is visited.
    std::vector<char> needed(nodes_.size(), 0);
    needed[static_cast<std::size_t>(loss.id)] = 1;
    for (int id = loss.id; id >= 0; --id) {
        Node& node = nodes_[static_cast<std::size_t>(id)];
        if (!needed[static_cast<std::size_t>(id)] || !node.requires_grad) continue;
        for (int pid : node.parents)
            if (nodes_[static_cast<std::size_t>(pid)].requires_grad)
                needed[static_cast<std::size_t>(pid)] = 1;
        if (node.backward) {
            grad_buffer(id);  // ensure allocated even if no child contributed
            node.backward(*this, id);
        }
    }

    // Accumulate (sum) leaf gradients into parameter buffers.
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        Node& node = nodes_[i];
        if (node.bound_param == nullptr || !needed[i] || !node.requires_grad) continue;
        Parameter& p = *node.bound_param;
        if (node.grad_allocated)
            for (long k = 0; k < node.grad.numel(); ++k) p.grad[k] += node.grad[k];
        p.grad_populated = true;
    }
}

}  // namespace cbstm
