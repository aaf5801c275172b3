#pragma once

#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "cbstm/tensor.hpp"

namespace cbstm {

// One learnable (or frozen) tensor plus its gradient accumulator.
// grad_populated is set by Tape::backward when the parameter participated in
// the consumed graph; the optimizer requires it on every trainable entry.
struct Parameter {
    std::string name;
    Tensor value;
    Tensor grad;
    bool trainable = true;
    bool grad_populated = false;

    void zero_grad() {
        grad.fill(0.0);
        grad_populated = false;
    }
};

// Ordered, name-unique registry of parameters. Order is creation order and
// defines the checkpoint layout. Entries have stable addresses.
class ModelParameters {
public:
    Parameter& create(const std::string& name, Tensor init, bool trainable = true) {
        if (index_.contains(name)) throw ArgumentError("duplicate parameter name: " + name);
        auto p = std::make_unique<Parameter>();
        p->name = name;
        p->grad = Tensor::zeros(init.shape());
        p->value = std::move(init);
        p->trainable = trainable;
        index_.emplace(name, order_.size());
        order_.push_back(std::move(p));
        return *order_.back();
    }

    bool contains(const std::string& name) const { return index_.contains(name); }

    Parameter& at(const std::string& name) {
        auto it = index_.find(name);
        if (it == index_.end()) throw ArgumentError("unknown parameter: " + name);
        return *order_[it->second];
    }
    const Parameter& at(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw ArgumentError("unknown parameter: " + name);
        return *order_[it->second];
    }

    std::size_t size() const { return order_.size(); }
    Parameter& operator[](std::size_t i) { return *order_[i]; }
    const Parameter& operator[](std::size_t i) const { return *order_[i]; }

    void zero_grads() {
        for (auto& p : order_) p->zero_grad();
    }

    long total_elements() const {
        long total = 0;
        for (const auto& p : order_) total += p->value.numel();
        return total;
    }

    long trainable_elements() const {
        long total = 0;
        for (const auto& p : order_)
            if (p->trainable) total += p->value.numel();
        return total;
    }

private:
    std::vector<std::unique_ptr<Parameter>> order_;
    std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace cbstm
