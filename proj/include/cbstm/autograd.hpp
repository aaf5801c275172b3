#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <utility>
#include <vector>

#include "cbstm/rng.hpp"
#include "cbstm/tensor.hpp"

namespace cbstm {

class Tape;
struct Parameter;

// Handle to a node on a ComputationTape. Cheap to copy; the tape owns all
// storage. A default-constructed Value is invalid.
struct Value {
    Tape* tape = nullptr;
    int id = -1;

    bool valid() const { return tape != nullptr && id >= 0; }
    const Tensor& tensor() const;
    const Shape& shape() const;
};

// Forward/eval selector for stateful ops (batch_norm, dropout).
enum class Mode { kTrain, kEval };

// Argmax bookkeeping from max_pool2d: one flat index (ih * input_w + iw,
// within the unpadded source plane) per pooled element. The decoder uses it
// to scatter features back to their original positions.
struct PoolIndices {
    Shape pooled{};
    long input_h = 0;
    long input_w = 0;
    std::vector<long> flat;

    bool matches_input(const Shape& s) const {
        return s.n == pooled.n && s.c == pooled.c && s.h == input_h && s.w == input_w;
    }
};

// Per-channel running statistics for batch_norm eval mode. The tensors are
// views into externally owned storage (model parameters) so that training
// updates land in the checkpointed state.
struct BatchNormStats {
    Tensor* mean = nullptr;  // (1,C,1,1)
    Tensor* var = nullptr;   // (1,C,1,1)
    double momentum = 0.1;
};

// Integer class targets for the cross-entropy loss: one class id per
// (n, h, w) site. Classifier targets use h = w = 1.
struct ClassMap {
    long n = 0;
    long h = 0;
    long w = 0;
    std::vector<int> cls;

    long sites() const { return n * h * w; }
    int at(long ni, long hi, long wi) const {
        return cls[static_cast<std::size_t>((ni * h + hi) * w + wi)];
    }
};

// Reverse-mode tape. Operations append nodes in topological order (inputs
// always precede outputs), so one descending sweep implements backward and
// visits each node exactly once. A tape is single-use: backward() consumes
// it and any further recording throws.
class Tape {
public:
    using BackwardFn = std::function<void(Tape&, int node_id)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // Graph entry points. leaf() validates finiteness: every tensor entering
    // the graph must be finite.
    Value leaf(Tensor value, bool requires_grad = false);
    // Learnable leaf bound to a parameter; backward accumulates into the
    // parameter's gradient and marks it populated.
    Value param(Parameter& p);
    // Constant leaf with gradient flow blocked (frozen provider outputs).
    Value constant(Tensor value) { return leaf(std::move(value), false); }

    // Used by operation implementations.
    Value record(Tensor output, std::vector<int> parents, BackwardFn backward);

    const Tensor& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
    const Tensor& value(Value v) const { return value(v.id); }
    bool requires_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }

    // Gradient of a node after backward(); zero tensor if the node was never
    // reached.
    const Tensor& grad(Value v);

    // Seeds d(loss)/d(loss) = 1 and sweeps the tape once in reverse
    // topological order, accumulating into parameter gradient buffers.
    void backward(Value loss);

    bool consumed() const { return consumed_; }
    std::size_t size() const { return nodes_.size(); }

    // Gradient buffer of a node, allocated on first touch.
    Tensor& grad_buffer(int id);
    bool has_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].grad_allocated; }

private:
    struct Node {
        Tensor value;
        Tensor grad;
        bool grad_allocated = false;
        bool requires_grad = false;
        Parameter* bound_param = nullptr;
        std::vector<int> parents;
        BackwardFn backward;
    };

    void check_open() const;

    std::vector<Node> nodes_;
    bool consumed_ = false;
    Tensor zero_scratch_{};
};

// ---- Differentiable operations -------------------------------------------

// Resolved zero-fill padding; "same" resolution puts the extra pixel on the
// bottom/right.
struct Pad2d {
    long top = 0;
    long bottom = 0;
    long left = 0;
    long right = 0;

    static Pad2d symmetric(long p) { return {p, p, p, p}; }
    static Pad2d same(long in_h, long in_w, long kh, long kw, long stride, long dilation);
};

struct Conv2dOptions {
    long stride = 1;
    long dilation = 1;
    bool same_pad = false;   // when false, `pad` applies symmetrically
    long pad = 0;

    static Conv2dOptions same(long stride = 1, long dilation = 1) {
        return {stride, dilation, true, 0};
    }
    static Conv2dOptions explicit_pad(long pad, long stride = 1, long dilation = 1) {
        return {stride, dilation, false, pad};
    }
};

// kernel is (out_channels, in_channels, kh, kw); bias is (1, out_channels, 1, 1).
Value conv2d(Value input, Value kernel, Value bias, const Conv2dOptions& opt = {});

std::pair<Value, PoolIndices> max_pool2d(Value input, long window, long stride, long pad = 0);
std::pair<Value, PoolIndices> max_pool2d(Value input, long window, long stride, const Pad2d& pad);
Value avg_pool2d(Value input, long window, long stride, long pad = 0);
Value avg_pool2d(Value input, long window, long stride, const Pad2d& pad);

Value concat_channels(const std::vector<Value>& parts);

Value relu(Value input);
Value batch_norm(Value input, Value gamma, Value beta, BatchNormStats stats, Mode mode);
Value dropout(Value input, double rate, RngState& rng, Mode mode);

Value global_avg_pool(Value input);
// weights is (out_features, in_features, 1, 1); input must be (N, C, 1, 1).
Value fully_connected(Value input, Value weights, Value bias);

Value softmax(Value input);
Value cross_entropy_loss(Value probabilities, const ClassMap& targets,
                         const std::vector<double>& class_weights = {});

Value max_unpool2d(Value input, const PoolIndices& indices, long out_h = -1, long out_w = -1);
Value upsample_nearest(Value input, long factor);

// Keeps the top-left h x w window; gradient zero-pads back.
Value crop2d(Value input, long out_h, long out_w);

// Small utility ops, mostly for composing test losses.
Value sum(Value input);
Value add(Value a, Value b);
Value scale(Value input, double factor);

// Non-recording helpers shared with oracle code.
long conv_out_dim(long in, long k, long stride, long dilation, long pad_lo, long pad_hi);

}  // namespace cbstm
