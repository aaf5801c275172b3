#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "cbstm/errors.hpp"

namespace cbstm {

// N x C x H x W, row-major. The universal dense shape of the numeric core;
// kernels reuse it as (out_channels, in_channels, kh, kw).
struct Shape {
    long n = 0;
    long c = 0;
    long h = 0;
    long w = 0;

    long numel() const { return n * c * h * w; }
    long plane() const { return h * w; }

    bool operator==(const Shape& o) const = default;

    std::string str() const {
        return std::to_string(n) + "x" + std::to_string(c) + "x" +
               std::to_string(h) + "x" + std::to_string(w);
    }
};

// Dense 64-bit float tensor with value semantics. Immutable by convention
// once an operation has consumed it; mutation is reserved for construction,
// parameter updates, and gradient accumulation.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Shape shape, double fill = 0.0)
        : shape_(shape), data_(static_cast<std::size_t>(check_shape(shape)), fill) {}

    Tensor(Shape shape, std::vector<double> data) : shape_(shape), data_(std::move(data)) {
        if (static_cast<long>(data_.size()) != shape_.numel())
            throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                             " does not match shape " + shape_.str());
    }

    static Tensor zeros(Shape shape) { return Tensor(shape, 0.0); }
    static Tensor full(Shape shape, double v) { return Tensor(shape, v); }
    static Tensor scalar(double v) { return Tensor(Shape{1, 1, 1, 1}, {v}); }

    const Shape& shape() const { return shape_; }
    long numel() const { return shape_.numel(); }
    bool empty() const { return data_.empty(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }

    double& operator[](long i) { return data_[static_cast<std::size_t>(i)]; }
    double operator[](long i) const { return data_[static_cast<std::size_t>(i)]; }

    long index(long n, long c, long h, long w) const {
        return ((n * shape_.c + c) * shape_.h + h) * shape_.w + w;
    }

    double& at(long n, long c, long h, long w) { return data_[static_cast<std::size_t>(index(n, c, h, w))]; }
    double at(long n, long c, long h, long w) const { return data_[static_cast<std::size_t>(index(n, c, h, w))]; }

    bool all_finite() const {
        for (double v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

    double item() const {
        if (numel() != 1) throw ShapeError("item() on non-scalar tensor " + shape_.str());
        return data_[0];
    }

    bool operator==(const Tensor& o) const { return shape_ == o.shape_ && data_ == o.data_; }

private:
    static long check_shape(const Shape& s) {
        if (s.n < 0 || s.c < 0 || s.h < 0 || s.w < 0)
            throw ShapeError("negative dimension in shape " + s.str());
        return s.numel();
    }

    Shape shape_{};
    std::vector<double> data_;
};

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
    if (!(a.shape() == b.shape()))
        throw ShapeError("max_abs_diff shape mismatch " + a.shape().str() + " vs " + b.shape().str());
    double m = 0.0;
    for (long i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

}  // namespace cbstm
