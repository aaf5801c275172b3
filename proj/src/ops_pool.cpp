#include <limits>
#include <vector>

#include "op_common.hpp"

namespace cbstm {

namespace {

struct PoolGeom {
    long n, c, h, w;
    long window, stride;
    Pad2d pad;
    long oh, ow;
};

PoolGeom resolve_pool(const Shape& in, long window, long stride, const Pad2d& pad) {
    if (window < 1) throw ArgumentError("pooling window must be >= 1");
    if (stride < 1) throw ArgumentError("pooling stride must be >= 1");
    PoolGeom g{in.n, in.c, in.h, in.w, window, stride, pad, 0, 0};
    g.oh = conv_out_dim(in.h, window, stride, 1, pad.top, pad.bottom);
    g.ow = conv_out_dim(in.w, window, stride, 1, pad.left, pad.right);
    if (g.oh < 1 || g.ow < 1)
        throw GeometryError("pooling window " + std::to_string(window) +
                            " larger than padded input " + in.str());
    return g;
}

}  // namespace

std::pair<Value, PoolIndices> max_pool2d(Value input, long window, long stride, const Pad2d& pad) {
    Tape& tape = detail::same_tape({input});
    const Tensor& x = tape.value(input);
    const PoolGeom g = resolve_pool(x.shape(), window, stride, pad);

    Tensor out(Shape{g.n, g.c, g.oh, g.ow});
    PoolIndices indices;
    indices.pooled = out.shape();
    indices.input_h = g.h;
    indices.input_w = g.w;
    indices.flat.resize(static_cast<std::size_t>(out.numel()));

    long cell = 0;
    for (long n = 0; n < g.n; ++n) {
        for (long c = 0; c < g.c; ++c) {
            const double* plane = x.data() + (n * g.c + c) * g.h * g.w;
            for (long oy = 0; oy < g.oh; ++oy) {
                for (long ox = 0; ox < g.ow; ++ox, ++cell) {
                    double best = -std::numeric_limits<double>::infinity();
                    long best_flat = -1;
                    for (long ki = 0; ki < g.window; ++ki) {
                        const long iy = oy * g.stride - g.pad.top + ki;
                        if (iy < 0 || iy >= g.h) continue;
                        for (long kj = 0; kj < g.window; ++kj) {
                            const long ix = ox * g.stride - g.pad.left + kj;
                            if (ix < 0 || ix >= g.w) continue;
                            const double v = plane[iy * g.w + ix];
                            if (v > best) {  // strict: ties keep the lowest flat index
                                best = v;
                                best_flat = iy * g.w + ix;
                            }
                        }
                    }
                    if (best_flat < 0)
                        throw GeometryError("max_pool2d window contains no input pixels");
                    out[cell] = best;
                    indices.flat[static_cast<std::size_t>(cell)] = best_flat;
                }
            }
        }
    }

    const int xid = input.id;
    auto flat = indices.flat;  // copy for the closure; caller keeps the original
    Value v = tape.record(std::move(out), {xid}, [g, xid, flat = std::move(flat)](Tape& t, int self) {
        const Tensor& gout = t.grad_buffer(self);
        Tensor& gx = t.grad_buffer(xid);
        const long planes = g.n * g.c;
        const long ohw = g.oh * g.ow;
        for (long p = 0; p < planes; ++p) {
            double* gplane = gx.data() + p * g.h * g.w;
            const double* grow = gout.data() + p * ohw;
            const long* frow = flat.data() + p * ohw;
            for (long j = 0; j < ohw; ++j) gplane[frow[j]] += grow[j];
        }
    });
    return {v, std::move(indices)};
}

std::pair<Value, PoolIndices> max_pool2d(Value input, long window, long stride, long pad) {
    return max_pool2d(input, window, stride, Pad2d::symmetric(pad));
}

Value avg_pool2d(Value input, long window, long stride, const Pad2d& pad) {
    Tape& tape = detail::same_tape({input});
    const Tensor& x = tape.value(input);
    const PoolGeom g = resolve_pool(x.shape(), window, stride, pad);
    const double inv = 1.0 / static_cast<double>(window * window);

    Tensor out(Shape{g.n, g.c, g.oh, g.ow});
    long cell = 0;
    for (long n = 0; n < g.n; ++n) {
        for (long c = 0; c < g.c; ++c) {
            const double* plane = x.data() + (n * g.c + c) * g.h * g.w;
            for (long oy = 0; oy < g.oh; ++oy) {
                for (long ox = 0; ox < g.ow; ++ox, ++cell) {
                    double acc = 0.0;
                    for (long ki = 0; ki < g.window; ++ki) {
                        const long iy = oy * g.stride - g.pad.top + ki;
                        if (iy < 0 || iy >= g.h) continue;
                        for (long kj = 0; kj < g.window; ++kj) {
                            const long ix = ox * g.stride - g.pad.left + kj;
                            if (ix < 0 || ix >= g.w) continue;
                            acc += plane[iy * g.w + ix];
                        }
                    }
                    out[cell] = acc * inv;  // zero padding counts toward 1/w^2
                }
            }
        }
    }

    const int xid = input.id;
    return tape.record(std::move(out), {xid}, [g, inv, xid](Tape& t, int self) {
        const Tensor& gout = t.grad_buffer(self);
        Tensor& gx = t.grad_buffer(xid);
        long cell = 0;
        for (long p = 0; p < g.n * g.c; ++p) {
            double* gplane = gx.data() + p * g.h * g.w;
            for (long oy = 0; oy < g.oh; ++oy) {
                for (long ox = 0; ox < g.ow; ++ox, ++cell) {
                    const double gv = gout[cell] * inv;
                    for (long ki = 0; ki < g.window; ++ki) {
                        const long iy = oy * g.stride - g.pad.top + ki;
                        if (iy < 0 || iy >= g.h) continue;
                        for (long kj = 0; kj < g.window; ++kj) {
                            const long ix = ox * g.stride - g.pad.left + kj;
                            if (ix < 0 || ix >= g.w) continue;
                            gplane[iy * g.w + ix] += gv;
                        }
                    }
                }
            }
        }
    });
}

Value avg_pool2d(Value input, long window, long stride, long pad) {
    return avg_pool2d(input, window, stride, Pad2d::symmetric(pad));
}

Value max_unpool2d(Value input, const PoolIndices& indices, long out_h, long out_w) {
    Tape& tape = detail::same_tape({input});
    const Tensor& x = tape.value(input);
    if (!(x.shape() == indices.pooled))
        throw ShapeError("max_unpool2d input " + x.shape().str() +
                         " does not match recorded pooled shape " + indices.pooled.str());
    const long oh = out_h > 0 ? out_h : indices.input_h;
    const long ow = out_w > 0 ? out_w : indices.input_w;
    const long plane = oh * ow;
    const long planes = x.shape().n * x.shape().c;
    const long ohw = x.shape().plane();

    Tensor out(Shape{x.shape().n, x.shape().c, oh, ow});
    for (long p = 0; p < planes; ++p) {
        double* oplane = out.data() + p * plane;
        const double* irow = x.data() + p * ohw;
        const long* frow = indices.flat.data() + p * ohw;
        for (long j = 0; j < ohw; ++j) {
            const long f = frow[j];
            if (f < 0 || f >= plane)
                throw CorruptionError("max_unpool2d index " + std::to_string(f) +
                                      " outside output plane of " + std::to_string(plane));
            oplane[f] += irow[j];
        }
    }

    const int xid = input.id;
    auto flat = indices.flat;
    return tape.record(std::move(out), {xid},
                       [planes, plane, ohw, xid, flat = std::move(flat)](Tape& t, int self) {
                           const Tensor& gout = t.grad_buffer(self);
                           Tensor& gx = t.grad_buffer(xid);
                           for (long p = 0; p < planes; ++p) {
                               const double* gplane = gout.data() + p * plane;
                               double* grow = gx.data() + p * ohw;
                               const long* frow = flat.data() + p * ohw;
                               for (long j = 0; j < ohw; ++j) grow[j] += gplane[frow[j]];
                           }
                       });
}

Value upsample_nearest(Value input, long factor) {
    Tape& tape = detail::same_tape({input});
    if (factor < 1) throw ArgumentError("upsample factor must be >= 1");
    const Tensor& x = tape.value(input);
    const Shape s = x.shape();
    Tensor out(Shape{s.n, s.c, s.h * factor, s.w * factor});
    const long ow = s.w * factor;
    for (long p = 0; p < s.n * s.c; ++p) {
        const double* iplane = x.data() + p * s.plane();
        double* oplane = out.data() + p * s.plane() * factor * factor;
        for (long y = 0; y < s.h * factor; ++y) {
            const double* irow = iplane + (y / factor) * s.w;
            double* orow = oplane + y * ow;
            for (long xw = 0; xw < ow; ++xw) orow[xw] = irow[xw / factor];
        }
    }

    const int xid = input.id;
    return tape.record(std::move(out), {xid}, [s, factor, xid](Tape& t, int self) {
        const Tensor& gout = t.grad_buffer(self);
        Tensor& gx = t.grad_buffer(xid);
        const long ow = s.w * factor;
        for (long p = 0; p < s.n * s.c; ++p) {
            double* gplane = gx.data() + p * s.plane();
            const double* oplane = gout.data() + p * s.plane() * factor * factor;
            for (long y = 0; y < s.h * factor; ++y) {
                double* grow = gplane + (y / factor) * s.w;
                const double* orow = oplane + y * ow;
                for (long xw = 0; xw < ow; ++xw) grow[xw / factor] += orow[xw];
            }
        }
    });
}

Value crop2d(Value input, long out_h, long out_w) {
    Tape& tape = detail::same_tape({input});
    const Tensor& x = tape.value(input);
    const Shape s = x.shape();
    if (out_h < 1 || out_w < 1 || out_h > s.h || out_w > s.w)
        throw ShapeError("crop2d target " + std::to_string(out_h) + "x" + std::to_string(out_w) +
                         " invalid for input " + s.str());
    if (out_h == s.h && out_w == s.w) return input;

    Tensor out(Shape{s.n, s.c, out_h, out_w});
    for (long p = 0; p < s.n * s.c; ++p)
        for (long y = 0; y < out_h; ++y) {
            const double* irow = x.data() + p * s.plane() + y * s.w;
            double* orow = out.data() + (p * out_h + y) * out_w;
            std::copy(irow, irow + out_w, orow);
        }

    const int xid = input.id;
    return tape.record(std::move(out), {xid}, [s, out_h, out_w, xid](Tape& t, int self) {
        const Tensor& gout = t.grad_buffer(self);
        Tensor& gx = t.grad_buffer(xid);
        for (long p = 0; p < s.n * s.c; ++p)
            for (long y = 0; y < out_h; ++y) {
                const double* grow = gout.data() + (p * out_h + y) * out_w;
                double* irow = gx.data() + p * s.plane() + y * s.w;
                for (long xw = 0; xw < out_w; ++xw) irow[xw] += grow[xw];
            }
    });
}

}  // namespace cbstm
