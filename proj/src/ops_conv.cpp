#include <algorithm>
#include <vector>

#include "op_common.hpp"

namespace cbstm {

namespace {

struct ConvGeom {
    long n, cin, h, w;
    long cout, kh, kw;
    long stride, dilation;
    Pad2d pad;
    long oh, ow;
};

ConvGeom resolve_conv(const Shape& in, const Shape& k, const Conv2dOptions& opt) {
    if (opt.stride < 1) throw ArgumentError("conv2d stride must be >= 1");
    if (opt.dilation < 1) throw ArgumentError("conv2d dilation must be >= 1");
    if (k.h < 1 || k.w < 1) throw ArgumentError("conv2d kernel extent must be >= 1");
    if (in.c != k.c)
        throw ShapeError("conv2d channel mismatch: input " + in.str() + " vs kernel " + k.str());

    ConvGeom g{in.n, in.c, in.h, in.w, k.n, k.h, k.w, opt.stride, opt.dilation, {}, 0, 0};
    g.pad = opt.same_pad ? Pad2d::same(in.h, in.w, k.h, k.w, opt.stride, opt.dilation)
                         : Pad2d::symmetric(opt.pad);
    g.oh = conv_out_dim(in.h, k.h, opt.stride, opt.dilation, g.pad.top, g.pad.bottom);
    g.ow = conv_out_dim(in.w, k.w, opt.stride, opt.dilation, g.pad.left, g.pad.right);
    if (g.oh < 1 || g.ow < 1)
        throw GeometryError("conv2d output would be empty for input " + in.str() +
                            " with kernel " + k.str());
    return g;
}

// Unrolls one batch item into a (cin*kh*kw) x (oh*ow) patch matrix,
// zero-filling positions that fall into the padding.
void im2col(const double* src, const ConvGeom& g, double* col) {
    const long ohw = g.oh * g.ow;
    for (long ci = 0; ci < g.cin; ++ci) {
        const double* plane = src + ci * g.h * g.w;
        for (long ki = 0; ki < g.kh; ++ki) {
            for (long kj = 0; kj < g.kw; ++kj) {
                double* row = col + ((ci * g.kh + ki) * g.kw + kj) * ohw;
                for (long oy = 0; oy < g.oh; ++oy) {
                    const long iy = oy * g.stride - g.pad.top + ki * g.dilation;
                    double* out_row = row + oy * g.ow;
                    if (iy < 0 || iy >= g.h) {
                        std::fill(out_row, out_row + g.ow, 0.0);
                        continue;
                    }
                    const double* in_row = plane + iy * g.w;
                    for (long ox = 0; ox < g.ow; ++ox) {
                        const long ix = ox * g.stride - g.pad.left + kj * g.dilation;
                        out_row[ox] = (ix >= 0 && ix < g.w) ? in_row[ix] : 0.0;
                    }
                }
            }
        }
    }
}

// Adjoint of im2col: scatter-adds patch-matrix gradients back to input
// positions.
void col2im_add(const double* col, const ConvGeom& g, double* dst) {
    const long ohw = g.oh * g.ow;
    for (long ci = 0; ci < g.cin; ++ci) {
        double* plane = dst + ci * g.h * g.w;
        for (long ki = 0; ki < g.kh; ++ki) {
            for (long kj = 0; kj < g.kw; ++kj) {
                const double* row = col + ((ci * g.kh + ki) * g.kw + kj) * ohw;
                for (long oy = 0; oy < g.oh; ++oy) {
                    const long iy = oy * g.stride - g.pad.top + ki * g.dilation;
                    if (iy < 0 || iy >= g.h) continue;
                    const double* in_row = row + oy * g.ow;
                    double* out_row = plane + iy * g.w;
                    for (long ox = 0; ox < g.ow; ++ox) {
                        const long ix = ox * g.stride - g.pad.left + kj * g.dilation;
                        if (ix >= 0 && ix < g.w) out_row[ix] += in_row[ox];
                    }
                }
            }
        }
    }
}

}  // namespace

Pad2d Pad2d::same(long in_h, long in_w, long kh, long kw, long stride, long dilation) {
    const auto total = [&](long in, long k) {
        const long out = (in + stride - 1) / stride;
        const long eff = (k - 1) * dilation + 1;
        return std::max<long>(0, (out - 1) * stride + eff - in);
    };
    const long th = total(in_h, kh);
    const long tw = total(in_w, kw);
    return Pad2d{th / 2, th - th / 2, tw / 2, tw - tw / 2};
}

long conv_out_dim(long in, long k, long stride, long dilation, long pad_lo, long pad_hi) {
    const long eff = (k - 1) * dilation + 1;
    const long padded = in + pad_lo + pad_hi;
    if (padded < eff) return 0;
    return (padded - eff) / stride + 1;
}

Value conv2d(Value input, Value kernel, Value bias, const Conv2dOptions& opt) {
    Tape& tape = detail::same_tape({input, kernel, bias});
    const Tensor& x = tape.value(input);
    const Tensor& k = tape.value(kernel);
    const Tensor& b = tape.value(bias);
    const ConvGeom g = resolve_conv(x.shape(), k.shape(), opt);
    if (!(b.shape() == Shape{1, g.cout, 1, 1}))
        throw ShapeError("conv2d bias must be 1x" + std::to_string(g.cout) + "x1x1, got " +
                         b.shape().str());

    const long kdim = g.cin * g.kh * g.kw;
    const long ohw = g.oh * g.ow;
    Tensor out(Shape{g.n, g.cout, g.oh, g.ow});
    std::vector<double> col(static_cast<std::size_t>(kdim * ohw));

    for (long n = 0; n < g.n; ++n) {
        im2col(x.data() + n * g.cin * g.h * g.w, g, col.data());
        double* out_n = out.data() + n * g.cout * ohw;
        for (long co = 0; co < g.cout; ++co) {
            double* out_row = out_n + co * ohw;
            std::fill(out_row, out_row + ohw, b[co]);
            const double* w_row = k.data() + co * kdim;
            for (long kk = 0; kk < kdim; ++kk) {
                const double wv = w_row[kk];
                const double* col_row = col.data() + kk * ohw;
                for (long j = 0; j < ohw; ++j) out_row[j] += wv * col_row[j];
            }
        }
    }

    const int xid = input.id, kid = kernel.id, bid = bias.id;
    return tape.record(std::move(out), {xid, kid, bid}, [g, kdim, ohw, xid, kid, bid](Tape& t, int self) {
        const Tensor& gout = t.grad_buffer(self);
        const Tensor& xv = t.value(xid);
        const Tensor& kv = t.value(kid);
        const bool need_x = t.requires_grad(xid);
        const bool need_k = t.requires_grad(kid);
        const bool need_b = t.requires_grad(bid);

        if (need_b) {
            Tensor& gb = t.grad_buffer(bid);
            for (long n = 0; n < g.n; ++n)
                for (long co = 0; co < g.cout; ++co) {
                    const double* row = gout.data() + (n * g.cout + co) * ohw;
                    double acc = 0.0;
                    for (long j = 0; j < ohw; ++j) acc += row[j];
                    gb[co] += acc;
                }
        }
        if (!need_x && !need_k) return;

        std::vector<double> col(static_cast<std::size_t>(kdim * ohw));
        std::vector<double> colgrad;
        if (need_x) colgrad.resize(static_cast<std::size_t>(kdim * ohw));
        for (long n = 0; n < g.n; ++n) {
            if (need_k) im2col(xv.data() + n * g.cin * g.h * g.w, g, col.data());
            const double* gout_n = gout.data() + n * g.cout * ohw;
            if (need_k) {
                Tensor& gk = t.grad_buffer(kid);
                for (long co = 0; co < g.cout; ++co) {
                    const double* grow = gout_n + co * ohw;
                    double* gk_row = gk.data() + co * kdim;
                    for (long kk = 0; kk < kdim; ++kk) {
                        const double* col_row = col.data() + kk * ohw;
                        double acc = 0.0;
                        for (long j = 0; j < ohw; ++j) acc += grow[j] * col_row[j];
                        gk_row[kk] += acc;
                    }
                }
            }
            if (need_x) {
                std::fill(colgrad.begin(), colgrad.end(), 0.0);
                for (long co = 0; co < g.cout; ++co) {
                    const double* grow = gout_n + co * ohw;
                    const double* w_row = kv.data() + co * kdim;
                    for (long kk = 0; kk < kdim; ++kk) {
                        const double wv = w_row[kk];
                        double* cg_row = colgrad.data() + kk * ohw;
                        for (long j = 0; j < ohw; ++j) cg_row[j] += wv * grow[j];
                    }
                }
                Tensor& gx = t.grad_buffer(xid);
                col2im_add(colgrad.data(), g, gx.data() + n * g.cin * g.h * g.w);
            }
        }
    });
}

}  // namespace cbstm
