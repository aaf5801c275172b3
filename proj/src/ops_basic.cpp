#include <algorithm>
#include <cmath>
#include <vector>

#include "op_common.hpp"

namespace cbstm {

Value concat_channels(const std::vector<Value>& parts) {
    if (parts.empty()) throw ArgumentError("concat_channels requires at least one part");
    Tape* tape_ptr = parts.front().tape;
    std::vector<int> parent_ids;
    parent_ids.reserve(parts.size());
    const Shape first = parts.front().shape();
    long total_c = 0;
    for (const Value& v : parts) {
        if (!v.valid() || v.tape != tape_ptr)
            throw ArgumentError("concat_channels operands on different tapes");
        const Shape s = v.shape();
        if (s.n != first.n || s.h != first.h || s.w != first.w)
            throw ShapeError("concat_channels spatial/batch mismatch: " + first.str() + " vs " +
                             s.str());
        total_c += s.c;
        parent_ids.push_back(v.id);
    }
    Tape& tape = *tape_ptr;

    Tensor out(Shape{first.n, total_c, first.h, first.w});
    const long plane = first.plane();
    std::vector<long> channel_offsets;
    channel_offsets.reserve(parts.size());
    long c_off = 0;
    for (const Value& v : parts) {
        channel_offsets.push_back(c_off);
        const Tensor& part = tape.value(v);
        const long pc = part.shape().c;
        for (long n = 0; n < first.n; ++n) {
            const double* src = part.data() + n * pc * plane;
            double* dst = out.data() + (n * total_c + c_off) * plane;
            std::copy(src, src + pc * plane, dst);
        }
        c_off += pc;
    }

    return tape.record(std::move(out), parent_ids,
                       [parent_ids, channel_offsets, total_c, plane, first](Tape& t, int self) {
                           const Tensor& gout = t.grad_buffer(self);
                           for (std::size_t i = 0; i < parent_ids.size(); ++i) {
                               const int pid = parent_ids[i];
                               if (!t.requires_grad(pid)) continue;
                               Tensor& gp = t.grad_buffer(pid);
                               const long pc = gp.shape().c;
                               for (long n = 0; n < first.n; ++n) {
                                   const double* src =
                                       gout.data() + (n * total_c + channel_offsets[i]) * plane;
                                   double* dst = gp.data() + n * pc * plane;
                                   for (long k = 0; k < pc * plane; ++k) dst[k] += src[k];
                               }
                           }
                       });
}

Value relu(Value input) {
    Tape& tape = detail::same_tape({input});
    const Tensor& x = tape.value(input);
    Tensor out(x.shape());
    for (long i = 0; i < x.numel(); ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;

    const int xid = input.id;
    return tape.record(std::move(out), {xid}, [xid](Tape& t, int self) {
        const Tensor& gout = t.grad_buffer(self);
        const Tensor& xv = t.value(xid);
        Tensor& gx = t.grad_buffer(xid);
        for (long i = 0; i < xv.numel(); ++i)
            if (xv[i] > 0.0) gx[i] += gout[i];
    });
}

Value batch_norm(Value input, Value gamma, Value beta, BatchNormStats stats, Mode mode) {
    Tape& tape = detail::same_tape({input, gamma, beta});
    constexpr double kEps = 1e-5;
    const Tensor& x = tape.value(input);
    const Shape s = x.shape();
    const Shape affine{1, s.c, 1, 1};
    if (!(tape.value(gamma).shape() == affine) || !(tape.value(beta).shape() == affine))
        throw ShapeError("batch_norm gamma/beta must be " + affine.str());

    const long m = s.n * s.plane();
    const long plane = s.plane();
    const bool use_batch_stats = mode == Mode::kTrain;
    if (use_batch_stats && m < 2)
        throw ArgumentError("batch_norm train mode requires N*H*W >= 2 per channel");
    if (!use_batch_stats && (stats.mean == nullptr || stats.var == nullptr))
        throw ArgumentError("batch_norm eval mode requires running statistics");

    std::vector<double> mu(static_cast<std::size_t>(s.c));
    std::vector<double> inv_std(static_cast<std::size_t>(s.c));
    if (use_batch_stats) {
        for (long c = 0; c < s.c; ++c) {
            double sum = 0.0;
            for (long n = 0; n < s.n; ++n) {
                const double* p = x.data() + (n * s.c + c) * plane;
                for (long j = 0; j < plane; ++j) sum += p[j];
            }
            const double mean = sum / static_cast<double>(m);
            double var = 0.0;
            for (long n = 0; n < s.n; ++n) {
                const double* p = x.data() + (n * s.c + c) * plane;
                for (long j = 0; j < plane; ++j) {
                    const double d = p[j] - mean;
                    var += d * d;
                }
            }
            var /= static_cast<double>(m);
            mu[static_cast<std::size_t>(c)] = mean;
            inv_std[static_cast<std::size_t>(c)] = 1.0 / std::sqrt(var + kEps);
            if (stats.mean != nullptr && stats.var != nullptr) {
                (*stats.mean)[c] = (1.0 - stats.momentum) * (*stats.mean)[c] + stats.momentum * mean;
                (*stats.var)[c] = (1.0 - stats.momentum) * (*stats.var)[c] + stats.momentum * var;
            }
        }
    } else {
        for (long c = 0; c < s.c; ++c) {
            mu[static_cast<std::size_t>(c)] = (*stats.mean)[c];
            inv_std[static_cast<std::size_t>(c)] = 1.0 / std::sqrt((*stats.var)[c] + kEps);
        }
    }

    const Tensor& gv = tape.value(gamma);
    const Tensor& bv = tape.value(beta);
    Tensor out(s);
    for (long n = 0; n < s.n; ++n)
        for (long c = 0; c < s.c; ++c) {
            const double* p = x.data() + (n * s.c + c) * plane;
            double* o = out.data() + (n * s.c + c) * plane;
            const double mc = mu[static_cast<std::size_t>(c)];
            const double ic = inv_std[static_cast<std::size_t>(c)];
            for (long j = 0; j < plane; ++j) o[j] = gv[c] * (p[j] - mc) * ic + bv[c];
        }

    const int xid = input.id, gid = gamma.id, bid = beta.id;
    return tape.record(
        std::move(out), {xid, gid, bid},
        [s, plane, m, use_batch_stats, xid, gid, bid, mu = std::move(mu),
         inv_std = std::move(inv_std)](Tape& t, int self) {
            const Tensor& gout = t.grad_buffer(self);
            const Tensor& xv = t.value(xid);
            const Tensor& gv = t.value(gid);
            const bool need_x = t.requires_grad(xid);

            for (long c = 0; c < s.c; ++c) {
                const double mc = mu[static_cast<std::size_t>(c)];
                const double ic = inv_std[static_cast<std::size_t>(c)];
                double sum_g = 0.0, sum_gx = 0.0;
                for (long n = 0; n < s.n; ++n) {
                    const double* gp = gout.data() + (n * s.c + c) * plane;
                    const double* xp = xv.data() + (n * s.c + c) * plane;
                    for (long j = 0; j < plane; ++j) {
                        sum_g += gp[j];
                        sum_gx += gp[j] * (xp[j] - mc) * ic;
                    }
                }
                if (t.requires_grad(gid)) t.grad_buffer(gid)[c] += sum_gx;
                if (t.requires_grad(bid)) t.grad_buffer(bid)[c] += sum_g;
                if (!need_x) continue;

                Tensor& gx = t.grad_buffer(xid);
                const double scale = gv[c] * ic;
                if (use_batch_stats) {
                    const double mean_g = sum_g / static_cast<double>(m);
                    const double mean_gx = sum_gx / static_cast<double>(m);
                    for (long n = 0; n < s.n; ++n) {
                        const double* gp = gout.data() + (n * s.c + c) * plane;
                        const double* xp = xv.data() + (n * s.c + c) * plane;
                        double* dst = gx.data() + (n * s.c + c) * plane;
                        for (long j = 0; j < plane; ++j) {
                            const double xhat = (xp[j] - mc) * ic;
                            dst[j] += scale * (gp[j] - mean_g - xhat * mean_gx);
                        }
                    }
                } else {
                    for (long n = 0; n < s.n; ++n) {
                        const double* gp = gout.data() + (n * s.c + c) * plane;
                        double* dst = gx.data() + (n * s.c + c) * plane;
                        for (long j = 0; j < plane; ++j) dst[j] += scale * gp[j];
                    }
                }
            }
        });
}

Value dropout(Value input, double rate, RngState& rng, Mode mode) {
    Tape& tape = detail::same_tape({input});
    if (rate < 0.0 || rate >= 1.0)
        throw ArgumentError("dropout rate must lie in [0, 1), got " + std::to_string(rate));
    if (mode == Mode::kEval || rate == 0.0) return input;

    const Tensor& x = tape.value(input);
    const double keep_scale = 1.0 / (1.0 - rate);
    std::vector<char> mask(static_cast<std::size_t>(x.numel()));
    Tensor out(x.shape());
    for (long i = 0; i < x.numel(); ++i) {
        const bool keep = rng.uniform() >= rate;
        mask[static_cast<std::size_t>(i)] = keep;
        out[i] = keep ? x[i] * keep_scale : 0.0;
    }

    const int xid = input.id;
    return tape.record(std::move(out), {xid},
                       [keep_scale, xid, mask = std::move(mask)](Tape& t, int self) {
                           const Tensor& gout = t.grad_buffer(self);
                           Tensor& gx = t.grad_buffer(xid);
                           for (long i = 0; i < gout.numel(); ++i)
                               if (mask[static_cast<std::size_t>(i)]) gx[i] += gout[i] * keep_scale;
                       });
}

Value global_avg_pool(Value input) {
    Tape& tape = detail::same_tape({input});
    const Tensor& x = tape.value(input);
    const Shape s = x.shape();
    const long plane = s.plane();
    if (plane < 1) throw ShapeError("global_avg_pool on empty plane " + s.str());
    const double inv = 1.0 / static_cast<double>(plane);

    Tensor out(Shape{s.n, s.c, 1, 1});
    for (long p = 0; p < s.n * s.c; ++p) {
        const double* src = x.data() + p * plane;
        double acc = 0.0;
        for (long j = 0; j < plane; ++j) acc += src[j];
        out[p] = acc * inv;
    }

    const int xid = input.id;
    return tape.record(std::move(out), {xid}, [s, plane, inv, xid](Tape& t, int self) {
        const Tensor& gout = t.grad_buffer(self);
        Tensor& gx = t.grad_buffer(xid);
        for (long p = 0; p < s.n * s.c; ++p) {
            const double gv = gout[p] * inv;
            double* dst = gx.data() + p * plane;
            for (long j = 0; j < plane; ++j) dst[j] += gv;
        }
    });
}

Value fully_connected(Value input, Value weights, Value bias) {
    Tape& tape = detail::same_tape({input, weights, bias});
    const Tensor& x = tape.value(input);
    const Tensor& wv = tape.value(weights);
    const Tensor& bv = tape.value(bias);
    const Shape s = x.shape();
    if (s.h != 1 || s.w != 1)
        throw ShapeError("fully_connected input must be Nx" + std::to_string(s.c) + "x1x1, got " +
                         s.str());
    const long in_f = s.c;
    const long out_f = wv.shape().n;
    if (wv.shape().c != in_f || wv.shape().h != 1 || wv.shape().w != 1)
        throw ShapeError("fully_connected weights " + wv.shape().str() + " incompatible with input " +
                         s.str());
    if (!(bv.shape() == Shape{1, out_f, 1, 1}))
        throw ShapeError("fully_connected bias must be 1x" + std::to_string(out_f) + "x1x1");

    Tensor out(Shape{s.n, out_f, 1, 1});
    for (long n = 0; n < s.n; ++n) {
        const double* xn = x.data() + n * in_f;
        double* on = out.data() + n * out_f;
        for (long f = 0; f < out_f; ++f) {
            const double* wr = wv.data() + f * in_f;
            double acc = bv[f];
            for (long c = 0; c < in_f; ++c) acc += wr[c] * xn[c];
            on[f] = acc;
        }
    }

    const int xid = input.id, wid = weights.id, bid = bias.id;
    return tape.record(std::move(out), {xid, wid, bid},
                       [in_f, out_f, n_items = s.n, xid, wid, bid](Tape& t, int self) {
                           const Tensor& gout = t.grad_buffer(self);
                           const Tensor& xv = t.value(xid);
                           const Tensor& wv = t.value(wid);
                           for (long n = 0; n < n_items; ++n) {
                               const double* gn = gout.data() + n * out_f;
                               const double* xn = xv.data() + n * in_f;
                               if (t.requires_grad(bid)) {
                                   Tensor& gb = t.grad_buffer(bid);
                                   for (long f = 0; f < out_f; ++f) gb[f] += gn[f];
                               }
                               if (t.requires_grad(wid)) {
                                   Tensor& gw = t.grad_buffer(wid);
                                   for (long f = 0; f < out_f; ++f) {
                                       double* row = gw.data() + f * in_f;
                                       for (long c = 0; c < in_f; ++c) row[c] += gn[f] * xn[c];
                                   }
                               }
                               if (t.requires_grad(xid)) {
                                   Tensor& gx = t.grad_buffer(xid);
                                   double* dst = gx.data() + n * in_f;
                                   for (long f = 0; f < out_f; ++f) {
                                       const double* wr = wv.data() + f * in_f;
                                       for (long c = 0; c < in_f; ++c) dst[c] += gn[f] * wr[c];
                                   }
                               }
                           }
                       });
}

Value softmax(Value input) {
    Tape& tape = detail::same_tape({input});
    const Tensor& x = tape.value(input);
    const Shape s = x.shape();
    if (s.c < 1) throw ShapeError("softmax requires at least one channel");
    const long plane = s.plane();

    Tensor out(s);
    for (long n = 0; n < s.n; ++n)
        for (long j = 0; j < plane; ++j) {
            double mx = -std::numeric_limits<double>::infinity();
            for (long c = 0; c < s.c; ++c) mx = std::max(mx, x[(n * s.c + c) * plane + j]);
            double denom = 0.0;
            for (long c = 0; c < s.c; ++c) {
                const double e = std::exp(x[(n * s.c + c) * plane + j] - mx);
                out[(n * s.c + c) * plane + j] = e;
                denom += e;
            }
            const double inv = 1.0 / denom;
            for (long c = 0; c < s.c; ++c) out[(n * s.c + c) * plane + j] *= inv;
        }

    const int xid = input.id;
    return tape.record(std::move(out), {xid}, [s, plane, xid](Tape& t, int self) {
        const Tensor& gout = t.grad_buffer(self);
        const Tensor& p = t.value(self);
        Tensor& gx = t.grad_buffer(xid);
        for (long n = 0; n < s.n; ++n)
            for (long j = 0; j < plane; ++j) {
                double dot = 0.0;
                for (long c = 0; c < s.c; ++c) {
                    const long i = (n * s.c + c) * plane + j;
                    dot += gout[i] * p[i];
                }
                for (long c = 0; c < s.c; ++c) {
                    const long i = (n * s.c + c) * plane + j;
                    gx[i] += p[i] * (gout[i] - dot);
                }
            }
    });
}

Value cross_entropy_loss(Value probabilities, const ClassMap& targets,
                         const std::vector<double>& class_weights) {
    Tape& tape = detail::same_tape({probabilities});
    constexpr double kLogClamp = 1e-12;
    const Tensor& p = tape.value(probabilities);
    const Shape s = p.shape();
    if (targets.n != s.n || targets.h != s.h || targets.w != s.w)
        throw ShapeError("cross_entropy targets cover " + std::to_string(targets.n) + "x" +
                         std::to_string(targets.h) + "x" + std::to_string(targets.w) +
                         " but probabilities are " + s.str());
    if (!class_weights.empty() && static_cast<long>(class_weights.size()) != s.c)
        throw ArgumentError("class weight count does not match channel count");

    const long plane = s.plane();
    const long sites = targets.sites();
    std::vector<double> weights(static_cast<std::size_t>(s.c), 1.0);
    if (!class_weights.empty()) weights = class_weights;

    double loss = 0.0;
    for (long n = 0; n < s.n; ++n)
        for (long j = 0; j < plane; ++j) {
            const int t = targets.cls[static_cast<std::size_t>(n * plane + j)];
            if (t < 0 || t >= s.c)
                throw ArgumentError("cross_entropy target class " + std::to_string(t) +
                                    " outside [0, " + std::to_string(s.c) + ")");
            const double pt = std::max(p[(n * s.c + t) * plane + j], kLogClamp);
            loss -= weights[static_cast<std::size_t>(t)] * std::log(pt);
        }
    loss /= static_cast<double>(sites);

    const int pid = probabilities.id;
    auto cls = targets.cls;
    return tape.record(
        Tensor::scalar(loss), {pid},
        [s, plane, sites, pid, weights = std::move(weights), cls = std::move(cls)](Tape& t, int self) {
            const double g = t.grad_buffer(self)[0];
            Tensor& gp = t.grad_buffer(pid);
            const Tensor& p = t.value(pid);
            const double inv_m = 1.0 / static_cast<double>(sites);
            for (long n = 0; n < s.n; ++n)
                for (long j = 0; j < plane; ++j) {
                    const int tc = cls[static_cast<std::size_t>(n * plane + j)];
                    const long i = (n * s.c + tc) * plane + j;
                    // Clamp matches the forward log clamp but keeps gradient
                    // flowing on saturated predictions (softmax-composed form).
                    const double pt = std::max(p[i], 1e-12);
                    gp[i] -= g * weights[static_cast<std::size_t>(tc)] * inv_m / pt;
                }
        });
}

Value sum(Value input) {
    Tape& tape = detail::same_tape({input});
    const Tensor& x = tape.value(input);
    double acc = 0.0;
    for (long i = 0; i < x.numel(); ++i) acc += x[i];

    const int xid = input.id;
    return tape.record(Tensor::scalar(acc), {xid}, [xid](Tape& t, int self) {
        const double g = t.grad_buffer(self)[0];
        Tensor& gx = t.grad_buffer(xid);
        for (long i = 0; i < gx.numel(); ++i) gx[i] += g;
    });
}

Value add(Value a, Value b) {
    Tape& tape = detail::same_tape({a, b});
    const Tensor& av = tape.value(a);
    const Tensor& bv = tape.value(b);
    if (!(av.shape() == bv.shape()))
        throw ShapeError("add shape mismatch " + av.shape().str() + " vs " + bv.shape().str());
    Tensor out(av.shape());
    for (long i = 0; i < av.numel(); ++i) out[i] = av[i] + bv[i];

    const int aid = a.id, bid = b.id;
    return tape.record(std::move(out), {aid, bid}, [aid, bid](Tape& t, int self) {
        const Tensor& gout = t.grad_buffer(self);
        for (int pid : {aid, bid}) {
            if (!t.requires_grad(pid)) continue;
            Tensor& gp = t.grad_buffer(pid);
            for (long i = 0; i < gout.numel(); ++i) gp[i] += gout[i];
        }
    });
}

Value scale(Value input, double factor) {
    Tape& tape = detail::same_tape({input});
    const Tensor& x = tape.value(input);
    Tensor out(x.shape());
    for (long i = 0; i < x.numel(); ++i) out[i] = x[i] * factor;

    const int xid = input.id;
    return tape.record(std::move(out), {xid}, [factor, xid](Tape& t, int self) {
        const Tensor& gout = t.grad_buffer(self);
        Tensor& gx = t.grad_buffer(xid);
        for (long i = 0; i < gout.numel(); ++i) gx[i] += gout[i] * factor;
    });
}

}  // namespace cbstm
