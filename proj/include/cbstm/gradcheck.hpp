#pragma once

#include <functional>

#include "cbstm/autograd.hpp"

namespace cbstm {

struct GradCheckReport {
    double max_rel_error = 0.0;
    long worst_coord = -1;
    long checked = 0;
    long excluded = 0;
};

// Coordinate filter: return true to skip a coordinate (e.g. relu-kink
// neighborhoods). Receives the flat index and the point's value there.
using GradCheckExclude = std::function<bool(long coord, double value)>;

// Excludes coordinates with |x| < 10h, the documented guard band around
// piecewise-linear kinks.
GradCheckExclude kink_exclusion(double step);

// Checks d(program)/d(point) by central differences. `program` must build a
// scalar loss from its input on the given tape; it is run once for the
// analytic gradient and twice per coordinate for the numeric one. Relative
// error uses max(1, |analytic|, |numeric|) as denominator.
GradCheckReport finite_difference_check(const std::function<Value(Tape&, Value)>& program,
                                        const Tensor& point, double step = 1e-5,
                                        const GradCheckExclude& exclude = nullptr);

// Variant for parameters living in model storage: `eval` recomputes the
// scalar loss from current storage; coordinates of `storage` are perturbed
// in place (and restored). `analytic` is the already-computed gradient.
// `coords` selects a subset (empty = all).
GradCheckReport finite_difference_check_inplace(const std::function<double()>& eval,
                                                Tensor& storage, const Tensor& analytic,
                                                const std::vector<long>& coords = {},
                                                double step = 1e-5,
                                                const GradCheckExclude& exclude = nullptr);

}  // namespace cbstm
