#pragma once

#include <functional>
#include <string>

#include "dstlab/parameters.hpp"

namespace dstlab::numeric {

struct GradCheckReport {
    double max_rel_err = 0.0;
    std::string worst_param;
    std::int64_t worst_index = -1;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
    std::int64_t elements_checked = 0;
    double tolerance = 0.0;
    bool passed = false;
};

// Compares analytic gradients against central finite differences.
//
// loss_fn must rebuild the forward pass from the current parameter values and
// return the loss; when record_grads is true it must also run backward so the
// store's gradients are populated. Relative error uses max(|a|, |n|, 1e-3) as
// the denominator, which turns into an absolute tolerance for near-zero
// gradients where finite differences are dominated by cancellation noise.
//
// max_per_param > 0 checks only that many evenly spaced elements per
// parameter; 0 checks everything.
GradCheckReport grad_check(const std::function<double(bool record_grads)>& loss_fn,
                           ParameterStore& params, double h, double tol,
                           std::int64_t max_per_param = 0);

}  // namespace dstlab::numeric
