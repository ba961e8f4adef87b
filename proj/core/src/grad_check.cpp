#include "dstlab/grad_check.hpp"

#include <algorithm>
#include <cmath>

namespace dstlab::numeric {

GradCheckReport grad_check(const std::function<double(bool record_grads)>& loss_fn,
                           ParameterStore& params, double h, double tol,
                           std::int64_t max_per_param) {
    GradCheckReport report;
    report.tolerance = tol;

    params.zero_grads();
    loss_fn(true);

    for (Parameter& p : params) {
        if (!p.trainable) continue;
        std::int64_t n = p.value.numel();
        std::int64_t stride = 1;
        if (max_per_param > 0 && n > max_per_param) stride = n / max_per_param;
        for (std::int64_t i = 0; i < n; i += stride) {
            double saved = p.value.data[i];
            p.value.data[i] = saved + h;
            double f_plus = loss_fn(false);
            p.value.data[i] = saved - h;
            double f_minus = loss_fn(false);
            p.value.data[i] = saved;

            double numeric = (f_plus - f_minus) / (2.0 * h);
            double analytic = p.grad.data[i];
            double denom = std::max({std::fabs(analytic), std::fabs(numeric), 1e-3});
            double rel = std::fabs(analytic - numeric) / denom;
            ++report.elements_checked;
            if (rel > report.max_rel_err) {
                report.max_rel_err = rel;
                report.worst_param = p.name;
                report.worst_index = i;
                report.worst_analytic = analytic;
                report.worst_numeric = numeric;
            }
        }
    }
    report.passed = report.max_rel_err < tol;
    return report;
}

}  // namespace dstlab::numeric
