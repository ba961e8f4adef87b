#include "dstlab/optimizer.hpp"

#include <cmath>

#include "dstlab/errors.hpp"

namespace dstlab::numeric {

double LrSchedule::at(std::int64_t step) const {
    if (step <= 0) return 0.0;
    auto warmup = static_cast<std::int64_t>(warmup_proportion * static_cast<double>(total_steps));
    if (warmup > 0 && step <= warmup) {
        return peak_lr * static_cast<double>(step) / static_cast<double>(warmup);
    }
    if (step >= total_steps) return 0.0;
    return peak_lr * static_cast<double>(total_steps - step) /
           static_cast<double>(total_steps - warmup);
}

void AdamW::step(ParameterStore& store) {
    ++step_;
    double lr = cfg_.schedule.at(step_);
    double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
    double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
    for (Parameter& p : store) {
        if (!p.trainable) continue;
        p.steps += 1;
        double* v = p.value.data.data();
        double* g = p.grad.data.data();
        double* m1 = p.moment1.data.data();
        double* m2 = p.moment2.data.data();
        std::size_t n = p.value.data.size();
        for (std::size_t i = 0; i < n; ++i) {
            m1[i] = cfg_.beta1 * m1[i] + (1.0 - cfg_.beta1) * g[i];
            m2[i] = cfg_.beta2 * m2[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
            double mhat = m1[i] / bc1;
            double vhat = m2[i] / bc2;
            v[i] -= lr * (mhat / (std::sqrt(vhat) + cfg_.eps) + cfg_.weight_decay * v[i]);
        }
    }
}

}  // namespace dstlab::numeric
