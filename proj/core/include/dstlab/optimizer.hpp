#pragma once

#include <cstdint>

#include "dstlab/parameters.hpp"

namespace dstlab::numeric {

// Linear warmup to the peak rate over warmup_proportion of total_steps,
// then linear decay to zero at total_steps.
struct LrSchedule {
    double peak_lr = 3e-4;
    double warmup_proportion = 0.1;
    std::int64_t total_steps = 1;

    double at(std::int64_t step) const;  // step is 1-based
};

struct AdamWConfig {
    LrSchedule schedule;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

// AdamW with decoupled weight decay. Updates every trainable parameter in
// store insertion order; skips parameters marked non-trainable.
class AdamW {
public:
    explicit AdamW(AdamWConfig cfg) : cfg_(cfg) {}

    void step(ParameterStore& store);
    std::int64_t steps_taken() const { return step_; }
    double current_lr() const { return cfg_.schedule.at(step_); }
    const AdamWConfig& config() const { return cfg_; }

private:
    AdamWConfig cfg_;
    std::int64_t step_ = 0;
};

}  // namespace dstlab::numeric
