#pragma once

#include <cstddef>
#include <vector>

#include "mmtrain/model.hpp"

namespace mmtrain {

/// Adam with decoupled weight decay over a ModelParams registry.
class AdamW {
public:
    struct Options {
        double beta1 = 0.9;
        double beta2 = 0.999;
        double epsilon = 1e-8;
        double weight_decay = 0.01;
    };

    AdamW() = default;
    AdamW(const ModelParams& params, Options options);

    /// Applies one update with learning rate `lr` using the current gradients.
    void step(ModelParams& params, double lr);
    std::size_t steps_taken() const { return t_; }
    const Options& options() const { return options_; }

private:
    Options options_;
    std::vector<std::vector<double>> m_;
    std::vector<std::vector<double>> v_;
    std::size_t t_ = 0;
};

/// Linear warmup from 0 to `base_lr` over ceil(warmup_ratio * total_steps)
/// steps, constant afterwards.
class WarmupSchedule {
public:
    WarmupSchedule(double base_lr, double warmup_ratio, std::size_t total_steps);
    double lr_at(std::size_t step) const;
    std::size_t warmup_steps() const { return warmup_steps_; }

private:
    double base_lr_;
    std::size_t warmup_steps_;
};

}  // namespace mmtrain
