#include "mmtrain/optimizer.hpp"

#include <cmath>

namespace mmtrain {

AdamW::AdamW(const ModelParams& params, Options options) : options_(options) {
    for (const auto& e : params.entries()) {
        m_.emplace_back(e.tensor.numel(), 0.0);
        v_.emplace_back(e.tensor.numel(), 0.0);
    }
}

void AdamW::step(ModelParams& params, double lr) {
    const auto& entries = params.entries();
    if (entries.size() != m_.size()) {
        throw ContractError("AdamW: parameter registry changed since construction");
    }
    ++t_;
    const double b1 = options_.beta1;
    const double b2 = options_.beta2;
    const double bias1 = 1.0 - std::pow(b1, static_cast<double>(t_));
    const double bias2 = 1.0 - std::pow(b2, static_cast<double>(t_));
    for (std::size_t i = 0; i < entries.size(); ++i) {
        Tensor p = entries[i].tensor;
        if (!p.has_grad()) continue;
        auto w = p.data();
        const auto g = p.grad();
        auto& m = m_[i];
        auto& v = v_[i];
        for (std::size_t k = 0; k < w.size(); ++k) {
            m[k] = b1 * m[k] + (1.0 - b1) * g[k];
            v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
            const double m_hat = m[k] / bias1;
            const double v_hat = v[k] / bias2;
            w[k] -= lr * (m_hat / (std::sqrt(v_hat) + options_.epsilon) + options_.weight_decay * w[k]);
        }
    }
}

WarmupSchedule::WarmupSchedule(double base_lr, double warmup_ratio, std::size_t total_steps)
    : base_lr_(base_lr),
      // the slack keeps products like 0.1 * 30 from rounding up past an integer
      warmup_steps_(static_cast<std::size_t>(
          std::ceil(warmup_ratio * static_cast<double>(total_steps) - 1e-9))) {}

double WarmupSchedule::lr_at(std::size_t step) const {
    if (step >= warmup_steps_) return base_lr_;
    return base_lr_ * static_cast<double>(step) / static_cast<double>(warmup_steps_);
}

}  // namespace mmtrain
