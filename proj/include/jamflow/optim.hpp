// optim.hpp - AdamW with decoupled weight decay, plus the linear
// warmup / linear decay learning-rate schedule
#pragma once

#include <cmath>
#include <stdexcept>

#include "autodiff.hpp"

namespace jamflow {

struct AdamConfig {
    double lr = 3e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

template <typename T>
class AdamW {
public:
    explicit AdamW(AdamConfig cfg = {}) : cfg_(cfg) {}

    const AdamConfig& config() const { return cfg_; }
    long step_count() const { return step_; }
    void set_step_count(long s) { step_ = s; }

    // m <- b1 m + (1-b1) g;  v <- b2 v + (1-b2) g^2
    // theta <- theta - lr * (mhat / (sqrt(vhat) + eps) + wd * theta)
    void step(ParamStore<T>& params, double lr_override = -1.0) {
        const double lr = lr_override >= 0.0 ? lr_override : cfg_.lr;
        ++step_;
        const T b1 = static_cast<T>(cfg_.beta1), b2 = static_cast<T>(cfg_.beta2);
        const T bc1 = static_cast<T>(1.0 - std::pow(cfg_.beta1, static_cast<double>(step_)));
        const T bc2 = static_cast<T>(1.0 - std::pow(cfg_.beta2, static_cast<double>(step_)));
        const T eps = static_cast<T>(cfg_.eps), wd = static_cast<T>(cfg_.weight_decay);
        const T lrt = static_cast<T>(lr);
        for (int i = 0; i < params.count(); ++i) {
            auto& e = params.entry(i);
            for (size_t k = 0; k < e.value.size(); ++k) {
                const T g = e.grad.v[k];
                e.adam_m.v[k] = b1 * e.adam_m.v[k] + (T(1) - b1) * g;
                e.adam_v.v[k] = b2 * e.adam_v.v[k] + (T(1) - b2) * g * g;
                const T mhat = e.adam_m.v[k] / bc1;
                const T vhat = e.adam_v.v[k] / bc2;
                e.value.v[k] -= lrt * (mhat / (std::sqrt(vhat) + eps) + wd * e.value.v[k]);
            }
        }
    }

private:
    AdamConfig cfg_;
    long step_ = 0;
};

// linear ramp to peak over warmup_steps, then linear decay to zero at total_steps
inline double scheduled_lr(double peak, long step, long warmup_steps, long total_steps) {
    if (total_steps <= 0) throw std::invalid_argument("scheduled_lr: total_steps must be positive");
    const long s = step + 1;
    if (warmup_steps > 0 && s <= warmup_steps)
        return peak * static_cast<double>(s) / static_cast<double>(warmup_steps);
    if (total_steps <= warmup_steps) return peak;
    const double frac =
        static_cast<double>(total_steps - s) / static_cast<double>(total_steps - warmup_steps);
    return peak * std::max(0.0, frac);
}

}  // namespace jamflow
